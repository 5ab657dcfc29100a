use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use tailwave::fields::Mutation;
use tailwave_cli::check::CheckOptions;

#[derive(Parser)]
#[command(name = "tailwave", version, about = "Late-time tails of linear waves on black-hole backgrounds")]
struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MutationArg {
    FlipPhi2Source,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve one scenario and write its series and report.
    Run {
        config: PathBuf,
        /// Validate and print the resolved plan without evolving.
        #[arg(long)]
        dry_run: bool,
    },
    /// Run the property suite on small grids.
    Check {
        /// Only checks whose name contains this string.
        #[arg(long)]
        filter: Option<String>,
        /// Corrupt one commuted equation to confirm the audit catches it.
        #[arg(long, value_enum)]
        mutation: Option<MutationArg>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run the cross product of the `sweep.*` axes of a config.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        dry_run: bool,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("--jobs must be at least 1");
            std::process::exit(tailwave_cli::EXIT_CONFIG);
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().expect("thread pool is configured once");
    }
    let code = match cli.command {
        Command::Run { config, dry_run } => tailwave_cli::cmd_run(&config, dry_run),
        Command::Check { filter, mutation, seed } => tailwave_cli::cmd_check(&CheckOptions {
            filter,
            mutation: mutation.map(|MutationArg::FlipPhi2Source| Mutation::FlipPhi2Source),
            seed,
        }),
        Command::Sweep { config, dry_run } => tailwave_cli::cmd_sweep(&config, dry_run),
    };
    std::process::exit(code);
}
