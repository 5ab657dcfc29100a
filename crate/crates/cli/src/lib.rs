//! Command-line driver: scenario configs, property checks and sweeps.

pub mod check;
pub mod config;
pub mod run;
pub mod scenario;
pub mod sweep;

use std::path::Path;

use config::{Config, ConfigError};
use scenario::Scenario;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

fn config_exit(e: &ConfigError) -> i32 {
    eprintln!("{e}");
    EXIT_CONFIG
}

pub fn cmd_run(path: &Path, dry_run: bool) -> i32 {
    let scenario = match Config::load(path).and_then(|c| Scenario::from_config(&c)) {
        Ok(s) => s,
        Err(e) => return config_exit(&e),
    };
    if dry_run {
        print!("{}", scenario.plan());
        return EXIT_PASS;
    }
    match run::run_scenario(&scenario, &run::output_root()) {
        Ok(o) => {
            print!("{}", o.report.to_text());
            for l in &o.extra_lines {
                println!("{l}");
            }
            println!("outputs in {}", o.dir.display());
            if o.pass {
                EXIT_PASS
            } else {
                EXIT_FAIL
            }
        }
        Err(e) => {
            eprintln!("{e}");
            EXIT_RUNTIME
        }
    }
}

pub fn cmd_check(opts: &check::CheckOptions) -> i32 {
    let lines = check::run_checks(opts);
    if lines.is_empty() {
        eprintln!("no check matches the filter; available: {}", check::CHECKS.join(", "));
        return EXIT_CONFIG;
    }
    let mut failed = false;
    for l in &lines {
        match &l.result {
            Ok(msg) => println!("check {:<14} PASS {msg}", l.name),
            Err(msg) => {
                failed = true;
                println!("check {:<14} FAIL counterexample: {msg}", l.name);
            }
        }
    }
    if failed {
        EXIT_FAIL
    } else {
        EXIT_PASS
    }
}

pub fn cmd_sweep(path: &Path, dry_run: bool) -> i32 {
    let cfg = match Config::load(path) {
        Ok(c) => c,
        Err(e) => return config_exit(&e),
    };
    match sweep::axes(&cfg) {
        Ok(a) if a.is_empty() => return cmd_run(path, dry_run),
        Ok(_) => {}
        Err(e) => return config_exit(&e),
    }
    let cells = match sweep::cells(&cfg) {
        Ok(c) => c,
        Err(e) => return config_exit(&e),
    };
    if dry_run {
        for c in &cells {
            println!("cell {}", c.name);
            print!("{}", c.scenario.plan());
        }
        return EXIT_PASS;
    }
    match sweep::run_sweep(&cfg, &cells, &run::output_root()) {
        Ok(o) => {
            print!("{}", o.summary);
            if o.pass {
                EXIT_PASS
            } else {
                EXIT_FAIL
            }
        }
        Err(e) => {
            eprintln!("{e}");
            EXIT_RUNTIME
        }
    }
}
