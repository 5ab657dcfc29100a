//! Cross-product sweeps over `sweep.<key> = a, b, c` axes.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::config::{split_list, Config, ConfigError};
use crate::run::{run_scenario, RunError, RunOutcome};
use crate::scenario::{hash_of, Scenario};

#[derive(Debug)]
pub struct Cell {
    pub name: String,
    pub scenario: Scenario,
}

/// Axes in key order, each with its values.
pub fn axes(cfg: &Config) -> Result<Vec<(String, Vec<String>)>, ConfigError> {
    let mut out = Vec::new();
    for (k, v) in cfg.iter() {
        if let Some(target) = k.strip_prefix("sweep.") {
            let vals = split_list(v);
            if vals.is_empty() {
                return Err(ConfigError::new(k, "axis has no values"));
            }
            out.push((target.to_string(), vals));
        }
    }
    Ok(out)
}

/// Resolves every cell before anything runs, so config errors surface first.
pub fn cells(cfg: &Config) -> Result<Vec<Cell>, ConfigError> {
    let axes = axes(cfg)?;
    let mut base = cfg.clone();
    for (k, _) in &axes {
        base.remove(&format!("sweep.{k}"));
    }
    let base_name = base.string("name", "scenario");
    let base_dir = base.string("output.dir", &base_name);
    let mut combos: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (k, vals) in &axes {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                vals.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((k.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for combo in combos {
        let mut c = base.clone();
        let mut name = base_name.clone();
        for (k, v) in &combo {
            c.set(k, v);
            let _ = write!(name, "__{k}={v}");
        }
        if !seen.insert(name.clone()) {
            return Err(ConfigError::new(&format!("sweep.{}", combo.last().map_or("", |x| &x.0)), format!("duplicate cell name `{name}`")));
        }
        c.set("name", &name);
        c.set("output.dir", &format!("{base_dir}/{name}"));
        let scenario = Scenario::from_config(&c)?;
        out.push(Cell { name, scenario });
    }
    Ok(out)
}

pub struct SweepOutcome {
    pub cells: Vec<(String, RunOutcome)>,
    pub summary: String,
    pub pass: bool,
}

pub fn run_sweep(cfg: &Config, cells: &[Cell], root: &Path) -> Result<SweepOutcome, RunError> {
    let results: Vec<(String, RunOutcome)> = cells
        .par_iter()
        .map(|c| run_scenario(&c.scenario, root).map(|o| (c.name.clone(), o)))
        .collect::<Result<_, _>>()?;
    let mut summary = String::from("cell,measurable,theorem_ref,exponent,stderr,band_lo,band_hi,verdict\n");
    for (name, o) in &results {
        for r in &o.report.rows {
            let _ = writeln!(
                summary,
                "{name},{},{},{:?},{:?},{:?},{:?},{}",
                r.measurable, r.theorem_ref, r.exponent, r.stderr, r.band.0, r.band.1, r.verdict
            );
        }
    }
    let resolved: std::collections::BTreeMap<String, String> = cfg.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    let _ = writeln!(summary, "#config_hash={}", hash_of(&resolved));
    let base = cfg.string("output.dir", &cfg.string("name", "scenario"));
    let dir = root.join(base);
    std::fs::create_dir_all(&dir).map_err(|e| RunError::Io { path: dir.clone(), message: e.to_string() })?;
    let path = dir.join("summary.csv");
    std::fs::write(&path, &summary).map_err(|e| RunError::Io { path, message: e.to_string() })?;
    let pass = results.iter().all(|(_, o)| o.pass);
    Ok(SweepOutcome { cells: results, summary, pass })
}
