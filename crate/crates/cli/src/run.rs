//! Evolve a scenario, measure it and write its outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use tailwave::analysis::{outer_series, sharpness_scan, station_series, SharpnessOptions};
use tailwave::energy::{energy_series, rp_flux_series, FluxSeries, FluxSpec};
use tailwave::fields::np_conservation_detail;
use tailwave::initial_data::time_derivative_data;
use tailwave::{
    bump_data, decay_report, evolve_mode_with, static_tail_data, CharacteristicData, DecayReport, EvolveOptions,
    FieldSelector, GridSpec, Measurable, ModeSolution, SeriesBundle, Verdict,
};

use crate::scenario::{rp_name, DataFamily, Scenario};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("numerical error: {0}")]
    Numerical(#[from] tailwave::Error),
    #[error("io error on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: DecayReport,
    pub extra_lines: Vec<String>,
    pub dir: PathBuf,
    pub pass: bool,
}

/// Output root: `TAILWAVE_OUT` when set, else the working directory.
pub fn output_root() -> PathBuf {
    std::env::var_os("TAILWAVE_OUT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

pub fn characteristic_data(s: &Scenario) -> tailwave::Result<CharacteristicData> {
    let origin = (s.grid.u0, s.grid.v0);
    match &s.data {
        DataFamily::Bump { v_lo, v_hi, amplitude, shape } => bump_data(s.ell, *v_lo, *v_hi, *amplitude, *shape, origin),
        DataFamily::StaticTail { c0, r_min, ingoing } => static_tail_data(&s.background, *c0, *r_min, *ingoing, origin),
    }
}

struct Level {
    sol: ModeSolution,
    t_sol: Option<ModeSolution>,
}

fn evolve_level(s: &Scenario, data: &CharacteristicData, grid: &GridSpec) -> tailwave::Result<Level> {
    let opts = EvolveOptions { stations: vec![s.station], ..Default::default() };
    let sol = evolve_mode_with(&s.background, data, grid, &opts)?;
    let t_sol = if s.series.iter().any(|x| x == "t_pointwise") {
        let td = time_derivative_data(data, &sol)?;
        let g = GridSpec::new(td.u0, grid.u1, td.v0, grid.v1, grid.h)?.with_stride(grid.checkpoint_stride)?;
        Some(evolve_mode_with(&s.background, &td, &g, &opts)?)
    } else {
        None
    };
    Ok(Level { sol, t_sol })
}

fn measure(s: &Scenario, level: &Level) -> tailwave::Result<Vec<(String, FluxSeries)>> {
    let sol = &level.sol;
    let g = &sol.grid;
    let n = ((g.u1 - g.u0) / s.step).floor() as usize;
    let us: Vec<f64> = (1..=n).map(|k| g.u0 + s.step * k as f64).collect();
    let mut out = Vec::new();
    for name in &s.series {
        match name.as_str() {
            "pointwise" => out.push((name.clone(), station_series(sol, s.station)?)),
            "radiation_field" => out.push((name.clone(), outer_series(sol)?)),
            "energy" => out.push((name.clone(), energy_series(sol, &us, s.energy_r_cut, None)?)),
            "t_pointwise" => {
                let t = level.t_sol.as_ref().expect("evolved with the scenario");
                out.push((name.clone(), station_series(t, s.station)?));
            }
            "rp" => {
                for &p in &s.rp_p {
                    let spec = FluxSpec::new(FieldSelector::Phi0, p, s.energy_r_cut);
                    out.push((rp_name(p), rp_flux_series(sol, &spec, &us, None)?));
                }
            }
            _ => unreachable!("validated series name"),
        }
    }
    Ok(out)
}

fn trailer(s: &Scenario) -> Vec<(String, String)> {
    vec![
        ("config_hash".into(), s.hash.clone()),
        ("scenario".into(), s.name.clone()),
        ("grid".into(), s.grid_summary()),
    ]
}

fn write(path: &Path, text: &str) -> Result<(), RunError> {
    fs::write(path, text).map_err(|e| RunError::Io { path: path.to_path_buf(), message: e.to_string() })
}

fn plot_script(s: &Scenario, names: &[String]) -> String {
    let mut g = format!("# config_hash={}\n# grid={}\n", s.hash, s.grid_summary());
    g.push_str("set datafile separator ','\nset datafile commentschars '#'\nset logscale xy\nset xlabel 'u'\nset terminal pngcairo size 900,600\n");
    for n in names {
        let _ = writeln!(
            g,
            "set output 'series_{n}.png'\nplot 'series_{n}.csv' every ::1 using 1:(abs($2)) with lines title '{n}'"
        );
    }
    g
}

/// Runs the scenario and writes `series_*.csv`, `report.txt`, `report.csv`
/// and optionally `plots.gp` under `root/output.dir`.
pub fn run_scenario(s: &Scenario, root: &Path) -> Result<RunOutcome, RunError> {
    let data = characteristic_data(s)?;
    let grids = s.level_grids();
    let levels: Vec<Level> = grids.par_iter().map(|g| evolve_level(s, &data, g)).collect::<tailwave::Result<_>>()?;
    let measured: Vec<Vec<(String, FluxSeries)>> =
        levels.iter().map(|l| measure(s, l)).collect::<tailwave::Result<_>>()?;

    let dir = root.join(&s.output_dir);
    fs::create_dir_all(&dir).map_err(|e| RunError::Io { path: dir.clone(), message: e.to_string() })?;
    let mut bundle = SeriesBundle::default();
    for (k, (name, fine)) in measured[0].iter().enumerate() {
        let coarse = measured.get(1).map(|m| m[k].1.clone());
        for (suffix, series) in [("", Some(fine)), ("_coarse", coarse.as_ref())] {
            if let Some(series) = series {
                let mut out = series.clone();
                out.label = format!("{name}{suffix}");
                out.meta.extend(trailer(s));
                write(&dir.join(format!("series_{name}{suffix}.csv")), &out.to_csv())?;
            }
        }
        bundle.insert(name, fine.clone(), coarse);
    }

    let measurables: Vec<Measurable> = s
        .verdicts
        .iter()
        .map(|v| Measurable {
            name: v.series.clone(),
            theorem_ref: v.theorem_ref.clone(),
            series: v.series.clone(),
            window: v.window,
            band: v.band,
            model: v.model,
        })
        .collect();
    let opts = tailwave::analysis::ReportOptions { eps_band: s.eps_band, ..Default::default() };
    let report = decay_report(&s.name, &bundle, &measurables, &opts)?;

    let mut extra = Vec::new();
    if !s.np_samples.is_empty() {
        let (dev, ex) = np_conservation_detail(&levels[0].sol, &s.np_samples)?;
        for (u, e) in s.np_samples.iter().zip(&ex) {
            extra.push(format!("np_constant u={u:?} estimate={:?} tolerance={:?}", e.estimate, e.tolerance));
        }
        extra.push(format!("np_conservation max_deviation={dev:?}"));
    }
    if let Some(p) = s.sharpness_p {
        let so = SharpnessOptions { r_cut: s.energy_r_cut, u_window: s.window, samples: 61 };
        let r = sharpness_scan(&levels[0].sol, p, FieldSelector::Phi0, &so)?;
        extra.push(format!(
            "sharpness p={p:?} verdict={} late_infimum={:?} tail_model={:?} slice_exponent={:?}",
            r.verdict, r.late_infimum, r.tail_model, r.slice_exponent
        ));
    }

    let mut text = format!("# config_hash={}\n# grid={}\n", s.hash, s.grid_summary());
    text.push_str(&report.to_text());
    for l in &extra {
        text.push_str(l);
        text.push('\n');
    }
    write(&dir.join("report.txt"), &text)?;
    let mut csv = report.to_csv();
    for (k, v) in trailer(s) {
        let _ = writeln!(csv, "#{k}={v}");
    }
    write(&dir.join("report.csv"), &csv)?;
    if s.plots {
        write(&dir.join("plots.gp"), &plot_script(s, &s.series_names()))?;
    }
    let pass = report.rows.iter().all(|r| r.verdict != Verdict::Fail);
    Ok(RunOutcome { report, extra_lines: extra, dir, pass })
}
