//! Scenario resolution: defaults, validation and the config hash.

use std::collections::BTreeMap;
use std::path::PathBuf;

use sha2::{Digest, Sha256};
use tailwave::{Background, BumpShape, FitModel, GridSpec, StaticIngoing};

use crate::config::{parse_f64, split_list, Config, ConfigError};

/// Series a scenario can request, by config name.
pub const SERIES: [&str; 5] = ["pointwise", "radiation_field", "energy", "t_pointwise", "rp"];

#[derive(Debug, Clone, PartialEq)]
pub enum DataFamily {
    Bump { v_lo: f64, v_hi: f64, amplitude: f64, shape: BumpShape },
    StaticTail { c0: f64, r_min: f64, ingoing: StaticIngoing },
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerdictSpec {
    /// Series name as written to `series_<name>.csv`.
    pub series: String,
    pub theorem_ref: String,
    pub band: (f64, f64),
    pub window: (f64, f64),
    pub model: FitModel,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub background: Background,
    pub ell: usize,
    pub data: DataFamily,
    pub grid: GridSpec,
    /// 2 adds a level at twice the step for two-level verdicts.
    pub levels: usize,
    pub station: f64,
    pub step: f64,
    pub window: (f64, f64),
    pub series: Vec<String>,
    pub energy_r_cut: f64,
    pub rp_p: Vec<f64>,
    pub np_samples: Vec<f64>,
    pub sharpness_p: Option<f64>,
    pub verdicts: Vec<VerdictSpec>,
    pub eps_band: f64,
    pub output_dir: PathBuf,
    pub plots: bool,
    /// Every key with its resolved value, defaults included.
    pub resolved: BTreeMap<String, String>,
    pub hash: String,
}

const SIMPLE_KEYS: &[&str] = &[
    "name",
    "seed",
    "background.kind",
    "background.mass",
    "background.charge",
    "background.r_norm",
    "data.family",
    "data.ell",
    "data.v_lo",
    "data.v_hi",
    "data.amplitude",
    "data.shape",
    "data.c0",
    "data.r_min",
    "data.ingoing",
    "data.quench_width",
    "grid.u0",
    "grid.u1",
    "grid.v0",
    "grid.v1",
    "grid.h",
    "grid.levels",
    "measure.station",
    "measure.step",
    "measure.window",
    "measure.series",
    "measure.energy_r_cut",
    "measure.rp_p",
    "measure.np_samples",
    "measure.sharpness_p",
    "verdict.eps_band",
    "output.dir",
    "output.plots",
];

const VERDICT_FIELDS: &[&str] = &["band", "ref", "window", "model"];

fn check_known_keys(cfg: &Config) -> Result<(), ConfigError> {
    for k in cfg.keys() {
        if SIMPLE_KEYS.contains(&k) || k.starts_with("sweep.") {
            continue;
        }
        let parts: Vec<&str> = k.split('.').collect();
        if parts.len() == 3 && parts[0] == "verdict" && VERDICT_FIELDS.contains(&parts[2]) {
            continue;
        }
        return Err(ConfigError::new(k, "unknown key"));
    }
    Ok(())
}

fn pair(key: &str, v: &str) -> Result<(f64, f64), ConfigError> {
    let parts = split_list(v);
    if parts.len() != 2 {
        return Err(ConfigError::new(key, format!("`{v}` is not a `lo, hi` pair")));
    }
    let num = |s: &str| match s {
        "-inf" => Ok(f64::NEG_INFINITY),
        "inf" => Ok(f64::INFINITY),
        _ => parse_f64(key, s),
    };
    let (lo, hi) = (num(&parts[0])?, num(&parts[1])?);
    if !(lo < hi) {
        return Err(ConfigError::new(key, format!("lower end {lo} must be below upper end {hi}")));
    }
    Ok((lo, hi))
}

/// `lo, hi`, or `price(δ)` for the band `-2ℓ-3 ± δ`.
fn band(key: &str, v: &str, ell: usize) -> Result<(f64, f64), ConfigError> {
    if let Some(inner) = v.strip_prefix("price(").and_then(|s| s.strip_suffix(')')) {
        let d = parse_f64(key, inner.trim())?;
        let c = -2.0 * ell as f64 - 3.0;
        return Ok((c - d, c + d));
    }
    pair(key, v)
}

fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

impl Scenario {
    pub fn from_config(cfg: &Config) -> Result<Self, ConfigError> {
        check_known_keys(cfg)?;
        let mut resolved = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            resolved.insert(k.to_string(), v);
        };

        let name = cfg.string("name", "scenario");
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || "_-.=".contains(c)) {
            return Err(ConfigError::new("name", "use letters, digits and _ - . = only"));
        }
        put("name", name.clone());
        let seed = cfg.usize("seed", 0)? as u64;
        put("seed", seed.to_string());

        let kind = cfg.string("background.kind", "schwarzschild");
        let mass = cfg.f64("background.mass", Some(1.0))?;
        let charge = cfg.f64("background.charge", Some(0.0))?;
        let r_norm = cfg.f64("background.r_norm", Some(10.0))?;
        let bg = match kind.as_str() {
            "minkowski" => Ok(Background::minkowski()),
            "schwarzschild" => Background::schwarzschild(mass),
            "reissner_nordstrom" => Background::reissner_nordstrom(mass, charge),
            other => return Err(ConfigError::new("background.kind", format!("unknown background `{other}`"))),
        }
        .and_then(|b| b.with_r_norm(r_norm))
        .map_err(|e| ConfigError::new("background.mass", e.to_string()))?;
        put("background.kind", kind.clone());
        put("background.mass", fmt_f64(mass));
        put("background.charge", fmt_f64(charge));
        put("background.r_norm", fmt_f64(r_norm));

        let ell = cfg.usize("data.ell", 0)?;
        put("data.ell", ell.to_string());
        let family = cfg.string("data.family", "bump");
        let data = match family.as_str() {
            "bump" => {
                let v_lo = cfg.f64("data.v_lo", Some(20.0))?;
                let v_hi = cfg.f64("data.v_hi", Some(40.0))?;
                let amplitude = cfg.f64("data.amplitude", Some(1e-8))?;
                let shape_name = cfg.string("data.shape", "polynomial_bump");
                let shape = match shape_name.as_str() {
                    "polynomial_bump" => BumpShape::PolynomialBump,
                    "gaussian_truncated" => BumpShape::GaussianTruncated,
                    "smooth_bump" => BumpShape::Smooth,
                    other => return Err(ConfigError::new("data.shape", format!("unknown shape `{other}`"))),
                };
                if !(v_lo < v_hi) {
                    return Err(ConfigError::new("data.v_hi", "support must satisfy v_lo < v_hi"));
                }
                put("data.v_lo", fmt_f64(v_lo));
                put("data.v_hi", fmt_f64(v_hi));
                put("data.amplitude", fmt_f64(amplitude));
                put("data.shape", shape_name);
                DataFamily::Bump { v_lo, v_hi, amplitude, shape }
            }
            "static_tail" => {
                if ell != 0 {
                    return Err(ConfigError::new("data.ell", "static_tail data is spherically symmetric (ell = 0)"));
                }
                let c0 = cfg.f64("data.c0", Some(1.0))?;
                let r_min = cfg.f64("data.r_min", Some(1.05 * bg.r_inner().max(2.0)))?;
                let ingoing_name = cfg.string("data.ingoing", "quenched");
                let ingoing = match ingoing_name.as_str() {
                    "static" => StaticIngoing::Static,
                    "quenched" => {
                        let width = cfg.f64("data.quench_width", Some(2.0))?;
                        if !(width > 0.0) {
                            return Err(ConfigError::new("data.quench_width", "must be positive"));
                        }
                        put("data.quench_width", fmt_f64(width));
                        StaticIngoing::Quenched { width }
                    }
                    other => return Err(ConfigError::new("data.ingoing", format!("unknown ingoing profile `{other}`"))),
                };
                put("data.c0", fmt_f64(c0));
                put("data.r_min", fmt_f64(r_min));
                put("data.ingoing", ingoing_name);
                DataFamily::StaticTail { c0, r_min, ingoing }
            }
            other => return Err(ConfigError::new("data.family", format!("unknown data family `{other}`"))),
        };
        put("data.family", family);

        let u0 = cfg.f64("grid.u0", Some(0.0))?;
        let u1 = cfg.f64("grid.u1", Some(800.0))?;
        let v0 = cfg.f64("grid.v0", Some(0.0))?;
        let v1 = cfg.f64("grid.v1", Some(830.0))?;
        let h = cfg.f64("grid.h", Some(0.25))?;
        if !(h > 0.0) {
            return Err(ConfigError::new("grid.h", "step must be positive"));
        }
        if !(u1 > u0) {
            return Err(ConfigError::new("grid.u1", format!("u1 = {u1} must exceed u0 = {u0}")));
        }
        if !(v1 > v0) {
            return Err(ConfigError::new("grid.v1", format!("v1 = {v1} must exceed v0 = {v0}")));
        }
        let levels = cfg.usize("grid.levels", 2)?;
        if !(1..=2).contains(&levels) {
            return Err(ConfigError::new("grid.levels", "must be 1 or 2"));
        }
        let step = cfg.f64("measure.step", Some(10.0))?;
        let coarse_h = h * (1 << (levels - 1)) as f64;
        let stride = (step / coarse_h).round();
        if !(stride >= 1.0) || (stride * coarse_h - step).abs() > 1e-9 * step {
            return Err(ConfigError::new("measure.step", format!("{step} is not a multiple of the coarsest step {coarse_h}")));
        }
        let grid = GridSpec::new(u0, u1, v0, v1, h)
            .and_then(|g| g.with_stride(stride as usize * (1 << (levels - 1))))
            .map_err(|e| ConfigError::new("grid.h", e.to_string()))?;
        for (k, v) in [("grid.u0", u0), ("grid.u1", u1), ("grid.v0", v0), ("grid.v1", v1), ("grid.h", h)] {
            put(k, fmt_f64(v));
        }
        put("grid.levels", levels.to_string());
        put("measure.step", fmt_f64(step));

        let station = cfg.f64("measure.station", Some(10.0))?;
        if !(station > bg.r_inner()) {
            return Err(ConfigError::new("measure.station", "station must lie outside the horizon"));
        }
        put("measure.station", fmt_f64(station));
        let window = match cfg.get("measure.window") {
            Some(v) => pair("measure.window", v)?,
            None => (0.5 * u1, u1),
        };
        put("measure.window", format!("{:?},{:?}", window.0, window.1));
        let series = match cfg.get("measure.series") {
            Some(v) => split_list(v),
            None => vec!["pointwise".into(), "radiation_field".into()],
        };
        for s in &series {
            if !SERIES.contains(&s.as_str()) {
                return Err(ConfigError::new("measure.series", format!("unknown series `{s}`; known: {}", SERIES.join(", "))));
            }
        }
        put("measure.series", series.join(","));
        let energy_r_cut = cfg.f64("measure.energy_r_cut", Some(station))?;
        put("measure.energy_r_cut", fmt_f64(energy_r_cut));
        let rp_p = if cfg.get("measure.rp_p").is_some() { cfg.f64_list("measure.rp_p")? } else { vec![2.0] };
        put("measure.rp_p", rp_p.iter().map(|p| fmt_f64(*p)).collect::<Vec<_>>().join(","));
        let np_samples = cfg.f64_list("measure.np_samples")?;
        for &u in &np_samples {
            let k = (u - u0) / step;
            if u < u0 || u > u1 || (k - k.round()).abs() > 1e-9 {
                return Err(ConfigError::new("measure.np_samples", format!("u = {u} is not a stored row (multiples of measure.step)")));
            }
        }
        if !np_samples.is_empty() && ell != 0 {
            return Err(ConfigError::new("measure.np_samples", "the NP constant is defined for ell = 0"));
        }
        put("measure.np_samples", np_samples.iter().map(|p| fmt_f64(*p)).collect::<Vec<_>>().join(","));
        let sharpness_p = match cfg.get("measure.sharpness_p") {
            Some(v) => Some(parse_f64("measure.sharpness_p", v)?),
            None => None,
        };
        if sharpness_p.is_some() && ell != 0 {
            return Err(ConfigError::new("measure.sharpness_p", "sharpness scans need ell = 0"));
        }
        put("measure.sharpness_p", sharpness_p.map(fmt_f64).unwrap_or_default());

        let produced: Vec<String> = series
            .iter()
            .flat_map(|s| {
                if s == "rp" {
                    rp_p.iter().map(|p| rp_name(*p)).collect()
                } else {
                    vec![s.clone()]
                }
            })
            .collect();
        let mut verdict_names: Vec<String> = cfg
            .keys()
            .filter_map(|k| k.strip_prefix("verdict.").and_then(|r| r.split_once('.')).map(|(n, _)| n.to_string()))
            .collect();
        verdict_names.dedup();
        let mut verdicts = Vec::new();
        for n in verdict_names {
            let prefix = format!("verdict.{n}");
            let band_key = format!("{prefix}.band");
            let Some(b) = cfg.get(&band_key) else {
                return Err(ConfigError::new(&band_key, "every verdict needs a band"));
            };
            if !produced.contains(&n) {
                return Err(ConfigError::new(&band_key, format!("series `{n}` is not measured (see measure.series)")));
            }
            let band = band(&band_key, b, ell)?;
            let window_key = format!("{prefix}.window");
            let window = match cfg.get(&window_key) {
                Some(v) => pair(&window_key, v)?,
                None => window,
            };
            let model_key = format!("{prefix}.model");
            let model = match cfg.get(&model_key).unwrap_or("pure_power") {
                "pure_power" => FitModel::PurePower,
                "power_with_offset" => FitModel::PowerWithOffset,
                other => return Err(ConfigError::new(&model_key, format!("unknown model `{other}`"))),
            };
            let theorem_ref = cfg.string(&format!("{prefix}.ref"), &n);
            put(&band_key, format!("{:?},{:?}", band.0, band.1));
            put(&format!("{prefix}.ref"), theorem_ref.clone());
            put(&window_key, format!("{:?},{:?}", window.0, window.1));
            put(&model_key, if model == FitModel::PurePower { "pure_power".into() } else { "power_with_offset".into() });
            verdicts.push(VerdictSpec { series: n, theorem_ref, band, window, model });
        }
        let eps_band = cfg.f64("verdict.eps_band", Some(0.0))?;
        put("verdict.eps_band", fmt_f64(eps_band));

        let output_dir = PathBuf::from(cfg.string("output.dir", &name));
        put("output.dir", output_dir.display().to_string());
        let plots = cfg.bool("output.plots", true)?;
        put("output.plots", plots.to_string());

        let hash = hash_of(&resolved);
        Ok(Scenario {
            name,
            seed,
            background: bg,
            ell,
            data,
            grid,
            levels,
            station,
            step,
            window,
            series,
            energy_r_cut,
            rp_p,
            np_samples,
            sharpness_p,
            verdicts,
            eps_band,
            output_dir,
            plots,
            resolved,
            hash,
        })
    }

    /// Names of every series the scenario writes.
    pub fn series_names(&self) -> Vec<String> {
        self.series
            .iter()
            .flat_map(|s| if s == "rp" { self.rp_p.iter().map(|p| rp_name(*p)).collect() } else { vec![s.clone()] })
            .collect()
    }

    /// Grids of all levels, finest first.
    pub fn level_grids(&self) -> Vec<GridSpec> {
        (0..self.levels)
            .map(|k| {
                let mut g = self.grid.clone();
                g.h *= (1 << k) as f64;
                g.checkpoint_stride = (self.step / g.h).round() as usize;
                g
            })
            .collect()
    }

    pub fn grid_summary(&self) -> String {
        let g = &self.grid;
        format!("u=[{:?},{:?}] v=[{:?},{:?}] h={:?} levels={}", g.u0, g.u1, g.v0, g.v1, g.h, self.levels)
    }

    pub fn plan(&self) -> String {
        let mut s = format!("scenario {}\nconfig_hash {}\n", self.name, self.hash);
        for (k, g) in self.level_grids().iter().enumerate() {
            s.push_str(&format!(
                "level {k}: h={:?} nodes {} x {} ({} cells), row stride {}\n",
                g.h,
                g.n_u(),
                g.n_v(),
                g.cells(),
                g.checkpoint_stride
            ));
        }
        s.push_str(&format!("series: {}\n", self.series_names().join(", ")));
        for v in &self.verdicts {
            s.push_str(&format!("verdict {} ({}) band [{}, {}] window [{}, {}]\n", v.series, v.theorem_ref, v.band.0, v.band.1, v.window.0, v.window.1));
        }
        s.push_str("resolved config:\n");
        for (k, v) in &self.resolved {
            s.push_str(&format!("  {k} = {v}\n"));
        }
        s
    }
}

pub fn rp_name(p: f64) -> String {
    format!("rp_p{}", fmt_f64(p).replace('.', "_"))
}

pub fn hash_of(resolved: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    for (k, v) in resolved {
        h.update(k.as_bytes());
        h.update(b"=");
        h.update(v.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(text: &str) -> Result<Scenario, ConfigError> {
        Scenario::from_config(&Config::parse(text).unwrap())
    }

    #[test]
    fn defaults_resolve_and_hash_is_stable() {
        let a = scenario("name = a").unwrap();
        let b = scenario("name = a\ngrid.h = 0.25").unwrap();
        assert_eq!(a.hash, b.hash);
        assert_ne!(a.hash, scenario("name = a\ngrid.h = 0.5").unwrap().hash);
        assert_eq!(a.level_grids().len(), 2);
        assert_eq!(a.level_grids()[1].h, 0.5);
        assert_eq!(a.level_grids()[0].checkpoint_stride, 40);
    }

    #[test]
    fn errors_name_the_key() {
        assert_eq!(scenario("grid.v0 = 10\ngrid.v1 = 5").unwrap_err().key, "grid.v1");
        assert_eq!(scenario("grid.bogus = 1").unwrap_err().key, "grid.bogus");
        assert_eq!(scenario("measure.step = 0.3").unwrap_err().key, "measure.step");
        assert_eq!(scenario("verdict.energy.band = -5,-4").unwrap_err().key, "verdict.energy.band");
        assert_eq!(scenario("verdict.pointwise.band = -2,-3").unwrap_err().key, "verdict.pointwise.band");
        assert_eq!(scenario("data.family = static_tail\ndata.ell = 1").unwrap_err().key, "data.ell");
    }

    #[test]
    fn price_band_uses_ell() {
        let s = scenario("data.ell = 2\nverdict.pointwise.band = price(0.4)").unwrap();
        let b = s.verdicts[0].band;
        assert!((b.0 + 7.4).abs() < 1e-12 && (b.1 + 6.6).abs() < 1e-12);
        let s = scenario("measure.series = energy, rp\nmeasure.rp_p = 1, 2.5\nverdict.rp_p2_5.band = -inf, -1").unwrap();
        assert_eq!(s.series_names(), vec!["energy", "rp_p1_0", "rp_p2_5"]);
        assert_eq!(s.verdicts[0].band.0, f64::NEG_INFINITY);
    }
}
