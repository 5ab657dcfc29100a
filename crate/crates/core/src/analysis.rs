//! Decay exponents, convergence orders and sharpness verdicts.

use std::fmt;

use nalgebra::{Matrix3, Vector3};

use crate::energy::{rp_flux_on, FluxSeries, FluxSpec};
use crate::error::{Error, Result};
use crate::evolve::ModeSolution;
use crate::fields::{derived_field, dr_once, extract_np_constant, FieldSelector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitModel {
    PurePower,
    /// `y = A u^s (1 + B/u)`.
    PowerWithOffset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub stderr: f64,
    pub window: (f64, f64),
    pub lpi_curve: Vec<(f64, f64)>,
    pub model: FitModel,
    pub points: usize,
    /// Set when the series is not monotone on the window or the fit is
    /// poorly determined; such fits never pass a band test.
    pub unreliable: bool,
}

/// Stderr above which a fit is flagged.
pub const STDERR_FLAG: f64 = 0.1;

fn positive_window(series: &FluxSeries, window: (f64, f64)) -> Result<(Vec<f64>, Vec<f64>)> {
    let (lo, hi) = window;
    if !(hi > lo) {
        return Err(Error::InvalidParameter(format!("empty window [{lo}, {hi}]")));
    }
    let mut us = Vec::new();
    let mut ys = Vec::new();
    for s in &series.samples {
        if s.u >= lo && s.u <= hi {
            if !(s.value > 0.0) || !s.value.is_finite() {
                return Err(Error::NonpositiveValues(format!("value {} at u = {}", s.value, s.u)));
            }
            if !(s.u > 0.0) {
                return Err(Error::InvalidParameter(format!("u = {} must be positive for log-log fits", s.u)));
            }
            us.push(s.u);
            ys.push(s.value);
        }
    }
    Ok((us, ys))
}

/// Running exponent `d ln y / d ln u` on log-spaced resamples.
pub fn local_power_index(series: &FluxSeries) -> Result<Vec<(f64, f64)>> {
    let lo = series.samples.first().map_or(0.0, |s| s.u);
    let hi = series.samples.last().map_or(0.0, |s| s.u);
    let (us, ys) = positive_window(series, (lo, hi.max(lo + f64::MIN_POSITIVE)))?;
    lpi_of(&us, &ys)
}

fn lpi_of(us: &[f64], ys: &[f64]) -> Result<Vec<(f64, f64)>> {
    let n = us.len();
    if n < 5 {
        return Err(Error::InsufficientPoints { needed: 5, got: n });
    }
    let lx: Vec<f64> = us.iter().map(|u| u.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| (y / ys[0]).ln()).collect();
    let m = n.min(400);
    let step = (lx[n - 1] - lx[0]) / (m - 1) as f64;
    let mut k = 0;
    let res: Vec<f64> = (0..m)
        .map(|q| {
            let x = if q == m - 1 { lx[n - 1] } else { lx[0] + q as f64 * step };
            while k + 2 < n && lx[k + 1] < x {
                k += 1;
            }
            let w = (x - lx[k]) / (lx[k + 1] - lx[k]);
            ly[k] + w * (ly[k + 1] - ly[k])
        })
        .collect();
    Ok((2..m - 2)
        .map(|q| {
            let d = (res[q - 2] - 8.0 * res[q - 1] + 8.0 * res[q + 1] - res[q + 2]) / (12.0 * step);
            ((lx[0] + q as f64 * step).exp(), d)
        })
        .collect())
}

/// Relative step against the trend that still counts as monotone.
const MONOTONE_SLACK: f64 = 1e-3;
/// Log-spaced samples used for the monotonicity test; sample-to-sample
/// roundoff in deep tails is not oscillation on the scale of the fit.
const MONOTONE_SAMPLES: usize = 48;

fn monotone(us: &[f64], ys: &[f64]) -> bool {
    let (l0, l1) = (us[0].ln(), us[us.len() - 1].ln());
    let mut picked: Vec<f64> = Vec::with_capacity(MONOTONE_SAMPLES);
    let mut k = 0;
    for q in 0..MONOTONE_SAMPLES {
        let target = l0 + (l1 - l0) * q as f64 / (MONOTONE_SAMPLES - 1) as f64;
        while k + 1 < us.len() && us[k + 1].ln() <= target {
            k += 1;
        }
        if picked.len() < us.len() {
            picked.push(ys[k]);
        }
    }
    picked.dedup();
    picked.windows(2).all(|w| w[1] <= w[0] * (1.0 + MONOTONE_SLACK))
        || picked.windows(2).all(|w| w[1] >= w[0] * (1.0 - MONOTONE_SLACK))
}

/// Log-log least squares over the samples with `u` in `window`.
pub fn fit_tail(series: &FluxSeries, window: (f64, f64), model: FitModel) -> Result<PowerLawFit> {
    let (us, ys) = positive_window(series, window)?;
    let n = us.len();
    if n < 8 {
        return Err(Error::InsufficientPoints { needed: 8, got: n });
    }
    let x: Vec<f64> = us.iter().map(|u| u.ln()).collect();
    // Normalizing by the first value keeps the slope invariant under scaling.
    let y: Vec<f64> = ys.iter().map(|v| (v / ys[0]).ln()).collect();
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::DegenerateDifferences("window has a single abscissa".into()));
    }
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let rss: f64 = x.iter().zip(&y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum();
    let (exponent, stderr) = match model {
        FitModel::PurePower => (slope, (rss / (nf - 2.0) / sxx).sqrt()),
        FitModel::PowerWithOffset => gauss_newton_offset(&us, &y, icpt, slope)?,
    };
    let lpi_curve = lpi_of(&us, &ys)?;
    let unreliable = !monotone(&us, &ys) || !(stderr <= STDERR_FLAG) || !exponent.is_finite();
    Ok(PowerLawFit { exponent, stderr, window, lpi_curve, model, points: n, unreliable })
}

/// Fits `ln y = a + s ln u + ln(1 + B/u)`; returns `(s, stderr(s))`.
fn gauss_newton_offset(us: &[f64], y: &[f64], a0: f64, s0: f64) -> Result<(f64, f64)> {
    let mut p = Vector3::new(a0, s0, 0.0);
    let n = us.len();
    let u_min = us.iter().cloned().fold(f64::INFINITY, f64::min);
    let model = |p: &Vector3<f64>, u: f64| p[0] + p[1] * u.ln() + (1.0 + p[2] / u).ln();
    let rss = |p: &Vector3<f64>| us.iter().zip(y).map(|(&u, &v)| (v - model(p, u)).powi(2)).sum::<f64>();
    let mut jtj = Matrix3::zeros();
    for _ in 0..100 {
        jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (&u, &v) in us.iter().zip(y) {
            let j = Vector3::new(1.0, u.ln(), 1.0 / (u + p[2]));
            jtj += j * j.transpose();
            jtr += j * (v - model(&p, u));
        }
        let Some(step) = jtj.lu().solve(&jtr) else {
            return Err(Error::DegenerateDifferences("offset model is singular on this window".into()));
        };
        let mut t = 1.0;
        let base = rss(&p);
        let mut next = p + step;
        while (next[2] <= -u_min || rss(&next) > base) && t > 1e-6 {
            t *= 0.5;
            next = p + step * t;
        }
        if next[2] <= -u_min {
            break;
        }
        let done = (next - p).norm() <= 1e-13 * (1.0 + p.norm());
        p = next;
        if done {
            break;
        }
    }
    let dof = n as f64 - 3.0;
    let s2 = rss(&p) / dof.max(1.0);
    let cov = jtj.try_inverse().unwrap_or_else(|| Matrix3::from_element(f64::INFINITY));
    Ok((p[1], (s2 * cov[(1, 1)]).abs().sqrt()))
}

/// `log2((y_h − y_{h/2}) / (y_{h/2} − y_{h/4}))`.
pub fn convergence_order(y_h: f64, y_h2: f64, y_h4: f64) -> Result<f64> {
    let d1 = y_h - y_h2;
    let d2 = y_h2 - y_h4;
    let floor = 64.0 * f64::EPSILON * y_h.abs().max(y_h2.abs()).max(y_h4.abs());
    if d1.abs() <= floor || d2.abs() <= floor {
        return Err(Error::DegenerateDifferences(format!("increments {d1:e}, {d2:e} at roundoff level")));
    }
    if d1 / d2 <= 0.0 {
        return Err(Error::DegenerateDifferences(format!("increments {d1:e}, {d2:e} change sign")));
    }
    Ok((d1 / d2).log2())
}

// ---------------------------------------------------------------------------
// Series built from solutions

/// `ψ = φ/r` at a recorded station, on every row where it is defined.
pub fn station_series(sol: &ModeSolution, radius: f64) -> Result<FluxSeries> {
    let st = sol
        .station(radius)
        .ok_or_else(|| Error::MissingSeries(format!("no station at r = {radius}")))?;
    let mut us = Vec::new();
    let mut vs = Vec::new();
    for (i, &val) in st.values.iter().enumerate() {
        if val.is_finite() {
            us.push(sol.u(i));
            vs.push(val / radius);
        }
    }
    let mut s = FluxSeries::new(&format!("psi_at_r{radius}"), &us, &vs)?;
    s.meta.push(("radius".into(), format!("{radius:?}")));
    Ok(s)
}

/// φ along the outermost ingoing cone `{v = v1}`.
pub fn outer_series(sol: &ModeSolution) -> Result<FluxSeries> {
    let us: Vec<f64> = (0..sol.grid.n_u()).map(|i| sol.u(i)).collect();
    let mut s = FluxSeries::new("radiation_field_outer", &us, &sol.outer)?;
    s.meta.push(("v".into(), format!("{:?}", sol.grid.v1)));
    Ok(s)
}

/// Absolute values, so that tails of either sign can be fitted.
pub fn magnitude(series: &FluxSeries) -> FluxSeries {
    let mut s = series.clone();
    for x in &mut s.samples {
        x.value = x.value.abs();
    }
    s
}

/// Default fit window: the last half-decade below `0.8 u_end`.
pub fn default_window(u_end: f64) -> (f64, f64) {
    let hi = 0.8 * u_end;
    (hi / 10f64.sqrt(), hi)
}

// ---------------------------------------------------------------------------
// Sharpness

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SharpnessVerdict {
    NonIntegrable,
    Integrable,
    Inconclusive,
}

impl fmt::Display for SharpnessVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SharpnessVerdict::NonIntegrable => "non-integrable",
            SharpnessVerdict::Integrable => "integrable trend",
            SharpnessVerdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharpnessOptions {
    /// Inner cut `R` of the per-slice flux.
    pub r_cut: f64,
    pub u_window: (f64, f64),
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharpnessReport {
    pub p: f64,
    pub i0: (f64, f64),
    pub per_slice: FluxSeries,
    /// Outermost radius used on each slice.
    pub r_max: Vec<f64>,
    pub late_infimum: f64,
    /// `I₀²(1/R − 1/r_max)` at the slice attaining the infimum, for p = 2.
    pub tail_model: Option<f64>,
    pub cumulative: Vec<f64>,
    /// Decay exponent of the per-slice flux on the window.
    pub slice_exponent: Option<f64>,
    pub verdict: SharpnessVerdict,
}

/// Per-slice slopes above this mean the u-integral diverges.
pub const NONINTEGRABLE_SLOPE: f64 = -1.25;
/// Per-slice slopes below this mean it converges.
pub const INTEGRABLE_SLOPE: f64 = -1.75;

pub fn sharpness_scan(sol: &ModeSolution, p: f64, field: FieldSelector, opts: &SharpnessOptions) -> Result<SharpnessReport> {
    if sol.ell != 0 {
        return Err(Error::WrongMode { expected: 0, got: sol.ell });
    }
    let (u_lo, u_hi) = opts.u_window;
    let us: Vec<f64> = candidate_rows(sol, u_lo, u_hi, opts.samples);
    if us.len() < 8 {
        return Err(Error::InsufficientPoints { needed: 8, got: us.len() });
    }
    let (i0, tol) = extract_np_constant(sol, us[0])?;
    if !(i0.abs() <= tol) && tol > 0.1 * i0.abs() {
        return Err(Error::I0Unresolved { estimate: i0, tolerance: tol });
    }
    let zero_branch = i0.abs() <= tol;
    let spec = FluxSpec::new(field, p, opts.r_cut);
    spec.validate(sol)?;
    let y = dr_once(sol, &derived_field(sol, field)?.field)?;
    let mut vals = Vec::with_capacity(us.len());
    let mut r_max = Vec::with_capacity(us.len());
    for &u in &us {
        vals.push(rp_flux_on(sol, &spec, &y, u)?);
        let i = sol.row_index_at(u)?;
        r_max.push(sol.r(i, sol.grid.n_v() - 1 - y.col_margin));
    }
    let mut per_slice = FluxSeries::new(&format!("sharpness_rp_flux_p{p}"), &us, &vals)?;
    per_slice.meta.push(("r_cut".into(), format!("{:?}", opts.r_cut)));
    let (k_min, late_infimum) =
        vals.iter().enumerate().fold((0, f64::INFINITY), |acc, (k, &v)| if v < acc.1 { (k, v) } else { acc });
    let tail_model = ((p - 2.0).abs() < 1e-12 && !zero_branch).then(|| i0 * i0 * (1.0 / opts.r_cut - 1.0 / r_max[k_min]));
    let mut cumulative = vec![0.0; vals.len()];
    for k in 1..vals.len() {
        cumulative[k] = cumulative[k - 1] + 0.5 * (vals[k] + vals[k - 1]) * (us[k] - us[k - 1]);
    }
    let slice_exponent = if vals.iter().all(|v| *v > 0.0) {
        Some(fit_tail(&per_slice, (u_lo, u_hi), FitModel::PurePower)?.exponent)
    } else {
        None
    };
    let verdict = match (tail_model, slice_exponent) {
        (Some(m), _) if late_infimum >= 0.5 * m => SharpnessVerdict::NonIntegrable,
        (_, Some(s)) if s > NONINTEGRABLE_SLOPE => SharpnessVerdict::NonIntegrable,
        (_, Some(s)) if s < INTEGRABLE_SLOPE => SharpnessVerdict::Integrable,
        (_, None) if vals.iter().all(|v| *v == 0.0) => SharpnessVerdict::Integrable,
        _ => SharpnessVerdict::Inconclusive,
    };
    Ok(SharpnessReport {
        p,
        i0: (i0, tol),
        per_slice,
        r_max,
        late_infimum,
        tail_model,
        cumulative,
        slice_exponent,
        verdict,
    })
}

/// About `n` stored rows evenly spread over `[lo, hi]`.
fn candidate_rows(sol: &ModeSolution, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let stored: Vec<f64> = sol.rows.iter().map(|&i| sol.u(i)).filter(|&u| u >= lo && u <= hi).collect();
    if stored.len() <= n.max(1) {
        return stored;
    }
    let step = (stored.len() - 1) as f64 / (n - 1).max(1) as f64;
    let mut out: Vec<f64> = (0..n).map(|k| stored[((k as f64 * step).round() as usize).min(stored.len() - 1)]).collect();
    out.dedup();
    out
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// The series fell below the floor: there is no tail to fit.
    VacuumCleared,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::VacuumCleared => "vacuum-cleared",
        })
    }
}

/// One exponent band test against a named series.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurable {
    pub name: String,
    pub theorem_ref: String,
    pub series: String,
    pub window: (f64, f64),
    pub band: (f64, f64),
    pub model: FitModel,
}

/// Named series at the fine level and, optionally, at a coarser level.
#[derive(Debug, Clone, Default)]
pub struct SeriesBundle {
    pub fine: Vec<(String, FluxSeries)>,
    pub coarse: Vec<(String, FluxSeries)>,
}

impl SeriesBundle {
    pub fn insert(&mut self, name: &str, fine: FluxSeries, coarse: Option<FluxSeries>) {
        self.fine.push((name.to_string(), fine));
        if let Some(c) = coarse {
            self.coarse.push((name.to_string(), c));
        }
    }

    fn get<'a>(list: &'a [(String, FluxSeries)], name: &str) -> Option<&'a FluxSeries> {
        list.iter().find(|(k, _)| k == name).map(|(_, s)| s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub measurable: String,
    pub theorem_ref: String,
    pub exponent: f64,
    pub stderr: f64,
    /// `|s_fine − s_coarse|`, NaN without a coarse level.
    pub rich_err: f64,
    pub band: (f64, f64),
    pub verdict: Verdict,
    pub fit: Option<PowerLawFit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub scenario: String,
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    /// Added to both ends of every band.
    pub eps_band: f64,
    /// Series whose late-window maximum is below this are vacuum-cleared.
    pub floor: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions { eps_band: 0.0, floor: 1e-250 }
    }
}

fn band_test(fit: &PowerLawFit, band: (f64, f64), eps: f64) -> bool {
    !fit.unreliable && fit.exponent >= band.0 - eps - fit.stderr && fit.exponent <= band.1 + eps + fit.stderr
}

pub fn decay_report(scenario: &str, bundle: &SeriesBundle, measurables: &[Measurable], opts: &ReportOptions) -> Result<DecayReport> {
    let mut rows = Vec::new();
    for m in measurables {
        let fine = SeriesBundle::get(&bundle.fine, &m.series)
            .ok_or_else(|| Error::MissingSeries(format!("'{}' needed by {}", m.series, m.name)))?;
        let in_window: Vec<f64> = fine
            .samples
            .iter()
            .filter(|s| s.u >= m.window.0 && s.u <= m.window.1)
            .map(|s| s.value.abs())
            .collect();
        if !in_window.is_empty() && in_window.iter().all(|v| *v < opts.floor) {
            rows.push(ReportRow {
                measurable: m.name.clone(),
                theorem_ref: m.theorem_ref.clone(),
                exponent: f64::NAN,
                stderr: f64::NAN,
                rich_err: f64::NAN,
                band: m.band,
                verdict: Verdict::VacuumCleared,
                fit: None,
            });
            continue;
        }
        let fit = fit_tail(&magnitude(fine), m.window, m.model);
        let row = match fit {
            Ok(fit) => {
                let coarse = SeriesBundle::get(&bundle.coarse, &m.series)
                    .map(|c| fit_tail(&magnitude(c), m.window, m.model))
                    .transpose()
                    .ok()
                    .flatten();
                let mut pass = band_test(&fit, m.band, opts.eps_band);
                let rich_err = match &coarse {
                    Some(c) => {
                        pass &= band_test(c, m.band, opts.eps_band);
                        (fit.exponent - c.exponent).abs()
                    }
                    None => f64::NAN,
                };
                ReportRow {
                    measurable: m.name.clone(),
                    theorem_ref: m.theorem_ref.clone(),
                    exponent: fit.exponent,
                    stderr: fit.stderr,
                    rich_err,
                    band: m.band,
                    verdict: if pass { Verdict::Pass } else { Verdict::Fail },
                    fit: Some(fit),
                }
            }
            Err(Error::NonpositiveValues(_)) | Err(Error::InsufficientPoints { .. }) => ReportRow {
                measurable: m.name.clone(),
                theorem_ref: m.theorem_ref.clone(),
                exponent: f64::NAN,
                stderr: f64::NAN,
                rich_err: f64::NAN,
                band: m.band,
                verdict: Verdict::Fail,
                fit: None,
            },
            Err(e) => return Err(e),
        };
        rows.push(row);
    }
    Ok(DecayReport { scenario: scenario.to_string(), rows })
}

impl DecayReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.verdict != Verdict::Fail)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("measurable,theorem_ref,exponent,stderr,band_lo,band_hi,verdict\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{:?},{:?},{:?},{:?},{}\n",
                r.measurable, r.theorem_ref, r.exponent, r.stderr, r.band.0, r.band.1, r.verdict
            ));
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("scenario {}\n", self.scenario);
        for r in &self.rows {
            s.push_str(&format!(
                "{:<28} {:<24} exponent {:>9.4} ± {:.4} (two-level diff {:.4}) band [{}, {}] {}\n",
                r.measurable, r.theorem_ref, r.exponent, r.stderr, r.rich_err, r.band.0, r.band.1, r.verdict
            ));
        }
        s.push_str(if self.all_pass() { "overall PASS\n" } else { "overall FAIL\n" });
        s
    }
}
