//! Weighted fluxes, energy currents, divergence identities and the
//! standalone functional inequalities.
//!
//! Fluxes are per mode: a solution `φ` stands for `ψ = (φ/r)·Y` with
//! `∫ Y² dω = 1` unless [`ModeNorm::SphereIntegrated`] is requested.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evolve::{ModeSolution, INNER_STRIP};
use crate::fields::{derived_field, dr_once, equation_data, equation_for, FieldSelector};
use crate::quadrature::{integrate_samples_between, simpson_uniform};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeNorm {
    PerMode,
    /// Axisymmetric mode with angular factor `P_ℓ(cos θ)`: scales by `4π/(2ℓ+1)`.
    SphereIntegrated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxSpec {
    pub field: FieldSelector,
    pub p: f64,
    pub r_cut_lo: f64,
    /// `None` integrates to the outermost valid node.
    pub r_cut_hi: Option<f64>,
    pub mode_norm: ModeNorm,
}

impl FluxSpec {
    pub fn new(field: FieldSelector, p: f64, r_cut_lo: f64) -> Self {
        FluxSpec { field, p, r_cut_lo, r_cut_hi: None, mode_norm: ModeNorm::PerMode }
    }

    pub fn with_r_cut_hi(mut self, r: f64) -> Self {
        self.r_cut_hi = Some(r);
        self
    }

    pub(crate) fn validate(&self, sol: &ModeSolution) -> Result<()> {
        if !self.p.is_finite() {
            return Err(Error::InvalidParameter(format!("weight exponent p = {} is not finite", self.p)));
        }
        if self.r_cut_lo <= sol.bg.r_inner() || !self.r_cut_lo.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "r_cut_lo = {} must exceed the horizon radius {}",
                self.r_cut_lo,
                sol.bg.r_inner()
            )));
        }
        if let Some(hi) = self.r_cut_hi {
            if !(hi > self.r_cut_lo) {
                return Err(Error::InvalidParameter(format!("r_cut_hi = {hi} must exceed r_cut_lo = {}", self.r_cut_lo)));
            }
        }
        Ok(())
    }

    fn norm_factor(&self, ell: usize) -> f64 {
        match self.mode_norm {
            ModeNorm::PerMode => 1.0,
            ModeNorm::SphereIntegrated => 4.0 * std::f64::consts::PI / (2 * ell + 1) as f64,
        }
    }

    fn metadata(&self) -> Vec<(String, String)> {
        let mut m = vec![
            ("field".to_string(), self.field.to_string()),
            ("p".to_string(), format!("{:?}", self.p)),
            ("r_cut_lo".to_string(), format!("{:?}", self.r_cut_lo)),
        ];
        if let Some(hi) = self.r_cut_hi {
            m.push(("r_cut_hi".to_string(), format!("{hi:?}")));
        }
        let norm = match self.mode_norm {
            ModeNorm::PerMode => "per_mode",
            ModeNorm::SphereIntegrated => "sphere_integrated",
        };
        m.push(("mode_norm".to_string(), norm.to_string()));
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxSample {
    pub u: f64,
    pub value: f64,
    /// Richardson error estimate; NaN when no coarser solution was supplied.
    pub rich_err: f64,
}

/// A sampled quantity as a function of retarded time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FluxSeries {
    pub label: String,
    pub samples: Vec<FluxSample>,
    /// Ordered `key=value` metadata, written as the CSV trailer.
    pub meta: Vec<(String, String)>,
    pub tags: Vec<String>,
}

const CSV_HEADER: &str = "# tailwave flux v1";

impl FluxSeries {
    pub fn new(label: &str, us: &[f64], values: &[f64]) -> Result<Self> {
        if us.len() != values.len() {
            return Err(Error::InvalidParameter("u and value lengths differ".into()));
        }
        if us.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("u samples must be strictly increasing".into()));
        }
        Ok(FluxSeries {
            label: label.to_string(),
            samples: us
                .iter()
                .zip(values)
                .map(|(&u, &value)| FluxSample { u, value, rich_err: f64::NAN })
                .collect(),
            meta: Vec::new(),
            tags: Vec::new(),
        })
    }

    pub fn us(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.u).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.value).collect()
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }

    /// Multiplies every value and error by `a`.
    pub fn scaled(&self, a: f64) -> Self {
        let mut s = self.clone();
        for x in &mut s.samples {
            x.value *= a;
            x.rich_err *= a.abs();
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(CSV_HEADER);
        out.push('\n');
        out.push_str("u,value,rich_err\n");
        for s in &self.samples {
            let _ = writeln!(out, "{:?},{:?},{:?}", s.u, s.value, s.rich_err);
        }
        let _ = writeln!(out, "#label={}", self.label);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "#{k}={v}");
        }
        if !self.tags.is_empty() {
            let _ = writeln!(out, "#tags={}", self.tags.join(";"));
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let first = lines.next().transpose()?.unwrap_or_default();
        if first.trim() != CSV_HEADER {
            return Err(Error::Format(format!("expected '{CSV_HEADER}', found '{first}'")));
        }
        let cols = lines.next().transpose()?.unwrap_or_default();
        if cols.trim() != "u,value,rich_err" {
            return Err(Error::Format(format!("unexpected column line '{cols}'")));
        }
        let mut series = FluxSeries::default();
        for (n, line) in lines.enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(kv) = line.strip_prefix('#') {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::Format(format!("trailer line '{line}' is not key=value")))?;
                match k {
                    "label" => series.label = v.to_string(),
                    "tags" => series.tags = v.split(';').filter(|t| !t.is_empty()).map(String::from).collect(),
                    _ => series.meta.push((k.to_string(), v.to_string())),
                }
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(Error::Format(format!("data line {} has {} fields", n + 3, parts.len())));
            }
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad number '{s}' on line {}", n + 3)))
            };
            series.samples.push(FluxSample { u: num(parts[0])?, value: num(parts[1])?, rich_err: num(parts[2])? });
        }
        Ok(series)
    }
}

fn provenance(sol: &ModeSolution) -> Vec<(String, String)> {
    let g = &sol.grid;
    vec![
        ("background".into(), sol.bg.describe()),
        ("ell".into(), sol.ell.to_string()),
        ("grid".into(), format!("u=[{:?},{:?}] v=[{:?},{:?}] h={:?}", g.u0, g.u1, g.v0, g.v1, g.h)),
        ("data".into(), sol.data_meta.describe()),
    ]
}

/// `∫ r^p (∂_r X)² dr` over `[r_cut_lo, r_cut_hi]` on the row at `u`.
pub fn rp_flux(sol: &ModeSolution, spec: &FluxSpec, u: f64) -> Result<f64> {
    spec.validate(sol)?;
    let x = derived_field(sol, spec.field)?.field;
    let y = dr_once(sol, &x)?;
    rp_flux_on(sol, spec, &y, u)
}

pub(crate) fn rp_flux_on(sol: &ModeSolution, spec: &FluxSpec, y: &crate::evolve::NodeField, u: f64) -> Result<f64> {
    let i = sol.row_index_at(u)?;
    let k = sol.row_position(i).expect("stored row");
    let n_v = sol.grid.n_v();
    let cm = y.col_margin;
    let (j0, j1) = (cm, n_v - 1 - cm);
    let (r_first, r_last) = (sol.r(i, j0), sol.r(i, j1));
    let hi = spec.r_cut_hi.unwrap_or(r_last);
    if spec.r_cut_lo < r_first || hi > r_last * (1.0 + 1e-12) {
        return Err(Error::InsufficientRadialRange(format!(
            "cuts [{}, {hi}] not inside valid radii [{r_first}, {r_last}] at u = {u}",
            spec.r_cut_lo
        )));
    }
    let v_lo = u + 2.0 * sol.bg.tortoise(spec.r_cut_lo)?;
    let v_hi = if spec.r_cut_hi.is_some() { u + 2.0 * sol.bg.tortoise(hi)? } else { sol.v(j1) };
    let row = y.values.row(k);
    let integrand: Vec<f64> = (j0..=j1)
        .map(|j| {
            let r = sol.r(i, j);
            0.5 * sol.d(i, j) * r.powf(spec.p) * row[j] * row[j]
        })
        .collect();
    let v_lo = v_lo.max(sol.v(j0));
    let v_hi = v_hi.min(sol.v(j1));
    Ok(spec.norm_factor(sol.ell) * integrate_samples_between(&integrand, sol.v(j0), sol.grid.h, v_lo, v_hi)?)
}

/// `rp_flux` at each `u`; with `coarse` (same data at twice the step) the
/// Richardson error `|fine − coarse|/3` is attached.
pub fn rp_flux_series(sol: &ModeSolution, spec: &FluxSpec, us: &[f64], coarse: Option<&ModeSolution>) -> Result<FluxSeries> {
    spec.validate(sol)?;
    let x = derived_field(sol, spec.field)?.field;
    let y = dr_once(sol, &x)?;
    let values: Vec<f64> = us.par_iter().map(|&u| rp_flux_on(sol, spec, &y, u)).collect::<Result<_>>()?;
    let mut series = FluxSeries::new(&format!("rp_flux_{}_p{}", spec.field, spec.p), us, &values)?;
    if let Some(c) = coarse {
        let xc = derived_field(c, spec.field)?.field;
        let yc = dr_once(c, &xc)?;
        let cv: Vec<f64> = us.par_iter().map(|&u| rp_flux_on(c, spec, &yc, u)).collect::<Result<_>>()?;
        for (s, c) in series.samples.iter_mut().zip(cv) {
            s.rich_err = (s.value - c).abs() / 3.0;
        }
    }
    series.meta = [spec.metadata(), provenance(sol)].concat();
    Ok(series)
}

/// Fourth-order first derivative on uniform samples, one-sided at the ends.
fn deriv4(f: &[f64], h: f64) -> Result<Vec<f64>> {
    let n = f.len();
    if n < 5 {
        return Err(Error::InsufficientPoints { needed: 5, got: n });
    }
    let c = 1.0 / (12.0 * h);
    let mut d = vec![0.0; n];
    d[0] = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) * c;
    d[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) * c;
    for j in 2..n - 2 {
        d[j] = (f[j - 2] - 8.0 * f[j - 1] + 8.0 * f[j + 1] - f[j + 2]) * c;
    }
    d[n - 2] = (3.0 * f[n - 1] + 10.0 * f[n - 2] - 18.0 * f[n - 3] + 6.0 * f[n - 4] - f[n - 5]) * c;
    d[n - 1] = (25.0 * f[n - 1] - 48.0 * f[n - 2] + 36.0 * f[n - 3] - 16.0 * f[n - 4] + 3.0 * f[n - 5]) * c;
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cone {
    /// `{u = const}`, parametrized by v.
    Outgoing(f64),
    /// `{v = const}`, parametrized by u.
    Ingoing(f64),
}

/// φ along the column `j` if it is available on every row.
fn column(sol: &ModeSolution, j: usize) -> Result<Vec<f64>> {
    let n_v = sol.grid.n_v();
    if j < sol.inner.ncols() && j < INNER_STRIP {
        return Ok(sol.inner.column(j).to_vec());
    }
    if j == n_v - 1 {
        return Ok(sol.outer.clone());
    }
    if sol.has_all_rows() {
        return Ok(sol.phi.column(j).to_vec());
    }
    Err(Error::InsufficientMargin(format!(
        "column at v = {} needs every row stored",
        sol.v(j)
    )))
}

/// Per-mode T-energy flux through a null cone over `range` of its parameter.
pub fn t_energy_flux(sol: &ModeSolution, cone: Cone, range: (f64, f64)) -> Result<f64> {
    let l2 = (sol.ell * (sol.ell + 1)) as f64;
    let h = sol.grid.h;
    let (lo, hi) = range;
    match cone {
        Cone::Outgoing(u) => {
            let i = sol.row_index_at(u)?;
            let row = sol.row(i).expect("stored row");
            let psi: Vec<f64> = row.iter().enumerate().map(|(j, f)| f / sol.r(i, j)).collect();
            let dpsi = deriv4(&psi, h)?;
            let dens: Vec<f64> = (0..psi.len())
                .map(|j| {
                    let r = sol.r(i, j);
                    r * r * dpsi[j] * dpsi[j] + 0.25 * sol.d(i, j) * l2 * psi[j] * psi[j]
                })
                .collect();
            integrate_samples_between(&dens, sol.grid.v0, h, lo, hi)
        }
        Cone::Ingoing(v) => {
            let j = sol
                .grid
                .v_index(v)
                .ok_or_else(|| Error::InvalidParameter(format!("v = {v} is not a grid node")))?;
            let col = column(sol, j)?;
            let psi: Vec<f64> = col.iter().enumerate().map(|(i, f)| f / sol.r(i, j)).collect();
            let dpsi = deriv4(&psi, h)?;
            let dens: Vec<f64> = (0..psi.len())
                .map(|i| {
                    let r = sol.r(i, j);
                    r * r * dpsi[i] * dpsi[i] + 0.25 * sol.d(i, j) * l2 * psi[i] * psi[i]
                })
                .collect();
            integrate_samples_between(&dens, sol.grid.u0, h, lo, hi)
        }
    }
}

/// T-energy through `{u} × {r ≥ r_cut}` up to the outer edge of the grid.
pub fn outgoing_energy_beyond(sol: &ModeSolution, u: f64, r_cut: f64) -> Result<f64> {
    let v_lo = u + 2.0 * sol.bg.tortoise(r_cut)?;
    if v_lo < sol.grid.v0 {
        return Err(Error::InsufficientRadialRange(format!("r = {r_cut} lies before the first column at u = {u}")));
    }
    t_energy_flux(sol, Cone::Outgoing(u), (v_lo, sol.grid.v1))
}

pub fn energy_series(sol: &ModeSolution, us: &[f64], r_cut: f64, coarse: Option<&ModeSolution>) -> Result<FluxSeries> {
    let values: Vec<f64> = us.par_iter().map(|&u| outgoing_energy_beyond(sol, u, r_cut)).collect::<Result<_>>()?;
    let mut s = FluxSeries::new("t_energy_flux", us, &values)?;
    if let Some(c) = coarse {
        for (x, &u) in s.samples.iter_mut().zip(us) {
            x.rich_err = (x.value - outgoing_energy_beyond(c, u, r_cut)?).abs() / 3.0;
        }
    }
    s.meta = [vec![("r_cut".to_string(), format!("{r_cut:?}"))], provenance(sol)].concat();
    Ok(s)
}

/// Defect of the `r^{p-2}∂_r` multiplier identity for the selected field on
/// the node rectangle `(u1, u2, v_lo, v_hi)`.
pub fn divergence_residual(sol: &ModeSolution, field: FieldSelector, p: f64, rect: (f64, f64, f64, f64)) -> Result<f64> {
    let (u1, u2, v_lo, v_hi) = rect;
    let g = &sol.grid;
    let node = |idx: Option<usize>, name: &str, x: f64| {
        idx.ok_or_else(|| Error::InvalidParameter(format!("{name} = {x} is not a grid node")))
    };
    let i1 = node(g.u_index(u1), "u1", u1)?;
    let i2 = node(g.u_index(u2), "u2", u2)?;
    let j1 = node(g.v_index(v_lo), "v_lo", v_lo)?;
    let j2 = node(g.v_index(v_hi), "v_hi", v_hi)?;
    if i2 <= i1 || j2 <= j1 {
        return Err(Error::InvalidParameter("rectangle is empty".into()));
    }
    if (i1..=i2).any(|i| sol.row_position(i).is_none()) {
        return Err(Error::InsufficientMargin("every row of the rectangle must be stored".into()));
    }
    let eq = equation_for(field);
    let data = equation_data(sol, eq, 0.0, f64::INFINITY, None)?;
    let y = dr_once(sol, &data.x)?;
    let cm = y.col_margin.max(data.s.col_margin);
    if j1 < cm || j2 + cm > g.n_v() - 1 {
        return Err(Error::InsufficientMargin(format!("rectangle needs {cm} columns of margin in v")));
    }
    let l2 = (sol.ell * (sol.ell + 1)) as f64;
    let n_u = g.n_u();
    let h = g.h;
    let mut flux = Vec::new();
    let mut bulk = Vec::new();
    let mut edge_lo = Vec::new();
    let mut edge_hi = Vec::new();
    for i in i1..=i2 {
        let k = sol.row_position(i).expect("stored");
        let mut fl = Vec::with_capacity(j2 - j1 + 1);
        let mut bu = Vec::with_capacity(j2 - j1 + 1);
        for j in j1..=j2 {
            let dg = j + n_u - 1 - i;
            let r = sol.radial.points[dg].r;
            let d = sol.radial.d[dg];
            let d1 = sol.bg.d_unchecked(r, 1);
            let yy = y.values[[k, j]];
            let xx = data.x.values[[k, j]];
            let b = d1 + 2.0 * d / r - data.a[dg];
            let rp = r.powf(p);
            fl.push(0.5 * d * rp * yy * yy);
            bu.push(
                0.5 * d * ((r * b - 0.5 * p * d) * rp / r * yy * yy - rp * data.s.values[[k, j]] * yy)
                    - 0.25 * d * d1 * rp * yy * yy
                    + 0.25 * l2 * (p - 2.0) * d * r.powf(p - 3.0) * xx * xx,
            );
        }
        let rr = |j: usize| sol.r(i, j);
        edge_lo.push(rr(j1).powf(p - 2.0) * data.x.values[[k, j1]].powi(2));
        edge_hi.push(rr(j2).powf(p - 2.0) * data.x.values[[k, j2]].powi(2));
        flux.push(simpson_uniform(&fl, h));
        bulk.push(simpson_uniform(&bu, h));
    }
    let boundary = -0.5 * l2 * (simpson_uniform(&edge_hi, h) - simpson_uniform(&edge_lo, h));
    let lhs = flux[flux.len() - 1] - flux[0];
    let rhs = simpson_uniform(&bulk, h) + boundary;
    let res = (lhs - rhs).abs();
    if !res.is_finite() {
        return Err(Error::Domain("non-finite divergence residual".into()));
    }
    Ok(res)
}

/// Morawetz-band energy density per u together with its running integral.
#[derive(Debug, Clone, PartialEq)]
pub struct MorawetzSeries {
    pub density: FluxSeries,
    pub cumulative: Vec<f64>,
    pub extremal_warning: bool,
}

impl MorawetzSeries {
    /// Last increment relative to the largest one.
    pub fn final_to_peak(&self) -> f64 {
        let v = self.density.values();
        let peak = v.iter().cloned().fold(0.0, f64::max);
        if peak == 0.0 {
            0.0
        } else {
            v.last().copied().unwrap_or(0.0) / peak
        }
    }
}

/// `∫_a^b [(Tψ)² + (∂_rψ)² + ℓ(ℓ+1)ψ²/r²] r² dr` on every interior row.
pub fn morawetz_timeseries(sol: &ModeSolution, band: (f64, f64)) -> Result<MorawetzSeries> {
    let (a, b) = band;
    if !(a > sol.bg.r_inner() && b > a) {
        return Err(Error::InvalidParameter(format!("band [{a}, {b}] must lie outside the horizon")));
    }
    if !sol.has_all_rows() {
        return Err(Error::InsufficientMargin("Morawetz densities need every row stored".into()));
    }
    let g = &sol.grid;
    let (n_u, n_v) = (g.n_u(), g.n_v());
    let h = g.h;
    let l2 = (sol.ell * (sol.ell + 1)) as f64;
    let (ta, tb) = (sol.bg.tortoise(a)?, sol.bg.tortoise(b)?);
    // Rows on which the whole band lies inside the grid with stencil room.
    let fits = |i: usize| {
        let u = sol.u(i);
        u + 2.0 * ta >= g.v0 + 2.0 * h && u + 2.0 * tb <= g.v1 - 2.0 * h
    };
    let rows: Vec<usize> = (1..n_u.saturating_sub(1)).filter(|&i| fits(i)).collect();
    if rows.len() < 2 {
        return Err(Error::InsufficientRadialRange(format!("band [{a}, {b}] is not covered on enough rows")));
    }
    let dens: Vec<f64> = rows
        .par_iter()
        .map(|&i| {
            let u = sol.u(i);
            let (v_lo, v_hi) = (u + 2.0 * ta, u + 2.0 * tb);
            let j0 = ((v_lo - g.v0) / h).floor() as usize;
            let j1 = (((v_hi - g.v0) / h).ceil() as usize).min(n_v - 3);
            let psi = |ii: usize, j: usize| sol.phi[[ii, j]] / sol.r(ii, j);
            let vals: Vec<f64> = (j0..=j1)
                .map(|j| {
                    let r = sol.r(i, j);
                    let d = sol.d(i, j);
                    let dv = (psi(i, j - 2) - 8.0 * psi(i, j - 1) + 8.0 * psi(i, j + 1) - psi(i, j + 2)) / (12.0 * h);
                    let du = (psi(i + 1, j) - psi(i - 1, j)) / (2.0 * h);
                    let t = du + dv;
                    let dr = 2.0 * dv / d;
                    let p = psi(i, j);
                    (t * t + dr * dr + l2 * p * p / (r * r)) * r * r * 0.5 * d
                })
                .collect();
            integrate_samples_between(&vals, sol.v(j0), h, v_lo, v_hi)
        })
        .collect::<Result<_>>()?;
    let us: Vec<f64> = rows.iter().map(|&i| sol.u(i)).collect();
    let mut cumulative = Vec::with_capacity(dens.len());
    let mut acc = 0.0;
    for k in 0..dens.len() {
        if k > 0 {
            acc += 0.5 * (dens[k] + dens[k - 1]) * h;
        }
        cumulative.push(acc);
    }
    let mut density = FluxSeries::new("morawetz_density", &us, &dens)?;
    density.meta = [vec![("band".to_string(), format!("{a:?}..{b:?}"))], provenance(sol)].concat();
    let extremal_warning = sol.bg.is_extremal();
    if extremal_warning {
        density.tags.push("extremal_warning".into());
    }
    Ok(MorawetzSeries { density, cumulative, extremal_warning })
}

// ---------------------------------------------------------------------------
// Inequalities

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InequalityOutcome {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

/// `∫ r^q f² ≤ 4/(q+1)² ∫ r^{q+2} (f′)²` on uniformly spaced samples.
pub fn hardy_check(r: &[f64], f: &[f64], q: f64) -> Result<InequalityOutcome> {
    let n = r.len();
    if n != f.len() {
        return Err(Error::InvalidParameter("r and f lengths differ".into()));
    }
    if n < 5 {
        return Err(Error::InsufficientPoints { needed: 5, got: n });
    }
    if (q + 1.0).abs() < 1e-12 {
        return Err(Error::InvalidParameter("q = -1 has no Hardy constant in this form".into()));
    }
    let dr = (r[n - 1] - r[0]) / (n - 1) as f64;
    if !(dr > 0.0) || r.windows(2).any(|w| ((w[1] - w[0]) - dr).abs() > 1e-9 * dr) {
        return Err(Error::InvalidParameter("samples must be uniformly spaced and increasing".into()));
    }
    if r[0] <= 0.0 {
        return Err(Error::InvalidParameter("r0 must be positive".into()));
    }
    let scale = f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return Ok(InequalityOutcome { lhs: 0.0, rhs: 0.0, ok: true });
    }
    if f[0].abs() > 1e-10 * scale {
        return Err(Error::HypothesisViolated(format!("f(r0) = {} is not zero", f[0])));
    }
    let df = deriv4(f, dr)?;
    let lhs_s: Vec<f64> = r.iter().zip(f).map(|(r, f)| r.powf(q) * f * f).collect();
    let rhs_s: Vec<f64> = r.iter().zip(&df).map(|(r, d)| r.powf(q + 2.0) * d * d).collect();
    let lhs = simpson_uniform(&lhs_s, dr);
    let rhs = 4.0 / ((q + 1.0) * (q + 1.0)) * simpson_uniform(&rhs_s, dr);
    let tail = r[n - 1].powf(q + 1.0) * f[n - 1] * f[n - 1];
    if tail > 1e-6 * lhs.max(f64::MIN_POSITIVE) {
        return Err(Error::HypothesisViolated(format!("r^(q+1) f^2 = {tail:e} has not decayed at r = {}", r[n - 1])));
    }
    Ok(InequalityOutcome { lhs, rhs, ok: lhs <= rhs * (1.0 + 1e-8) })
}

/// Hardy checks on `count` random C² bumps per `q`, seeded for reproducibility.
pub fn hardy_random_sweep(count: usize, qs: &[f64], seed: u64) -> Result<Vec<(f64, InequalityOutcome)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count * qs.len());
    let n = 2001;
    for _ in 0..count {
        let r0: f64 = rng.gen_range(0.5..3.0);
        let r_max = r0 + rng.gen_range(5.0..40.0);
        let bumps: Vec<(f64, f64, f64)> = (0..rng.gen_range(1..4))
            .map(|_| {
                let lo = rng.gen_range(r0..r_max - 1.0);
                let hi = rng.gen_range(lo + 0.5..r_max);
                (lo, hi, rng.gen_range(-2.0..2.0))
            })
            .collect();
        let r: Vec<f64> = (0..n).map(|k| r0 + (r_max - r0) * k as f64 / (n - 1) as f64).collect();
        let f: Vec<f64> = r
            .iter()
            .map(|&x| {
                bumps
                    .iter()
                    .map(|&(lo, hi, a)| {
                        if x <= lo || x >= hi {
                            0.0
                        } else {
                            let s = (x - lo) * (hi - x) / ((hi - lo) * (hi - lo));
                            a * s * s * s * 64.0
                        }
                    })
                    .sum()
            })
            .collect();
        for &q in qs {
            out.push((q, hardy_check(&r, &f, q)?));
        }
    }
    Ok(out)
}

/// Spherical Poincaré inequality in coefficient space:
/// `∫ψ² dω ≤ r²/(L(L+1)) ∫|∇̸ψ|² dω` for `ψ` supported on `ℓ ≥ L`.
pub fn poincare_check(coeffs: &BTreeMap<(usize, i64), f64>, r: f64, big_l: usize) -> Result<InequalityOutcome> {
    if big_l == 0 {
        return Err(Error::InvalidParameter("L must be at least 1".into()));
    }
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("radius {r} must be positive")));
    }
    let mut lhs = 0.0;
    let mut grad = 0.0;
    for (&(ell, m), &c) in coeffs {
        if m.unsigned_abs() as usize > ell {
            return Err(Error::InvalidParameter(format!("|m| = {} exceeds ℓ = {ell}", m.abs())));
        }
        if ell < big_l && c != 0.0 {
            return Err(Error::SupportViolation(format!("coefficient at ℓ = {ell} below L = {big_l}")));
        }
        lhs += c * c;
        grad += (ell * (ell + 1)) as f64 * c * c / (r * r);
    }
    let rhs = r * r * grad / (big_l * (big_l + 1)) as f64;
    Ok(InequalityOutcome { lhs, rhs, ok: lhs <= rhs * (1.0 + 1e-12) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpolationOutcome {
    pub ok: bool,
    pub d1: f64,
    pub d2: f64,
    /// Largest `target / bound` over the samples.
    pub worst_ratio: f64,
}

fn late_slope(us: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = us
        .iter()
        .zip(ys)
        .skip(us.len() / 2)
        .filter(|(_, y)| **y > 0.0)
        .map(|(u, y)| ((1.0 + u).ln(), y.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Checks the interpolation conclusion for `target = ∫ r^p f²` given the
/// series `lower = ∫ r^{p-ε} f²` and `upper = ∫ r^{p+1-ε} f²`, all over
/// `r ≥ r_cut` and sampled at the same τ.
pub fn interpolation_check(
    lower: &FluxSeries,
    upper: &FluxSeries,
    target: &FluxSeries,
    q: f64,
    eps: f64,
    r_cut: f64,
) -> Result<InterpolationOutcome> {
    if !(eps > 0.0 && eps < 1.0) || !(r_cut > 0.0) {
        return Err(Error::InvalidParameter(format!("need 0 < eps < 1 and r_cut > 0, got {eps}, {r_cut}")));
    }
    let tau = lower.us();
    if upper.us() != tau || target.us() != tau {
        return Err(Error::InvalidParameter("series must share their τ samples".into()));
    }
    let (lo, up, tg) = (lower.values(), upper.values(), target.values());
    if lo.iter().chain(&up).chain(&tg).any(|x| *x < 0.0 || !x.is_finite()) {
        return Err(Error::NonpositiveValues("quadratic series must be finite and nonnegative".into()));
    }
    let all_zero = |v: &[f64]| v.iter().all(|x| *x == 0.0);
    if all_zero(&lo) && all_zero(&up) {
        if all_zero(&tg) {
            return Ok(InterpolationOutcome { ok: true, d1: 0.0, d2: 0.0, worst_ratio: 0.0 });
        }
        return Err(Error::HypothesisViolated("hypothesis series vanish but the target does not".into()));
    }
    // The hypotheses need τ-independent constants; a late-time trend slower
    // than the claimed rate (beyond the ε slack) means they fail.
    for (name, ys, rate) in [("lower", &lo, q), ("upper", &up, q - 1.0)] {
        if let Some(s) = late_slope(&tau, ys) {
            if s > -rate + 0.5 * eps {
                return Err(Error::HypothesisViolated(format!(
                    "{name} series decays like (1+τ)^{s:.3}, slower than (1+τ)^{:.3}",
                    -rate
                )));
            }
        }
    }
    let d1 = tau.iter().zip(&lo).map(|(t, y)| y * (1.0 + t).powf(q)).fold(0.0, f64::max);
    let d2 = tau.iter().zip(&up).map(|(t, y)| y * (1.0 + t).powf(q - 1.0)).fold(0.0, f64::max);
    let c = r_cut.max(1.0).powf(eps) + r_cut.min(1.0).powf(eps - 1.0);
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for k in 0..tau.len() {
        let t = tau[k];
        let split = (t + r_cut).powf(eps) * lo[k] + (t + r_cut).powf(eps - 1.0) * up[k];
        let bound = c * d1.max(d2) * (1.0 + t).powf(-q + eps);
        ok &= tg[k] <= split * (1.0 + 1e-9) + 1e-300;
        if bound > 0.0 {
            worst = worst.max(tg[k] / bound);
        }
    }
    ok &= worst <= 1.0 + 1e-9;
    Ok(InterpolationOutcome { ok, d1, d2, worst_ratio: worst })
}
