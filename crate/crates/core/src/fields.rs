//! Commuted radiation fields, limits at null infinity, and numerical audits
//! of the commuted wave equations.
//!
//! All r-derivatives are taken at fixed u as `∂_r = (2/D) ∂_v` with
//! fourth-order centered stencils; each application widens the invalid
//! column margin by two.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::evolve::{ModeSolution, NodeField};
use crate::jet::Jet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FieldSelector {
    /// φ = rψ.
    Phi0,
    /// Φ = r²∂_rφ.
    Phi,
    /// Φ̃ = r(r−M)∂_rφ.
    PhiTilde,
    /// Φ₍₂₎ = r²∂_rΦ.
    Phi2,
    /// ∂_r^k φ.
    DrPhi(usize),
    /// ∂_r^k Φ₍₂₎.
    DrPhi2(usize),
}

impl fmt::Display for FieldSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldSelector::Phi0 => write!(f, "phi"),
            FieldSelector::Phi => write!(f, "Phi"),
            FieldSelector::PhiTilde => write!(f, "PhiTilde"),
            FieldSelector::Phi2 => write!(f, "Phi2"),
            FieldSelector::DrPhi(k) => write!(f, "dr_k_phi({k})"),
            FieldSelector::DrPhi2(k) => write!(f, "dr_k_Phi2({k})"),
        }
    }
}

fn parse_indexed(s: &str, prefix: &str) -> Option<usize> {
    s.strip_prefix(prefix)?.strip_prefix('(')?.strip_suffix(')')?.trim().parse().ok()
}

impl FromStr for FieldSelector {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        Ok(match t {
            "phi" => FieldSelector::Phi0,
            "Phi" => FieldSelector::Phi,
            "PhiTilde" => FieldSelector::PhiTilde,
            "Phi2" => FieldSelector::Phi2,
            _ => {
                if let Some(k) = parse_indexed(t, "dr_k_phi") {
                    FieldSelector::DrPhi(k)
                } else if let Some(k) = parse_indexed(t, "dr_k_Phi2") {
                    FieldSelector::DrPhi2(k)
                } else {
                    return Err(Error::InvalidParameter(format!("unknown field selector '{s}'")));
                }
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct DerivedField {
    pub selector: FieldSelector,
    pub field: NodeField,
}

impl DerivedField {
    pub fn stencil_margin(&self) -> usize {
        self.field.col_margin
    }
}

/// The solution itself as a field.
pub fn phi_field(sol: &ModeSolution) -> NodeField {
    NodeField { values: sol.phi.clone(), row_margin: 0, col_margin: 0 }
}

pub(crate) fn dr_once(sol: &ModeSolution, f: &NodeField) -> Result<NodeField> {
    let (n_rows, n_v) = f.values.dim();
    let cm = f.col_margin + 2;
    if 2 * cm >= n_v {
        return Err(Error::InsufficientMargin(format!("radial stencil needs {cm} columns per side, grid has {n_v}")));
    }
    let inv = 1.0 / (12.0 * sol.grid.h);
    let mut out = Array2::from_elem((n_rows, n_v), f64::NAN);
    for k in 0..n_rows {
        let i = sol.rows[k];
        let row = f.values.row(k);
        for j in cm..n_v - cm {
            let d = sol.d(i, j);
            if d > 0.0 {
                let dv = (row[j - 2] - 8.0 * row[j - 1] + 8.0 * row[j + 1] - row[j + 2]) * inv;
                out[[k, j]] = 2.0 * dv / d;
            }
        }
    }
    Ok(NodeField { values: out, row_margin: f.row_margin, col_margin: cm })
}

/// `∂_r^order` of a node field at fixed u.
pub fn radial_derivative(sol: &ModeSolution, field: &NodeField, order: usize) -> Result<NodeField> {
    let mut cur = field.clone();
    for _ in 0..order {
        cur = dr_once(sol, &cur)?;
    }
    Ok(cur)
}

/// Multiplies a field pointwise by `w(r)`.
fn weighted(sol: &ModeSolution, f: &NodeField, w: impl Fn(f64) -> f64) -> NodeField {
    let mut out = f.clone();
    for (k, mut row) in out.values.rows_mut().into_iter().enumerate() {
        let i = sol.rows[k];
        for (j, x) in row.iter_mut().enumerate() {
            *x *= w(sol.r(i, j));
        }
    }
    out
}

pub fn derived_field(sol: &ModeSolution, selector: FieldSelector) -> Result<DerivedField> {
    let m = sol.bg.mass();
    let field = match selector {
        FieldSelector::Phi0 => phi_field(sol),
        FieldSelector::Phi => weighted(sol, &dr_once(sol, &phi_field(sol))?, |r| r * r),
        FieldSelector::PhiTilde => weighted(sol, &dr_once(sol, &phi_field(sol))?, |r| r * (r - m)),
        FieldSelector::Phi2 => {
            let big = derived_field(sol, FieldSelector::Phi)?.field;
            weighted(sol, &dr_once(sol, &big)?, |r| r * r)
        }
        FieldSelector::DrPhi(k) => radial_derivative(sol, &phi_field(sol), k)?,
        FieldSelector::DrPhi2(k) => {
            let p2 = derived_field(sol, FieldSelector::Phi2)?.field;
            radial_derivative(sol, &p2, k)?
        }
    };
    Ok(DerivedField { selector, field })
}

/// Φ₍₂₎ from the direct formula `2r³∂_rφ + r⁴∂_r²φ` with
/// `∂_r² = (4/D²)∂_v² − (2D′/D²)∂_v`.
pub fn phi2_direct(sol: &ModeSolution) -> Result<NodeField> {
    let (n_rows, n_v) = sol.phi.dim();
    let cm = 2;
    if 2 * cm >= n_v {
        return Err(Error::InsufficientMargin("direct Φ₍₂₎ stencil does not fit".into()));
    }
    let h = sol.grid.h;
    let mut out = Array2::from_elem((n_rows, n_v), f64::NAN);
    for k in 0..n_rows {
        let i = sol.rows[k];
        let f = sol.phi.row(k);
        for j in cm..n_v - cm {
            let d = sol.d(i, j);
            if d <= 0.0 {
                continue;
            }
            let r = sol.r(i, j);
            let dp = sol.bg.d_unchecked(r, 1);
            let dv = (f[j - 2] - 8.0 * f[j - 1] + 8.0 * f[j + 1] - f[j + 2]) / (12.0 * h);
            let dvv = (-f[j - 2] + 16.0 * f[j - 1] - 30.0 * f[j] + 16.0 * f[j + 1] - f[j + 2]) / (12.0 * h * h);
            let dr = 2.0 * dv / d;
            let drr = 4.0 * dvv / (d * d) - 2.0 * dp * dv / (d * d);
            out[[k, j]] = 2.0 * r * r * r * dr + r.powi(4) * drr;
        }
    }
    Ok(NodeField { values: out, row_margin: 0, col_margin: cm })
}

// ---------------------------------------------------------------------------
// Limits at null infinity

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractionOptions {
    /// Minimum outermost radius required on the row.
    pub min_coverage: Option<f64>,
    /// Upper end of the fit window; defaults to the outermost valid radius.
    pub r_hi: Option<f64>,
    /// Ratio between the ends of the fit window.
    pub decade: f64,
}

impl Default for ExtractionOptions {
    fn default() -> Self {
        ExtractionOptions { min_coverage: None, r_hi: None, decade: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extraction {
    pub estimate: f64,
    pub tolerance: f64,
    pub degree: usize,
    pub window: (f64, f64),
    pub points: usize,
}

const MAX_FIT_POINTS: usize = 4000;

/// Least-squares polynomial in `t` evaluated at `t = 0`, with the standard
/// error of that intercept.
fn poly_intercept(t: &[f64], y: &[f64], degree: usize) -> Option<(f64, f64)> {
    let n = t.len();
    let p = degree + 1;
    if n < p {
        return None;
    }
    let a = DMatrix::from_fn(n, p, |i, k| t[i].powi(k as i32));
    let b = DVector::from_column_slice(y);
    let qr = a.clone().qr();
    let r = qr.r();
    let qtb = qr.q().transpose() * &b;
    let coef = r.solve_upper_triangular(&qtb)?;
    let resid = &b - &a * &coef;
    let dof = n.saturating_sub(p);
    let se = if dof > 0 {
        let s2 = resid.norm_squared() / dof as f64;
        let rinv = r.try_inverse()?;
        let var0: f64 = (0..p).map(|k| rinv[(0, k)] * rinv[(0, k)]).sum();
        (s2 * var0).sqrt()
    } else {
        0.0
    };
    Some((coef[0], se))
}

/// Extrapolates `r^m · field` on row `i` to `r → ∞` with polynomials in 1/r.
pub fn extrapolate_row(
    sol: &ModeSolution,
    field: &NodeField,
    weight_m: f64,
    i: usize,
    opts: &ExtractionOptions,
) -> Result<Extraction> {
    let k = sol
        .row_position(i)
        .ok_or_else(|| Error::InvalidParameter(format!("row {i} not stored")))?;
    let n_v = sol.grid.n_v();
    let cm = field.col_margin;
    if 2 * cm + 2 >= n_v {
        return Err(Error::InsufficientMargin("field has no valid columns".into()));
    }
    let j_top = n_v - 1 - cm;
    let r_top = sol.r(i, j_top);
    let need = opts.min_coverage.unwrap_or(200.0 * sol.bg.mass().max(1.0));
    if r_top < need {
        return Err(Error::InsufficientRadialRange(format!(
            "outermost valid radius {r_top:.3} at u = {} is below the required {need}",
            sol.u(i)
        )));
    }
    let r_hi = opts.r_hi.unwrap_or(r_top);
    if r_hi > r_top * (1.0 + 1e-12) {
        return Err(Error::InsufficientRadialRange(format!(
            "window top {r_hi} exceeds coverage {r_top} at u = {}",
            sol.u(i)
        )));
    }
    let r_lo = r_hi / opts.decade;
    let row = field.values.row(k);
    let mut idx: Vec<usize> = (cm..=j_top)
        .filter(|&j| {
            let r = sol.r(i, j);
            r >= r_lo && r <= r_hi * (1.0 + 1e-12)
        })
        .collect();
    if idx.len() > MAX_FIT_POINTS {
        let step = idx.len() as f64 / MAX_FIT_POINTS as f64;
        idx = (0..MAX_FIT_POINTS).map(|q| idx[(q as f64 * step) as usize]).collect();
    }
    if idx.len() < 8 {
        return Err(Error::InsufficientPoints { needed: 8, got: idx.len() });
    }
    let t: Vec<f64> = idx.iter().map(|&j| r_lo / sol.r(i, j)).collect();
    let y: Vec<f64> = idx.iter().map(|&j| sol.r(i, j).powf(weight_m) * row[j]).collect();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite field values in the extrapolation window".into()));
    }
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut est = Vec::new();
    for d in 0..=3 {
        match poly_intercept(&t, &y, d) {
            Some(e) => est.push(e),
            None => break,
        }
    }
    let mut best = (1usize, f64::INFINITY);
    for d in 1..est.len() {
        let change = (est[d].0 - est[d - 1].0).abs();
        if change < best.1 {
            best = (d, change);
        }
    }
    let (d, change) = best;
    let (estimate, se) = est[d];
    let tolerance = change.max(se).max(64.0 * f64::EPSILON * scale);
    Ok(Extraction { estimate, tolerance, degree: d, window: (r_lo, r_hi), points: idx.len() })
}

fn require_ell(sol: &ModeSolution, ell: usize) -> Result<()> {
    if sol.ell != ell {
        return Err(Error::WrongMode { expected: ell, got: sol.ell });
    }
    Ok(())
}

/// First Newman–Penrose constant `lim r²∂_rφ` on the row at `u`.
pub fn extract_np_constant(sol: &ModeSolution, u: f64) -> Result<(f64, f64)> {
    let e = extract_np_constant_with(sol, u, &ExtractionOptions::default())?;
    Ok((e.estimate, e.tolerance))
}

pub fn extract_np_constant_with(sol: &ModeSolution, u: f64, opts: &ExtractionOptions) -> Result<Extraction> {
    require_ell(sol, 0)?;
    let i = sol.row_index_at(u)?;
    let f = derived_field(sol, FieldSelector::Phi)?;
    extrapolate_row(sol, &f.field, 0.0, i, opts)
}

/// Largest `|I₀(u) − I₀(u_first)|` over the samples, all extracted on a
/// common radial window.
pub fn check_np_conservation(sol: &ModeSolution, u_samples: &[f64]) -> Result<f64> {
    Ok(np_conservation_detail(sol, u_samples)?.0)
}

/// Deviation plus the per-sample extractions.
pub fn np_conservation_detail(sol: &ModeSolution, u_samples: &[f64]) -> Result<(f64, Vec<Extraction>)> {
    require_ell(sol, 0)?;
    if u_samples.is_empty() {
        return Err(Error::InvalidParameter("no u samples".into()));
    }
    let f = derived_field(sol, FieldSelector::Phi)?;
    let j_top = sol.grid.n_v() - 1 - f.field.col_margin;
    let mut rows = Vec::new();
    for &u in u_samples {
        rows.push(sol.row_index_at(u)?);
    }
    let r_hi = rows.iter().map(|&i| sol.r(i, j_top)).fold(f64::INFINITY, f64::min);
    let opts = ExtractionOptions { r_hi: Some(r_hi), ..Default::default() };
    let ex: Vec<Extraction> = rows
        .iter()
        .map(|&i| extrapolate_row(sol, &f.field, 0.0, i, &ExtractionOptions { min_coverage: None, ..opts }))
        .collect::<Result<_>>()?;
    let first = ex[0].estimate;
    let dev = ex.iter().map(|e| (e.estimate - first).abs()).fold(0.0, f64::max);
    Ok((dev, ex))
}

/// Second NP constant `lim r²∂_rΦ̃` for ℓ = 1.
pub fn extract_second_np(sol: &ModeSolution, u: f64) -> Result<(f64, f64)> {
    let e = extract_second_np_with(sol, u, &ExtractionOptions::default())?;
    Ok((e.estimate, e.tolerance))
}

pub fn extract_second_np_with(sol: &ModeSolution, u: f64, opts: &ExtractionOptions) -> Result<Extraction> {
    require_ell(sol, 1)?;
    let i = sol.row_index_at(u)?;
    let pt = derived_field(sol, FieldSelector::PhiTilde)?;
    let f = weighted(sol, &dr_once(sol, &pt.field)?, |r| r * r);
    extrapolate_row(sol, &f, 0.0, i, opts)
}

/// Whether `r^m · selector` has a finite limit at null infinity under the
/// standing data assumptions.
pub fn weight_is_validated(selector: FieldSelector, m: f64) -> bool {
    let int = (m - m.round()).abs() < 1e-12;
    match selector {
        FieldSelector::Phi0 | FieldSelector::Phi | FieldSelector::PhiTilde => int && m.round() == 0.0,
        FieldSelector::Phi2 => int && (-2.0..=0.0).contains(&m.round()),
        FieldSelector::DrPhi(1) => int && (0.0..=2.0).contains(&m.round()),
        FieldSelector::DrPhi(_) => false,
        FieldSelector::DrPhi2(s) => int && m.round() >= 0.0 && m.round() <= (s + 1) as f64,
    }
}

/// Extrapolated limit of `r^m · field` along the row at `u`.
pub fn scri_limit(sol: &ModeSolution, field: &DerivedField, weight_m: f64, u: f64) -> Result<(f64, f64)> {
    if !weight_is_validated(field.selector, weight_m) {
        return Err(Error::WeightOutOfRange { field: field.selector.to_string(), m: weight_m });
    }
    let i = sol.row_index_at(u)?;
    let e = extrapolate_row(sol, &field.field, weight_m, i, &ExtractionOptions::default())?;
    Ok((e.estimate, e.tolerance))
}

// ---------------------------------------------------------------------------
// Commuted-equation audit

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Equation {
    BoxPhi,
    BoxPhiCap,
    BoxPhiTilde,
    BoxPhi2,
    BoxDrkPhi2(usize),
    BoxDrkPhi(usize),
}

impl fmt::Display for Equation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Equation::BoxPhi => write!(f, "box_phi"),
            Equation::BoxPhiCap => write!(f, "box_Phi"),
            Equation::BoxPhiTilde => write!(f, "box_PhiTilde"),
            Equation::BoxPhi2 => write!(f, "box_Phi2"),
            Equation::BoxDrkPhi2(k) => write!(f, "box_drk_Phi2({k})"),
            Equation::BoxDrkPhi(k) => write!(f, "box_drk_phi({k})"),
        }
    }
}

impl FromStr for Equation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        Ok(match t {
            "box_phi" => Equation::BoxPhi,
            "box_Phi" => Equation::BoxPhiCap,
            "box_PhiTilde" => Equation::BoxPhiTilde,
            "box_Phi2" => Equation::BoxPhi2,
            _ => {
                if let Some(k) = parse_indexed(t, "box_drk_Phi2") {
                    Equation::BoxDrkPhi2(k)
                } else if let Some(k) = parse_indexed(t, "box_drk_phi") {
                    Equation::BoxDrkPhi(k)
                } else {
                    return Err(Error::InvalidParameter(format!("unknown equation '{s}'")));
                }
            }
        })
    }
}

impl Equation {
    /// Every equation audited by the acceptance suite.
    pub fn audit_set() -> Vec<Equation> {
        let mut v = vec![Equation::BoxPhi, Equation::BoxPhiCap, Equation::BoxPhiTilde, Equation::BoxPhi2];
        for k in 1..=2 {
            v.push(Equation::BoxDrkPhi(k));
        }
        for k in 1..=2 {
            v.push(Equation::BoxDrkPhi2(k));
        }
        v
    }
}

/// Deliberate corruptions used to confirm the audit detects errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    /// Flips the sign of the Φ and φ source terms in the Φ₍₂₎ equation.
    /// The φ term alone vanishes identically when `D = 1 - 2M/r`.
    FlipPhi2Source,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditOptions {
    pub r_min: Option<f64>,
    pub r_max: f64,
    pub mutation: Option<Mutation>,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions { r_min: None, r_max: f64::INFINITY, mutation: None }
    }
}

/// Fields appearing on the right-hand sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Basis {
    DrPhi(usize),
    Phi,
    PhiTilde,
    DrPhi2(usize),
}

impl Basis {
    fn selector(self) -> FieldSelector {
        match self {
            Basis::DrPhi(0) => FieldSelector::Phi0,
            Basis::DrPhi(k) => FieldSelector::DrPhi(k),
            Basis::Phi => FieldSelector::Phi,
            Basis::PhiTilde => FieldSelector::PhiTilde,
            Basis::DrPhi2(0) => FieldSelector::Phi2,
            Basis::DrPhi2(k) => FieldSelector::DrPhi2(k),
        }
    }

    /// `∂_r` of the basis field as `(coefficient jet, basis)`.
    fn deriv(self, r: f64, n: usize) -> Result<(Jet, Basis)> {
        Ok(match self {
            Basis::DrPhi(k) => (Jet::constant(1.0, n), Basis::DrPhi(k + 1)),
            Basis::Phi => (Jet::pow(r, -2.0, n), Basis::DrPhi2(0)),
            Basis::DrPhi2(k) => (Jet::constant(1.0, n), Basis::DrPhi2(k + 1)),
            Basis::PhiTilde => return Err(Error::InvalidParameter("Φ̃ equations are not commuted further".into())),
        })
    }
}

/// `□X = a ∂_r X − (2/r) T X + Σ c_i B_i` at one radius.
struct Form {
    target: Basis,
    a: Jet,
    terms: Vec<(Basis, Jet)>,
}

fn push_term(terms: &mut Vec<(Basis, Jet)>, b: Basis, c: Jet) {
    if let Some(t) = terms.iter_mut().find(|t| t.0 == b) {
        t.1 = t.1.add(&c);
    } else {
        terms.push((b, c));
    }
}

/// Metric derivative order each equation needs.
pub fn required_metric_order(eq: Equation) -> usize {
    match eq {
        Equation::BoxPhi => 1,
        Equation::BoxPhiCap | Equation::BoxPhiTilde => 2,
        Equation::BoxPhi2 => 3,
        Equation::BoxDrkPhi(k) => 2 + k,
        Equation::BoxDrkPhi2(k) => 3 + k,
    }
}

fn base_form(eq: Equation, bg: &crate::Background, r: f64, ell: f64, n: usize, mutation: Option<Mutation>) -> Result<Form> {
    let l2 = ell * (ell + 1.0);
    let m = bg.mass();
    let d = Jet::metric(bg, r, 0, n)?;
    let d1 = Jet::metric(bg, r, 1, n)?;
    let rp = |p: f64| Jet::pow(r, p, n);
    let c = |x: f64| Jet::constant(x, n);
    Ok(match eq {
        Equation::BoxPhi | Equation::BoxDrkPhi(_) => Form {
            target: Basis::DrPhi(0),
            a: d.mul(&rp(-1.0)).scale(2.0),
            terms: vec![(Basis::DrPhi(0), d1.mul(&rp(-1.0)))],
        },
        Equation::BoxPhiCap => {
            let d2 = Jet::metric(bg, r, 2, n)?;
            Form {
                target: Basis::Phi,
                a: d.mul(&rp(-1.0)).scale(4.0).sub(&d1),
                terms: vec![
                    (
                        Basis::Phi,
                        d2.scale(-1.0).add(&d1.mul(&rp(-1.0)).scale(3.0)).sub(&d.mul(&rp(-2.0)).scale(2.0)),
                    ),
                    (Basis::DrPhi(0), d2.mul(&rp(1.0)).add(&d1)),
                ],
            }
        }
        Equation::BoxPhiTilde => {
            let d2 = Jet::metric(bg, r, 2, n)?;
            let s1 = Jet::pow(r - m, -1.0, n);
            let s2 = Jet::pow(r - m, -2.0, n);
            let rm = rp(1.0).sub(&c(m));
            let a = d.mul(&rp(-1.0)).scale(4.0).sub(&d1).add(&d.mul(&s1).mul(&rp(-1.0)).scale(m));
            let tilde = d2
                .scale(-1.0)
                .add(&d1.mul(&rp(-1.0)).scale(3.0))
                .sub(&d.mul(&rp(-2.0)).scale(2.0))
                .sub(&d.mul(&s2).mul(&rp(-1.0)).scale(m))
                .add(&s1.mul(&rp(-1.0)).mul(&d1.sub(&d.mul(&rp(-1.0)))).scale(m));
            let phi = rm.mul(&d2).add(&d1).add(&rp(-2.0).scale(m * l2));
            Form { target: Basis::PhiTilde, a, terms: vec![(Basis::PhiTilde, tilde), (Basis::DrPhi(0), phi)] }
        }
        Equation::BoxPhi2 | Equation::BoxDrkPhi2(_) => {
            let d2 = Jet::metric(bg, r, 2, n)?;
            let d3 = Jet::metric(bg, r, 3, n)?;
            let a = d.mul(&rp(-1.0)).scale(6.0).sub(&d1.scale(2.0));
            let c2 = d.mul(&rp(-2.0)).scale(-6.0).sub(&d2.scale(3.0)).add(&d1.mul(&rp(-1.0)).scale(7.0));
            let c1 = d3
                .mul(&rp(2.0))
                .scale(-1.0)
                .add(&d2.mul(&rp(1.0)).scale(2.0))
                .add(&d1.scale(2.0));
            let mut c0 = d3.mul(&rp(3.0)).add(&d2.mul(&rp(2.0)).scale(4.0)).add(&d1.mul(&rp(1.0)).scale(2.0));
            let mut c1 = c1;
            if mutation == Some(Mutation::FlipPhi2Source) {
                c0 = c0.scale(-1.0);
                c1 = c1.scale(-1.0);
            }
            Form {
                target: Basis::DrPhi2(0),
                a,
                terms: vec![(Basis::DrPhi2(0), c2), (Basis::Phi, c1), (Basis::DrPhi(0), c0)],
            }
        }
    })
}

/// `□(∂_r Y)` from `□Y`; consumes one jet order.
fn commute_dr(form: Form, bg: &crate::Background, r: f64, ell: f64) -> Result<Form> {
    let n = form.a.depth();
    if n == 0 {
        return Err(Error::InvalidParameter("jet depth exhausted".into()));
    }
    let l2 = ell * (ell + 1.0);
    let m = n - 1;
    let d = Jet::metric(bg, r, 0, m)?;
    let d1 = Jet::metric(bg, r, 1, m)?;
    let d2 = Jet::metric(bg, r, 2, m)?;
    let rp = |p: f64| Jet::pow(r, p, m);
    let (unit, next) = form.target.deriv(r, m)?;
    debug_assert!(unit.value() == 1.0);
    let a_new = form.a.sub(&d1);
    let own = form
        .a
        .deriv()
        .sub(&d2)
        .sub(&d1.mul(&rp(-1.0)).scale(2.0))
        .add(&d.mul(&rp(-2.0)).scale(2.0));
    let mut terms: Vec<(Basis, Jet)> = Vec::new();
    push_term(&mut terms, next, own);
    push_term(&mut terms, form.target, rp(-3.0).scale(-2.0 * l2));
    for (b, c) in &form.terms {
        push_term(&mut terms, *b, c.deriv());
        let (coef, db) = b.deriv(r, m)?;
        let c_trunc = Jet(c.0[..=m].to_vec());
        push_term(&mut terms, db, c_trunc.mul(&coef));
    }
    Ok(Form { target: next, a: a_new, terms })
}

fn form_at(eq: Equation, bg: &crate::Background, r: f64, ell: f64, mutation: Option<Mutation>) -> Result<(Basis, f64, Vec<(Basis, f64)>)> {
    let k = match eq {
        Equation::BoxDrkPhi(k) | Equation::BoxDrkPhi2(k) => k,
        _ => 0,
    };
    let mut form = base_form(eq, bg, r, ell, k, mutation)?;
    for _ in 0..k {
        form = commute_dr(form, bg, r, ell)?;
    }
    let terms = form.terms.iter().map(|(b, c)| (*b, c.value())).collect();
    Ok((form.target, form.a.value(), terms))
}

/// Weighted interior max of `|□X − RHS|·r²` for the named identity.
pub fn commutator_residual(sol: &ModeSolution, eq: Equation) -> Result<f64> {
    commutator_residual_with(sol, eq, &AuditOptions::default())
}

/// The field a commuted equation is written for.
pub fn equation_for(selector: FieldSelector) -> Equation {
    match selector {
        FieldSelector::Phi0 | FieldSelector::DrPhi(0) => Equation::BoxPhi,
        FieldSelector::Phi => Equation::BoxPhiCap,
        FieldSelector::PhiTilde => Equation::BoxPhiTilde,
        FieldSelector::Phi2 | FieldSelector::DrPhi2(0) => Equation::BoxPhi2,
        FieldSelector::DrPhi(k) => Equation::BoxDrkPhi(k),
        FieldSelector::DrPhi2(k) => Equation::BoxDrkPhi2(k),
    }
}

/// `X`, the first-order coefficient `a` per diagonal and the source `S` on
/// the stored rows, for `□X = a ∂_r X − (2/r) T X + S`. Nodes with radius
/// outside `[r_min, r_max]` carry NaN.
#[derive(Debug, Clone)]
pub(crate) struct EquationData {
    pub x: NodeField,
    pub a: Vec<f64>,
    pub s: NodeField,
}

pub(crate) fn equation_data(sol: &ModeSolution, eq: Equation, r_min: f64, r_max: f64, mutation: Option<Mutation>) -> Result<EquationData> {
    let need = required_metric_order(eq);
    if need > sol.bg.max_order() {
        let k = match eq {
            Equation::BoxDrkPhi(k) | Equation::BoxDrkPhi2(k) => k,
            _ => 0,
        };
        return Err(Error::UnsupportedK { k, needed: need, available: sol.bg.max_order() });
    }
    let ell = sol.ell as f64;
    let n_diag = sol.radial.points.len();
    let mut forms: Vec<Option<(Basis, f64, Vec<(Basis, f64)>)>> = vec![None; n_diag];
    for (dg, p) in sol.radial.points.iter().enumerate() {
        if p.r >= r_min && p.r <= r_max {
            forms[dg] = Some(form_at(eq, &sol.bg, p.r, ell, mutation)?);
        }
    }
    let Some((target, _, terms0)) = forms.iter().flatten().next().cloned() else {
        return Err(Error::InsufficientRadialRange(format!("no nodes with r in [{r_min}, {r_max}]")));
    };
    let mut needed: Vec<Basis> = terms0.iter().map(|t| t.0).collect();
    needed.push(target);
    needed.sort();
    needed.dedup();
    let mut fields: Vec<(Basis, NodeField)> = Vec::new();
    for b in needed {
        fields.push((b, derived_field(sol, b.selector())?.field));
    }
    let get = |b: Basis| &fields.iter().find(|f| f.0 == b).expect("basis field").1;
    let cm = fields.iter().map(|f| f.1.col_margin).max().unwrap_or(0);
    let n_u = sol.grid.n_u();
    let (n_rows, n_v) = sol.phi.dim();
    let mut src = Array2::from_elem((n_rows, n_v), f64::NAN);
    for (k, &i) in sol.rows.iter().enumerate() {
        for j in 0..n_v {
            if let Some((_, _, terms)) = &forms[j + n_u - 1 - i] {
                src[[k, j]] = terms.iter().map(|(b, c)| c * get(*b).values[[k, j]]).sum();
            }
        }
    }
    let a = forms.iter().map(|f| f.as_ref().map_or(f64::NAN, |f| f.1)).collect();
    Ok(EquationData {
        x: get(target).clone(),
        a,
        s: NodeField { values: src, row_margin: 0, col_margin: cm },
    })
}

pub fn commutator_residual_with(sol: &ModeSolution, eq: Equation, opts: &AuditOptions) -> Result<f64> {
    let r_min = opts.r_min.unwrap_or(2.0 * sol.bg.r_inner().max(1.0));
    let data = equation_data(sol, eq, r_min, opts.r_max, opts.mutation)?;
    if !sol.has_all_rows() {
        return Err(Error::InsufficientMargin("the audit needs every row stored (stride 1)".into()));
    }
    let l2 = (sol.ell * (sol.ell + 1)) as f64;
    let n_u = sol.grid.n_u();
    let n_v = sol.grid.n_v();
    let x = &data.x;
    let dx = dr_once(sol, x)?;
    let cm = data.s.col_margin.max(dx.col_margin);
    if 2 * cm + 1 >= n_v || n_u < 3 {
        return Err(Error::InsufficientMargin(format!("audit stencils need {cm} columns per side")));
    }
    let h = sol.grid.h;
    let mut worst: f64 = 0.0;
    let mut visited = 0usize;
    for i in 1..n_u - 1 {
        for j in cm..n_v - cm {
            let dg = j + n_u - 1 - i;
            let a = data.a[dg];
            if a.is_nan() {
                continue;
            }
            let r = sol.radial.points[dg].r;
            let d = sol.radial.d[dg];
            let d1 = sol.bg.d_unchecked(r, 1);
            let lbar_dx = (dx.values[[i + 1, j]] - dx.values[[i - 1, j]]) / (2.0 * h);
            let res = -2.0 * lbar_dx + (d1 + 2.0 * d / r - a) * dx.values[[i, j]]
                - l2 * x.values[[i, j]] / (r * r)
                - data.s.values[[i, j]];
            let w = (res * r * r).abs();
            if w.is_nan() {
                return Err(Error::Domain(format!("non-finite residual at (u, v) = ({}, {})", sol.u(i), sol.v(j))));
            }
            worst = worst.max(w);
            visited += 1;
        }
    }
    if visited == 0 {
        return Err(Error::InsufficientRadialRange("audit region contains no interior nodes".into()));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolve::{evolve_mode, GridSpec};
    use crate::initial_data::{bump_data, static_tail_data, BumpShape, CharacteristicData, DataMeta, Profile, StaticIngoing};
    use crate::Background;

    fn schw() -> Background {
        Background::schwarzschild(1.0).unwrap()
    }

    fn flat_sol(f: fn(f64) -> f64, h: f64) -> ModeSolution {
        let bg = Background::minkowski();
        let data = CharacteristicData::from_profiles(
            0,
            (0.0, 20.0),
            Profile::function(f),
            Profile::Constant(f(20.0)),
            DataMeta::default(),
        )
        .unwrap();
        evolve_mode(&bg, &data, &GridSpec::new(0.0, 10.0, 20.0, 80.0, h).unwrap()).unwrap()
    }

    fn max_abs_diff(sol: &ModeSolution, f: &NodeField, exact: impl Fn(usize, usize) -> f64) -> f64 {
        let mut m: f64 = 0.0;
        for (k, &i) in sol.rows.iter().enumerate() {
            for j in f.col_margin..sol.grid.n_v() - f.col_margin {
                m = m.max((f.values[[k, j]] - exact(i, j)).abs());
            }
        }
        m
    }

    #[test]
    fn radial_derivative_of_radius() {
        let sol = flat_sol(|v| v.sin(), 0.25);
        let rf = NodeField { values: sol.radius_grid(), row_margin: 0, col_margin: 0 };
        let d = radial_derivative(&sol, &rf, 1).unwrap();
        assert!(max_abs_diff(&sol, &d, |_, _| 1.0) < 1e-10);
        let r2 = weighted(&sol, &rf, |r| r);
        let d2 = radial_derivative(&sol, &r2, 1).unwrap();
        assert!(max_abs_diff(&sol, &d2, |i, j| 2.0 * sol.r(i, j)) < 1e-9);
        // Schwarzschild: stencil error only
        let bg = schw();
        let d = bump_data(0, 10.0, 20.0, 0.0, BumpShape::PolynomialBump, (0.0, 0.0)).unwrap();
        let s = evolve_mode(&bg, &d, &GridSpec::new(0.0, 10.0, 0.0, 200.0, 0.125).unwrap()).unwrap();
        let rf = NodeField { values: s.radius_grid(), row_margin: 0, col_margin: 0 };
        let dr = radial_derivative(&s, &rf, 1).unwrap();
        let mut m: f64 = 0.0;
        for (k, &i) in s.rows.iter().enumerate() {
            for j in 2..s.grid.n_v() - 2 {
                if s.r(i, j) > 4.0 {
                    m = m.max((dr.values[[k, j]] - 1.0).abs());
                }
            }
        }
        assert!(m < 1e-5, "{m}");
    }

    #[test]
    fn flat_radial_derivative_matches_analytic() {
        let sol = flat_sol(|v| (0.2 * v).sin(), 0.1);
        let d = radial_derivative(&sol, &phi_field(&sol), 1).unwrap();
        let err = max_abs_diff(&sol, &d, |_, j| 0.4 * (0.2 * sol.v(j)).cos());
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn phi_tilde_equals_phi_in_flat_space() {
        let sol = flat_sol(|v| (0.2 * v).sin(), 0.25);
        let a = derived_field(&sol, FieldSelector::Phi).unwrap();
        let b = derived_field(&sol, FieldSelector::PhiTilde).unwrap();
        assert!(a.field.values.iter().zip(b.field.values.iter()).all(|(x, y)| (x.is_nan() && y.is_nan()) || x == y));
    }

    #[test]
    fn zero_solution_gives_zero_fields() {
        let bg = schw();
        let d = bump_data(0, 10.0, 20.0, 0.0, BumpShape::PolynomialBump, (0.0, 0.0)).unwrap();
        let s = evolve_mode(&bg, &d, &GridSpec::new(0.0, 20.0, 0.0, 60.0, 0.5).unwrap()).unwrap();
        for sel in [FieldSelector::Phi, FieldSelector::Phi2, FieldSelector::DrPhi2(2)] {
            let f = derived_field(&s, sel).unwrap();
            assert!(f.field.values.iter().all(|x| x.is_nan() || *x == 0.0));
        }
        for eq in Equation::audit_set() {
            assert_eq!(commutator_residual(&s, eq).unwrap(), 0.0, "{eq}");
        }
    }

    #[test]
    fn phi2_nested_and_direct_agree() {
        let bg = schw();
        let mut diffs = Vec::new();
        for &h in &[0.5, 0.25, 0.125] {
            let d = bump_data(0, 10.0, 40.0, 1.0, BumpShape::Smooth, (0.0, 0.0)).unwrap();
            let s = evolve_mode(&bg, &d, &GridSpec::new(0.0, 20.0, 0.0, 80.0, h).unwrap()).unwrap();
            let nested = derived_field(&s, FieldSelector::Phi2).unwrap().field;
            let direct = phi2_direct(&s).unwrap();
            let mut m: f64 = 0.0;
            for (k, &i) in s.rows.iter().enumerate() {
                for j in 4..s.grid.n_v() - 4 {
                    if s.r(i, j) > 4.0 {
                        m = m.max((nested.values[[k, j]] - direct.values[[k, j]]).abs());
                    }
                }
            }
            diffs.push(m);
        }
        for w in diffs.windows(2) {
            assert!((w[0] / w[1]).log2() > 1.5, "{diffs:?}");
        }
    }

    #[test]
    fn selectors_round_trip_through_strings() {
        for s in [FieldSelector::Phi0, FieldSelector::Phi, FieldSelector::PhiTilde, FieldSelector::Phi2, FieldSelector::DrPhi(2), FieldSelector::DrPhi2(1)] {
            assert_eq!(s.to_string().parse::<FieldSelector>().unwrap(), s);
        }
        for e in Equation::audit_set() {
            assert_eq!(e.to_string().parse::<Equation>().unwrap(), e);
        }
        assert!("box_psi".parse::<Equation>().is_err());
    }

    #[test]
    fn np_constant_of_static_tail() {
        let bg = schw();
        let d = static_tail_data(&bg, 2.0, 2.1, StaticIngoing::Static, (0.0, 0.0)).unwrap();
        let s = evolve_mode(&bg, &d, &GridSpec::new(0.0, 10.0, 0.0, 800.0, 0.5).unwrap()).unwrap();
        let (est, tol) = extract_np_constant(&s, 0.0).unwrap();
        assert!((est - 2.0).abs() <= tol.max(1e-6), "{est} ± {tol}");
        assert!(tol < 1e-3);
        // window changes by ±20%
        let narrow = extract_np_constant_with(&s, 0.0, &ExtractionOptions { r_hi: Some(0.8 * 390.0), ..Default::default() });
        let narrow = narrow.unwrap();
        assert!((narrow.estimate - est).abs() <= narrow.tolerance + tol + 1e-9);
        let wide = extract_np_constant_with(&s, 0.0, &ExtractionOptions { decade: 12.0, ..Default::default() }).unwrap();
        assert!((wide.estimate - est).abs() <= wide.tolerance + tol + 1e-9);
    }

    #[test]
    fn np_constant_vanishes_for_minkowski_and_bumps() {
        let mk = Background::minkowski();
        let d = static_tail_data(&mk, 5.0, 1.0, StaticIngoing::Static, (0.0, 20.0)).unwrap();
        let s = evolve_mode(&mk, &d, &GridSpec::new(0.0, 10.0, 20.0, 800.0, 0.5).unwrap()).unwrap();
        let (est, tol) = extract_np_constant(&s, 0.0).unwrap();
        assert!(est.abs() <= tol, "{est} {tol}");
        let bg = schw();
        let b = bump_data(0, 10.0, 40.0, 1.0, BumpShape::Smooth, (0.0, 0.0)).unwrap();
        let s = evolve_mode(&bg, &b, &GridSpec::new(0.0, 60.0, 0.0, 1000.0, 0.5).unwrap()).unwrap();
        for u in [0.0, 30.0, 60.0] {
            let (est, tol) = extract_np_constant(&s, u).unwrap();
            assert!(est.abs() <= tol, "u={u}: {est} {tol}");
        }
        assert!(matches!(extract_np_constant(&s, 0.3), Err(Error::InvalidParameter(_))));
        let short = evolve_mode(&bg, &b, &GridSpec::new(0.0, 10.0, 0.0, 100.0, 0.5).unwrap()).unwrap();
        assert!(matches!(extract_np_constant(&short, 0.0), Err(Error::InsufficientRadialRange(_))));
    }

    #[test]
    fn np_conservation_on_static_tail() {
        let bg = schw();
        let d = static_tail_data(&bg, 1.0, 2.1, StaticIngoing::Static, (0.0, 0.0)).unwrap();
        let s = evolve_mode(&bg, &d, &GridSpec::new(0.0, 100.0, 0.0, 1200.0, 0.5).unwrap()).unwrap();
        let dev = check_np_conservation(&s, &[0.0, 50.0, 100.0]).unwrap();
        assert!(dev <= 1e-3, "{dev}");
        let z = bump_data(0, 10.0, 40.0, 0.0, BumpShape::Smooth, (0.0, 0.0)).unwrap();
        let s = evolve_mode(&bg, &z, &GridSpec::new(0.0, 100.0, 0.0, 1200.0, 0.5).unwrap()).unwrap();
        assert_eq!(check_np_conservation(&s, &[0.0, 50.0, 100.0]).unwrap(), 0.0);
    }

    #[test]
    fn second_np_constant() {
        let bg = schw();
        // φ ≈ a/r at large r gives I₁ = -a M
        let a = 3.0;
        let out = Profile::function(move |v: f64| {
            let s = ((v - 20.0) / 20.0).clamp(0.0, 1.0);
            let step = s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
            let r = Background::schwarzschild(1.0).unwrap().radius_from_null(0.0, v).unwrap();
            step * a / r
        });
        let data = CharacteristicData::from_profiles(1, (0.0, 0.0), out, Profile::Constant(0.0), DataMeta::default()).unwrap();
        let s = evolve_mode(&bg, &data, &GridSpec::new(0.0, 40.0, 0.0, 1400.0, 0.5).unwrap()).unwrap();
        let (i0, t0) = extract_second_np(&s, 0.0).unwrap();
        assert!((i0 + a).abs() <= t0.max(1e-4), "{i0} ± {t0}");
        let (i1, t1) = extract_second_np(&s, 40.0).unwrap();
        assert!((i1 - i0).abs() <= 1e-2 * a + t0 + t1, "{i0} vs {i1}");
        let scaled = evolve_mode(&bg, &data.scaled(2.0), &GridSpec::new(0.0, 40.0, 0.0, 1400.0, 0.5).unwrap()).unwrap();
        let (i2, _) = extract_second_np(&scaled, 0.0).unwrap();
        assert!((i2 - 2.0 * i0).abs() < 1e-9 * i0.abs());
        let zero = evolve_mode(&bg, &data.scaled(0.0), &GridSpec::new(0.0, 40.0, 0.0, 1400.0, 0.5).unwrap()).unwrap();
        assert_eq!(extract_second_np(&zero, 0.0).unwrap().0, 0.0);
        assert!(matches!(extract_np_constant(&s, 0.0), Err(Error::WrongMode { .. })));
    }

    #[test]
    fn scri_limits_respect_the_weight_table() {
        let bg = schw();
        let b = bump_data(0, 10.0, 40.0, 1.0, BumpShape::Smooth, (0.0, 0.0)).unwrap();
        let s = evolve_mode(&bg, &b, &GridSpec::new(0.0, 40.0, 0.0, 1000.0, 0.5).unwrap()).unwrap();
        let phi = derived_field(&s, FieldSelector::Phi0).unwrap();
        let (f, tol) = scri_limit(&s, &phi, 0.0, 40.0).unwrap();
        assert!(f.is_finite() && tol < 1e-2 * f.abs().max(1e-12));
        let p2 = derived_field(&s, FieldSelector::Phi2).unwrap();
        let (v, tol) = scri_limit(&s, &p2, -1.0, 40.0).unwrap();
        assert!(v.abs() <= tol.max(1e-6), "{v} {tol}");
        assert!(matches!(scri_limit(&s, &p2, 1.0, 40.0), Err(Error::WeightOutOfRange { .. })));
        assert!(matches!(scri_limit(&s, &phi, 0.5, 40.0), Err(Error::WeightOutOfRange { .. })));
    }

    #[test]
    fn flat_box_phi_is_exact() {
        let sol = flat_sol(|v| (0.2 * v).sin() * (-(v - 50.0).powi(2) / 200.0).exp(), 0.25);
        let r = commutator_residual(&sol, Equation::BoxPhi).unwrap();
        assert!(r < 1e-10, "{r}");
    }

    #[test]
    fn unsupported_k_for_short_custom_metrics() {
        let metric = crate::CustomMetric {
            name: "schw3".into(),
            mass: 1.0,
            max_order: 3,
            eval: Box::new(|r, n| match n {
                0 => 1.0 - 2.0 / r,
                _ => {
                    let f: f64 = (1..=n).map(|k| k as f64).product();
                    -2.0 * (-1.0f64).powi(n as i32) * f * r.powi(-(n as i32) - 1)
                }
            }),
        };
        let bg = Background::custom(metric).unwrap();
        let b = bump_data(0, 10.0, 40.0, 1.0, BumpShape::Smooth, (0.0, 0.0)).unwrap();
        let s = evolve_mode(&bg, &b, &GridSpec::new(0.0, 10.0, 0.0, 60.0, 0.5).unwrap()).unwrap();
        assert!(commutator_residual(&s, Equation::BoxPhi2).is_ok());
        assert!(matches!(commutator_residual(&s, Equation::BoxDrkPhi2(1)), Err(Error::UnsupportedK { .. })));
    }

    fn audit_orders(bg: &Background, ell: usize, eqs: &[Equation]) -> Vec<(Equation, f64, Vec<f64>)> {
        let sols: Vec<ModeSolution> = [0.2, 0.1, 0.05]
            .iter()
            .map(|&h| {
                let b = bump_data(ell, 10.0, 50.0, 1.0, BumpShape::Smooth, (0.0, 0.0)).unwrap();
                evolve_mode(bg, &b, &GridSpec::new(0.0, 20.0, 0.0, 80.0, h).unwrap()).unwrap()
            })
            .collect();
        eqs.iter()
            .map(|&eq| {
                let res: Vec<f64> = sols.iter().map(|s| commutator_residual(s, eq).unwrap()).collect();
                ((eq), (res[1] / res[2]).log2(), res)
            })
            .collect()
    }

    #[test]
    fn appendix_identities_converge() {
        for (bg, ell) in [(schw(), 0), (schw(), 1), (Background::reissner_nordstrom(1.0, 0.6).unwrap(), 1)] {
            for (eq, order, res) in audit_orders(&bg, ell, &Equation::audit_set()) {
                assert!(order >= 1.5, "{} l={ell} {eq}: order {order} residuals {res:?}", bg.describe());
            }
        }
    }

    #[test]
    fn mutation_is_detected() {
        let bg = schw();
        let opts = AuditOptions { mutation: Some(Mutation::FlipPhi2Source), ..Default::default() };
        let res: Vec<f64> = [0.2, 0.1, 0.05]
            .iter()
            .map(|&h| {
                let b = bump_data(0, 10.0, 50.0, 1.0, BumpShape::Smooth, (0.0, 0.0)).unwrap();
                let s = evolve_mode(&bg, &b, &GridSpec::new(0.0, 20.0, 0.0, 80.0, h).unwrap()).unwrap();
                commutator_residual_with(&s, Equation::BoxPhi2, &opts).unwrap()
            })
            .collect();
        assert!((res[1] / res[2]).log2() < 0.5, "{res:?}");
    }
}
