//! Characteristic data for one mode on the rays `{u = u0}` and `{v = v0}`.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use crate::background::{Background, BackgroundKind, RadialPoint};
use crate::error::{Error, Result};
use crate::evolve::ModeSolution;
use crate::grid::GridSpec;
use crate::quadrature;

/// A function of one null coordinate.
#[derive(Clone)]
pub enum Profile {
    Constant(f64),
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    /// Piecewise-linear interpolation of sorted nodes.
    Table(Arc<(Vec<f64>, Vec<f64>)>),
    Scaled(f64, Box<Profile>),
    Sum(Box<Profile>, Box<Profile>),
    /// `p(x - shift)`.
    Shifted(f64, Box<Profile>),
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Profile::Constant(c) => write!(f, "Constant({c})"),
            Profile::Function(_) => write!(f, "Function"),
            Profile::Table(t) => write!(f, "Table({} nodes)", t.0.len()),
            Profile::Scaled(a, p) => write!(f, "Scaled({a}, {p:?})"),
            Profile::Sum(a, b) => write!(f, "Sum({a:?}, {b:?})"),
            Profile::Shifted(s, p) => write!(f, "Shifted({s}, {p:?})"),
        }
    }
}

impl Profile {
    pub fn function<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Profile::Function(Arc::new(f))
    }

    pub fn table(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() || x.len() < 2 {
            return Err(Error::InvalidParameter("table needs at least two (x, y) nodes".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("table abscissae must be strictly increasing".into()));
        }
        Ok(Profile::Table(Arc::new((x, y))))
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Profile::Constant(c) => *c,
            Profile::Function(f) => f(x),
            Profile::Table(t) => {
                let (xs, ys) = (&t.0, &t.1);
                let n = xs.len();
                let tol = 1e-9 * (xs[n - 1] - xs[0]);
                if x < xs[0] - tol || x > xs[n - 1] + tol {
                    return f64::NAN;
                }
                let k = match xs.binary_search_by(|p| p.total_cmp(&x)) {
                    Ok(k) => return ys[k],
                    Err(k) => k.clamp(1, n - 1),
                };
                let w = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
                ys[k - 1] + w * (ys[k] - ys[k - 1])
            }
            Profile::Scaled(a, p) => a * p.eval(x),
            Profile::Sum(a, b) => a.eval(x) + b.eval(x),
            Profile::Shifted(s, p) => p.eval(x - s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BumpShape {
    /// `a (v - v_lo)^4 (v_hi - v)^4`.
    PolynomialBump,
    /// Gaussian of width `(v_hi - v_lo)/6` tapered by `(1 - s^2)^3`.
    GaussianTruncated,
    /// `a exp(1 - 1/(1 - s^2))` with `s` the scaled offset from the centre; C∞.
    Smooth,
}

/// Ingoing-ray data for the static-tail family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StaticIngoing {
    /// Same radial profile on `{v = v0}`: the evolved field is static.
    Static,
    /// `φ_c - s w tanh((u - u0)/w)` with `s = ∂_v φ` of the static profile at
    /// the corner. `Tφ` vanishes on `{u = u0}` and the solution decays.
    Quenched { width: f64 },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataMeta {
    pub family: String,
    pub params: Vec<(String, String)>,
}

impl DataMeta {
    fn new(family: &str, params: &[(&str, String)]) -> Self {
        DataMeta {
            family: family.to_string(),
            params: params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        }
    }

    pub fn describe(&self) -> String {
        let mut s = self.family.clone();
        for (k, v) in &self.params {
            s.push_str(&format!(" {k}={v}"));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct CharacteristicData {
    pub ell: usize,
    pub u0: f64,
    pub v0: f64,
    /// φ on `{u = u0}` as a function of v.
    pub phi_on_u0: Profile,
    /// φ on `{v = v0}` as a function of u.
    pub phi_on_v0: Profile,
    pub corner_value: f64,
    pub predicted_i0: Option<f64>,
    /// Interval outside of which the outgoing data vanishes, if compact.
    pub support: Option<(f64, f64)>,
    pub meta: DataMeta,
}

/// Compactly supported outgoing data with vanishing ingoing data.
pub fn bump_data(
    ell: usize,
    v_lo: f64,
    v_hi: f64,
    amplitude: f64,
    shape: BumpShape,
    origin: (f64, f64),
) -> Result<CharacteristicData> {
    let (u0, v0) = origin;
    if !(v_lo < v_hi) || !v_lo.is_finite() || !v_hi.is_finite() {
        return Err(Error::BadSupport(format!("empty support interval [{v_lo}, {v_hi}]")));
    }
    if v_lo < v0 {
        return Err(Error::BadSupport(format!("support starts at {v_lo}, before v0 = {v0}")));
    }
    if !amplitude.is_finite() {
        return Err(Error::InvalidParameter(format!("amplitude {amplitude} is not finite")));
    }
    let profile = match shape {
        BumpShape::PolynomialBump => Profile::function(move |v| {
            if v <= v_lo || v >= v_hi {
                0.0
            } else {
                amplitude * ((v - v_lo) * (v_hi - v)).powi(4)
            }
        }),
        BumpShape::GaussianTruncated => {
            let c = 0.5 * (v_lo + v_hi);
            let half = 0.5 * (v_hi - v_lo);
            let sigma = (v_hi - v_lo) / 6.0;
            Profile::function(move |v| {
                if v <= v_lo || v >= v_hi {
                    0.0
                } else {
                    let s = (v - c) / half;
                    amplitude * (-(v - c) * (v - c) / (2.0 * sigma * sigma)).exp() * (1.0 - s * s).powi(3)
                }
            })
        }
        BumpShape::Smooth => {
            let c = 0.5 * (v_lo + v_hi);
            let half = 0.5 * (v_hi - v_lo);
            Profile::function(move |v| {
                let s = (v - c) / half;
                if s.abs() >= 1.0 {
                    0.0
                } else {
                    amplitude * (1.0 - 1.0 / (1.0 - s * s)).exp()
                }
            })
        }
    };
    let shape_name = match shape {
        BumpShape::PolynomialBump => "polynomial_bump",
        BumpShape::GaussianTruncated => "gaussian_truncated",
        BumpShape::Smooth => "smooth_bump",
    };
    Ok(CharacteristicData {
        ell,
        u0,
        v0,
        phi_on_u0: profile,
        phi_on_v0: Profile::Constant(0.0),
        corner_value: 0.0,
        predicted_i0: Some(0.0),
        support: Some((v_lo, v_hi)),
        meta: DataMeta::new(
            "bump",
            &[
                ("ell", ell.to_string()),
                ("v_lo", v_lo.to_string()),
                ("v_hi", v_hi.to_string()),
                ("amplitude", amplitude.to_string()),
                ("shape", shape_name.to_string()),
            ],
        ),
    })
}

/// `∫_r^∞ dr' / (r'^2 D(r'))` at a radial point.
pub fn static_tail_integral(bg: &Background, p: RadialPoint) -> Result<f64> {
    match bg.kind() {
        BackgroundKind::Minkowski => Ok(1.0 / p.r),
        BackgroundKind::Schwarzschild | BackgroundKind::ReissnerNordstrom => {
            if bg.is_extremal() {
                Ok(1.0 / p.offset)
            } else {
                let rp = bg.r_inner();
                let delta = rp - (2.0 * bg.mass() - rp);
                Ok((delta / p.offset).ln_1p() / delta)
            }
        }
        BackgroundKind::CustomD => static_tail_integral_numeric(bg, p.r),
    }
}

/// Quadrature route for [`static_tail_integral`]; analytic expansion beyond
/// `10^4 M`.
pub fn static_tail_integral_numeric(bg: &Background, r: f64) -> Result<f64> {
    let m = bg.mass();
    let q2 = bg.charge() * bg.charge();
    let far = 1e4 * m.max(1.0);
    let tail = |x: f64| 1.0 / x + m / (x * x) + (4.0 * m * m - q2) / (3.0 * x * x * x);
    if r >= far {
        return Ok(tail(r));
    }
    let integrand = |x: f64| 1.0 / (x * x * bg.metric_d(x, 0).unwrap_or(f64::NAN));
    let body = quadrature::integrate(integrand, r, far, 1e-16, 1e-13)?;
    Ok(body + tail(far))
}

/// Static solution `ψ̃ = -C0 ∫_r^∞ dr'/(r'^2 D)` sampled as `φ = r ψ̃`.
pub fn static_tail_data(
    bg: &Background,
    c0: f64,
    r_min_data: f64,
    ingoing: StaticIngoing,
    origin: (f64, f64),
) -> Result<CharacteristicData> {
    if !c0.is_finite() {
        return Err(Error::InvalidParameter(format!("C0 = {c0} is not finite")));
    }
    if !(r_min_data > bg.r_inner()) {
        return Err(Error::Domain(format!(
            "r_min_data = {r_min_data} must exceed the horizon radius {}",
            bg.r_inner()
        )));
    }
    let (u0, v0) = origin;
    let corner = bg.point_from_tortoise(0.5 * (v0 - u0))?;
    if corner.r < r_min_data * (1.0 - 1e-12) {
        return Err(Error::Domain(format!(
            "corner radius {} lies below r_min_data = {r_min_data}",
            corner.r
        )));
    }
    let phi_at = {
        let bg = bg.clone();
        move |rstar: f64| -> f64 {
            match bg.point_from_tortoise(rstar) {
                Ok(p) => match static_tail_integral(&bg, p) {
                    Ok(i) => -c0 * p.r * i,
                    Err(_) => f64::NAN,
                },
                Err(_) => f64::NAN,
            }
        }
    };
    let corner_value = -c0 * corner.r * static_tail_integral(bg, corner)?;
    let out = {
        let f = phi_at.clone();
        Profile::function(move |v| f(0.5 * (v - u0)))
    };
    let (inn, ingoing_name) = match ingoing {
        StaticIngoing::Static => {
            let f = phi_at;
            (Profile::function(move |u| f(0.5 * (v0 - u))), "static".to_string())
        }
        StaticIngoing::Quenched { width } => {
            if !(width > 0.0) {
                return Err(Error::InvalidParameter(format!("quench width {width} must be positive")));
            }
            let d = bg.d_at(corner);
            let psi = corner_value / corner.r;
            let slope = 0.5 * d * psi + 0.5 * c0 / corner.r;
            (
                Profile::function(move |u| corner_value - slope * width * ((u - u0) / width).tanh()),
                format!("quenched(width={width})"),
            )
        }
    };
    Ok(CharacteristicData {
        ell: 0,
        u0,
        v0,
        phi_on_u0: out,
        phi_on_v0: inn,
        corner_value,
        predicted_i0: Some(c0 * bg.mass()),
        support: None,
        meta: DataMeta::new(
            "static_tail",
            &[
                ("C0", c0.to_string()),
                ("r_min_data", r_min_data.to_string()),
                ("ingoing", ingoing_name),
                ("background", bg.describe()),
            ],
        ),
    })
}

/// Outgoing data read from a two-column `(v, φ)` text file.
///
/// Lines starting with `#` are skipped; values are linearly interpolated and
/// the ingoing ray carries the constant corner value.
pub fn tabulated_data(ell: usize, path: &Path, origin: (f64, f64)) -> Result<CharacteristicData> {
    let text = std::fs::read_to_string(path)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty());
        let parse = |s: Option<&str>| -> Result<f64> {
            s.ok_or_else(|| Error::Format(format!("line {}: expected two columns", n + 1)))?
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))
        };
        xs.push(parse(it.next())?);
        ys.push(parse(it.next())?);
    }
    let profile = Profile::table(xs, ys)?;
    let corner_value = profile.eval(origin.1);
    if !corner_value.is_finite() {
        return Err(Error::BadSupport(format!("table does not cover v0 = {}", origin.1)));
    }
    Ok(CharacteristicData {
        ell,
        u0: origin.0,
        v0: origin.1,
        phi_on_u0: profile,
        phi_on_v0: Profile::Constant(corner_value),
        corner_value,
        predicted_i0: None,
        support: None,
        meta: DataMeta::new("tabulated", &[("path", path.display().to_string())]),
    })
}

impl CharacteristicData {
    /// Data on an arbitrary pair of profiles; the corner is taken from the
    /// outgoing profile and must match the ingoing one.
    pub fn from_profiles(
        ell: usize,
        origin: (f64, f64),
        phi_on_u0: Profile,
        phi_on_v0: Profile,
        meta: DataMeta,
    ) -> Result<Self> {
        let c_out = phi_on_u0.eval(origin.1);
        let c_in = phi_on_v0.eval(origin.0);
        if !(c_out.is_finite() && c_in.is_finite()) {
            return Err(Error::BadSupport("profiles undefined at the corner".into()));
        }
        if (c_out - c_in).abs() > 1e-12 * c_out.abs().max(c_in.abs()).max(1e-300) {
            return Err(Error::InvalidParameter(format!(
                "corner mismatch: outgoing {c_out} vs ingoing {c_in}"
            )));
        }
        Ok(CharacteristicData {
            ell,
            u0: origin.0,
            v0: origin.1,
            phi_on_u0,
            phi_on_v0,
            corner_value: c_out,
            predicted_i0: None,
            support: None,
            meta,
        })
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut d = self.clone();
        d.phi_on_u0 = Profile::Scaled(a, Box::new(self.phi_on_u0.clone()));
        d.phi_on_v0 = Profile::Scaled(a, Box::new(self.phi_on_v0.clone()));
        d.corner_value = a * self.corner_value;
        d.predicted_i0 = self.predicted_i0.map(|x| a * x);
        d.meta.params.push(("scale".into(), a.to_string()));
        d
    }

    pub fn sum(&self, other: &CharacteristicData) -> Result<Self> {
        if self.ell != other.ell {
            return Err(Error::WrongMode { expected: self.ell, got: other.ell });
        }
        if self.u0 != other.u0 || self.v0 != other.v0 {
            return Err(Error::InvalidParameter("data origins differ".into()));
        }
        let support = match (self.support, other.support) {
            (Some(a), Some(b)) => Some((a.0.min(b.0), a.1.max(b.1))),
            _ => None,
        };
        Ok(CharacteristicData {
            ell: self.ell,
            u0: self.u0,
            v0: self.v0,
            phi_on_u0: Profile::Sum(Box::new(self.phi_on_u0.clone()), Box::new(other.phi_on_u0.clone())),
            phi_on_v0: Profile::Sum(Box::new(self.phi_on_v0.clone()), Box::new(other.phi_on_v0.clone())),
            corner_value: self.corner_value + other.corner_value,
            predicted_i0: match (self.predicted_i0, other.predicted_i0) {
                (Some(a), Some(b)) => Some(a + b),
                _ => None,
            },
            support,
            meta: DataMeta {
                family: format!("{}+{}", self.meta.family, other.meta.family),
                params: [self.meta.params.clone(), other.meta.params.clone()].concat(),
            },
        })
    }

    /// Data translated by `delta` in both u and v.
    pub fn shifted(&self, delta: f64) -> Self {
        let mut d = self.clone();
        d.u0 += delta;
        d.v0 += delta;
        d.phi_on_u0 = Profile::Shifted(delta, Box::new(self.phi_on_u0.clone()));
        d.phi_on_v0 = Profile::Shifted(delta, Box::new(self.phi_on_v0.clone()));
        d.support = self.support.map(|(a, b)| (a + delta, b + delta));
        d
    }

    fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        let tol = 1e-9 * grid.h;
        if (grid.u0 - self.u0).abs() > tol || (grid.v0 - self.v0).abs() > tol {
            return Err(Error::InvalidParameter(format!(
                "data origin ({}, {}) differs from grid origin ({}, {})",
                self.u0, self.v0, grid.u0, grid.v0
            )));
        }
        if let Some((lo, hi)) = self.support {
            if lo < grid.v0 - tol || hi > grid.v1 + tol {
                return Err(Error::BadSupport(format!(
                    "support [{lo}, {hi}] outside grid v-range [{}, {}]",
                    grid.v0, grid.v1
                )));
            }
        }
        Ok(())
    }

    /// φ at the v-nodes of `{u = u0}`; the first entry is the corner value.
    pub fn sample_outgoing(&self, grid: &GridSpec) -> Result<Vec<f64>> {
        self.check_grid(grid)?;
        let mut out: Vec<f64> = (0..grid.n_v()).map(|j| self.phi_on_u0.eval(grid.v_at(j))).collect();
        out[0] = self.corner_value;
        if let Some(j) = out.iter().position(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("outgoing data undefined at v = {}", grid.v_at(j))));
        }
        Ok(out)
    }

    /// φ at the u-nodes of `{v = v0}`; the first entry is the corner value.
    pub fn sample_ingoing(&self, grid: &GridSpec) -> Result<Vec<f64>> {
        self.check_grid(grid)?;
        let mut out: Vec<f64> = (0..grid.n_u()).map(|i| self.phi_on_v0.eval(grid.u_at(i))).collect();
        out[0] = self.corner_value;
        if let Some(i) = out.iter().position(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("ingoing data undefined at u = {}", grid.u_at(i))));
        }
        Ok(out)
    }
}

/// Data for `Tφ = ∂_uφ + ∂_vφ` sampled from a solution, posed on the
/// rectangle with origin `(u0 + h, v0 + h)`; this origin only needs the
/// rows and columns every solution keeps.
pub fn time_derivative_data(base: &CharacteristicData, sol: &ModeSolution) -> Result<CharacteristicData> {
    let g = &sol.grid;
    let tol = 1e-9 * g.h;
    if (g.u0 - base.u0).abs() > tol || (g.v0 - base.v0).abs() > tol || sol.ell != base.ell {
        return Err(Error::InvalidParameter("solution was not evolved from this data".into()));
    }
    let (n_u, n_v) = (g.n_u(), g.n_v());
    if n_u < 3 || n_v < 3 {
        return Err(Error::InsufficientMargin(format!(
            "T stencils need at least 3 nodes per direction, grid has {n_u} x {n_v}"
        )));
    }
    let inv = 1.0 / (2.0 * g.h);
    // Row i = 1 over columns 1..n_v-1; rows 0..=2 are always stored.
    let (r0, r1, r2) = (sol.phi.row(0), sol.phi.row(1), sol.phi.row(2));
    // The last node uses a one-sided second-order difference.
    let vs: Vec<f64> = (1..n_v).map(|j| g.v_at(j)).collect();
    let out: Vec<f64> = (1..n_v)
        .map(|j| {
            let dv = if j + 1 < n_v {
                r1[j + 1] - r1[j - 1]
            } else {
                3.0 * r1[j] - 4.0 * r1[j - 1] + r1[j - 2]
            };
            (r2[j] - r0[j]) * inv + dv * inv
        })
        .collect();
    // Column j = 1 over rows 1..n_u from the inner strip.
    let us: Vec<f64> = (1..n_u).map(|i| g.u_at(i)).collect();
    let inn: Vec<f64> = (1..n_u)
        .map(|i| {
            let du = if i + 1 < n_u {
                sol.inner[[i + 1, 1]] - sol.inner[[i - 1, 1]]
            } else {
                3.0 * sol.inner[[i, 1]] - 4.0 * sol.inner[[i - 1, 1]] + sol.inner[[i - 2, 1]]
            };
            du * inv + (sol.inner[[i, 2]] - sol.inner[[i, 0]]) * inv
        })
        .collect();
    let corner = out[0];
    let mut inn = inn;
    inn[0] = corner;
    let (phi_on_u0, phi_on_v0) = if vs.len() >= 2 && us.len() >= 2 {
        (Profile::table(vs, out)?, Profile::table(us, inn)?)
    } else {
        return Err(Error::InsufficientMargin("derived data rectangle is degenerate".into()));
    };
    let mut params = vec![("base".to_string(), base.meta.family.clone())];
    params.extend(base.meta.params.iter().cloned());
    Ok(CharacteristicData {
        ell: base.ell,
        u0: g.u_at(1),
        v0: g.v_at(1),
        phi_on_u0,
        phi_on_v0,
        corner_value: corner,
        predicted_i0: Some(0.0),
        support: None,
        meta: DataMeta { family: "time_derivative".into(), params },
    })
}
