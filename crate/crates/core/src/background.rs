//! Spherically symmetric metric families `g = -D du^2 - 2 du dr + r^2 dω^2`.
//!
//! Radii near the horizon are carried as the pair `(r, r - r_plus)` so that
//! `D` stays accurate when the offset is far below the rounding unit of `r`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quadrature;

/// Highest derivative order of `D` provided by the built-in families.
pub const BUILTIN_MAX_ORDER: usize = 8;

const ROOT_REL_TOL: f64 = 1e-14;
const ROOT_MAX_ITER: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackgroundKind {
    Minkowski,
    Schwarzschild,
    ReissnerNordstrom,
    CustomD,
}

impl BackgroundKind {
    pub fn name(self) -> &'static str {
        match self {
            BackgroundKind::Minkowski => "minkowski",
            BackgroundKind::Schwarzschild => "schwarzschild",
            BackgroundKind::ReissnerNordstrom => "reissner_nordstrom",
            BackgroundKind::CustomD => "custom",
        }
    }
}

/// User-supplied metric function. `eval(r, n)` must return `D^(n)(r)` for
/// every `n <= max_order`.
pub struct CustomMetric {
    pub name: String,
    pub mass: f64,
    pub max_order: usize,
    pub eval: Box<dyn Fn(f64, usize) -> f64 + Send + Sync>,
}

impl fmt::Debug for CustomMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomMetric")
            .field("name", &self.name)
            .field("mass", &self.mass)
            .field("max_order", &self.max_order)
            .finish()
    }
}

/// A radius together with its offset from the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialPoint {
    pub r: f64,
    /// `r - r_plus`, computed without cancellation.
    pub offset: f64,
}

#[derive(Debug, Clone)]
pub struct Background {
    kind: BackgroundKind,
    mass: f64,
    charge: f64,
    r_plus: f64,
    r_minus: f64,
    r_norm: f64,
    has_horizon: bool,
    extremal: bool,
    custom: Option<Arc<CustomMetric>>,
}

impl Background {
    pub fn minkowski() -> Self {
        Background {
            kind: BackgroundKind::Minkowski,
            mass: 0.0,
            charge: 0.0,
            r_plus: 0.0,
            r_minus: 0.0,
            r_norm: 10.0,
            has_horizon: false,
            extremal: false,
            custom: None,
        }
    }

    pub fn schwarzschild(mass: f64) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidParameter(format!("mass must be positive, got {mass}")));
        }
        Ok(Background {
            kind: BackgroundKind::Schwarzschild,
            mass,
            charge: 0.0,
            r_plus: 2.0 * mass,
            r_minus: 0.0,
            r_norm: 10.0 * mass,
            has_horizon: true,
            extremal: false,
            custom: None,
        })
    }

    /// Reissner–Nordström with `|e| <= M`; `|e| == M` is flagged extremal.
    pub fn reissner_nordstrom(mass: f64, charge: f64) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite() && charge.is_finite()) {
            return Err(Error::InvalidParameter(format!("invalid RN parameters M={mass}, e={charge}")));
        }
        if charge.abs() > mass {
            return Err(Error::InvalidParameter(format!("|e| = {} exceeds M = {mass}", charge.abs())));
        }
        let disc = ((mass - charge.abs()) * (mass + charge.abs())).max(0.0).sqrt();
        Ok(Background {
            kind: BackgroundKind::ReissnerNordstrom,
            mass,
            charge,
            r_plus: mass + disc,
            r_minus: mass - disc,
            r_norm: 10.0 * mass,
            has_horizon: true,
            extremal: disc == 0.0,
            custom: None,
        })
    }

    /// Custom `D`; the horizon is located as the largest sign change of `D`.
    pub fn custom(metric: CustomMetric) -> Result<Self> {
        if metric.max_order < 3 {
            return Err(Error::InvalidParameter("custom D must supply at least 3 derivatives".into()));
        }
        if !(metric.mass >= 0.0 && metric.mass.is_finite()) {
            return Err(Error::InvalidParameter("custom mass must be finite and non-negative".into()));
        }
        let d = |r: f64| (metric.eval)(r, 0);
        let scale = metric.mass.max(1.0);
        let mut hi = 1e3 * scale;
        if !(d(hi) > 0.0) {
            return Err(Error::InvalidParameter("custom D must be positive at large r".into()));
        }
        let mut root = None;
        while hi > 1e-8 * scale {
            let lo = hi * 0.97;
            if d(lo) <= 0.0 {
                let (mut a, mut b) = (lo, hi);
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    if d(m) <= 0.0 {
                        a = m;
                    } else {
                        b = m;
                    }
                    if b - a <= 1e-15 * b {
                        break;
                    }
                }
                root = Some(b);
                break;
            }
            hi = lo;
        }
        let (r_plus, has_horizon) = match root {
            Some(r) => (r, true),
            None => (0.0, false),
        };
        let mass = metric.mass;
        Ok(Background {
            kind: BackgroundKind::CustomD,
            mass,
            charge: 0.0,
            r_plus,
            r_minus: 0.0,
            r_norm: 10.0 * scale,
            has_horizon,
            extremal: false,
            custom: Some(Arc::new(metric)),
        })
    }

    /// Sets the tortoise normalization radius `R`, so that `r*(R) = R`.
    pub fn with_r_norm(mut self, r_norm: f64) -> Result<Self> {
        if !(r_norm > self.r_plus && r_norm.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "R_norm = {r_norm} must exceed the horizon radius {}",
                self.r_plus
            )));
        }
        self.r_norm = r_norm;
        Ok(self)
    }

    pub fn kind(&self) -> BackgroundKind {
        self.kind
    }
    pub fn mass(&self) -> f64 {
        self.mass
    }
    pub fn charge(&self) -> f64 {
        self.charge
    }
    pub fn r_norm(&self) -> f64 {
        self.r_norm
    }
    pub fn is_extremal(&self) -> bool {
        self.extremal
    }

    /// Inner boundary of the exterior: the horizon, or 0 without one.
    pub fn r_inner(&self) -> f64 {
        self.r_plus
    }

    /// Largest root of `D`. Minkowski reports 0.
    pub fn horizon_radius(&self) -> Result<f64> {
        match self.kind {
            BackgroundKind::Minkowski => Ok(0.0),
            _ if self.has_horizon => Ok(self.r_plus),
            _ => Err(Error::NoHorizon),
        }
    }

    /// Number of `D` derivatives available.
    pub fn max_order(&self) -> usize {
        match &self.custom {
            Some(c) => c.max_order,
            None => BUILTIN_MAX_ORDER,
        }
    }

    /// Short description used in provenance records.
    pub fn describe(&self) -> String {
        match self.kind {
            BackgroundKind::Minkowski => format!("minkowski R_norm={}", self.r_norm),
            BackgroundKind::Schwarzschild => format!("schwarzschild M={} R_norm={}", self.mass, self.r_norm),
            BackgroundKind::ReissnerNordstrom => {
                format!("reissner_nordstrom M={} e={} R_norm={}", self.mass, self.charge, self.r_norm)
            }
            BackgroundKind::CustomD => format!(
                "custom:{} M={} R_norm={}",
                self.custom.as_ref().map(|c| c.name.as_str()).unwrap_or(""),
                self.mass,
                self.r_norm
            ),
        }
    }

    fn check_radius(&self, r: f64) -> Result<()> {
        let ok = match self.kind {
            BackgroundKind::Minkowski => r > 0.0,
            _ if self.has_horizon => r >= self.r_plus,
            _ => r > 0.0,
        };
        if ok && r.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain(format!("r = {r} is outside the exterior (r_plus = {})", self.r_plus)))
        }
    }

    /// `D^(order)(r)`. Defined on the closed exterior `r >= r_plus`.
    pub fn metric_d(&self, r: f64, order: usize) -> Result<f64> {
        self.check_radius(r)?;
        let max = self.max_order();
        if order > max {
            return Err(Error::UnsupportedOrder { order, max });
        }
        Ok(self.d_unchecked(r, order))
    }

    pub(crate) fn d_unchecked(&self, r: f64, order: usize) -> f64 {
        if let Some(c) = &self.custom {
            return (c.eval)(r, order);
        }
        let m = self.mass;
        let q2 = self.charge * self.charge;
        if order == 0 {
            return 1.0 - 2.0 * m / r + q2 / (r * r);
        }
        // d^n/dr^n r^-1 = (-1)^n n! r^-(n+1);  d^n/dr^n r^-2 = (-1)^n (n+1)! r^-(n+2)
        let n = order as i32;
        let mut fact = 1.0;
        for k in 2..=order {
            fact *= k as f64;
        }
        let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
        sign * (-2.0 * m * fact * r.powi(-(n + 1)) + q2 * fact * (n as f64 + 1.0) * r.powi(-(n + 2)))
    }

    /// `D` at a radial point, accurate near the horizon.
    pub fn d_at(&self, p: RadialPoint) -> f64 {
        match self.kind {
            BackgroundKind::Minkowski => 1.0,
            BackgroundKind::Schwarzschild | BackgroundKind::ReissnerNordstrom => {
                p.offset * (p.offset + self.r_plus - self.r_minus) / (p.r * p.r)
            }
            BackgroundKind::CustomD => self.d_unchecked(p.r, 0),
        }
    }

    pub fn point(&self, r: f64) -> Result<RadialPoint> {
        self.check_radius(r)?;
        Ok(RadialPoint { r, offset: r - self.r_plus })
    }

    /// Tortoise coordinate with `dr*/dr = 1/D` and `r*(R_norm) = R_norm`.
    pub fn tortoise(&self, r: f64) -> Result<f64> {
        self.check_radius(r)?;
        if self.has_horizon && r == self.r_plus {
            return Ok(f64::NEG_INFINITY);
        }
        match self.kind {
            BackgroundKind::CustomD => self.custom_tortoise(r),
            _ => {
                let x = r - self.r_plus;
                Ok(self.tortoise_log_offset(x.ln(), x))
            }
        }
    }

    /// Built-in tortoise as a function of `y = ln(r - r_plus)`.
    fn tortoise_log_offset(&self, y: f64, x: f64) -> f64 {
        let big_r = self.r_norm;
        match self.kind {
            BackgroundKind::Minkowski => x,
            _ if self.extremal => {
                let m = self.mass;
                let r = self.r_plus + x;
                r + 2.0 * m * (y - (big_r - m).ln()) - m * m * (-y).exp() + m * m / (big_r - m)
            }
            _ => {
                let rp = self.r_plus;
                let rm = self.r_minus;
                let delta = rp - rm;
                let a = rp * rp / delta;
                let mut s = rp + x + a * (y - (big_r - rp).ln());
                if rm > 0.0 {
                    let b = rm * rm / delta;
                    s -= b * ((x + delta) / (big_r - rm)).ln();
                }
                s
            }
        }
    }

    /// `d r* / d ln(r - r_plus)` for the built-ins.
    fn tortoise_log_offset_slope(&self, x: f64) -> f64 {
        let r = self.r_plus + x;
        if self.extremal {
            r * r / x
        } else {
            r * r / (x + self.r_plus - self.r_minus)
        }
    }

    fn custom_tortoise(&self, r: f64) -> Result<f64> {
        let c = self.custom.as_ref().expect("custom metric");
        let f = |s: f64| 1.0 / (c.eval)(s, 0);
        let v = quadrature::integrate(f, self.r_norm, r, 1e-13, 1e-13)?;
        Ok(self.r_norm + v)
    }

    /// Radius at tortoise value `rstar`, i.e. where `v - u = 2 rstar`.
    pub fn point_from_tortoise(&self, rstar: f64) -> Result<RadialPoint> {
        if !rstar.is_finite() {
            return Err(Error::Domain(format!("tortoise value {rstar} is not finite")));
        }
        match self.kind {
            BackgroundKind::Minkowski => {
                if rstar > 0.0 {
                    Ok(RadialPoint { r: rstar, offset: rstar })
                } else {
                    Err(Error::Domain(format!("r* = {rstar} does not meet the exterior r > 0")))
                }
            }
            BackgroundKind::CustomD => self.custom_inverse(rstar),
            _ => self.builtin_inverse(rstar),
        }
    }

    /// Radius where the null pair `(u, v)` intersects.
    pub fn radius_from_null(&self, u: f64, v: f64) -> Result<f64> {
        Ok(self.point_from_tortoise(0.5 * (v - u))?.r)
    }

    fn builtin_inverse(&self, target: f64) -> Result<RadialPoint> {
        let f = |y: f64| self.tortoise_log_offset(y, y.exp()) - target;
        // Bracket in y = ln(r - r_plus).
        let mut y_hi = (target.abs() + self.r_norm + 1.0).ln();
        let mut step = 1.0;
        while f(y_hi) <= 0.0 {
            y_hi += step;
            step *= 2.0;
            if y_hi > 800.0 {
                return Err(Error::Nonconvergence(format!("no upper bracket for r* = {target}")));
            }
        }
        let mut y_lo = y_hi - 1.0;
        step = 1.0;
        while f(y_lo) >= 0.0 {
            y_lo -= step;
            step *= 2.0;
            if y_lo < -1e9 {
                return Err(Error::Nonconvergence(format!("no lower bracket for r* = {target}")));
            }
        }
        let mut y = 0.5 * (y_lo + y_hi);
        for _ in 0..ROOT_MAX_ITER {
            let x = y.exp();
            let fy = self.tortoise_log_offset(y, x) - target;
            if fy == 0.0 {
                return Ok(self.point_from_offset(x));
            }
            if fy < 0.0 {
                y_lo = y;
            } else {
                y_hi = y;
            }
            let slope = self.tortoise_log_offset_slope(x);
            let mut next = y - fy / slope;
            if !(next > y_lo && next < y_hi) || !next.is_finite() {
                next = 0.5 * (y_lo + y_hi);
            }
            let dy = (next - y).abs();
            y = next;
            if dy <= ROOT_REL_TOL || y_hi - y_lo <= ROOT_REL_TOL * y.abs().max(1.0) {
                return Ok(self.point_from_offset(y.exp()));
            }
        }
        Err(Error::Nonconvergence(format!("tortoise inversion at r* = {target}")))
    }

    fn point_from_offset(&self, x: f64) -> RadialPoint {
        RadialPoint { r: self.r_plus + x, offset: x }
    }

    fn custom_inverse(&self, target: f64) -> Result<RadialPoint> {
        let c = self.custom.as_ref().expect("custom metric");
        let inner = if self.has_horizon { self.r_plus * (1.0 + 1e-14) } else { 0.0 };
        let mut lo = inner.max(f64::MIN_POSITIVE);
        let mut hi = inner + (target - self.r_norm).abs() + self.r_norm;
        while self.custom_tortoise(hi)? < target {
            hi = inner + 2.0 * (hi - inner);
            if !hi.is_finite() {
                return Err(Error::Nonconvergence(format!("no upper bracket for r* = {target}")));
            }
        }
        if let Ok(s) = self.custom_tortoise(lo) {
            if s > target {
                return Err(Error::Domain(format!("r* = {target} lies inside the inner boundary")));
            }
        }
        let mut r = 0.5 * (lo + hi);
        for _ in 0..ROOT_MAX_ITER {
            let fr = self.custom_tortoise(r)? - target;
            if fr < 0.0 {
                lo = r;
            } else {
                hi = r;
            }
            let mut next = r - fr * (c.eval)(r, 0);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let dr = (next - r).abs();
            r = next;
            if dr <= 1e-13 * r || hi - lo <= 1e-13 * r {
                return Ok(RadialPoint { r, offset: r - self.r_plus });
            }
        }
        Err(Error::Nonconvergence(format!("tortoise inversion at r* = {target}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schw() -> Background {
        Background::schwarzschild(1.0).unwrap()
    }

    fn rn() -> Background {
        Background::reissner_nordstrom(1.0, 0.6).unwrap()
    }

    #[test]
    fn metric_values() {
        assert_eq!(Background::minkowski().metric_d(5.0, 0).unwrap(), 1.0);
        assert_eq!(schw().metric_d(2.0, 0).unwrap(), 0.0);
        let v = rn().metric_d(2.0, 0).unwrap();
        assert!((v - 0.09).abs() < 1e-15);
        assert!(matches!(schw().metric_d(1.9, 0), Err(Error::Domain(_))));
        assert!(matches!(schw().metric_d(3.0, 9), Err(Error::UnsupportedOrder { .. })));
    }

    #[test]
    fn horizons() {
        assert_eq!(schw().horizon_radius().unwrap(), 2.0);
        assert!((rn().horizon_radius().unwrap() - 1.8).abs() < 1e-15);
        assert_eq!(Background::minkowski().horizon_radius().unwrap(), 0.0);
        for bg in [schw(), rn()] {
            let rp = bg.horizon_radius().unwrap();
            assert!(bg.metric_d(rp + 1e-12, 0).unwrap().abs() < 1e-10);
        }
        let extremal = Background::reissner_nordstrom(1.0, 1.0).unwrap();
        assert!(extremal.is_extremal());
        assert!(Background::reissner_nordstrom(1.0, 1.1).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for bg in [schw(), rn()] {
            for &r in &[2.5, 4.0, 11.0, 40.0] {
                for order in 0..6 {
                    let exact = bg.metric_d(r, order + 1).unwrap();
                    let fd = |h: f64| {
                        let f = |x: f64| bg.metric_d(x, order).unwrap();
                        (f(r - 2.0 * h) - 8.0 * f(r - h) + 8.0 * f(r + h) - f(r + 2.0 * h)) / (12.0 * h)
                    };
                    let e1 = (fd(0.02) - exact).abs();
                    let e2 = (fd(0.01) - exact).abs();
                    assert!(e2 < 1e-6 * exact.abs().max(1e-3), "order {order} r {r}: {e2}");
                    if e2 > 1e-11 {
                        let rate = (e1 / e2).log2();
                        assert!(rate > 3.5, "order {order} r {r}: rate {rate}");
                    }
                }
            }
        }
    }

    #[test]
    fn tortoise_examples() {
        let mk = Background::minkowski();
        assert_eq!(mk.tortoise(7.0).unwrap(), 7.0);
        let s = schw();
        let t = s.tortoise(18.0).unwrap();
        assert!((t - (18.0 + 2.0 * 2f64.ln())).abs() < 1e-13);
        assert!((s.tortoise(10.0).unwrap() - 10.0).abs() < 1e-14);
        assert!((rn().tortoise(10.0).unwrap() - 10.0).abs() < 1e-13);
        assert_eq!(s.tortoise(2.0).unwrap(), f64::NEG_INFINITY);
        assert!(s.tortoise(2.0 + 1e-12).unwrap() < -40.0);
        assert!(s.tortoise(1.5).is_err());
    }

    #[test]
    fn tortoise_matches_quadrature_oracle() {
        for bg in [schw(), rn(), Background::reissner_nordstrom(1.0, 1.0).unwrap()] {
            for &r in &[2.3, 5.0, 18.0, 300.0] {
                let q = quadrature::integrate(|s| 1.0 / bg.metric_d(s, 0).unwrap(), bg.r_norm(), r, 1e-13, 1e-13)
                    .unwrap();
                let t = bg.tortoise(r).unwrap();
                assert!((t - bg.r_norm() - q).abs() < 1e-10, "{}: r={r}", bg.describe());
            }
        }
    }

    #[test]
    fn inverse_examples() {
        let mk = Background::minkowski();
        assert_eq!(mk.radius_from_null(0.0, 10.0).unwrap(), 5.0);
        assert!(mk.radius_from_null(3.0, 1.0).is_err());
        let s = schw();
        let v = 2.0 * (18.0 + 2.0 * 2f64.ln());
        assert!((s.radius_from_null(0.0, v).unwrap() - 18.0).abs() < 1e-12);
        // bisection oracle near r* = 0.01
        let target = 0.01;
        let (mut a, mut b) = (2.0 + 1e-12, 20.0);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if s.tortoise(m).unwrap() < target {
                a = m
            } else {
                b = m
            }
        }
        let r = s.radius_from_null(5.0, 5.0 + 2.0 * target).unwrap();
        assert!((r - 0.5 * (a + b)).abs() < 1e-10);
    }

    #[test]
    fn deep_horizon_offsets_stay_accurate() {
        let s = schw();
        for &rs in &[-50.0, -200.0, -1000.0] {
            let p = s.point_from_tortoise(rs).unwrap();
            // offset ≈ 8 e^{(rs - 2)/2} far inside
            let approx = 8.0 * ((rs - 2.0 - p.offset) / 2.0).exp();
            if p.offset > 0.0 {
                assert!((p.offset / approx - 1.0).abs() < 1e-10, "rs={rs}");
            }
            let d = s.d_at(p);
            assert!(d >= 0.0 && d < 1e-10);
        }
    }

    #[test]
    fn custom_reproduces_schwarzschild() {
        let metric = CustomMetric {
            name: "schw".into(),
            mass: 1.0,
            max_order: 4,
            eval: Box::new(|r, n| Background::schwarzschild(1.0).unwrap().d_unchecked(r, n)),
        };
        let c = Background::custom(metric).unwrap();
        assert!((c.horizon_radius().unwrap() - 2.0).abs() < 1e-12);
        let t = c.tortoise(18.0).unwrap();
        assert!((t - schw().tortoise(18.0).unwrap()).abs() < 1e-9);
        let r = c.radius_from_null(0.0, 2.0 * t).unwrap();
        assert!((r - 18.0).abs() < 1e-9);
        assert!(matches!(c.metric_d(5.0, 5), Err(Error::UnsupportedOrder { .. })));
    }

    #[test]
    fn custom_positive_family_has_no_horizon() {
        let metric = CustomMetric {
            name: "flat".into(),
            mass: 0.0,
            max_order: 3,
            eval: Box::new(|_, n| if n == 0 { 1.0 } else { 0.0 }),
        };
        let c = Background::custom(metric).unwrap();
        assert_eq!(c.horizon_radius(), Err(Error::NoHorizon));
    }

    proptest! {
        #[test]
        fn tortoise_round_trip(log_r in (2.0001f64).ln()..(1e5f64).ln(), e in 0.0f64..0.99) {
            let r = log_r.exp();
            for bg in [schw(), Background::reissner_nordstrom(1.0, e).unwrap()] {
                if r <= bg.r_inner() * (1.0 + 1e-9) { continue; }
                let t = bg.tortoise(r).unwrap();
                let back = bg.point_from_tortoise(t).unwrap().r;
                prop_assert!((back - r).abs() <= 1e-10 * r);
            }
        }

        #[test]
        fn tortoise_monotone(a in 2.001f64..500.0, b in 2.001f64..500.0) {
            prop_assume!((a - b).abs() > 1e-9);
            let s = schw();
            let (ta, tb) = (s.tortoise(a).unwrap(), s.tortoise(b).unwrap());
            prop_assert_eq!(a < b, ta < tb);
        }
    }
}
