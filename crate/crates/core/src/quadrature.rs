//! Quadrature rules shared by the data constructors and the flux integrals.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let hw = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for k in 0..7 {
        let dx = hw * XGK[k];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[k] * s;
        if k % 2 == 1 {
            gauss += WG[k / 2] * s;
        }
    }
    (kron * hw, ((kron - gauss) * hw).abs())
}

/// Adaptive Gauss-Kronrod (7/15) integration of `f` over `[a, b]`.
///
/// Stops when the summed error estimate is below `max(abs_tol, rel_tol*|I|)`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (sign, lo, hi) = if a < b { (1.0, a, b) } else { (-1.0, b, a) };
    let (v, e) = gk15(&f, lo, hi);
    let mut pieces = vec![(lo, hi, v, e)];
    for _ in 0..2000 {
        let total: f64 = pieces.iter().map(|p| p.2).sum();
        let err: f64 = pieces.iter().map(|p| p.3).sum();
        if !total.is_finite() {
            return Err(Error::QuadratureFailure(format!("non-finite integrand on [{lo}, {hi}]")));
        }
        if err <= abs_tol.max(rel_tol * total.abs()) {
            return Ok(sign * total);
        }
        let (idx, _) = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (pa, pb, _, _) = pieces.swap_remove(idx);
        let mid = 0.5 * (pa + pb);
        if mid <= pa || mid >= pb {
            return Err(Error::QuadratureFailure("interval underflow".into()));
        }
        let (v1, e1) = gk15(&f, pa, mid);
        let (v2, e2) = gk15(&f, mid, pb);
        pieces.push((pa, mid, v1, e1));
        pieces.push((mid, pb, v2, e2));
    }
    Err(Error::QuadratureFailure(format!("subdivision limit reached on [{lo}, {hi}]")))
}

/// Composite Simpson rule on uniformly spaced samples.
///
/// An odd number of intervals closes with the 3/8 rule; a single interval
/// falls back to the trapezoid rule.
pub fn simpson_uniform(y: &[f64], dx: f64) -> f64 {
    let n = y.len();
    match n {
        0 | 1 => 0.0,
        2 => 0.5 * dx * (y[0] + y[1]),
        _ => {
            let intervals = n - 1;
            let (simpson_end, tail) = if intervals % 2 == 0 { (n - 1, false) } else { (n - 4, true) };
            let mut s = 0.0;
            if simpson_end > 0 {
                let mut acc = y[0] + y[simpson_end];
                for (k, v) in y.iter().enumerate().take(simpson_end).skip(1) {
                    acc += if k % 2 == 1 { 4.0 * v } else { 2.0 * v };
                }
                s += acc * dx / 3.0;
            }
            if tail {
                let k = n - 4;
                s += 3.0 * dx / 8.0 * (y[k] + 3.0 * y[k + 1] + 3.0 * y[k + 2] + y[k + 3]);
            }
            s
        }
    }
}

/// Integral over `[x_lo, x_hi]` of a function sampled at `x0 + k*dx`.
///
/// Whole cells use [`simpson_uniform`]; partial cells at either end use the
/// trapezoid rule with a linearly interpolated end value.
pub fn integrate_samples_between(y: &[f64], x0: f64, dx: f64, x_lo: f64, x_hi: f64) -> Result<f64> {
    let n = y.len();
    if n < 2 || x_hi < x_lo {
        return Err(Error::InvalidParameter("empty integration range".into()));
    }
    let x_end = x0 + (n - 1) as f64 * dx;
    let eps = 1e-9 * dx;
    if x_lo < x0 - eps || x_hi > x_end + eps {
        return Err(Error::InsufficientRadialRange(format!(
            "[{x_lo}, {x_hi}] not inside sampled range [{x0}, {x_end}]"
        )));
    }
    let pos = |x: f64| ((x - x0) / dx).clamp(0.0, (n - 1) as f64);
    let interp = |t: f64| {
        let k = (t.floor() as usize).min(n - 2);
        let w = t - k as f64;
        y[k] * (1.0 - w) + y[k + 1] * w
    };
    let t_lo = pos(x_lo);
    let t_hi = pos(x_hi);
    let first = (t_lo - 1e-9).ceil().max(0.0) as usize;
    let last = (t_hi + 1e-9).floor().min((n - 1) as f64) as usize;
    if last < first || last == first {
        // Range inside a single cell.
        return Ok(0.5 * (interp(t_lo) + interp(t_hi)) * (t_hi - t_lo) * dx);
    }
    let mut total = simpson_uniform(&y[first..=last], dx);
    let lead = first as f64 - t_lo;
    if lead > 1e-9 {
        total += 0.5 * (interp(t_lo) + y[first]) * lead * dx;
    }
    let trail = t_hi - last as f64;
    if trail > 1e-9 {
        total += 0.5 * (y[last] + interp(t_hi)) * trail * dx;
    }
    Ok(total)
}
