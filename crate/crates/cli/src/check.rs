//! Small-grid property suite behind `tailwave check`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tailwave::energy::{divergence_residual, hardy_random_sweep, interpolation_check, poincare_check, FluxSeries};
use tailwave::fields::{commutator_residual_with, AuditOptions, Mutation};
use tailwave::initial_data::{DataMeta, Profile};
use tailwave::quadrature::integrate;
use tailwave::{bump_data, evolve_mode, Background, BumpShape, CharacteristicData, Equation, FieldSelector, GridSpec};

/// `Err` carries a counterexample description.
type CheckResult = Result<String, String>;

pub struct CheckOptions {
    pub filter: Option<String>,
    pub mutation: Option<Mutation>,
    pub seed: u64,
}

pub struct CheckLine {
    pub name: &'static str,
    pub result: CheckResult,
}

pub const CHECKS: [&str; 5] = ["hardy", "poincare", "interpolation", "commutator", "divergence"];

fn hardy(seed: u64) -> CheckResult {
    let qs = [0.0, 1.0, 2.5];
    let out = hardy_random_sweep(200, &qs, seed).map_err(|e| e.to_string())?;
    match out.iter().find(|(_, o)| !o.ok) {
        Some((q, o)) => Err(format!("q = {q}: lhs {:e} > rhs {:e}", o.lhs, o.rhs)),
        None => Ok(format!("{} randomized profiles", out.len())),
    }
}

fn poincare(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..300 {
        let big_l = 1 + case % 3;
        let mut c = BTreeMap::new();
        for _ in 0..rng.gen_range(1..6) {
            let ell = rng.gen_range(big_l..big_l + 4);
            let m = rng.gen_range(-(ell as i64)..=ell as i64);
            c.insert((ell, m), rng.gen_range(-2.0..2.0));
        }
        let r = rng.gen_range(0.5..50.0);
        let o = poincare_check(&c, r, big_l).map_err(|e| e.to_string())?;
        if !o.ok {
            return Err(format!("L = {big_l}, r = {r}, coefficients {c:?}: lhs {:e} > rhs {:e}", o.lhs, o.rhs));
        }
    }
    Ok("300 coefficient sets".into())
}

fn interpolation(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let taus: Vec<f64> = (0..40).map(|k| 10.0 * k as f64).collect();
    for _ in 0..20 {
        let (p, q, eps) = (rng.gen_range(0.0..2.0), rng.gen_range(1.0..3.0), rng.gen_range(0.05..0.5));
        let (a, b) = (rng.gen_range(1.0..1.5), rng.gen_range(1.6..3.0));
        let series = |weight: f64| -> tailwave::Result<FluxSeries> {
            let vals: Vec<f64> = taus
                .iter()
                .map(|&t| {
                    let w = 1.0 + t;
                    let f2 = |r: f64| {
                        let s = r / w;
                        let bump = if s > a && s < b { ((s - a) * (b - s)).powi(4) } else { 0.0 };
                        w.powf(-q) * r.powf(-(p + 1.0)) * bump
                    };
                    integrate(|r| r.powf(weight) * f2(r), a * w, b * w, 1e-300, 1e-11)
                })
                .collect::<tailwave::Result<_>>()?;
            FluxSeries::new("synthetic", &taus, &vals)
        };
        let run = || -> tailwave::Result<bool> {
            Ok(interpolation_check(&series(p - eps)?, &series(p + 1.0 - eps)?, &series(p)?, q, eps, 1.0)?.ok)
        };
        if !run().map_err(|e| e.to_string())? {
            return Err(format!("p = {p}, q = {q}, eps = {eps}, support [{a}, {b}]"));
        }
    }
    Ok("20 synthetic families".into())
}

fn commutator(mutation: Option<Mutation>) -> CheckResult {
    let bg = Background::schwarzschild(1.0).map_err(|e| e.to_string())?;
    let opts = AuditOptions { mutation, ..Default::default() };
    let mut worst = f64::INFINITY;
    for ell in [0, 1] {
        let sols = [0.2, 0.1, 0.05]
            .iter()
            .map(|&h| {
                let b = bump_data(ell, 10.0, 50.0, 1.0, BumpShape::Smooth, (0.0, 0.0))?;
                evolve_mode(&bg, &b, &GridSpec::new(0.0, 20.0, 0.0, 80.0, h)?)
            })
            .collect::<tailwave::Result<Vec<_>>>()
            .map_err(|e| e.to_string())?;
        for eq in Equation::audit_set() {
            let res: Vec<f64> = sols
                .iter()
                .map(|s| commutator_residual_with(s, eq, &opts))
                .collect::<tailwave::Result<_>>()
                .map_err(|e| e.to_string())?;
            let order = (res[1] / res[2]).log2();
            if !(order >= 1.5) {
                return Err(format!("{eq} (l = {ell}): residuals {res:?}, order {order:.3}"));
            }
            worst = worst.min(order);
        }
    }
    Ok(format!("worst order {worst:.3}"))
}

fn divergence() -> CheckResult {
    let bg = Background::schwarzschild(1.0).map_err(|e| e.to_string())?;
    let g = |v: f64| (-(v - 50.0f64).powi(2) / 100.0).exp();
    let d = CharacteristicData::from_profiles(0, (0.0, 0.0), Profile::function(g), Profile::Constant(g(0.0)), DataMeta::default())
        .map_err(|e| e.to_string())?;
    let sols = [0.2, 0.1, 0.05]
        .iter()
        .map(|&h| evolve_mode(&bg, &d, &GridSpec::new(0.0, 20.0, 0.0, 120.0, h)?))
        .collect::<tailwave::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let mut worst = f64::INFINITY;
    for (field, p) in [(FieldSelector::Phi0, 1.0), (FieldSelector::Phi0, 2.0), (FieldSelector::Phi, 1.0), (FieldSelector::Phi2, 0.5)] {
        let res: Vec<f64> = sols
            .iter()
            .map(|s| divergence_residual(s, field, p, (0.0, 20.0, 24.0, 96.0)))
            .collect::<tailwave::Result<_>>()
            .map_err(|e| e.to_string())?;
        let order = (res[1] / res[2]).log2();
        if !(order >= 1.5) {
            return Err(format!("{field} p = {p}: residuals {res:?}, order {order:.3}"));
        }
        worst = worst.min(order);
    }
    Ok(format!("worst order {worst:.3}"))
}

pub fn run_checks(opts: &CheckOptions) -> Vec<CheckLine> {
    CHECKS
        .iter()
        .filter(|name| opts.filter.as_deref().map_or(true, |f| name.contains(f)))
        .map(|&name| {
            let result = match name {
                "hardy" => hardy(opts.seed),
                "poincare" => poincare(opts.seed),
                "interpolation" => interpolation(opts.seed),
                "commutator" => commutator(opts.mutation),
                "divergence" => divergence(),
                _ => unreachable!(),
            };
            CheckLine { name, result }
        })
        .collect()
}
