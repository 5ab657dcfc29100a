use tailwave::analysis::{sharpness_scan, SharpnessOptions, SharpnessVerdict};
use tailwave::energy::{rp_flux_series, FluxSpec};
use tailwave::initial_data::time_derivative_data;
use tailwave::*;

fn far_grid(h: f64) -> GridSpec {
    GridSpec::new(0.0, 800.0, 0.0, 20000.0, h).unwrap().with_stride((10.0 / h) as usize).unwrap()
}

fn opts() -> SharpnessOptions {
    SharpnessOptions { r_cut: 10.0, u_window: (200.0, 800.0), samples: 61 }
}

#[test]
fn sharpness_verdicts_are_resolution_stable() {
    let bg = Background::schwarzschild(1.0).unwrap();
    let stat = static_tail_data(&bg, 1.0, 2.1, StaticIngoing::Static, (0.0, 0.0)).unwrap();
    let quench = static_tail_data(&bg, 1.0, 2.1, StaticIngoing::Quenched { width: 2.0 }, (0.0, 0.0)).unwrap();
    let bump = bump_data(0, 20.0, 40.0, 1e-8, BumpShape::PolynomialBump, (0.0, 0.0)).unwrap();
    let mut verdicts = Vec::new();
    for h in [0.5, 0.25] {
        let s = evolve_mode(&bg, &stat, &far_grid(h)).unwrap();
        let r = sharpness_scan(&s, 2.0, FieldSelector::Phi0, &opts()).unwrap();
        let ratio = r.late_infimum / r.tail_model.unwrap();
        assert!((0.5..=1.5).contains(&ratio), "static tail ratio {ratio}");
        let s = evolve_mode(&bg, &bump, &far_grid(h)).unwrap();
        let b = sharpness_scan(&s, 2.0, FieldSelector::Phi0, &opts()).unwrap();
        assert!(b.slice_exponent.unwrap() <= -2.0);
        let q = evolve_mode(&bg, &quench, &far_grid(h)).unwrap();
        let td = time_derivative_data(&quench, &q).unwrap();
        let g = GridSpec::new(td.u0, 800.0, td.v0, 20000.0, h).unwrap().with_stride((10.0 / h) as usize).unwrap();
        let t = evolve_mode(&bg, &td, &g).unwrap();
        let o = SharpnessOptions { u_window: (200.0 + h, 800.0), ..opts() };
        let tr = sharpness_scan(&t, 4.0, FieldSelector::Phi0, &o).unwrap();
        assert!(tr.cumulative.windows(2).all(|w| w[1] >= w[0]));
        verdicts.push((r.verdict, b.verdict, tr.verdict));
    }
    assert_eq!(verdicts[0], verdicts[1]);
    assert_eq!(
        verdicts[0],
        (SharpnessVerdict::NonIntegrable, SharpnessVerdict::Integrable, SharpnessVerdict::NonIntegrable)
    );
}

#[test]
fn sharpness_requires_the_spherical_mode() {
    let bg = Background::schwarzschild(1.0).unwrap();
    let bump = bump_data(1, 20.0, 40.0, 1e-8, BumpShape::PolynomialBump, (0.0, 0.0)).unwrap();
    let s = evolve_mode(&bg, &bump, &far_grid(1.0)).unwrap();
    assert!(matches!(sharpness_scan(&s, 2.0, FieldSelector::Phi0, &opts()), Err(Error::WrongMode { .. })));
}

/// Larger weights decay more slowly, each at least as fast as `u^{-(3-p)}`.
#[test]
fn weighted_fluxes_follow_the_hierarchy() {
    let bg = Background::schwarzschild(1.0).unwrap();
    let bump = bump_data(0, 20.0, 40.0, 1e-8, BumpShape::PolynomialBump, (0.0, 0.0)).unwrap();
    let s = evolve_mode(&bg, &bump, &far_grid(0.5)).unwrap();
    let us: Vec<f64> = (20..=80).map(|k| 10.0 * k as f64).collect();
    let mut slopes = Vec::new();
    for p in [1.0, 2.0, 2.9] {
        let series = rp_flux_series(&s, &FluxSpec::new(FieldSelector::Phi0, p, 10.0), &us, None).unwrap();
        let fit = fit_tail(&series, (400.0, 800.0), FitModel::PurePower).unwrap();
        assert!(fit.exponent <= -(3.0 - p), "p={p}: {}", fit.exponent);
        slopes.push(fit.exponent);
    }
    assert!(slopes.windows(2).all(|w| w[0] < w[1]), "{slopes:?}");
}
