use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tailwave(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tailwave"))
        .args(args)
        .env("TAILWAVE_OUT", out)
        .output()
        .expect("binary runs")
}

fn config(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name).display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small l = 0 scenario that finishes in well under a second.
const SMALL: &str = "name = small
data.family = bump
data.ell = 0
data.v_lo = 20
data.v_hi = 40
data.amplitude = 1e-8
grid.u1 = 400
grid.v1 = 430
grid.h = 0.5
measure.window = 200, 400
measure.series = pointwise
verdict.pointwise.band = price(0.4)
verdict.pointwise.ref = price_law_ell
";

fn write_cfg(dir: &Path, text: &str) -> String {
    let p = dir.join("scenario.cfg");
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn bundled_config_passes() {
    let out = tempfile::tempdir().unwrap();
    let o = tailwave(out.path(), &["run", &config("price_schwarzschild_l0.cfg")]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let dir = out.path().join("price_schwarzschild_l0");
    let csv = fs::read_to_string(dir.join("report.csv")).unwrap();
    assert!(csv.contains("price_law_l0"));
    assert!(csv.contains("#config_hash="));
    for f in ["report.txt", "plots.gp", "series_pointwise.csv", "series_energy_coarse.csv"] {
        assert!(dir.join(f).exists(), "missing {f}");
    }
}

#[test]
fn inverted_grid_is_a_config_error_naming_the_key() {
    let out = tempfile::tempdir().unwrap();
    let cfg = write_cfg(out.path(), &SMALL.replace("grid.v1 = 430", "grid.v1 = -5"));
    let o = tailwave(out.path(), &["run", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("grid.v1"), "{}", stderr(&o));
}

#[test]
fn unknown_key_is_rejected() {
    let out = tempfile::tempdir().unwrap();
    let cfg = write_cfg(out.path(), &format!("{SMALL}grid.hh = 1\n"));
    let o = tailwave(out.path(), &["run", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("grid.hh"));
}

#[test]
fn dry_run_prints_plan_and_writes_nothing() {
    let out = tempfile::tempdir().unwrap();
    let cfg = write_cfg(out.path(), SMALL);
    let o = tailwave(out.path(), &["run", &cfg, "--dry-run"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("config_hash") && text.contains("level 0: h=0.5"));
    assert!(!out.path().join("small").exists());
}

#[test]
fn runs_are_bitwise_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = write_cfg(a.path(), SMALL);
    for d in [&a, &b] {
        assert_eq!(tailwave(d.path(), &["run", &cfg]).status.code(), Some(0));
    }
    for f in ["series_pointwise.csv", "report.csv"] {
        let x = fs::read(a.path().join("small").join(f)).unwrap();
        let y = fs::read(b.path().join("small").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between runs");
    }
}

#[test]
fn output_root_follows_the_environment() {
    let out = tempfile::tempdir().unwrap();
    let nested = out.path().join("nested/root");
    let cfg = write_cfg(out.path(), SMALL);
    let o = tailwave(&nested, &["run", &cfg]);
    assert_eq!(o.status.code(), Some(0));
    assert!(nested.join("small/report.txt").exists());
}

#[test]
fn checks_pass_and_filter() {
    let out = tempfile::tempdir().unwrap();
    let o = tailwave(out.path(), &["check"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert_eq!(stdout(&o).matches(" PASS ").count(), 5);
    let o = tailwave(out.path(), &["check", "--filter", "hardy"]);
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("check hardy"));
    let o = tailwave(out.path(), &["check", "--filter", "nothing"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn mutation_is_caught_by_the_commutator_check() {
    let out = tempfile::tempdir().unwrap();
    let o = tailwave(out.path(), &["check", "--filter", "commutator", "--mutation", "flip-phi2-source"]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert!(text.contains("FAIL counterexample") && text.contains("box_Phi2"), "{text}");
}

#[test]
fn bundled_sweep_passes() {
    let out = tempfile::tempdir().unwrap();
    let o = tailwave(out.path(), &["sweep", &config("price_sweep.cfg")]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let summary = fs::read_to_string(out.path().join("price_sweep/summary.csv")).unwrap();
    assert_eq!(summary.matches(",PASS").count(), 3);
    assert!(out.path().join("price_sweep/price_sweep__data.ell=2/report.csv").exists());
}

#[test]
fn duplicate_sweep_cells_are_rejected() {
    let out = tempfile::tempdir().unwrap();
    let cfg = write_cfg(out.path(), &format!("{SMALL}sweep.data.ell = 0, 0\n"));
    let o = tailwave(out.path(), &["sweep", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("duplicate"));
}

#[test]
fn sweep_without_axes_behaves_as_run() {
    let out = tempfile::tempdir().unwrap();
    let cfg = write_cfg(out.path(), SMALL);
    let o = tailwave(out.path(), &["sweep", &cfg]);
    assert_eq!(o.status.code(), Some(0));
    assert!(out.path().join("small/report.csv").exists());
    assert!(!out.path().join("small/summary.csv").exists());
}

#[test]
fn zero_jobs_is_a_config_error() {
    let out = tempfile::tempdir().unwrap();
    let o = tailwave(out.path(), &["--jobs", "0", "check", "--filter", "hardy"]);
    assert_eq!(o.status.code(), Some(2));
}
