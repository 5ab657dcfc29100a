//! Diamond-cell characteristic integrator for `∂_u∂_v φ = -(D/4) V_ℓ φ`.
//!
//! The radius depends on `v - u` only, so radii, metric values and the cell
//! potential live in a 1-D table indexed by the diagonal `j - i`.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rayon::prelude::*;

use crate::background::{Background, BackgroundKind, RadialPoint};
use crate::error::{Error, Result};
pub use crate::grid::GridSpec;
use crate::initial_data::{CharacteristicData, DataMeta};

/// Columns next to `{v = v0}` kept for every row.
pub const INNER_STRIP: usize = 3;

#[derive(Debug, Clone)]
pub struct EvolveOptions {
    /// Radii at which φ is recorded on every row (fixed-r time series).
    pub stations: Vec<f64>,
    /// Minimum clearance `r(u1, v0) - r_plus` for backgrounds solved by
    /// quadrature, in units of M.
    pub delta_floor: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions { stations: Vec::new(), delta_floor: 1e-3 }
    }
}

/// Radii and metric data along the diagonals of a grid.
#[derive(Debug, Clone)]
pub struct RadialTable {
    /// Tortoise value of diagonal 0 (`j - i = -(n_u - 1)`).
    pub rstar0: f64,
    /// Tortoise spacing between diagonals (`h / 2`).
    pub drstar: f64,
    pub points: Vec<RadialPoint>,
    pub d: Vec<f64>,
}

impl RadialTable {
    fn build(bg: &Background, grid: &GridSpec) -> Result<Self> {
        let n_u = grid.n_u();
        let n_diag = n_u + grid.n_v() - 1;
        let rstar0 = 0.5 * (grid.v0 - grid.u1);
        let drstar = 0.5 * grid.h;
        let mut points = Vec::with_capacity(n_diag);
        let mut d = Vec::with_capacity(n_diag);
        for k in 0..n_diag {
            let p = bg.point_from_tortoise(rstar0 + k as f64 * drstar)?;
            d.push(bg.d_at(p));
            points.push(p);
        }
        Ok(RadialTable { rstar0, drstar, points, d })
    }
}

/// φ sampled at a fixed radius on every row.
#[derive(Debug, Clone)]
pub struct Station {
    pub radius: f64,
    pub rstar: f64,
    /// One value per u-node; NaN where the station lies outside the grid.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ModeSolution {
    pub bg: Background,
    pub ell: usize,
    pub grid: GridSpec,
    /// Global indices of the stored rows, increasing.
    pub rows: Vec<usize>,
    /// φ on the stored rows (one row per entry of `rows`).
    pub phi: Array2<f64>,
    pub radial: Arc<RadialTable>,
    /// φ on the first [`INNER_STRIP`] columns of every row.
    pub inner: Array2<f64>,
    /// φ on `{v = v1}` for every row.
    pub outer: Vec<f64>,
    pub stations: Vec<Station>,
    pub data_meta: DataMeta,
    pub predicted_i0: Option<f64>,
    pub warnings: Vec<String>,
}

impl ModeSolution {
    pub fn u(&self, i: usize) -> f64 {
        self.grid.u_at(i)
    }

    pub fn v(&self, j: usize) -> f64 {
        self.grid.v_at(j)
    }

    fn diag(&self, i: usize, j: usize) -> usize {
        j + self.grid.n_u() - 1 - i
    }

    pub fn point(&self, i: usize, j: usize) -> RadialPoint {
        self.radial.points[self.diag(i, j)]
    }

    pub fn r(&self, i: usize, j: usize) -> f64 {
        self.point(i, j).r
    }

    /// `D` at node `(i, j)`, accurate near the horizon.
    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.radial.d[self.diag(i, j)]
    }

    /// Position of global row `i` in the stored rows.
    pub fn row_position(&self, i: usize) -> Option<usize> {
        self.rows.binary_search(&i).ok()
    }

    /// Global index of the stored row at retarded time `u`.
    pub fn row_index_at(&self, u: f64) -> Result<usize> {
        let i = self
            .grid
            .u_index(u)
            .ok_or_else(|| Error::InvalidParameter(format!("u = {u} is not a grid node")))?;
        if self.row_position(i).is_none() {
            return Err(Error::InvalidParameter(format!("row at u = {u} was not stored")));
        }
        Ok(i)
    }

    pub fn row(&self, i: usize) -> Option<ndarray::ArrayView1<'_, f64>> {
        self.row_position(i).map(|k| self.phi.row(k))
    }

    /// True when every row of the grid is stored.
    pub fn has_all_rows(&self) -> bool {
        self.rows.len() == self.grid.n_u()
    }

    /// Cached radii on the stored rows.
    pub fn radius_grid(&self) -> Array2<f64> {
        let n_v = self.grid.n_v();
        Array2::from_shape_fn((self.rows.len(), n_v), |(k, j)| self.r(self.rows[k], j))
    }

    pub fn station(&self, radius: f64) -> Option<&Station> {
        self.stations.iter().find(|s| (s.radius - radius).abs() <= 1e-12 * radius.abs().max(1.0))
    }
}

fn check_domain(bg: &Background, grid: &GridSpec, opts: &EvolveOptions) -> Result<()> {
    if bg.kind() == BackgroundKind::CustomD {
        if let Ok(rp) = bg.horizon_radius() {
            let r_min = bg.radius_from_null(grid.u1, grid.v0)?;
            let floor = opts.delta_floor * bg.mass().max(1.0);
            if r_min <= rp + floor {
                return Err(Error::Domain(format!(
                    "r(u1, v0) = {r_min} is within delta_floor of the horizon {rp}"
                )));
            }
        }
    }
    Ok(())
}

fn interp_row(row: &[f64], x: f64) -> f64 {
    let n = row.len();
    let k = x.round();
    if (x - k).abs() < 1e-9 {
        return row[k as usize];
    }
    if n < 4 {
        let k = (x.floor() as usize).min(n - 2);
        let w = x - k as f64;
        return row[k] * (1.0 - w) + row[k + 1] * w;
    }
    let base = (x.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
    let mut s = 0.0;
    for a in 0..4 {
        let xa = (base + a) as f64;
        let mut w = 1.0;
        for b in 0..4 {
            if a != b {
                let xb = (base + b) as f64;
                w *= (x - xb) / (xa - xb);
            }
        }
        s += w * row[base + a];
    }
    s
}

/// Evolves one mode with default options.
pub fn evolve_mode(bg: &Background, data: &CharacteristicData, grid: &GridSpec) -> Result<ModeSolution> {
    evolve_mode_with(bg, data, grid, &EvolveOptions::default())
}

pub fn evolve_mode_with(
    bg: &Background,
    data: &CharacteristicData,
    grid: &GridSpec,
    opts: &EvolveOptions,
) -> Result<ModeSolution> {
    grid.validate()?;
    check_domain(bg, grid, opts)?;
    let outgoing = data.sample_outgoing(grid)?;
    let ingoing = data.sample_ingoing(grid)?;
    let radial = RadialTable::build(bg, grid)?;
    let n_u = grid.n_u();
    let n_v = grid.n_v();
    let ell = data.ell as f64;
    let l2 = ell * (ell + 1.0);
    let h2 = grid.h * grid.h;

    let mut warnings = Vec::new();
    let mut worst: f64 = 0.0;
    let w: Vec<f64> = radial
        .points
        .iter()
        .zip(&radial.d)
        .map(|(p, &d)| {
            let dprime = bg.d_unchecked(p.r, 1);
            let dv = d * (l2 / (p.r * p.r) + dprime / p.r);
            worst = worst.max(dv.abs() * h2);
            0.125 * h2 * dv
        })
        .collect();
    if worst > 1.0 {
        warnings.push(format!("StabilityWarning: max |D V| h^2 = {worst:.3} exceeds 1"));
    }

    let stride = grid.checkpoint_stride;
    let stored: Vec<usize> = (0..n_u)
        .filter(|&i| i % stride == 0 || i < INNER_STRIP || i == n_u - 1)
        .collect();
    let mut phi = Array2::<f64>::zeros((stored.len(), n_v));
    let mut inner = Array2::<f64>::zeros((n_u, INNER_STRIP.min(n_v)));
    let mut outer = vec![0.0; n_u];

    let mut stations: Vec<Station> = Vec::with_capacity(opts.stations.len());
    for &radius in &opts.stations {
        let rstar = bg.tortoise(radius)?;
        stations.push(Station { radius, rstar, values: vec![f64::NAN; n_u] });
    }

    let mut prev = outgoing;
    let mut cur = vec![0.0; n_v];
    let mut next_store = 0usize;
    let record = |i: usize,
                  row: &[f64],
                  phi: &mut Array2<f64>,
                  inner: &mut Array2<f64>,
                  outer: &mut Vec<f64>,
                  stations: &mut Vec<Station>,
                  next_store: &mut usize| {
        if *next_store < stored.len() && stored[*next_store] == i {
            phi.row_mut(*next_store).assign(&ndarray::ArrayView1::from(row));
            *next_store += 1;
        }
        for c in 0..inner.ncols() {
            inner[[i, c]] = row[c];
        }
        outer[i] = row[n_v - 1];
        let u = grid.u_at(i);
        for s in stations.iter_mut() {
            let x = (u + 2.0 * s.rstar - grid.v0) / grid.h;
            if x >= -1e-9 && x <= (n_v - 1) as f64 + 1e-9 {
                s.values[i] = interp_row(row, x.clamp(0.0, (n_v - 1) as f64));
            }
        }
    };
    record(0, &prev, &mut phi, &mut inner, &mut outer, &mut stations, &mut next_store);
    for i in 1..n_u {
        // Cell with south corner (i-1, j-1) sits on diagonal j - i + n_u - 1.
        let wrow = &w[n_u - i..n_u - i + n_v - 1];
        cur[0] = ingoing[i];
        let mut west = cur[0];
        for j in 1..n_v {
            let east = prev[j];
            let south = prev[j - 1];
            let north = (1.0 - wrow[j - 1]) * (west + east) - south;
            cur[j] = north;
            west = north;
        }
        record(i, &cur, &mut phi, &mut inner, &mut outer, &mut stations, &mut next_store);
        std::mem::swap(&mut prev, &mut cur);
    }

    Ok(ModeSolution {
        bg: bg.clone(),
        ell: data.ell,
        grid: *grid,
        rows: stored,
        phi,
        radial: Arc::new(radial),
        inner,
        outer,
        stations,
        data_meta: data.meta.clone(),
        predicted_i0: data.predicted_i0,
        warnings,
    })
}

/// Solutions at `h, h/2, ..., h/2^(levels-1)` over the same ranges.
pub fn evolve_refined(
    bg: &Background,
    data: &CharacteristicData,
    grid: &GridSpec,
    levels: usize,
    opts: &EvolveOptions,
) -> Result<Vec<ModeSolution>> {
    if levels < 2 {
        return Err(Error::InvalidParameter(format!("levels = {levels} must be at least 2")));
    }
    let grids: Vec<GridSpec> = (0..levels).map(|k| grid.refined(1 << k)).collect::<Result<_>>()?;
    grids.par_iter().map(|g| evolve_mode_with(bg, data, g, opts)).collect()
}

/// A node-valued field on the stored rows of a solution. Entries outside
/// the valid interior are NaN.
#[derive(Debug, Clone)]
pub struct NodeField {
    pub values: Array2<f64>,
    /// Invalid rows at each end (in grid rows).
    pub row_margin: usize,
    /// Invalid columns at each end.
    pub col_margin: usize,
}

/// `T^k φ` with `T = ∂_u|_v + ∂_v|_u`, centered second-order stencils.
pub fn t_derivative_field(sol: &ModeSolution, k: usize) -> Result<NodeField> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if !sol.has_all_rows() {
        return Err(Error::InsufficientMargin("T-derivatives need every row stored (stride 1)".into()));
    }
    let field = NodeField { values: sol.phi.clone(), row_margin: 0, col_margin: 0 };
    apply_t(&field, sol.grid.h, k)
}

/// Applies `T` `k` more times to an existing field.
pub fn apply_t(field: &NodeField, h: f64, k: usize) -> Result<NodeField> {
    let (n_u, n_v) = field.values.dim();
    let mut cur = field.clone();
    for _ in 0..k {
        let rm = cur.row_margin + 1;
        let cm = cur.col_margin + 1;
        if 2 * rm >= n_u || 2 * cm >= n_v {
            return Err(Error::InsufficientMargin(format!("T stencil needs margin {rm} on a {n_u}x{n_v} grid")));
        }
        let mut out = Array2::from_elem((n_u, n_v), f64::NAN);
        let inv = 0.5 / h;
        for i in rm..n_u - rm {
            for j in cm..n_v - cm {
                let a = &cur.values;
                out[[i, j]] = inv * (a[[i + 1, j]] - a[[i - 1, j]] + a[[i, j + 1]] - a[[i, j - 1]]);
            }
        }
        cur = NodeField { values: out, row_margin: rm, col_margin: cm };
    }
    Ok(cur)
}

/// Header of a checkpoint file.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointHeader {
    pub ell: u32,
    pub h: f64,
    pub u0: f64,
    pub u1: f64,
    pub v0: f64,
    pub v1: f64,
    pub row_count: u64,
    pub row_len: u64,
}

const MAGIC: &[u8; 4] = b"TWV1";

/// Writes the stored rows as a little-endian dump.
///
/// Layout: `"TWV1"`, `ell: u32`, `h, u0, u1, v0, v1: f64`,
/// `row_count: u64`, `row_len: u64`, then per row `u: f64` followed by
/// `row_len` values of φ.
pub fn write_checkpoint<W: Write>(sol: &ModeSolution, mut w: W) -> Result<()> {
    let g = &sol.grid;
    w.write_all(MAGIC)?;
    w.write_all(&(sol.ell as u32).to_le_bytes())?;
    for x in [g.h, g.u0, g.u1, g.v0, g.v1] {
        w.write_all(&x.to_le_bytes())?;
    }
    w.write_all(&(sol.rows.len() as u64).to_le_bytes())?;
    w.write_all(&(g.n_v() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(8 * (g.n_v() + 1));
    for (k, &i) in sol.rows.iter().enumerate() {
        buf.clear();
        buf.extend_from_slice(&g.u_at(i).to_le_bytes());
        for x in sol.phi.row(k) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn write_checkpoint_file(sol: &ModeSolution, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_checkpoint(sol, std::io::BufWriter::new(f))
}

/// Reads a checkpoint: header, row u-values, and the φ rows.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(CheckpointHeader, Vec<f64>, Array2<f64>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a TWV1 checkpoint".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let ell = u32::from_le_bytes(b4);
    let mut f = [0.0; 5];
    for x in f.iter_mut() {
        r.read_exact(&mut b8)?;
        *x = f64::from_le_bytes(b8);
    }
    r.read_exact(&mut b8)?;
    let row_count = u64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let row_len = u64::from_le_bytes(b8);
    let header = CheckpointHeader { ell, h: f[0], u0: f[1], u1: f[2], v0: f[3], v1: f[4], row_count, row_len };
    let mut us = Vec::with_capacity(row_count as usize);
    let mut phi = Array2::zeros((row_count as usize, row_len as usize));
    for k in 0..row_count as usize {
        r.read_exact(&mut b8)?;
        us.push(f64::from_le_bytes(b8));
        for j in 0..row_len as usize {
            r.read_exact(&mut b8)?;
            phi[[k, j]] = f64::from_le_bytes(b8);
        }
    }
    Ok((header, us, phi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initial_data::{bump_data, static_tail_data, BumpShape, Profile, StaticIngoing};

    fn schw() -> Background {
        Background::schwarzschild(1.0).unwrap()
    }

    fn flat_data(ell: usize, f: fn(f64) -> f64, g: fn(f64) -> f64, origin: (f64, f64)) -> CharacteristicData {
        CharacteristicData::from_profiles(
            ell,
            origin,
            Profile::function(f),
            Profile::function(g),
            DataMeta::default(),
        )
        .unwrap()
    }

    #[test]
    fn minkowski_dalembert_exact() {
        let bg = Background::minkowski();
        let fv = |v: f64| (0.1 * v).sin() + 0.01 * v;
        let gu = |u: f64| (0.1 * 20.0f64).sin() + 0.2 + (0.05 * u).cos() - 1.0;
        let data = flat_data(0, fv, gu, (0.0, 20.0));
        let grid = GridSpec::new(0.0, 10.0, 20.0, 60.0, 0.25).unwrap();
        let sol = evolve_mode(&bg, &data, &grid).unwrap();
        let c = fv(20.0);
        let mut err: f64 = 0.0;
        for (k, &i) in sol.rows.iter().enumerate() {
            for j in 0..grid.n_v() {
                let exact = fv(grid.v_at(j)) + gu(grid.u_at(i)) - c;
                err = err.max((sol.phi[[k, j]] - exact).abs());
            }
        }
        assert!(err < 1e-12, "{err}");
    }

    fn l1_exact(u: f64, v: f64) -> f64 {
        // φ = F'(v) - F(v)/r + G'(u) + G(u)/r with r = (v-u)/2
        let r = 0.5 * (v - u);
        let f = (-(v - 30.0).powi(2) / 20.0).exp();
        let fp = -(v - 30.0) / 10.0 * f;
        let g = 0.5 * (-(u - 5.0).powi(2) / 8.0).exp();
        let gp = -(u - 5.0) / 4.0 * g;
        fp - f / r + gp + g / r
    }

    #[test]
    fn minkowski_l1_converges_second_order() {
        let bg = Background::minkowski();
        let mut errs = Vec::new();
        for &h in &[0.2, 0.1, 0.05] {
            let data = CharacteristicData::from_profiles(
                1,
                (0.0, 20.0),
                Profile::function(|v| l1_exact(0.0, v)),
                Profile::function(|u| l1_exact(u, 20.0)),
                DataMeta::default(),
            )
            .unwrap();
            let grid = GridSpec::new(0.0, 12.0, 20.0, 50.0, h).unwrap();
            let sol = evolve_mode(&bg, &data, &grid).unwrap();
            let mut err: f64 = 0.0;
            for (k, &i) in sol.rows.iter().enumerate() {
                for j in 0..grid.n_v() {
                    err = err.max((sol.phi[[k, j]] - l1_exact(grid.u_at(i), grid.v_at(j))).abs());
                }
            }
            errs.push(err);
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((order - 2.0).abs() < 0.2, "order {order} from {errs:?}");
        }
    }

    #[test]
    fn zero_and_linearity() {
        let bg = schw();
        let grid = GridSpec::new(0.0, 30.0, 0.0, 80.0, 0.5).unwrap();
        let d1 = bump_data(0, 10.0, 30.0, 1e-6, BumpShape::PolynomialBump, (0.0, 0.0)).unwrap();
        let d2 = bump_data(0, 20.0, 50.0, 1.0, BumpShape::GaussianTruncated, (0.0, 0.0)).unwrap();
        let z = evolve_mode(&bg, &d1.scaled(0.0), &grid).unwrap();
        assert!(z.phi.iter().all(|&x| x == 0.0));
        let s1 = evolve_mode(&bg, &d1, &grid).unwrap();
        let s2 = evolve_mode(&bg, &d2, &grid).unwrap();
        let s = evolve_mode(&bg, &d1.scaled(2.0).sum(&d2.scaled(-3.0)).unwrap(), &grid).unwrap();
        let scale = s.phi.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mut err: f64 = 0.0;
        for ((a, b), c) in s1.phi.iter().zip(s2.phi.iter()).zip(s.phi.iter()) {
            err = err.max((2.0 * a - 3.0 * b - c).abs());
        }
        assert!(err <= 1e-13 * scale, "{err}");
    }

    #[test]
    fn boundaries_equal_data_and_runs_are_deterministic() {
        let bg = schw();
        let grid = GridSpec::new(0.0, 20.0, 0.0, 60.0, 0.25).unwrap();
        let d = bump_data(1, 10.0, 30.0, 1e-5, BumpShape::PolynomialBump, (0.0, 0.0)).unwrap();
        let a = evolve_mode(&bg, &d, &grid).unwrap();
        let b = evolve_mode(&bg, &d, &grid).unwrap();
        assert_eq!(a.phi, b.phi);
        let out = d.sample_outgoing(&grid).unwrap();
        assert_eq!(a.phi.row(0).to_vec(), out);
        let inn = d.sample_ingoing(&grid).unwrap();
        for i in 0..grid.n_u() {
            assert_eq!(a.inner[[i, 0]], inn[i]);
        }
    }

    #[test]
    fn time_translation_equivariance() {
        let bg = schw();
        let d = bump_data(0, 10.0, 30.0, 1e-5, BumpShape::PolynomialBump, (0.0, 0.0)).unwrap();
        let g = GridSpec::new(0.0, 20.0, 0.0, 60.0, 0.25).unwrap();
        let delta = 7.5;
        let g2 = GridSpec::new(delta, 20.0 + delta, delta, 60.0 + delta, 0.25).unwrap();
        let a = evolve_mode(&bg, &d, &g).unwrap();
        let b = evolve_mode(&bg, &d.shifted(delta), &g2).unwrap();
        let scale = a.phi.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let err = a.phi.iter().zip(b.phi.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(err <= 1e-12 * scale, "{err}");
    }

    #[test]
    fn static_tail_is_stationary() {
        let bg = schw();
        let mut eps = Vec::new();
        for &h in &[0.5, 0.25] {
            let grid = GridSpec::new(0.0, 40.0, 0.0, 120.0, h).unwrap();
            let d = static_tail_data(&bg, 1.0, 2.1, StaticIngoing::Static, (0.0, 0.0)).unwrap();
            let sol = evolve_mode(&bg, &d, &grid).unwrap();
            let t = t_derivative_field(&sol, 1).unwrap();
            // restrict to r >= 3M where T is resolved
            let mut m: f64 = 0.0;
            for i in 1..grid.n_u() - 1 {
                for j in 1..grid.n_v() - 1 {
                    if sol.r(i, j) >= 3.0 {
                        m = m.max(t.values[[i, j]].abs());
                    }
                }
            }
            eps.push(m);
        }
        let ratio = eps[1] / eps[0];
        assert!((0.22..=0.30).contains(&ratio), "ratio {ratio} from {eps:?}");
    }

    #[test]
    fn t_derivative_of_flat_sine() {
        let bg = Background::minkowski();
        let mut errs = Vec::new();
        for &h in &[0.1, 0.05] {
            let data = flat_data(0, |v| (0.3 * v).sin(), |_| (0.3f64 * 20.0).sin(), (0.0, 20.0));
            let grid = GridSpec::new(0.0, 5.0, 20.0, 40.0, h).unwrap();
            let sol = evolve_mode(&bg, &data, &grid).unwrap();
            let t = t_derivative_field(&sol, 1).unwrap();
            let mut err: f64 = 0.0;
            for i in 1..grid.n_u() - 1 {
                for j in 1..grid.n_v() - 1 {
                    err = err.max((t.values[[i, j]] - 0.3 * (0.3 * grid.v_at(j)).cos()).abs());
                }
            }
            errs.push(err);
        }
        assert!(errs[0] < 1e-3 && (errs[0] / errs[1]).log2() > 1.8, "{errs:?}");
        // composition
        let data = flat_data(0, |v| (0.3 * v).sin(), |_| (0.3f64 * 20.0).sin(), (0.0, 20.0));
        let grid = GridSpec::new(0.0, 5.0, 20.0, 40.0, 0.1).unwrap();
        let sol = evolve_mode(&bg, &data, &grid).unwrap();
        let t3 = t_derivative_field(&sol, 3).unwrap();
        let t12 = apply_t(&t_derivative_field(&sol, 1).unwrap(), grid.h, 2).unwrap();
        for (a, b) in t3.values.iter().zip(t12.values.iter()) {
            assert!((a.is_nan() && b.is_nan()) || a == b);
        }
    }

    #[test]
    fn refined_levels_converge() {
        let bg = schw();
        let d = bump_data(0, 10.0, 30.0, 1e-5, BumpShape::PolynomialBump, (0.0, 0.0)).unwrap();
        let grid = GridSpec::new(0.0, 40.0, 0.0, 100.0, 0.5).unwrap();
        let sols = evolve_refined(&bg, &d, &grid, 3, &EvolveOptions::default()).unwrap();
        let diff = |a: &ModeSolution, b: &ModeSolution| {
            let mut m: f64 = 0.0;
            let ratio = (b.grid.n_u() - 1) / (a.grid.n_u() - 1);
            for (k, &i) in a.rows.iter().enumerate() {
                let Some(fine) = b.row(i * ratio) else { continue };
                for j in 0..a.grid.n_v() {
                    m = m.max((a.phi[[k, j]] - fine[j * ratio]).abs());
                }
            }
            m
        };
        let e1 = diff(&sols[0], &sols[1]);
        let e2 = diff(&sols[1], &sols[2]);
        assert!((e1 / e2 - 4.0).abs() < 0.6, "{e1} {e2}");
    }

    #[test]
    fn strided_storage_and_stations() {
        let bg = schw();
        let d = bump_data(0, 10.0, 30.0, 1e-5, BumpShape::PolynomialBump, (0.0, 0.0)).unwrap();
        let full_grid = GridSpec::new(0.0, 40.0, 0.0, 100.0, 0.5).unwrap();
        let opts = EvolveOptions { stations: vec![10.0, 6.3], ..Default::default() };
        let full = evolve_mode_with(&bg, &d, &full_grid, &opts).unwrap();
        let sparse = evolve_mode_with(&bg, &d, &full_grid.with_stride(10).unwrap(), &opts).unwrap();
        assert_eq!(sparse.rows, vec![0, 1, 2, 10, 20, 30, 40, 50, 60, 70, 80]);
        for &i in &sparse.rows {
            assert_eq!(sparse.row(i).unwrap(), full.row(i).unwrap());
        }
        assert_eq!(full.outer, sparse.outer);
        // r = 10 sits exactly on v = u + 20 when R_norm = 10
        let st = full.station(10.0).unwrap();
        assert_eq!(st.values[4], full.phi[[4, 44]]);
        assert!(full.station(6.3).unwrap().values[10].is_finite());
    }

    #[test]
    fn checkpoint_round_trip() {
        let bg = schw();
        let d = bump_data(0, 10.0, 30.0, 1e-5, BumpShape::PolynomialBump, (0.0, 0.0)).unwrap();
        let grid = GridSpec::new(0.0, 10.0, 0.0, 40.0, 0.5).unwrap().with_stride(4).unwrap();
        let sol = evolve_mode(&bg, &d, &grid).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&sol, &mut buf).unwrap();
        let (hdr, us, phi) = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(hdr.ell, 0);
        assert_eq!(hdr.row_count as usize, sol.rows.len());
        assert_eq!(us[3], 2.0);
        assert_eq!(phi, sol.phi);
        assert!(read_checkpoint(&b"XXXX"[..]).is_err());
    }

    #[test]
    fn stability_warning_for_coarse_grids() {
        let bg = schw();
        let d = bump_data(3, 10.0, 30.0, 1e-5, BumpShape::PolynomialBump, (0.0, 0.0)).unwrap();
        let grid = GridSpec::new(0.0, 12.0, 0.0, 40.0, 4.0).unwrap();
        let sol = evolve_mode(&bg, &d, &grid).unwrap();
        assert!(sol.warnings.iter().any(|w| w.starts_with("StabilityWarning")));
    }
}
