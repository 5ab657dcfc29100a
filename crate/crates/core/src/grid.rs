use crate::error::{Error, Result};

/// Uniform double-null grid on `[u0, u1] x [v0, v1]` with equal step `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub u0: f64,
    pub u1: f64,
    pub v0: f64,
    pub v1: f64,
    pub h: f64,
    /// Rows stored in a solution are those with index divisible by this.
    pub checkpoint_stride: usize,
}

fn steps(lo: f64, hi: f64, h: f64, name: &str) -> Result<usize> {
    let n = (hi - lo) / h;
    let k = n.round();
    if !(n.is_finite()) || k < 1.0 || (n - k).abs() > 1e-9 * n.max(1.0) {
        return Err(Error::InvalidGrid(format!(
            "{name} range [{lo}, {hi}] is not a positive integer multiple of h = {h}"
        )));
    }
    Ok(k as usize)
}

impl GridSpec {
    pub fn new(u0: f64, u1: f64, v0: f64, v1: f64, h: f64) -> Result<Self> {
        let g = GridSpec { u0, u1, v0, v1, h, checkpoint_stride: 1 };
        g.validate()?;
        Ok(g)
    }

    pub fn with_stride(mut self, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidGrid("checkpoint_stride must be at least 1".into()));
        }
        self.checkpoint_stride = stride;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [("u0", self.u0), ("u1", self.u1), ("v0", self.v0), ("v1", self.v1), ("h", self.h)] {
            if !x.is_finite() {
                return Err(Error::InvalidGrid(format!("{name} = {x} is not finite")));
            }
        }
        if !(self.h > 0.0) {
            return Err(Error::InvalidGrid(format!("h = {} must be positive", self.h)));
        }
        if self.u1 <= self.u0 {
            return Err(Error::InvalidGrid(format!("u1 = {} must exceed u0 = {}", self.u1, self.u0)));
        }
        if self.v1 <= self.v0 {
            return Err(Error::InvalidGrid(format!("v1 = {} must exceed v0 = {}", self.v1, self.v0)));
        }
        if self.checkpoint_stride == 0 {
            return Err(Error::InvalidGrid("checkpoint_stride must be at least 1".into()));
        }
        steps(self.u0, self.u1, self.h, "u")?;
        steps(self.v0, self.v1, self.h, "v")?;
        Ok(())
    }

    /// Number of u nodes.
    pub fn n_u(&self) -> usize {
        ((self.u1 - self.u0) / self.h).round() as usize + 1
    }

    /// Number of v nodes.
    pub fn n_v(&self) -> usize {
        ((self.v1 - self.v0) / self.h).round() as usize + 1
    }

    pub fn u_at(&self, i: usize) -> f64 {
        self.u0 + i as f64 * self.h
    }

    pub fn v_at(&self, j: usize) -> f64 {
        self.v0 + j as f64 * self.h
    }

    /// Index of the node at `u`, if `u` is (to rounding) a node.
    pub fn u_index(&self, u: f64) -> Option<usize> {
        node_index(self.u0, self.h, self.n_u(), u)
    }

    pub fn v_index(&self, v: f64) -> Option<usize> {
        node_index(self.v0, self.h, self.n_v(), v)
    }

    /// Same ranges at step `h / factor`.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        let mut g = *self;
        g.h = self.h / factor as f64;
        g.checkpoint_stride = self.checkpoint_stride * factor;
        g.validate()?;
        Ok(g)
    }

    pub fn cells(&self) -> usize {
        (self.n_u() - 1) * (self.n_v() - 1)
    }
}

fn node_index(x0: f64, h: f64, n: usize, x: f64) -> Option<usize> {
    let t = (x - x0) / h;
    let k = t.round();
    if k < 0.0 || k as usize >= n || (t - k).abs() > 1e-6 {
        None
    } else {
        Some(k as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_indices() {
        let g = GridSpec::new(0.0, 10.0, 5.0, 25.0, 0.5).unwrap();
        assert_eq!(g.n_u(), 21);
        assert_eq!(g.n_v(), 41);
        assert_eq!(g.u_index(3.0), Some(6));
        assert_eq!(g.u_index(3.2), None);
        assert_eq!(g.v_at(40), 25.0);
        let f = g.refined(2).unwrap();
        assert_eq!(f.n_u(), 41);
        assert_eq!(f.checkpoint_stride, 2);
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(GridSpec::new(0.0, 10.0, 5.0, 4.0, 0.5).is_err());
        assert!(GridSpec::new(0.0, 10.0, 0.0, 10.0, 0.3).is_err());
        assert!(GridSpec::new(0.0, 10.0, 0.0, 10.0, -1.0).is_err());
        assert!(GridSpec::new(0.0, 10.0, 0.0, 10.0, 0.5).unwrap().with_stride(0).is_err());
    }
}
