//! Truncated Taylor jets in `r`: `[f, f', ..., f^(n)]`.

use crate::background::Background;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Jet(pub Vec<f64>);

fn binom(n: usize, k: usize) -> f64 {
    let mut b = 1.0;
    for i in 0..k {
        b = b * (n - i) as f64 / (i + 1) as f64;
    }
    b
}

impl Jet {
    pub fn depth(&self) -> usize {
        self.0.len() - 1
    }

    pub fn value(&self) -> f64 {
        self.0[0]
    }

    pub fn constant(c: f64, n: usize) -> Self {
        let mut v = vec![0.0; n + 1];
        v[0] = c;
        Jet(v)
    }

    /// `x^p` around `x` (x may be `r` or a shifted radius).
    pub fn pow(x: f64, p: f64, n: usize) -> Self {
        let mut v = Vec::with_capacity(n + 1);
        let mut coef = 1.0;
        for m in 0..=n {
            v.push(coef * x.powf(p - m as f64));
            coef *= p - m as f64;
        }
        Jet(v)
    }

    /// `[D^(start), ..., D^(start+n)]` at `r`.
    pub fn metric(bg: &Background, r: f64, start: usize, n: usize) -> Result<Self> {
        let need = start + n;
        if need > bg.max_order() {
            return Err(Error::UnsupportedOrder { order: need, max: bg.max_order() });
        }
        Ok(Jet((start..=need).map(|k| bg.d_unchecked(r, k)).collect()))
    }

    pub fn deriv(&self) -> Self {
        Jet(self.0[1..].to_vec())
    }

    fn truncate(&self, n: usize) -> Self {
        Jet(self.0[..=n].to_vec())
    }

    pub fn add(&self, o: &Jet) -> Self {
        let n = self.depth().min(o.depth());
        Jet((0..=n).map(|k| self.0[k] + o.0[k]).collect())
    }

    pub fn sub(&self, o: &Jet) -> Self {
        let n = self.depth().min(o.depth());
        Jet((0..=n).map(|k| self.0[k] - o.0[k]).collect())
    }

    pub fn scale(&self, a: f64) -> Self {
        Jet(self.0.iter().map(|x| a * x).collect())
    }

    pub fn mul(&self, o: &Jet) -> Self {
        let n = self.depth().min(o.depth());
        let a = self.truncate(n);
        let b = o.truncate(n);
        Jet((0..=n).map(|m| (0..=m).map(|j| binom(m, j) * a.0[j] * b.0[m - j]).sum()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leibniz_and_powers() {
        // (r^2 * r^-3)' = (r^-1)' = -r^-2
        let r = 1.7;
        let a = Jet::pow(r, 2.0, 3);
        let b = Jet::pow(r, -3.0, 3);
        let p = a.mul(&b);
        let e = Jet::pow(r, -1.0, 3);
        for k in 0..=3 {
            assert!((p.0[k] - e.0[k]).abs() < 1e-12 * e.0[k].abs().max(1.0));
        }
        assert_eq!(p.deriv().depth(), 2);
    }

    #[test]
    fn metric_jet_respects_order_cap() {
        let bg = Background::schwarzschild(1.0).unwrap();
        let j = Jet::metric(&bg, 3.0, 1, 2).unwrap();
        assert!((j.value() - 2.0 / 9.0).abs() < 1e-15);
        assert!(Jet::metric(&bg, 3.0, 3, 6).is_err());
    }
}
