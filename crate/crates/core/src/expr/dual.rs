//! Forward-mode dual numbers.
//!
//! A [`Dual`] carries a value and a vector of partial derivatives. An empty
//! derivative vector stands for "all zero", which lets constants be created
//! without knowing how many directions are being tracked. Nesting
//! (`Dual<Dual<f64>>`) yields second derivatives.

use std::fmt::Debug;

/// Scalar arithmetic shared by `f64` and dual numbers.
pub trait Real: Clone + Debug {
    fn cst(c: f64) -> Self;
    /// The underlying `f64` value, stripped of all derivative parts.
    fn re(&self) -> f64;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    fn scale(&self, k: f64) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn powi(&self, n: i32) -> Self;
}

impl Real for f64 {
    fn cst(c: f64) -> Self {
        c
    }
    fn re(&self) -> f64 {
        *self
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn neg(&self) -> Self {
        -self
    }
    fn scale(&self, k: f64) -> Self {
        self * k
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn powi(&self, n: i32) -> Self {
        f64::powi(*self, n)
    }
}

/// Value plus first partial derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct Dual<T> {
    pub v: T,
    pub d: Vec<T>,
}

impl<T: Real> Dual<T> {
    pub fn constant(v: T) -> Self {
        Dual { v, d: Vec::new() }
    }

    /// Independent variable number `k` out of `n` tracked directions.
    pub fn variable(v: T, k: usize, n: usize) -> Self {
        let d = (0..n).map(|j| T::cst(if j == k { 1.0 } else { 0.0 })).collect();
        Dual { v, d }
    }

    /// Partial derivative in direction `k` (zero when untracked).
    pub fn deriv(&self, k: usize) -> T {
        self.d.get(k).cloned().unwrap_or_else(|| T::cst(0.0))
    }

    fn map_d(&self, f: impl Fn(&T) -> T) -> Vec<T> {
        self.d.iter().map(f).collect()
    }

    fn zip_d(&self, o: &Self, f: impl Fn(Option<&T>, Option<&T>) -> T) -> Vec<T> {
        let n = self.d.len().max(o.d.len());
        (0..n).map(|k| f(self.d.get(k), o.d.get(k))).collect()
    }

    /// Chain rule for a unary function with value `fv` and slope `slope`.
    fn chain(&self, fv: T, slope: T) -> Self {
        Dual {
            v: fv,
            d: self.map_d(|di| di.mul(&slope)),
        }
    }
}

impl<T: Real> Real for Dual<T> {
    fn cst(c: f64) -> Self {
        Dual::constant(T::cst(c))
    }
    fn re(&self) -> f64 {
        self.v.re()
    }
    fn add(&self, o: &Self) -> Self {
        Dual {
            v: self.v.add(&o.v),
            d: self.zip_d(o, |a, b| match (a, b) {
                (Some(a), Some(b)) => a.add(b),
                (Some(a), None) => a.clone(),
                (None, Some(b)) => b.clone(),
                (None, None) => T::cst(0.0),
            }),
        }
    }
    fn sub(&self, o: &Self) -> Self {
        Dual {
            v: self.v.sub(&o.v),
            d: self.zip_d(o, |a, b| match (a, b) {
                (Some(a), Some(b)) => a.sub(b),
                (Some(a), None) => a.clone(),
                (None, Some(b)) => b.neg(),
                (None, None) => T::cst(0.0),
            }),
        }
    }
    fn mul(&self, o: &Self) -> Self {
        Dual {
            v: self.v.mul(&o.v),
            d: self.zip_d(o, |a, b| match (a, b) {
                (Some(a), Some(b)) => a.mul(&o.v).add(&self.v.mul(b)),
                (Some(a), None) => a.mul(&o.v),
                (None, Some(b)) => self.v.mul(b),
                (None, None) => T::cst(0.0),
            }),
        }
    }
    fn div(&self, o: &Self) -> Self {
        let q = self.v.div(&o.v);
        let d = self.zip_d(o, |a, b| match (a, b) {
            (Some(a), Some(b)) => a.sub(&q.mul(b)).div(&o.v),
            (Some(a), None) => a.div(&o.v),
            (None, Some(b)) => q.mul(b).div(&o.v).neg(),
            (None, None) => T::cst(0.0),
        });
        Dual { v: q, d }
    }
    fn neg(&self) -> Self {
        Dual {
            v: self.v.neg(),
            d: self.map_d(|a| a.neg()),
        }
    }
    fn scale(&self, k: f64) -> Self {
        Dual {
            v: self.v.scale(k),
            d: self.map_d(|a| a.scale(k)),
        }
    }
    fn sin(&self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }
    fn cos(&self) -> Self {
        self.chain(self.v.cos(), self.v.sin().neg())
    }
    fn exp(&self) -> Self {
        let e = self.v.exp();
        self.chain(e.clone(), e)
    }
    fn ln(&self) -> Self {
        Dual {
            v: self.v.ln(),
            d: self.map_d(|a| a.div(&self.v)),
        }
    }
    fn sqrt(&self) -> Self {
        let s = self.v.sqrt();
        let twice = s.scale(2.0);
        Dual {
            d: self.map_d(|a| a.div(&twice)),
            v: s,
        }
    }
    fn powi(&self, n: i32) -> Self {
        match n {
            0 => Self::cst(1.0),
            1 => self.clone(),
            _ => {
                let slope = self.v.powi(n - 1).scale(n as f64);
                self.chain(self.v.powi(n), slope)
            }
        }
    }
}
