//! Second-order forward-mode jets in two variables.
//!
//! A [`Jet2`] carries a value together with its gradient and Hessian with
//! respect to two seed variables `(a, b)`. Arithmetic propagates the chain
//! rule exactly, so composing copula formulas with marginal CDFs yields the
//! per-subject score and Hessian entries without finite differences.

use crate::special::{ln_norm_cdf, norm_hazard_lower, norm_pdf, norm_quantile};
use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet2 {
    pub v: f64,
    pub da: f64,
    pub db: f64,
    pub daa: f64,
    pub dab: f64,
    pub dbb: f64,
}

impl Jet2 {
    #[inline]
    pub const fn constant(v: f64) -> Self {
        Jet2 { v, da: 0.0, db: 0.0, daa: 0.0, dab: 0.0, dbb: 0.0 }
    }

    /// Seed for the first variable with first and second derivatives `d1`, `d2`.
    #[inline]
    pub const fn seed_a(v: f64, d1: f64, d2: f64) -> Self {
        Jet2 { v, da: d1, db: 0.0, daa: d2, dab: 0.0, dbb: 0.0 }
    }

    #[inline]
    pub const fn seed_b(v: f64, d1: f64, d2: f64) -> Self {
        Jet2 { v, da: 0.0, db: d1, daa: 0.0, dab: 0.0, dbb: d2 }
    }

    /// Applies a scalar function given its value and first two derivatives at `self.v`.
    #[inline]
    pub fn chain(self, f: f64, f1: f64, f2: f64) -> Self {
        Jet2 {
            v: f,
            da: f1 * self.da,
            db: f1 * self.db,
            daa: f2 * self.da * self.da + f1 * self.daa,
            dab: f2 * self.da * self.db + f1 * self.dab,
            dbb: f2 * self.db * self.db + f1 * self.dbb,
        }
    }

    #[inline]
    pub fn scale(self, k: f64) -> Self {
        Jet2 {
            v: k * self.v,
            da: k * self.da,
            db: k * self.db,
            daa: k * self.daa,
            dab: k * self.dab,
            dbb: k * self.dbb,
        }
    }

    #[inline]
    pub fn add_const(mut self, k: f64) -> Self {
        self.v += k;
        self
    }

    #[inline]
    pub fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e)
    }

    #[inline]
    pub fn expm1(self) -> Self {
        let e = self.v.exp();
        self.chain(self.v.exp_m1(), e, e)
    }

    #[inline]
    pub fn ln(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(self.v.ln(), r, -r * r)
    }

    /// `ln|x|`; same derivatives as `ln` on either side of zero.
    #[inline]
    pub fn ln_abs(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(self.v.abs().ln(), r, -r * r)
    }

    #[inline]
    pub fn ln_1p(self) -> Self {
        let r = 1.0 / (1.0 + self.v);
        self.chain(self.v.ln_1p(), r, -r * r)
    }

    #[inline]
    pub fn powf(self, p: f64) -> Self {
        let x = self.v;
        let f = x.powf(p);
        self.chain(f, p * f / x, p * (p - 1.0) * f / (x * x))
    }

    #[inline]
    pub fn sqr(self) -> Self {
        self * self
    }

    #[inline]
    pub fn norm_cdf(self) -> Self {
        let x = self.v;
        let d = norm_pdf(x);
        self.chain(crate::special::norm_cdf(x), d, -x * d)
    }

    /// `ln Φ(x)`.
    #[inline]
    pub fn ln_norm_cdf(self) -> Self {
        let x = self.v;
        let h = norm_hazard_lower(x);
        self.chain(ln_norm_cdf(x), h, -h * (x + h))
    }

    #[inline]
    pub fn norm_quantile(self) -> Self {
        let x = norm_quantile(self.v);
        let r = 1.0 / norm_pdf(x);
        self.chain(x, r, x * r * r)
    }
}

impl Add for Jet2 {
    type Output = Jet2;
    #[inline]
    fn add(self, o: Jet2) -> Jet2 {
        Jet2 {
            v: self.v + o.v,
            da: self.da + o.da,
            db: self.db + o.db,
            daa: self.daa + o.daa,
            dab: self.dab + o.dab,
            dbb: self.dbb + o.dbb,
        }
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    #[inline]
    fn sub(self, o: Jet2) -> Jet2 {
        self + (-o)
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    #[inline]
    fn neg(self) -> Jet2 {
        self.scale(-1.0)
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    #[inline]
    fn mul(self, o: Jet2) -> Jet2 {
        Jet2 {
            v: self.v * o.v,
            da: self.da * o.v + self.v * o.da,
            db: self.db * o.v + self.v * o.db,
            daa: self.daa * o.v + 2.0 * self.da * o.da + self.v * o.daa,
            dab: self.dab * o.v + self.da * o.db + self.db * o.da + self.v * o.dab,
            dbb: self.dbb * o.v + 2.0 * self.db * o.db + self.v * o.dbb,
        }
    }
}

impl Div for Jet2 {
    type Output = Jet2;
    #[inline]
    fn div(self, o: Jet2) -> Jet2 {
        let x = o.v;
        let r = 1.0 / x;
        self * o.chain(r, -r * r, 2.0 * r * r * r)
    }
}

impl Mul<f64> for Jet2 {
    type Output = Jet2;
    #[inline]
    fn mul(self, k: f64) -> Jet2 {
        self.scale(k)
    }
}

impl Add<f64> for Jet2 {
    type Output = Jet2;
    #[inline]
    fn add(self, k: f64) -> Jet2 {
        self.add_const(k)
    }
}
