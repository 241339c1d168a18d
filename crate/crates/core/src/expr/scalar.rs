use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Numeric type that expressions and geometric formulas are evaluated over.
///
/// Implemented by `f64` (plain values), [`Dual`] (first derivatives) and
/// [`Taylor`](super::Taylor) (truncated multivariate Taylor polynomials of any
/// order). Generic code written against this trait gets exact derivatives by
/// swapping the scalar type.
pub trait Scalar:
    Clone
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn cst(c: f64) -> Self;
    fn value(&self) -> f64;
    /// True when the value carries nonzero derivative information.
    fn has_derivatives(&self) -> bool;

    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn tan(&self) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn abs(&self) -> Self;
    /// `self^e` for a constant real exponent.
    fn powf(&self, e: f64) -> Self;
    fn powi(&self, n: i32) -> Self;

    fn scale(&self, c: f64) -> Self {
        self.clone() * Self::cst(c)
    }
    fn square(&self) -> Self {
        self.clone() * self.clone()
    }
}

impl Scalar for f64 {
    fn cst(c: f64) -> Self {
        c
    }
    fn value(&self) -> f64 {
        *self
    }
    fn has_derivatives(&self) -> bool {
        false
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn tan(&self) -> Self {
        f64::tan(*self)
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
    fn abs(&self) -> Self {
        f64::abs(*self)
    }
    fn powf(&self, e: f64) -> Self {
        f64::powf(*self, e)
    }
    fn powi(&self, n: i32) -> Self {
        f64::powi(*self, n)
    }
    fn scale(&self, c: f64) -> Self {
        self * c
    }
}

/// First-order dual number with a vector of partial derivatives.
///
/// An empty derivative vector denotes a constant; binary operations treat
/// missing slots as zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub eps: Vec<f64>,
}

impl Dual {
    pub fn constant(re: f64) -> Self {
        Dual { re, eps: Vec::new() }
    }

    /// Independent variable `index` out of `n` seeded slots.
    pub fn var(re: f64, index: usize, n: usize) -> Self {
        let mut eps = vec![0.0; n];
        eps[index] = 1.0;
        Dual { re, eps }
    }

    /// Seeds every entry of `x` as its own variable.
    pub fn seed(x: &[f64]) -> Vec<Dual> {
        let n = x.len();
        x.iter().enumerate().map(|(i, &v)| Dual::var(v, i, n)).collect()
    }

    /// Seeds `x + ε·direction` with a single derivative slot.
    pub fn directional(x: &[f64], direction: &[f64]) -> Vec<Dual> {
        x.iter()
            .zip(direction)
            .map(|(&v, &d)| Dual { re: v, eps: vec![d] })
            .collect()
    }

    pub fn d(&self, i: usize) -> f64 {
        self.eps.get(i).copied().unwrap_or(0.0)
    }

    /// Derivative vector padded to length `n`.
    pub fn grad(&self, n: usize) -> Vec<f64> {
        (0..n).map(|i| self.d(i)).collect()
    }

    fn chain(&self, f: f64, df: f64) -> Dual {
        Dual {
            re: f,
            eps: self.eps.iter().map(|e| e * df).collect(),
        }
    }

    fn combine(a: &[f64], b: &[f64], fa: f64, fb: f64) -> Vec<f64> {
        let n = a.len().max(b.len());
        (0..n)
            .map(|i| {
                fa * a.get(i).copied().unwrap_or(0.0) + fb * b.get(i).copied().unwrap_or(0.0)
            })
            .collect()
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual {
            re: self.re + o.re,
            eps: Dual::combine(&self.eps, &o.eps, 1.0, 1.0),
        }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual {
            re: self.re - o.re,
            eps: Dual::combine(&self.eps, &o.eps, 1.0, -1.0),
        }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual {
            re: self.re * o.re,
            eps: Dual::combine(&self.eps, &o.eps, o.re, self.re),
        }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        let inv = 1.0 / o.re;
        Dual {
            re: self.re * inv,
            eps: Dual::combine(&self.eps, &o.eps, inv, -self.re * inv * inv),
        }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual {
            re: -self.re,
            eps: self.eps.into_iter().map(|e| -e).collect(),
        }
    }
}

impl Scalar for Dual {
    fn cst(c: f64) -> Self {
        Dual::constant(c)
    }
    fn value(&self) -> f64 {
        self.re
    }
    fn has_derivatives(&self) -> bool {
        self.eps.iter().any(|&e| e != 0.0)
    }
    fn sin(&self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }
    fn cos(&self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
    fn tan(&self) -> Self {
        let t = self.re.tan();
        self.chain(t, 1.0 + t * t)
    }
    fn exp(&self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
    fn ln(&self) -> Self {
        self.chain(self.re.ln(), 1.0 / self.re)
    }
    fn sqrt(&self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn abs(&self) -> Self {
        let sign = if self.re > 0.0 {
            1.0
        } else if self.re < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.chain(self.re.abs(), sign)
    }
    fn powf(&self, e: f64) -> Self {
        self.chain(self.re.powf(e), e * self.re.powf(e - 1.0))
    }
    fn powi(&self, n: i32) -> Self {
        let d = if n == 0 { 0.0 } else { n as f64 * self.re.powi(n - 1) };
        self.chain(self.re.powi(n), d)
    }
    fn scale(&self, c: f64) -> Self {
        Dual {
            re: self.re * c,
            eps: self.eps.iter().map(|e| e * c).collect(),
        }
    }
}
