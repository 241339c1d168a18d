//! Truncated multivariate Taylor polynomials.
//!
//! A [`Taylor`] value stores the coefficients of the Taylor expansion of a
//! quantity around the seed point, up to a fixed total degree. Arithmetic is
//! truncated polynomial arithmetic, elementary functions are applied by
//! composing with their univariate expansions. This gives exact derivatives of
//! any order, which the higher-order geometric objects (iterated Lie brackets,
//! Berwald coefficients, sub-Laplacian) need.

use std::collections::HashMap;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::{Arc, Mutex, OnceLock};

use super::Scalar;

/// Monomial layout for `nvars` variables up to total degree `order`.
#[derive(Debug)]
pub struct Space {
    nvars: usize,
    order: usize,
    monomials: Vec<Vec<u8>>,
    lookup: HashMap<Vec<u8>, usize>,
    // (i, j, k): monomial i times monomial j is monomial k
    products: Vec<(u32, u32, u32)>,
}

impl Space {
    fn build(nvars: usize, order: usize) -> Space {
        let mut monomials: Vec<Vec<u8>> = Vec::new();
        for degree in 0..=order {
            let mut current = vec![0u8; nvars];
            enumerate(&mut current, 0, degree, &mut monomials);
        }
        let lookup: HashMap<Vec<u8>, usize> = monomials
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        let degree = |m: &Vec<u8>| m.iter().map(|&e| e as usize).sum::<usize>();
        let mut products = Vec::new();
        for (i, a) in monomials.iter().enumerate() {
            for (j, b) in monomials.iter().enumerate() {
                if degree(a) + degree(b) <= order {
                    let sum: Vec<u8> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                    products.push((i as u32, j as u32, lookup[&sum] as u32));
                }
            }
        }
        Space {
            nvars,
            order,
            monomials,
            lookup,
            products,
        }
    }

    /// Shared space for the given shape.
    pub fn get(nvars: usize, order: usize) -> Arc<Space> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Space>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("taylor space cache poisoned");
        guard
            .entry((nvars, order))
            .or_insert_with(|| Arc::new(Space::build(nvars, order)))
            .clone()
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn order(&self) -> usize {
        self.order
    }

    fn index_of(&self, exponents: &[u8]) -> Option<usize> {
        self.lookup.get(exponents).copied()
    }
}

fn enumerate(current: &mut Vec<u8>, pos: usize, remaining: usize, out: &mut Vec<Vec<u8>>) {
    if pos + 1 == current.len() {
        current[pos] = remaining as u8;
        out.push(current.clone());
        current[pos] = 0;
        return;
    }
    if current.is_empty() {
        if remaining == 0 {
            out.push(Vec::new());
        }
        return;
    }
    for e in (0..=remaining).rev() {
        current[pos] = e as u8;
        enumerate(current, pos + 1, remaining - e, out);
    }
    current[pos] = 0;
}

/// Truncated Taylor polynomial. `space == None` encodes a plain constant.
#[derive(Clone, Debug)]
pub struct Taylor {
    space: Option<Arc<Space>>,
    coeffs: Vec<f64>,
}

impl Taylor {
    pub fn constant(c: f64) -> Taylor {
        Taylor {
            space: None,
            coeffs: vec![c],
        }
    }

    /// Variable `index` of `space`, expanded around `value`.
    pub fn var(space: &Arc<Space>, value: f64, index: usize) -> Taylor {
        let mut coeffs = vec![0.0; space.len()];
        coeffs[0] = value;
        if space.order >= 1 {
            let mut e = vec![0u8; space.nvars];
            e[index] = 1;
            coeffs[space.index_of(&e).expect("linear monomial")] = 1.0;
        }
        Taylor {
            space: Some(space.clone()),
            coeffs,
        }
    }

    /// Seeds every entry of `x` as a variable of a fresh space of the given order.
    pub fn seed(x: &[f64], order: usize) -> Vec<Taylor> {
        let space = Space::get(x.len(), order);
        x.iter()
            .enumerate()
            .map(|(i, &v)| Taylor::var(&space, v, i))
            .collect()
    }

    pub fn space(&self) -> Option<&Arc<Space>> {
        self.space.as_ref()
    }

    /// Raw coefficient of the monomial with the given exponents.
    pub fn coefficient(&self, exponents: &[u8]) -> f64 {
        match &self.space {
            None => {
                if exponents.iter().all(|&e| e == 0) {
                    self.coeffs[0]
                } else {
                    0.0
                }
            }
            Some(s) => s.index_of(exponents).map_or(0.0, |i| self.coeffs[i]),
        }
    }

    /// Mixed partial derivative; `vars` lists the differentiation variables
    /// with repetition, e.g. `[0, 0, 2]` for ∂³/∂x₀²∂x₂.
    pub fn derivative(&self, vars: &[usize]) -> f64 {
        let Some(space) = &self.space else {
            return if vars.is_empty() { self.coeffs[0] } else { 0.0 };
        };
        if vars.len() > space.order {
            return 0.0;
        }
        let mut e = vec![0u8; space.nvars];
        for &v in vars {
            e[v] += 1;
        }
        let factorial: f64 = e
            .iter()
            .map(|&k| (1..=k as u64).product::<u64>() as f64)
            .product();
        self.coefficient(&e) * factorial
    }

    pub fn gradient(&self, n: usize) -> Vec<f64> {
        (0..n).map(|i| self.derivative(&[i])).collect()
    }

    pub fn hessian(&self, n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..n).map(|j| self.derivative(&[i, j])).collect())
            .collect()
    }

    /// Exact partial derivative as a polynomial. The result is valid to one
    /// degree less than the input.
    pub fn partial(&self, var: usize) -> Taylor {
        let Some(space) = &self.space else {
            return Taylor::constant(0.0);
        };
        let mut out = vec![0.0; space.len()];
        for (idx, m) in space.monomials.iter().enumerate() {
            let k = m[var];
            if k == 0 || self.coeffs[idx] == 0.0 {
                continue;
            }
            let mut lower = m.clone();
            lower[var] -= 1;
            let target = space.index_of(&lower).expect("lower monomial exists");
            out[target] += k as f64 * self.coeffs[idx];
        }
        Taylor {
            space: Some(space.clone()),
            coeffs: out,
        }
    }

    fn unify(a: &Taylor, b: &Taylor) -> Option<Arc<Space>> {
        match (&a.space, &b.space) {
            (None, None) => None,
            (Some(s), None) | (None, Some(s)) => Some(s.clone()),
            (Some(s), Some(t)) => {
                assert!(
                    Arc::ptr_eq(s, t) || (s.nvars == t.nvars && s.order == t.order),
                    "mixing Taylor polynomials from different spaces"
                );
                Some(s.clone())
            }
        }
    }

    fn expanded(&self, space: &Arc<Space>) -> Vec<f64> {
        if self.space.is_some() {
            self.coeffs.clone()
        } else {
            let mut c = vec![0.0; space.len()];
            c[0] = self.coeffs[0];
            c
        }
    }

    /// Applies a univariate function given its scaled derivatives
    /// `d[j] = f⁽ʲ⁾(a₀)/j!` at the constant term.
    fn compose(&self, d: &[f64]) -> Taylor {
        let Some(space) = &self.space else {
            return Taylor::constant(d[0]);
        };
        let mut h = self.clone();
        h.coeffs[0] = 0.0;
        let order = space.order;
        let mut acc = Taylor {
            space: Some(space.clone()),
            coeffs: {
                let mut c = vec![0.0; space.len()];
                c[0] = d[order];
                c
            },
        };
        for j in (0..order).rev() {
            acc = acc * h.clone();
            acc.coeffs[0] += d[j];
        }
        acc
    }

    fn order(&self) -> usize {
        self.space.as_ref().map_or(0, |s| s.order)
    }
}

fn factorial(j: usize) -> f64 {
    (1..=j).map(|k| k as f64).product()
}

impl Add for Taylor {
    type Output = Taylor;
    fn add(self, o: Taylor) -> Taylor {
        match Taylor::unify(&self, &o) {
            None => Taylor::constant(self.coeffs[0] + o.coeffs[0]),
            Some(space) => {
                let mut c = self.expanded(&space);
                let other = o.expanded(&space);
                c.iter_mut().zip(other).for_each(|(a, b)| *a += b);
                Taylor {
                    space: Some(space),
                    coeffs: c,
                }
            }
        }
    }
}

impl Sub for Taylor {
    type Output = Taylor;
    fn sub(self, o: Taylor) -> Taylor {
        self + (-o)
    }
}

impl Neg for Taylor {
    type Output = Taylor;
    fn neg(self) -> Taylor {
        Taylor {
            space: self.space,
            coeffs: self.coeffs.into_iter().map(|c| -c).collect(),
        }
    }
}

impl Mul for Taylor {
    type Output = Taylor;
    fn mul(self, o: Taylor) -> Taylor {
        match (&self.space, &o.space) {
            (None, None) => Taylor::constant(self.coeffs[0] * o.coeffs[0]),
            (None, Some(_)) => o.scale(self.coeffs[0]),
            (Some(_), None) => self.scale(o.coeffs[0]),
            (Some(_), Some(_)) => {
                let space = Taylor::unify(&self, &o).expect("nonconstant");
                let mut c = vec![0.0; space.len()];
                for &(i, j, k) in &space.products {
                    let a = self.coeffs[i as usize];
                    if a == 0.0 {
                        continue;
                    }
                    c[k as usize] += a * o.coeffs[j as usize];
                }
                Taylor {
                    space: Some(space),
                    coeffs: c,
                }
            }
        }
    }
}

impl Div for Taylor {
    type Output = Taylor;
    fn div(self, o: Taylor) -> Taylor {
        if o.space.is_none() {
            return self.scale(1.0 / o.coeffs[0]);
        }
        self * o.powi(-1)
    }
}

impl Scalar for Taylor {
    fn cst(c: f64) -> Self {
        Taylor::constant(c)
    }
    fn value(&self) -> f64 {
        self.coeffs[0]
    }
    fn has_derivatives(&self) -> bool {
        self.coeffs.iter().skip(1).any(|&c| c != 0.0)
    }
    fn sin(&self) -> Self {
        let a = self.coeffs[0];
        let d: Vec<f64> = (0..=self.order())
            .map(|j| (a + j as f64 * std::f64::consts::FRAC_PI_2).sin() / factorial(j))
            .collect();
        self.compose(&d)
    }
    fn cos(&self) -> Self {
        let a = self.coeffs[0];
        let d: Vec<f64> = (0..=self.order())
            .map(|j| (a + j as f64 * std::f64::consts::FRAC_PI_2).cos() / factorial(j))
            .collect();
        self.compose(&d)
    }
    fn tan(&self) -> Self {
        self.sin() / self.cos()
    }
    fn exp(&self) -> Self {
        let e = self.coeffs[0].exp();
        let d: Vec<f64> = (0..=self.order()).map(|j| e / factorial(j)).collect();
        self.compose(&d)
    }
    fn ln(&self) -> Self {
        let a = self.coeffs[0];
        let d: Vec<f64> = (0..=self.order())
            .map(|j| {
                if j == 0 {
                    a.ln()
                } else {
                    let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
                    sign / (j as f64 * a.powi(j as i32))
                }
            })
            .collect();
        self.compose(&d)
    }
    fn sqrt(&self) -> Self {
        self.powf(0.5)
    }
    fn abs(&self) -> Self {
        if self.coeffs[0] < 0.0 {
            -self.clone()
        } else {
            self.clone()
        }
    }
    fn powf(&self, e: f64) -> Self {
        let a = self.coeffs[0];
        let mut d = Vec::with_capacity(self.order() + 1);
        let mut falling = 1.0;
        for j in 0..=self.order() {
            if j > 0 {
                falling *= e - (j as f64 - 1.0);
            }
            d.push(if falling == 0.0 {
                0.0
            } else {
                falling * a.powf(e - j as f64) / factorial(j)
            });
        }
        self.compose(&d)
    }
    fn powi(&self, n: i32) -> Self {
        if n >= 0 && self.space.is_some() {
            let mut acc = Taylor::constant(1.0);
            for _ in 0..n {
                acc = acc * self.clone();
            }
            return acc;
        }
        let a = self.coeffs[0];
        let mut d = Vec::with_capacity(self.order() + 1);
        let mut falling = 1.0;
        for j in 0..=self.order() {
            if j > 0 {
                falling *= n as f64 - (j as f64 - 1.0);
            }
            d.push(if falling == 0.0 {
                0.0
            } else {
                falling * a.powi(n - j as i32) / factorial(j)
            });
        }
        self.compose(&d)
    }
    fn scale(&self, c: f64) -> Self {
        Taylor {
            space: self.space.clone(),
            coeffs: self.coeffs.iter().map(|v| v * c).collect(),
        }
    }
}
