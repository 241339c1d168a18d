//! Sub-Finsler fiber norms, axiom validation and the Legendre transform.
//!
//! A metric is a norm `F(x, u)` on frame coordinates `u ∈ ℝᵏ`; the tangent
//! vector is `Σ uᵢ Xᵢ(x)`. Everything downstream works with `L = ½F²`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Dual, Scalar, ScalarExpr, Taylor};
use crate::linalg::{self, Mat};
use crate::systems::System;

#[derive(Clone, Debug, PartialEq)]
pub enum MetricKind {
    /// `F² = uᵀ Q(x) u` with `Q` given over the chart coordinates.
    Quadratic(Vec<Vec<ScalarExpr>>),
    /// `F = ½(√(u₁² + u₂²) + √(u₁² + α u₂²))`, rank 2 only.
    CurvatureWeighted { alpha: f64 },
    /// User formula over coordinates and `u1..uk`; `squared` says whether it
    /// gives `F²` or `F`.
    Custom { expr: ScalarExpr, squared: bool },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubFinslerMetric {
    pub kind: MetricKind,
}

pub fn fiber_names(k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("u{i}")).collect()
}

impl SubFinslerMetric {
    /// `F² = Σ uᵢ²`.
    pub fn euclidean(k: usize, coords: &[String]) -> Self {
        let q = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| ScalarExpr::constant(if i == j { 1.0 } else { 0.0 }, coords.to_vec()))
                    .collect()
            })
            .collect();
        SubFinslerMetric {
            kind: MetricKind::Quadratic(q),
        }
    }

    pub fn quadratic<S: AsRef<str>>(rows: &[Vec<S>], coords: &[String]) -> Result<Self> {
        let k = rows.len();
        let mut q = Vec::with_capacity(k);
        for row in rows {
            if row.len() != k {
                return Err(Error::Config(format!("Q must be {k}x{k}")));
            }
            q.push(
                row.iter()
                    .map(|s| ScalarExpr::parse(s.as_ref(), coords))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(SubFinslerMetric {
            kind: MetricKind::Quadratic(q),
        })
    }

    pub fn curvature_weighted(alpha: f64) -> Self {
        SubFinslerMetric {
            kind: MetricKind::CurvatureWeighted { alpha },
        }
    }

    /// Custom metric from a formula for `F²` (or `F` when `squared` is false).
    pub fn custom(source: &str, coords: &[String], k: usize, squared: bool) -> Result<Self> {
        let mut names = coords.to_vec();
        names.extend(fiber_names(k));
        Ok(SubFinslerMetric {
            kind: MetricKind::Custom {
                expr: ScalarExpr::parse(source, &names)?,
                squared,
            },
        })
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self.kind, MetricKind::Quadratic(_))
    }

    pub fn label(&self) -> String {
        match &self.kind {
            MetricKind::Quadratic(_) => "quadratic".into(),
            MetricKind::CurvatureWeighted { alpha } => format!("curvature_weighted(alpha={alpha})"),
            MetricKind::Custom { expr, squared } => {
                format!("custom({} = {expr})", if *squared { "F2" } else { "F" })
            }
        }
    }

    /// Checks that the metric fits a frame of rank `k`.
    pub fn check_rank(&self, k: usize) -> Result<()> {
        match &self.kind {
            MetricKind::Quadratic(q) if q.len() != k => {
                Err(Error::Config(format!("Q is {}x{0} but the frame has rank {k}", q.len())))
            }
            MetricKind::CurvatureWeighted { .. } if k != 2 => Err(Error::Config(
                "curvature_weighted metric needs a rank-2 frame".into(),
            )),
            _ => Ok(()),
        }
    }

    /// `L = ½F²` for any scalar type.
    pub fn lagrangian<T: Scalar>(&self, x: &[T], u: &[T]) -> Result<T> {
        match &self.kind {
            MetricKind::Quadratic(q) => {
                let mut acc = T::cst(0.0);
                for (i, row) in q.iter().enumerate() {
                    for (j, e) in row.iter().enumerate() {
                        let qij = if e.is_constant() {
                            let c = e.eval_f64(&[])?;
                            if c == 0.0 {
                                continue;
                            }
                            T::cst(c)
                        } else {
                            e.eval(x)?
                        };
                        acc = acc + qij * u[i].clone() * u[j].clone();
                    }
                }
                Ok(acc.scale(0.5))
            }
            MetricKind::CurvatureWeighted { alpha } => {
                self.require_nonzero(u)?;
                let a = u[0].square() + u[1].square();
                let b = u[0].square() + u[1].square().scale(*alpha);
                let f = (a.sqrt() + b.sqrt()).scale(0.5);
                Ok(f.square().scale(0.5))
            }
            MetricKind::Custom { expr, squared } => {
                self.require_nonzero(u)?;
                let mut vals: Vec<T> = x.to_vec();
                vals.extend(u.iter().cloned());
                let v = expr.eval(&vals)?;
                Ok(if *squared { v.scale(0.5) } else { v.square().scale(0.5) })
            }
        }
    }

    fn require_nonzero<T: Scalar>(&self, u: &[T]) -> Result<()> {
        if u.iter().all(|c| c.value() == 0.0) && u.iter().any(|c| c.has_derivatives()) {
            return Err(Error::domain("non-quadratic metric is not smooth at u = 0"));
        }
        Ok(())
    }

    /// `F(x, u)`. For a custom `F` formula the signed value is returned as is.
    pub fn norm(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        if let MetricKind::Custom {
            expr,
            squared: false,
        } = &self.kind
        {
            let mut vals = x.to_vec();
            vals.extend_from_slice(u);
            return expr.eval_f64(&vals);
        }
        let l = self.lagrangian(x, u)?;
        if l < 0.0 {
            return Err(Error::domain(format!("negative F² = {}", 2.0 * l)));
        }
        Ok((2.0 * l).sqrt())
    }

    /// `Q(x)` for quadratic metrics.
    pub fn q_matrix(&self, x: &[f64]) -> Option<Result<Mat<f64>>> {
        match &self.kind {
            MetricKind::Quadratic(q) => Some(
                q.iter()
                    .map(|row| row.iter().map(|e| e.eval_f64(x)).collect())
                    .collect(),
            ),
            _ => None,
        }
    }

    /// Gradient and Hessian of `L` in `u` at fixed `x`.
    pub fn fiber_hessian(&self, x: &[f64], u: &[f64]) -> Result<(Vec<f64>, Mat<f64>)> {
        let k = u.len();
        let ut = Taylor::seed(u, 2);
        let xt: Vec<Taylor> = x.iter().map(|&v| Taylor::constant(v)).collect();
        let l = self.lagrangian(&xt, &ut)?;
        Ok((l.gradient(k), l.hessian(k)))
    }

    fn fiber_gradient(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let ud = Dual::seed(u);
        let xd: Vec<Dual> = x.iter().map(|&v| Dual::constant(v)).collect();
        Ok(self.lagrangian(&xd, &ud)?.grad(u.len()))
    }
}

/// `p̂ = ∂L/∂u`.
pub fn legendre(system: &System, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    let metric = &system.metric;
    if !metric.is_quadratic() && u.iter().all(|&c| c == 0.0) {
        return Err(Error::domain("Legendre map is singular at u = 0"));
    }
    metric.fiber_gradient(x, u)
}

const NEWTON_MAX_ITERS: usize = 50;
const NEWTON_TOL: f64 = 1e-12;

/// The `u` with `∂L/∂u(x, u) = p̂`.
pub fn legendre_inverse(system: &System, x: &[f64], phat: &[f64]) -> Result<Vec<f64>> {
    let metric = &system.metric;
    if let Some(q) = metric.q_matrix(x) {
        return linalg::solve(q?, phat.to_vec()).map_err(|_| Error::SingularHessian);
    }
    let scale = linalg::norm(phat);
    if scale == 0.0 {
        return Err(Error::domain("inverse Legendre map is singular at p = 0"));
    }
    // L is 2-homogeneous, so ∂L/∂u = H(u) u and H(p̂)⁻¹p̂ is the solve with the
    // quadratic part frozen at the direction of p̂.
    let (_, h0) = metric.fiber_hessian(x, phat)?;
    let mut u = linalg::solve(h0, phat.to_vec()).map_err(|_| Error::SingularHessian)?;
    let residual = |u: &[f64]| -> Result<(Vec<f64>, f64)> {
        let g = metric.fiber_gradient(x, u)?;
        let r: Vec<f64> = g.iter().zip(phat).map(|(a, b)| a - b).collect();
        let n = linalg::norm(&r);
        Ok((r, n))
    };
    let tol = NEWTON_TOL * scale.max(1.0);
    let mut best = f64::INFINITY;
    for _ in 0..NEWTON_MAX_ITERS {
        let (g, h) = metric.fiber_hessian(x, &u)?;
        let r: Vec<f64> = g.iter().zip(phat).map(|(a, b)| a - b).collect();
        let rn = linalg::norm(&r);
        best = best.min(rn);
        if rn <= tol {
            return Ok(u);
        }
        let step = linalg::solve(h, r).map_err(|_| Error::SingularHessian)?;
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = u.iter().zip(&step).map(|(a, s)| a - lambda * s).collect();
            let ok = match residual(&trial) {
                Ok((_, tn)) => tn < (1.0 - 1e-4 * lambda) * rn,
                Err(_) => false,
            };
            if ok || lambda < 1e-10 {
                u = trial;
                break;
            }
            lambda *= 0.5;
        }
    }
    let (_, rn) = residual(&u)?;
    if rn <= tol {
        return Ok(u);
    }
    Err(Error::NoConvergence {
        reason: "Legendre inversion".into(),
        best_residual: best.min(rn),
    })
}

/// `F*(p̂) = sup { ⟨p̂, u⟩ : F(u) = 1 }`.
pub fn dual_metric(system: &System, x: &[f64], phat: &[f64]) -> Result<f64> {
    if phat.iter().all(|&c| c == 0.0) {
        return Ok(0.0);
    }
    let u = legendre_inverse(system, x, phat)?;
    let f = system.metric.norm(x, &u)?;
    Ok(linalg::dot(phat, &u) / f)
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub metric: String,
    pub samples: usize,
    pub domain_failures: usize,
    /// max |F(x, λu) − |λ|F(x, u)| / F(x, u)
    pub max_homogeneity_violation: f64,
    /// min eigenvalue of the u-Hessian of F²
    pub min_hessian_eigenvalue: f64,
    pub min_value: f64,
    pub homogeneity_ok: bool,
    pub convexity_ok: bool,
    pub nonnegativity_ok: bool,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.homogeneity_ok && self.convexity_ok && self.nonnegativity_ok && self.domain_failures == 0
    }
}

pub const HOMOGENEITY_TOL: f64 = 1e-9;

/// Samples the metric axioms over the system's sampling box.
pub fn validate(system: &System, samples: usize, seed: u64) -> ValidationReport {
    let metric = &system.metric;
    let k = system.k();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ValidationReport {
        metric: metric.label(),
        samples,
        domain_failures: 0,
        max_homogeneity_violation: 0.0,
        min_hessian_eigenvalue: f64::INFINITY,
        min_value: f64::INFINITY,
        homogeneity_ok: true,
        convexity_ok: true,
        nonnegativity_ok: true,
    };
    for _ in 0..samples.max(1) {
        let x = system.sample_point(&mut rng);
        let mut u: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if linalg::norm(&u) < 1e-3 {
            u[0] = 1.0;
        }
        let lambda: f64 = rng.gen_range(-3.0..3.0);
        let sample = || -> Result<(f64, f64, f64)> {
            let f = metric.norm(&x, &u)?;
            let ul: Vec<f64> = u.iter().map(|c| c * lambda).collect();
            let fl = metric.norm(&x, &ul)?;
            let viol = (fl - lambda.abs() * f).abs() / f.abs().max(f64::MIN_POSITIVE);
            let (_, h) = metric.fiber_hessian(&x, &u)?;
            let hm = nalgebra::DMatrix::from_fn(k, k, |i, j| 2.0 * h[i][j]);
            let eig = hm.symmetric_eigenvalues().min();
            Ok((f, viol, eig))
        };
        match sample() {
            Ok((f, viol, eig)) if f.is_finite() && viol.is_finite() && eig.is_finite() => {
                report.min_value = report.min_value.min(f);
                report.max_homogeneity_violation = report.max_homogeneity_violation.max(viol);
                report.min_hessian_eigenvalue = report.min_hessian_eigenvalue.min(eig);
            }
            _ => report.domain_failures += 1,
        }
    }
    report.homogeneity_ok = report.max_homogeneity_violation <= HOMOGENEITY_TOL;
    report.convexity_ok = report.min_hessian_eigenvalue > 0.0;
    report.nonnegativity_ok = report.min_value >= 0.0;
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{self, System};

    fn plane(metric: impl Fn(&[String]) -> SubFinslerMetric) -> System {
        let mut s = systems::euclidean(2);
        s.metric = metric(&s.coords);
        s
    }

    #[test]
    fn euclidean_legendre_is_identity() {
        let s = systems::euclidean(2);
        assert_eq!(legendre(&s, &[0.0, 0.0], &[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
        assert_eq!(legendre_inverse(&s, &[0.0, 0.0], &[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
        assert!((dual_metric(&s, &[0.0, 0.0], &[3.0, 4.0]).unwrap() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn diagonal_metric() {
        let s = plane(|c| SubFinslerMetric::quadratic(&[vec!["1", "0"], vec!["0", "2"]], c).unwrap());
        assert_eq!(legendre(&s, &[0.0, 0.0], &[1.0, 1.0]).unwrap(), vec![1.0, 2.0]);
        let u = legendre_inverse(&s, &[0.0, 0.0], &[1.0, 2.0]).unwrap();
        assert!((u[0] - 1.0).abs() < 1e-15 && (u[1] - 1.0).abs() < 1e-15);
        let p = [0.7, -1.3];
        let fs = dual_metric(&s, &[0.0, 0.0], &p).unwrap();
        assert!((fs * fs - (p[0] * p[0] + p[1] * p[1] / 2.0)).abs() < 1e-14);
    }

    #[test]
    fn quadratic_validates_with_eigenvalue_two() {
        let s = systems::euclidean(2);
        let r = validate(&s, 200, 1);
        assert!(r.passed(), "{r:?}");
        assert!((r.min_hessian_eigenvalue - 2.0).abs() < 1e-12);
    }

    #[test]
    fn signed_norm_fails_nonnegativity() {
        let s = plane(|c| SubFinslerMetric::custom("u1", c, 2, false).unwrap());
        let r = validate(&s, 200, 2);
        assert!(!r.nonnegativity_ok);
        assert!(!r.passed());
    }

    #[test]
    fn curvature_weighted_round_trip() {
        let s = plane(|_| SubFinslerMetric::curvature_weighted(3.0));
        let r = validate(&s, 2000, 3);
        assert!(r.passed(), "{r:?}");
        let x = [0.1, 0.2];
        for u in [[1.0, 0.0], [0.3, -2.0], [-1.0, 1.0], [0.0, 0.5]] {
            let p = legendre(&s, &x, &u).unwrap();
            let back = legendre_inverse(&s, &x, &p).unwrap();
            assert!(linalg::norm(&[back[0] - u[0], back[1] - u[1]]) < 1e-9);
            let f = s.metric.norm(&x, &u).unwrap();
            assert!((dual_metric(&s, &x, &p).unwrap() - f).abs() < 1e-10 * f);
        }
        assert!(legendre(&s, &x, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn original_curvature_family_is_not_convex() {
        // (u1^4 + 2u1^2u2^2 + 3u2^4)/(u1^2+u2^2): fails strong convexity
        let s = plane(|c| {
            SubFinslerMetric::custom("(u1^4 + 2*u1^2*u2^2 + 3*u2^4)/(u1^2 + u2^2)", c, 2, true)
                .unwrap()
        });
        let r = validate(&s, 2000, 4);
        assert!(r.homogeneity_ok);
        assert!(!r.convexity_ok);
    }

    #[test]
    fn euler_identity() {
        let s = plane(|_| SubFinslerMetric::curvature_weighted(3.0));
        let u = [0.4, 1.1];
        let p = legendre(&s, &[0.0, 0.0], &u).unwrap();
        let l = s.metric.lagrangian(&[0.0, 0.0], &u).unwrap();
        assert!((linalg::dot(&u, &p) - 2.0 * l).abs() < 1e-12);
    }
}
