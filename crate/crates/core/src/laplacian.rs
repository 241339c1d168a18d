//! Horizontal gradient, horizontal divergence and the sub-Laplacian
//! `Δ_F = div_D(grad_F)`, plus a scan over test fields that flags non-flat
//! geometries.
//!
//! Divergence is taken with respect to the Lebesgue volume of the chart.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics;
use crate::error::{Error, Result};
use crate::expr::{Dual, ScalarExpr, Taylor};
use crate::geometry;
use crate::linalg::{self, Mat};
use crate::systems::System;

pub const FLATNESS_TOL: f64 = 1e-6;

/// A scalar function on the chart.
#[derive(Clone, Debug)]
pub struct ScalarField {
    pub h: ScalarExpr,
}

impl ScalarField {
    pub fn parse(source: &str, system: &System) -> Result<Self> {
        Ok(ScalarField {
            h: ScalarExpr::parse(source, &system.coords)?,
        })
    }

    pub fn source(&self) -> String {
        self.h.to_string()
    }
}

/// Coordinates, their squares and pairwise products.
pub fn default_test_fields(system: &System) -> Vec<ScalarField> {
    let mut out = linear_test_fields(system);
    let c = &system.coords;
    for i in 0..c.len() {
        for j in i..c.len() {
            let src = if i == j {
                format!("{}^2", c[i])
            } else {
                format!("{}*{}", c[i], c[j])
            };
            out.push(ScalarField::parse(&src, system).expect("coordinate product"));
        }
    }
    out
}

pub fn linear_test_fields(system: &System) -> Vec<ScalarField> {
    system
        .coords
        .iter()
        .map(|c| ScalarField::parse(c, system).expect("coordinate"))
        .collect()
}

/// `grad_F h = E(dh)`, a vector in `D`.
pub fn horizontal_gradient(system: &System, h: &ScalarField, x: &[f64]) -> Result<Vec<f64>> {
    let (_, dh) = differential(h, x)?;
    dynamics::anchor_e(system, x, &dh)
}

fn differential(h: &ScalarField, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let v = h.h.eval(&Dual::seed(x))?;
    Ok((v.re, v.grad(x.len())))
}

/// `Σⱼ ∂Vʲ/∂xʲ` for `V = Σᵢ cᵢ(x) Xᵢ`.
pub fn horizontal_divergence(system: &System, coeffs: &[ScalarExpr], x: &[f64]) -> Result<f64> {
    let (n, k) = (system.n(), system.k());
    if coeffs.len() != k {
        return Err(Error::invalid(format!("expected {k} coefficient expressions, got {}", coeffs.len())));
    }
    let xd = Dual::seed(x);
    let fm = system.frame_at(&xd)?;
    let c = coeffs.iter().map(|e| e.eval(&xd)).collect::<Result<Vec<_>>>()?;
    let v = linalg::mat_vec(&fm, &c);
    Ok((0..n).map(|j| v[j].d(j)).sum())
}

/// `Δ_F h(x)`. The derivative of the gradient's fiber coefficients comes from
/// differentiating `∂L/∂u(x, u(x)) = p̂(x)`.
pub fn sub_laplacian(system: &System, h: &ScalarField, x: &[f64]) -> Result<f64> {
    let (n, k) = (system.n(), system.k());
    let ht = h.h.eval(&Taylor::seed(x, 2))?;
    let dh = ht.gradient(n);
    let d2h = ht.hessian(n);
    let (vals, dx) = geometry::frame_jacobian(system, x)?;
    let phat: Vec<f64> = (0..k).map(|i| (0..n).map(|m| vals[m][i] * dh[m]).sum()).collect();
    let u = if phat.iter().all(|&c| c == 0.0) && system.metric.is_quadratic() {
        vec![0.0; k]
    } else if phat.iter().all(|&c| c == 0.0) {
        return Err(Error::domain("horizontal differential vanishes"));
    } else {
        crate::metric::legendre_inverse(system, x, &phat)?
    };
    let mut z = x.to_vec();
    z.extend_from_slice(&u);
    let zt = Taylor::seed(&z, 2);
    let l = system.metric.lagrangian(&zt[..n], &zt[n..])?;
    let hz = l.hessian(n + k);
    let huu: Mat<f64> = (0..k).map(|a| (0..k).map(|b| hz[n + a][n + b]).collect()).collect();
    let mut div = 0.0;
    for j in 0..n {
        let rhs: Vec<f64> = (0..k)
            .map(|i| {
                let dp: f64 = (0..n).map(|m| dx[j][m][i] * dh[m] + vals[m][i] * d2h[m][j]).sum();
                dp - hz[n + i][j]
            })
            .collect();
        let du = linalg::solve(huu.clone(), rhs).map_err(|_| Error::SingularHessian)?;
        for i in 0..k {
            div += dx[j][j][i] * u[i] + vals[j][i] * du[i];
        }
    }
    Ok(div)
}

#[derive(Clone, Debug, Serialize)]
pub struct FlatnessReport {
    pub fields: Vec<String>,
    pub samples: Vec<Vec<f64>>,
    /// `values[s][f]`: `Δ_F` of field `f` at sample `s`; `None` where the
    /// operator is undefined.
    pub values: Vec<Vec<Option<f64>>>,
    pub domain_failures: usize,
    pub max_abs: f64,
    pub flat: bool,
}

/// Tabulates `Δ_F` over test fields at seeded uniform samples of `region`.
pub fn flatness_scan(system: &System, fields: &[ScalarField], region: &[(f64, f64)], samples: usize, seed: u64) -> Result<FlatnessReport> {
    if fields.is_empty() {
        return Err(Error::invalid("no test fields"));
    }
    if samples == 0 {
        return Err(Error::InvalidRegion("no samples requested".into()));
    }
    if region.len() != system.n() || region.iter().any(|(a, b)| !(a <= b) || !a.is_finite() || !b.is_finite()) {
        return Err(Error::InvalidRegion(format!("need {} finite intervals with lo <= hi", system.n())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = (0..samples)
        .map(|_| {
            region
                .iter()
                .map(|&(a, b)| if a == b { a } else { rand::Rng::gen_range(&mut rng, a..b) })
                .collect()
        })
        .collect();
    let values: Vec<Vec<Option<f64>>> = points
        .par_iter()
        .map(|x| fields.iter().map(|f| sub_laplacian(system, f, x)).collect::<Vec<_>>())
        .collect::<Vec<_>>()
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|r| match r {
                    Ok(v) => Ok(Some(v)),
                    Err(Error::Domain(_)) | Err(Error::SingularHessian) => Ok(None),
                    Err(e) => Err(e),
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let domain_failures = values.iter().flatten().filter(|v| v.is_none()).count();
    let max_abs = values.iter().flatten().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(FlatnessReport {
        fields: fields.iter().map(|f| f.source()).collect(),
        samples: points,
        values,
        domain_failures,
        max_abs,
        flat: max_abs <= FLATNESS_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::SubFinslerMetric;
    use crate::systems::{self, System};

    #[test]
    fn euclidean_calibration() {
        let e = systems::euclidean(3);
        let h = ScalarField::parse("0.5*(x1^2 + x2^2 + x3^2)", &e).unwrap();
        assert!((sub_laplacian(&e, &h, &[0.3, -0.2, 0.9]).unwrap() - 3.0).abs() < 1e-12);
        let lin = ScalarField::parse("2*x1 - x3 + 4", &e).unwrap();
        assert!(sub_laplacian(&e, &lin, &[0.1, 0.2, 0.3]).unwrap().abs() < 1e-14);
        let g = horizontal_gradient(&e, &ScalarField::parse("x1", &e).unwrap(), &[0.5, 0.5, 0.5]).unwrap();
        assert_eq!(g, vec![1.0, 0.0, 0.0]);
        let v = [ScalarExpr::parse("x1", &e.coords).unwrap(), ScalarExpr::constant(0.0, e.coords.clone()), ScalarExpr::constant(0.0, e.coords.clone())];
        assert_eq!(horizontal_divergence(&e, &v, &[0.2, 0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn heisenberg_values() {
        let h = systems::heisenberg();
        let f = ScalarField::parse("x^2 + y^2", &h).unwrap();
        assert!((sub_laplacian(&h, &f, &[0.0; 3]).unwrap() - 4.0).abs() < 1e-12);
        let z = ScalarField::parse("z", &h).unwrap();
        assert!(linalg::norm(&horizontal_gradient(&h, &z, &[0.0; 3]).unwrap()) == 0.0);
        let one = ScalarExpr::constant(1.0, h.coords.clone());
        assert!(horizontal_divergence(&h, &[one.clone(), one], &[0.4, -0.3, 0.2]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn divergence_product_rule() {
        let h = systems::heisenberg();
        let x = [0.3, -0.7, 0.5];
        let c = [ScalarExpr::parse("sin(x) + z", &h.coords).unwrap(), ScalarExpr::parse("x*y", &h.coords).unwrap()];
        let src = "exp(y) + x*z";
        let f = ScalarField::parse(src, &h).unwrap();
        let hc: Vec<ScalarExpr> = ["sin(x) + z", "x*y"]
            .iter()
            .map(|s| ScalarExpr::parse(&format!("({src})*({s})"), &h.coords).unwrap())
            .collect();
        let lhs = horizontal_divergence(&h, &hc, &x).unwrap();
        let hv = f.h.eval_f64(&x).unwrap();
        let (_, dh) = differential(&f, &x).unwrap();
        let fm = h.frame_at(&x).unwrap();
        let cv: Vec<f64> = c.iter().map(|e| e.eval_f64(&x).unwrap()).collect();
        let v = linalg::mat_vec(&fm, &cv);
        let rhs = hv * horizontal_divergence(&h, &c, &x).unwrap() + linalg::dot(&dh, &v);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn matches_laplace_beltrami_for_unimodular_metric() {
        // det Q = 1, so the Lebesgue divergence is the Riemannian one
        let coords = ["x1", "x2"];
        let base = System::new("lb", &coords, &[false, false], &[vec!["1", "0"], vec!["0", "1"]]).unwrap();
        let metric = SubFinslerMetric::quadratic(&[vec!["1", "x1"], vec!["x1", "1 + x1^2"]], &base.coords).unwrap();
        let s = base.with_metric(metric).unwrap();
        let f = ScalarField::parse("sin(x1)*cos(2*x2) + x1^2*x2", &s).unwrap();
        let hfun = |y: &[f64]| f.h.eval_f64(y).unwrap();
        let qinv = |y: &[f64]| {
            let a = y[0];
            [[1.0 + a * a, -a], [-a, 1.0]]
        };
        let flux = |y: &[f64], j: usize| {
            let e = 1e-4;
            let d0 = (hfun(&[y[0] + e, y[1]]) - hfun(&[y[0] - e, y[1]])) / (2.0 * e);
            let d1 = (hfun(&[y[0], y[1] + e]) - hfun(&[y[0], y[1] - e])) / (2.0 * e);
            let q = qinv(y);
            q[j][0] * d0 + q[j][1] * d1
        };
        for x in [[0.2, 0.4], [-0.6, 0.1], [0.9, -0.8]] {
            let e = 1e-3;
            let lb = (flux(&[x[0] + e, x[1]], 0) - flux(&[x[0] - e, x[1]], 0)) / (2.0 * e)
                + (flux(&[x[0], x[1] + e], 1) - flux(&[x[0], x[1] - e], 1)) / (2.0 * e);
            let got = sub_laplacian(&s, &f, &x).unwrap();
            assert!((got - lb).abs() < 1e-5, "{got} vs {lb}");
        }
    }

    #[test]
    fn scans() {
        let e = systems::euclidean(3);
        let r = flatness_scan(&e, &linear_test_fields(&e), &e.sample_box(), 50, 1).unwrap();
        assert!(r.flat && r.max_abs < 1e-12);
        let h = systems::heisenberg();
        let quad: Vec<ScalarField> = default_test_fields(&h).into_iter().skip(3).collect();
        let r = flatness_scan(&h, &quad, &h.sample_box(), 50, 1).unwrap();
        assert!(!r.flat && r.max_abs >= 0.1);
        assert!(matches!(flatness_scan(&h, &quad, &h.sample_box(), 0, 1), Err(Error::InvalidRegion(_))));
    }

    #[test]
    fn non_quadratic_critical_points_are_skipped() {
        let u = systems::unicycle().with_metric(SubFinslerMetric::curvature_weighted(3.0)).unwrap();
        let f = ScalarField::parse("x1", &u).unwrap();
        let region = vec![(0.0, 0.0), (0.0, 0.0), (0.0, 0.0), (0.0, 0.0)];
        let r = flatness_scan(&u, &[f.clone()], &region, 2, 0).unwrap();
        assert_eq!(r.domain_failures, 0);
        let g = ScalarField::parse("x2", &u).unwrap();
        // dx₂ vanishes on D at φ = 0
        let r = flatness_scan(&u, &[g], &region, 2, 0).unwrap();
        assert_eq!(r.domain_failures, 2);
        assert!(horizontal_gradient(&u, &f, &[0.0; 4]).is_ok());
    }
}
