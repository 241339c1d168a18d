//! Frames, Lie brackets, bracket-generating rank, projections onto the
//! distribution and its complement, and the extended Finsler metric.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expr::{Dual, Scalar, Taylor};
use crate::linalg::{self, Mat};
use crate::systems::System;

/// Frame matrix `[X₁ … X_k]` at `x`, rejected when numerically rank deficient.
pub fn frame_matrix(system: &System, x: &[f64]) -> Result<DMatrix<f64>> {
    let m = linalg::to_dmatrix(&system.frame_at(x)?);
    let r = linalg::rank(&m, system.rank_tol);
    if r < system.k() {
        return Err(Error::Regularity {
            rank: r,
            expected: system.k(),
        });
    }
    Ok(m)
}

pub fn taming_matrix(system: &System, x: &[f64]) -> Result<DMatrix<f64>> {
    Ok(linalg::to_dmatrix(&system.taming_at(x)?))
}

/// Frame values and their first derivatives: `d[m]` is `∂X/∂x_m` (n×k).
pub fn frame_jacobian(system: &System, x: &[f64]) -> Result<(Mat<f64>, Vec<Mat<f64>>)> {
    let n = system.n();
    let xd = Dual::seed(x);
    let fd = system.frame_at(&xd)?;
    let vals = fd.iter().map(|r| r.iter().map(|v| v.re).collect()).collect();
    let derivs = (0..n)
        .map(|m| fd.iter().map(|r| r.iter().map(|v| v.d(m)).collect()).collect())
        .collect();
    Ok((vals, derivs))
}

/// `[Xᵢ, Xⱼ](x) = DXⱼ·Xᵢ − DXᵢ·Xⱼ`.
pub fn lie_bracket(system: &System, i: usize, j: usize, x: &[f64]) -> Result<Vec<f64>> {
    let (n, k) = (system.n(), system.k());
    if i >= k || j >= k {
        return Err(Error::invalid(format!("frame index out of range (rank {k})")));
    }
    let (vals, d) = frame_jacobian(system, x)?;
    Ok((0..n)
        .map(|r| {
            (0..n)
                .map(|m| d[m][r][j] * vals[m][i] - d[m][r][i] * vals[m][j])
                .sum()
        })
        .collect())
}

/// Bracket of two vector fields given as Taylor polynomials.
pub fn bracket_poly(a: &[Taylor], b: &[Taylor]) -> Vec<Taylor> {
    let n = a.len();
    (0..n)
        .map(|m| {
            let mut acc = Taylor::constant(0.0);
            for l in 0..n {
                acc = acc + a[l].clone() * b[m].partial(l) - b[l].clone() * a[m].partial(l);
            }
            acc
        })
        .collect()
}

/// Frame fields expanded to the given order around `x`.
pub fn frame_polys(system: &System, x: &[f64], order: usize) -> Result<Vec<Vec<Taylor>>> {
    let xt = Taylor::seed(x, order);
    let m = system.frame_at(&xt)?;
    Ok((0..system.k())
        .map(|i| (0..system.n()).map(|r| m[r][i].clone()).collect())
        .collect())
}

/// Ranks of the spans of iterated brackets of length ≤ 1, 2, …, `max_depth`.
pub fn bracket_ranks(system: &System, x: &[f64], max_depth: usize) -> Result<Vec<usize>> {
    let max_depth = max_depth.max(1);
    let n = system.n();
    let fields = frame_polys(system, x, max_depth - 1)?;
    let mut span: Vec<Vec<f64>> = Vec::new();
    let mut ranks = Vec::new();
    let mut level = fields.clone();
    for depth in 1..=max_depth {
        if depth > 1 {
            let mut next = Vec::new();
            for xi in &fields {
                for y in &level {
                    let b = bracket_poly(xi, y);
                    if b.iter().any(|c| c.has_derivatives() || c.value() != 0.0) {
                        next.push(b);
                    }
                }
            }
            level = next;
        }
        span.extend(level.iter().map(|f| f.iter().map(|c| c.value()).collect::<Vec<_>>()));
        let m = DMatrix::from_fn(n, span.len(), |r, c| span[c][r]);
        let r = linalg::rank(&m, system.rank_tol);
        ranks.push(r);
        if r == n {
            break;
        }
    }
    Ok(ranks)
}

/// Smallest `s ≤ max_depth` such that brackets of length ≤ `s` span `ℝⁿ` at `x`.
pub fn bracket_generating_step(system: &System, x: &[f64], max_depth: usize) -> Result<usize> {
    frame_matrix(system, x)?;
    let ranks = bracket_ranks(system, x, max_depth)?;
    let n = system.n();
    match ranks.iter().position(|&r| r == n) {
        Some(i) => Ok(i + 1),
        None => Err(Error::NotGenerating {
            rank: *ranks.last().unwrap_or(&0),
        }),
    }
}

fn g_inner(g: &DMatrix<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a.transpose() * g * b)[(0, 0)]
}

/// g-orthonormal basis of `D^⊥` at `x`, as columns.
pub fn orthogonal_complement_frame(system: &System, x: &[f64]) -> Result<DMatrix<f64>> {
    let (n, k) = (system.n(), system.k());
    let xm = frame_matrix(system, x)?;
    let g = taming_matrix(system, x)?;
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n);
    let push_orth = |basis: &mut Vec<DVector<f64>>, v: DVector<f64>| -> Option<DVector<f64>> {
        let mut r = v;
        for _ in 0..2 {
            for b in basis.iter() {
                let c = g_inner(&g, b, &r);
                r -= b * c;
            }
        }
        let nrm = g_inner(&g, &r, &r).max(0.0).sqrt();
        if nrm <= 1e-12 {
            None
        } else {
            Some(r / nrm)
        }
    };
    for i in 0..k {
        let v = push_orth(&mut basis, xm.column(i).into_owned()).ok_or(Error::Regularity {
            rank: i,
            expected: k,
        })?;
        basis.push(v);
    }
    let mut complement = Vec::new();
    let mut used = vec![false; n];
    for _ in k..n {
        // pivot on the coordinate direction with the largest residual
        let mut best: Option<(usize, f64, DVector<f64>)> = None;
        for c in (0..n).filter(|&c| !used[c]) {
            let mut r = DVector::zeros(n);
            r[c] = 1.0;
            for b in basis.iter() {
                let coef = g_inner(&g, b, &r);
                r -= b * coef;
            }
            let nrm = g_inner(&g, &r, &r).max(0.0).sqrt();
            if best.as_ref().map_or(true, |(_, bn, _)| nrm > *bn + 1e-14) {
                best = Some((c, nrm, r));
            }
        }
        let (c, _, r) = best.expect("complement direction exists");
        used[c] = true;
        let w = push_orth(&mut basis, r).ok_or(Error::Regularity { rank: k, expected: k })?;
        basis.push(w.clone());
        complement.push(w);
    }
    Ok(DMatrix::from_fn(n, n - k, |r, c| complement[c][r]))
}

/// Pointwise projections. `pstar` and `pstar_c` act on covectors written as
/// column vectors: `pstar·α` is the covector `α∘P^⊥`.
#[derive(Clone, Debug)]
pub struct ProjectionSplit {
    pub p: DMatrix<f64>,
    pub pperp: DMatrix<f64>,
    pub pstar: DMatrix<f64>,
    pub pstar_c: DMatrix<f64>,
}

impl ProjectionSplit {
    pub fn horizontal(&self, v: &[f64]) -> Vec<f64> {
        (&self.p * DVector::from_column_slice(v)).iter().cloned().collect()
    }
    pub fn vertical(&self, v: &[f64]) -> Vec<f64> {
        (&self.pperp * DVector::from_column_slice(v)).iter().cloned().collect()
    }
    /// Component of `α` in `D⁰`.
    pub fn annihilator_part(&self, alpha: &[f64]) -> Vec<f64> {
        (&self.pstar * DVector::from_column_slice(alpha)).iter().cloned().collect()
    }
    /// Component of `α` in `(D^⊥)⁰`.
    pub fn horizontal_dual_part(&self, alpha: &[f64]) -> Vec<f64> {
        (&self.pstar_c * DVector::from_column_slice(alpha)).iter().cloned().collect()
    }
}

/// Generic `P = X A` and `A = (XᵀgX)⁻¹Xᵀg`; `A v` are the frame coordinates
/// of the horizontal part of `v`.
pub fn projector<T: Scalar>(system: &System, x: &[T]) -> Result<(Mat<T>, Mat<T>)> {
    let (n, k) = (system.n(), system.k());
    let xm = system.frame_at(x)?;
    let g = system.taming_at(x)?;
    // Xᵀg (k×n)
    let xtg: Mat<T> = (0..k)
        .map(|i| {
            (0..n)
                .map(|c| {
                    let mut acc = T::cst(0.0);
                    for r in 0..n {
                        acc = acc + xm[r][i].clone() * g[r][c].clone();
                    }
                    acc
                })
                .collect()
        })
        .collect();
    let gram: Mat<T> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    let mut acc = T::cst(0.0);
                    for c in 0..n {
                        acc = acc + xtg[i][c].clone() * xm[c][j].clone();
                    }
                    acc
                })
                .collect()
        })
        .collect();
    let inv = linalg::inverse(&gram).map_err(|_| Error::Regularity {
        rank: k.saturating_sub(1),
        expected: k,
    })?;
    let a: Mat<T> = (0..k)
        .map(|i| {
            (0..n)
                .map(|c| {
                    let mut acc = T::cst(0.0);
                    for l in 0..k {
                        acc = acc + inv[i][l].clone() * xtg[l][c].clone();
                    }
                    acc
                })
                .collect()
        })
        .collect();
    let p: Mat<T> = (0..n)
        .map(|r| {
            (0..n)
                .map(|c| {
                    let mut acc = T::cst(0.0);
                    for i in 0..k {
                        acc = acc + xm[r][i].clone() * a[i][c].clone();
                    }
                    acc
                })
                .collect()
        })
        .collect();
    Ok((p, a))
}

pub fn projection_split(system: &System, x: &[f64]) -> Result<ProjectionSplit> {
    frame_matrix(system, x)?;
    let n = system.n();
    let (p, _) = projector(system, x)?;
    let p = linalg::to_dmatrix(&p);
    let pperp = DMatrix::identity(n, n) - &p;
    Ok(ProjectionSplit {
        pstar: pperp.transpose(),
        pstar_c: p.transpose(),
        p,
        pperp,
    })
}

/// Frame coordinates `u` of the g-orthogonal projection of `v` onto `D`.
pub fn fiber_coordinates(system: &System, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    let (_, a) = projector(system, x)?;
    Ok(linalg::mat_vec(&a, v))
}

/// g-norm of the vertical part of `v`: the distance from `v` to `D_x`.
pub fn horizontality_residual(system: &System, x: &[f64], v: &[f64]) -> Result<f64> {
    let (p, _) = projector(system, x)?;
    let g = system.taming_at(x)?;
    let pv = linalg::mat_vec(&p, v);
    let w: Vec<f64> = v.iter().zip(&pv).map(|(a, b)| a - b).collect();
    let gw = linalg::mat_vec(&g, &w);
    Ok(linalg::dot(&w, &gw).max(0.0).sqrt())
}

/// Full Finsler norm `F̂(v)² = F²(Pv) + F̃²(P^⊥v)` with `F̃² = s·g`.
#[derive(Clone, Copy, Debug)]
pub struct ExtendedMetric<'a> {
    pub system: &'a System,
    pub complement_scale: f64,
}

pub fn extend_metric(system: &System) -> ExtendedMetric<'_> {
    ExtendedMetric {
        system,
        complement_scale: system.complement_scale,
    }
}

impl<'a> ExtendedMetric<'a> {
    /// `L̂ = ½F̂²` for any scalar type.
    pub fn lagrangian<T: Scalar>(&self, x: &[T], v: &[T]) -> Result<T> {
        let system = self.system;
        let (p, a) = projector(system, x)?;
        let u = linalg::mat_vec(&a, v);
        let horizontal = system.metric.lagrangian(x, &u)?;
        if system.k() == system.n() {
            return Ok(horizontal);
        }
        let pv = linalg::mat_vec(&p, v);
        let w: Vec<T> = v.iter().zip(pv).map(|(a, b)| a.clone() - b).collect();
        let g = system.taming_at(x)?;
        let gw = linalg::mat_vec(&g, &w);
        let vertical = linalg::dot(&w, &gw).scale(0.5 * self.complement_scale);
        Ok(horizontal + vertical)
    }

    pub fn norm(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        Ok((2.0 * self.lagrangian(x, v)?).max(0.0).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems;

    #[test]
    fn frame_examples() {
        let h = systems::heisenberg();
        let m = frame_matrix(&h, &[0.0; 3]).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]));
        let dup = System::new("dup", &["x", "y"], &[false, false], &[vec!["1", "0"], vec!["1", "0"]])
            .unwrap();
        assert!(matches!(
            frame_matrix(&dup, &[0.0, 0.0]),
            Err(Error::Regularity { rank: 1, expected: 2 })
        ));
    }

    #[test]
    fn brackets() {
        let h = systems::heisenberg();
        for x in [[0.0, 0.0, 0.0], [0.3, -2.0, 5.0]] {
            assert_eq!(lie_bracket(&h, 0, 1, &x).unwrap(), vec![0.0, 0.0, 1.0]);
        }
        assert_eq!(lie_bracket(&systems::martinet(), 0, 1, &[2.0, 0.0, 0.0]).unwrap(), vec![0.0, 0.0, 2.0]);
        assert_eq!(lie_bracket(&systems::euclidean(3), 0, 2, &[1.0, 2.0, 3.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn steps() {
        assert_eq!(bracket_generating_step(&systems::heisenberg(), &[0.0; 3], 4).unwrap(), 2);
        assert_eq!(bracket_generating_step(&systems::euclidean(3), &[0.0; 3], 4).unwrap(), 1);
        let m = systems::martinet();
        assert_eq!(bracket_generating_step(&m, &[0.0; 3], 5).unwrap(), 3);
        assert_eq!(bracket_generating_step(&m, &[1.0, 0.0, 0.0], 5).unwrap(), 2);
        assert!(matches!(
            bracket_generating_step(&m, &[0.0; 3], 2),
            Err(Error::NotGenerating { rank: 2 })
        ));
        let line = System::new("line", &["x", "y"], &[false, false], &[vec!["1", "0"]]).unwrap();
        assert!(matches!(
            bracket_generating_step(&line, &[0.0, 0.0], 3),
            Err(Error::NotGenerating { rank: 1 })
        ));
        let u = systems::unicycle();
        assert_eq!(bracket_generating_step(&u, &[0.4, 0.0, 0.0, 0.0], 4).unwrap(), 3);
    }

    #[test]
    fn complement_and_projections() {
        let h = systems::heisenberg();
        let w = orthogonal_complement_frame(&h, &[0.0; 3]).unwrap();
        assert_eq!(w.ncols(), 1);
        assert!((w[(2, 0)].abs() - 1.0).abs() < 1e-15);
        assert_eq!(orthogonal_complement_frame(&systems::euclidean(3), &[0.0; 3]).unwrap().ncols(), 0);

        let s = systems::planar();
        let split = projection_split(&s, &[0.0; 3]).unwrap();
        assert_eq!(split.horizontal(&[1.0, 2.0, 3.0]), vec![1.0, 2.0, 0.0]);
        assert_eq!(split.vertical(&[1.0, 2.0, 3.0]), vec![0.0, 0.0, 3.0]);
        assert_eq!(split.annihilator_part(&[0.0, 0.0, 1.0]), vec![0.0, 0.0, 1.0]);
        assert_eq!(split.horizontal_dual_part(&[0.0, 0.0, 1.0]), vec![0.0, 0.0, 0.0]);
        let hs = projection_split(&h, &[0.0; 3]).unwrap();
        assert_eq!(hs.annihilator_part(&[0.0, 0.0, 1.0]), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn extended_metric_examples() {
        let s = systems::planar();
        let f = extend_metric(&s);
        assert!((f.norm(&[0.0; 3], &[3.0, 0.0, 4.0]).unwrap() - 5.0).abs() < 1e-14);
        assert!((f.norm(&[0.0; 3], &[0.0, 0.0, 4.0]).unwrap() - 4.0).abs() < 1e-14);
        let h = systems::heisenberg();
        let f = extend_metric(&h);
        let x = [0.5, -0.2, 0.1];
        let v = [0.3, 0.7, 0.7 * 0.25 + 0.3 * 0.1];
        assert!(horizontality_residual(&h, &x, &v).unwrap() < 1e-15);
        let fv = f.norm(&x, &v).unwrap();
        assert!((fv - (0.09f64 + 0.49).sqrt()).abs() < 1e-14);
    }
}
