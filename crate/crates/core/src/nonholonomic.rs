//! Covector connections along horizontal curves, the tensors `T` and `T^B`,
//! annihilator transport, abnormal certificates and the Vakonomic comparison.
//!
//! Sections of `D⁰` are written in an annihilator coframe
//! `θ_a = rows k.. of [X₁ … X_k | e_{c₁} … e_{c_{n−k}}]⁻¹`, where the `e_c` are
//! coordinate directions completing the frame. Transport equations become
//! linear ODEs for the `n − k` coefficients; they are imposed by pairing with
//! a basis `W_b` of `D^⊥`, which is what the projection `P*` tests.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::dynamics::{self, Trajectory};
use crate::error::{Error, Result};
use crate::expr::{Dual, Scalar};
use crate::geometry::{self, extend_metric};
use crate::linalg::{self, Mat};
use crate::systems::System;

#[derive(Clone, Debug, Serialize)]
pub struct CovectorField {
    pub times: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
}

/// A covector field along a curve annihilating `D`.
#[derive(Clone, Debug, Serialize)]
pub struct AnnihilatorSection {
    pub times: Vec<f64>,
    pub gammas: Vec<Vec<f64>>,
    /// `max_t ‖T(σ̇, γ)‖` for certificates, or the defining residual.
    pub residual: f64,
    /// `max_t max_i |γ(Xᵢ)| / ‖γ‖`.
    pub annihilation_residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Subbundle {
    /// `D⁰`
    Annihilator,
    /// `(D^⊥)⁰`
    HorizontalDual,
}

#[derive(Clone, Debug, Serialize)]
pub struct TensorValue {
    pub covector: Vec<f64>,
    pub target: Subbundle,
}

// ---------------------------------------------------------------- coframe

/// Coordinate directions completing the frame at `x`, chosen by pivoting.
fn completion(system: &System, x: &[f64]) -> Result<Vec<usize>> {
    let (n, k) = (system.n(), system.k());
    let xm = geometry::frame_matrix(system, x)?;
    let q = xm.clone().qr().q();
    let mut basis: Vec<nalgebra::DVector<f64>> = (0..k).map(|i| q.column(i).into_owned()).collect();
    let mut chosen = Vec::new();
    for _ in k..n {
        let mut best = (usize::MAX, -1.0, nalgebra::DVector::zeros(n));
        for c in (0..n).filter(|c| !chosen.contains(c)) {
            let mut r = nalgebra::DVector::zeros(n);
            r[c] = 1.0;
            for b in &basis {
                let d = b.dot(&r);
                r -= b * d;
            }
            let nr = r.norm();
            if nr > best.1 + 1e-14 {
                best = (c, nr, r);
            }
        }
        chosen.push(best.0);
        basis.push(best.2 / best.1);
    }
    Ok(chosen)
}

/// Annihilator coframe rows `θ_a(x)` (`(n−k)×n`).
fn coframe<T: Scalar>(system: &System, x: &[T], completion: &[usize]) -> Result<Mat<T>> {
    let (n, k) = (system.n(), system.k());
    let xm = system.frame_at(x)?;
    let a: Mat<T> = (0..n)
        .map(|r| {
            let mut row: Vec<T> = xm[r].clone();
            for &c in completion {
                row.push(T::cst(if c == r { 1.0 } else { 0.0 }));
            }
            row
        })
        .collect();
    let inv = linalg::inverse(&a).map_err(|_| Error::Regularity { rank: k, expected: n })?;
    Ok(inv[k..].to_vec())
}

fn coframe_condition(system: &System, x: &[f64], completion: &[usize]) -> Result<f64> {
    let (n, _) = (system.n(), system.k());
    let xm = system.frame_at(x)?;
    let a = DMatrix::from_fn(n, n, |r, c| {
        if c < system.k() {
            xm[r][c]
        } else {
            if completion[c - system.k()] == r {
                1.0
            } else {
                0.0
            }
        }
    });
    let sv = a.svd(false, false).singular_values;
    Ok(sv.min() / sv.max())
}

/// `(θ, θ̇)` at `x` with `θ̇ = Dθ·v`.
fn coframe_with_rate(system: &System, x: &[f64], v: &[f64], completion: &[usize]) -> Result<(Mat<f64>, Mat<f64>)> {
    let xd = Dual::directional(x, v);
    let th = coframe(system, &xd, completion)?;
    Ok((
        th.iter().map(|r| r.iter().map(|c| c.re).collect()).collect(),
        th.iter().map(|r| r.iter().map(|c| c.d(0)).collect()).collect(),
    ))
}

// ------------------------------------------------------------ pointwise

/// `T(v, γ) = (P*)^c(i_v dγ)` with `γ` extended by constant coefficients in
/// the annihilator coframe.
pub fn tensor_t(system: &System, x: &[f64], v: &[f64], gamma: &[f64]) -> Result<TensorValue> {
    let n = system.n();
    let split = geometry::projection_split(system, x)?;
    if system.k() == n {
        return Ok(TensorValue {
            covector: vec![0.0; n],
            target: Subbundle::HorizontalDual,
        });
    }
    let comp = completion(system, x)?;
    let c: Vec<f64> = comp.iter().map(|&j| gamma[j]).collect();
    let xd = Dual::seed(x);
    let th = coframe(system, &xd, &comp)?;
    // (i_v dγ)_j = Σ_a c_a Σ_i vⁱ(∂_i θ_{a,j} − ∂_j θ_{a,i})
    let ivd: Vec<f64> = (0..n)
        .map(|j| {
            let mut acc = 0.0;
            for (a, row) in th.iter().enumerate() {
                for i in 0..n {
                    acc += c[a] * v[i] * (row[j].d(i) - row[i].d(j));
                }
            }
            acc
        })
        .collect();
    Ok(TensorValue {
        covector: split.horizontal_dual_part(&ivd),
        target: Subbundle::HorizontalDual,
    })
}

/// `T^B(v, α) = P*(∇̄^B_v α)`. The horizontal-dual and annihilator parts of
/// `α` are extended as `P(y)ᵀa` and `P^⊥(y)ᵀb`, so the value is independent of
/// the extension when `α ∈ (D^⊥)⁰`.
pub fn tensor_tb(system: &System, x: &[f64], v: &[f64], alpha: &[f64]) -> Result<TensorValue> {
    let n = system.n();
    let split = geometry::projection_split(system, x)?;
    let a = split.horizontal_dual_part(alpha);
    let b = split.annihilator_part(alpha);
    let xd = Dual::directional(x, v);
    let (p, _) = geometry::projector(system, &xd)?;
    // d/ds [P(x + s v)ᵀ (a − b)]
    let dp: Vec<f64> = (0..n)
        .map(|j| (0..n).map(|i| p[i][j].d(0) * (a[i] - b[i])).sum())
        .collect();
    let nb = dynamics::barthel(system, x, v)?;
    let cov: Vec<f64> = (0..n)
        .map(|j| dp[j] - (0..n).map(|i| nb.n[i][j] * alpha[i]).sum::<f64>())
        .collect();
    Ok(TensorValue {
        covector: split.annihilator_part(&cov),
        target: Subbundle::Annihilator,
    })
}

/// Checks that a tensor value lies in its tagged subbundle: the largest
/// pairing with the complementary frame, relative to its norm.
pub fn subbundle_residual(system: &System, x: &[f64], t: &TensorValue) -> Result<f64> {
    let nrm = linalg::norm(&t.covector).max(1e-300);
    let probe = match t.target {
        Subbundle::Annihilator => geometry::frame_matrix(system, x)?,
        Subbundle::HorizontalDual => geometry::orthogonal_complement_frame(system, x)?,
    };
    Ok((0..probe.ncols())
        .map(|c| {
            (0..system.n())
                .map(|r| probe[(r, c)] * t.covector[r])
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max)
        / nrm)
}

/// Nonholonomic bracket of `X = Σ uᵢXᵢ` (constant `u`) with a covector field
/// that is constant in the chart, through the taming metric: `[X, α♯]♭`.
/// Returns the bracket and its `(P*)^c` and `P*` parts.
pub fn nonholonomic_bracket(system: &System, x: &[f64], u: &[f64], alpha: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = system.n();
    let xd = Dual::seed(x);
    let fm = system.frame_at(&xd)?;
    let ud: Vec<Dual> = u.iter().map(|&c| Dual::constant(c)).collect();
    let xf = linalg::mat_vec(&fm, &ud);
    let g = system.taming_at(&xd)?;
    let ad: Vec<Dual> = alpha.iter().map(|&c| Dual::constant(c)).collect();
    let sharp = linalg::solve(g.clone(), ad)?;
    let bracket: Vec<f64> = (0..n)
        .map(|m| {
            (0..n)
                .map(|l| xf[l].re * sharp[m].d(l) - sharp[l].re * xf[m].d(l))
                .sum()
        })
        .collect();
    let gv: Vec<Vec<f64>> = g.iter().map(|r| r.iter().map(|c| c.re).collect()).collect();
    let flat = linalg::mat_vec(&gv, &bracket);
    let split = geometry::projection_split(system, x)?;
    Ok((
        flat.clone(),
        split.horizontal_dual_part(&flat),
        split.annihilator_part(&flat),
    ))
}

// -------------------------------------------------------- curve sampling

/// Positions, controls and velocities of a horizontal curve at samples and
/// interval midpoints (cubic Hermite in `x`, cubic Lagrange in `u`).
struct CurveSampler<'a> {
    system: &'a System,
    traj: &'a Trajectory,
    vel: Vec<Vec<f64>>,
}

struct CurvePoint {
    x: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl<'a> CurveSampler<'a> {
    fn new(system: &'a System, traj: &'a Trajectory) -> Result<Self> {
        let vel = (0..traj.len())
            .map(|i| traj.velocity(system, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(CurveSampler { system, traj, vel })
    }

    fn at(&self, i: usize) -> CurvePoint {
        CurvePoint {
            x: self.traj.xs[i].clone(),
            u: self.traj.us[i].clone(),
            v: self.vel[i].clone(),
        }
    }

    fn midpoint(&self, i: usize) -> Result<CurvePoint> {
        let t = &self.traj.times;
        let h = t[i + 1] - t[i];
        let (x0, x1) = (&self.traj.xs[i], &self.traj.xs[i + 1]);
        let (v0, v1) = (&self.vel[i], &self.vel[i + 1]);
        let x: Vec<f64> = (0..x0.len())
            .map(|j| 0.5 * (x0[j] + x1[j]) + h * (v0[j] - v1[j]) / 8.0)
            .collect();
        let m = t.len();
        let start = if m < 4 { 0 } else { i.saturating_sub(1).min(m - 4) };
        let idx: Vec<usize> = (start..(start + 4).min(m)).collect();
        let tm = 0.5 * (t[i] + t[i + 1]);
        let k = self.traj.us[0].len();
        let mut u = vec![0.0; k];
        for &a in &idx {
            let mut w = 1.0;
            for &b in &idx {
                if a != b {
                    w *= (tm - t[b]) / (t[a] - t[b]);
                }
            }
            for c in 0..k {
                u[c] += w * self.traj.us[a][c];
            }
        }
        let v = linalg::mat_vec(&self.system.frame_at(&x)?, &u);
        Ok(CurvePoint { x, u, v })
    }
}

/// First-derivative finite-difference weights on arbitrary nodes.
pub fn fornberg_weights(z: f64, nodes: &[f64]) -> Vec<f64> {
    let m = nodes.len();
    let mut c = vec![vec![0.0; 2]; m];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - z;
    c[0][0] = 1.0;
    for i in 1..m {
        let mn = i.min(1);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - z;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for kk in (1..=mn).rev() {
                    c[i][kk] = c1 * (kk as f64 * c[i - 1][kk - 1] - c5 * c[i - 1][kk]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for kk in (1..=mn).rev() {
                c[j][kk] = (c4 * c[j][kk] - kk as f64 * c[j][kk - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|r| r[1]).collect()
}

/// Time derivative of sampled data at sample `i` (five-point stencil).
pub fn grid_derivative(times: &[f64], data: &[Vec<f64>], i: usize) -> Vec<f64> {
    let m = times.len();
    let width = 5.min(m);
    let start = i.saturating_sub(width / 2).min(m - width);
    let nodes: Vec<f64> = times[start..start + width].to_vec();
    let w = fornberg_weights(times[i], &nodes);
    let dim = data[0].len();
    (0..dim)
        .map(|d| (0..width).map(|s| w[s] * data[start + s][d]).sum())
        .collect()
}

// ----------------------------------------------------- Barthel derivative

fn barthel_n(system: &System, x: &[f64], v: &[f64]) -> Result<Mat<f64>> {
    if v.iter().all(|&c| c == 0.0) {
        return Ok(vec![vec![0.0; system.n()]; system.n()]);
    }
    Ok(dynamics::barthel(system, x, v)?.n)
}

/// `(∇̄^B_σ̇ α)_j = α̇_j − Nⁱⱼ(σ, σ̇) αᵢ` at sample `i`, with `α̇` from the grid.
pub fn barthel_covariant_derivative(system: &System, traj: &Trajectory, alpha: &CovectorField, i: usize) -> Result<Vec<f64>> {
    let n = system.n();
    let v = traj.velocity(system, i)?;
    let nm = barthel_n(system, &traj.xs[i], &v)?;
    let adot = grid_derivative(&alpha.times, &alpha.samples, i);
    let a = &alpha.samples[i];
    Ok((0..n)
        .map(|j| adot[j] - (0..n).map(|r| nm[r][j] * a[r]).sum::<f64>())
        .collect())
}

/// `∇^H_σ̇ α = P*(∇̄^B_σ̇ α)`.
pub fn nabla_h(system: &System, traj: &Trajectory, alpha: &CovectorField, i: usize) -> Result<Vec<f64>> {
    let d = barthel_covariant_derivative(system, traj, alpha, i)?;
    Ok(geometry::projection_split(system, &traj.xs[i])?.annihilator_part(&d))
}

/// Parallel transport for the Barthel connection on covectors: `α̇ = Nᵀα`.
pub fn barthel_transport(system: &System, traj: &Trajectory, alpha0: &[f64]) -> Result<CovectorField> {
    let n = system.n();
    let sampler = CurveSampler::new(system, traj)?;
    let rate = |pt: &CurvePoint, a: &[f64]| -> Result<Vec<f64>> {
        let nm = barthel_n(system, &pt.x, &pt.v)?;
        Ok((0..n).map(|j| (0..n).map(|r| nm[r][j] * a[r]).sum()).collect())
    };
    let mut samples = vec![alpha0.to_vec()];
    for i in 0..traj.len() - 1 {
        let h = traj.times[i + 1] - traj.times[i];
        let (p0, pm, p1) = (sampler.at(i), sampler.midpoint(i)?, sampler.at(i + 1));
        let a = &samples[i];
        let k1 = rate(&p0, a)?;
        let k2 = rate(&pm, &axpy(a, 0.5 * h, &k1))?;
        let k3 = rate(&pm, &axpy(a, 0.5 * h, &k2))?;
        let k4 = rate(&p1, &axpy(a, h, &k3))?;
        samples.push(rk4_combine(a, h, &k1, &k2, &k3, &k4));
    }
    Ok(CovectorField {
        times: traj.times.clone(),
        samples,
    })
}

fn axpy(a: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    a.iter().zip(k).map(|(x, y)| x + h * y).collect()
}

fn rk4_combine(a: &[f64], h: f64, k1: &[f64], k2: &[f64], k3: &[f64], k4: &[f64]) -> Vec<f64> {
    (0..a.len())
        .map(|i| a[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

// ------------------------------------------------ annihilator transport

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transport {
    /// `∇^T_σ̇ γ = P*(i_σ̇ dγ) = 0`
    T,
    /// `∇^H_σ̇ γ = P*(∇̄^B_σ̇ γ) = 0`
    H,
}

/// Linear coefficient ODE `M ċ = −R c + s` at one curve point.
struct Coefficients {
    m: DMatrix<f64>,
    r: DMatrix<f64>,
    s: Vec<f64>,
}

struct AnnihilatorOde<'a> {
    system: &'a System,
    kind: Transport,
    /// include the Vakonomic source `−T^B(σ̇, 𝓛(σ̇))`
    source: bool,
}

impl<'a> AnnihilatorOde<'a> {
    fn coefficients(&self, pt: &CurvePoint, comp: &[usize]) -> Result<Coefficients> {
        let system = self.system;
        let (n, k) = (system.n(), system.k());
        let q = n - k;
        let (th, th_dot) = coframe_with_rate(system, &pt.x, &pt.v, comp)?;
        let w = geometry::orthogonal_complement_frame(system, &pt.x)?;
        // extra covector term per coframe row: (∂X)ᵀθ for T, −Nᵀθ for H
        let extra: Mat<f64> = match self.kind {
            Transport::T => {
                let xd = Dual::seed(&pt.x);
                let fm = system.frame_at(&xd)?;
                let ud: Vec<Dual> = pt.u.iter().map(|&c| Dual::constant(c)).collect();
                let xf = linalg::mat_vec(&fm, &ud);
                th.iter()
                    .map(|row| (0..n).map(|j| (0..n).map(|i| row[i] * xf[i].d(j)).sum()).collect())
                    .collect()
            }
            Transport::H => {
                let nm = barthel_n(system, &pt.x, &pt.v)?;
                th.iter()
                    .map(|row| (0..n).map(|j| -(0..n).map(|i| nm[i][j] * row[i]).sum::<f64>()).collect())
                    .collect()
            }
        };
        let pair = |cov: &[f64], b: usize| -> f64 { (0..n).map(|j| cov[j] * w[(j, b)]).sum() };
        let m = DMatrix::from_fn(q, q, |b, a| pair(&th[a], b));
        let r = DMatrix::from_fn(q, q, |b, a| {
            let cov: Vec<f64> = (0..n).map(|j| th_dot[a][j] + extra[a][j]).collect();
            pair(&cov, b)
        });
        let s = if self.source && pt.v.iter().any(|&c| c != 0.0) {
            let alpha = legendre_extended(system, &pt.x, &pt.v)?;
            let tb = tensor_tb(system, &pt.x, &pt.v, &alpha)?;
            (0..q).map(|b| -pair(&tb.covector, b)).collect()
        } else {
            vec![0.0; q]
        };
        Ok(Coefficients { m, r, s })
    }

    fn rate(&self, co: &Coefficients, c: &DMatrix<f64>, with_source: bool) -> Result<DMatrix<f64>> {
        let mut rhs = -(&co.r * c);
        if with_source {
            for b in 0..rhs.nrows() {
                rhs[(b, 0)] += co.s[b];
            }
        }
        co.m.clone()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::domain("degenerate coframe pairing"))
    }

    /// Integrates coefficient columns `c` (q×m) along the curve; the first
    /// column carries the source term when `source` is set.
    fn integrate(&self, traj: &Trajectory, c0: DMatrix<f64>) -> Result<(Vec<Vec<usize>>, Vec<DMatrix<f64>>)> {
        let system = self.system;
        let sampler = CurveSampler::new(system, traj)?;
        let mut comp = completion(system, &traj.xs[0])?;
        let mut comps = vec![comp.clone()];
        let mut cs = vec![c0];
        let with_src = |col: usize| self.source && col == 0;
        for i in 0..traj.len() - 1 {
            let h = traj.times[i + 1] - traj.times[i];
            if coframe_condition(system, &traj.xs[i], &comp)? < 1e-3 {
                let new = completion(system, &traj.xs[i])?;
                let th = coframe(system, &traj.xs[i], &comp)?;
                let c = cs.last().expect("nonempty");
                // γ = Σ c_a θ_a, new coefficients are γ(e_{new})
                let re = DMatrix::from_fn(c.nrows(), c.ncols(), |a2, col| {
                    (0..c.nrows()).map(|a| c[(a, col)] * th[a][new[a2]]).sum()
                });
                *cs.last_mut().expect("nonempty") = re;
                comp = new;
                *comps.last_mut().expect("nonempty") = comp.clone();
            }
            let c = cs.last().expect("nonempty").clone();
            let (p0, pm, p1) = (sampler.at(i), sampler.midpoint(i)?, sampler.at(i + 1));
            let (a0, am, a1) = (
                self.coefficients(&p0, &comp)?,
                self.coefficients(&pm, &comp)?,
                self.coefficients(&p1, &comp)?,
            );
            let mut next = c.clone();
            for col in 0..c.ncols() {
                let cc = c.column(col).into_owned();
                let cc = DMatrix::from_column_slice(cc.len(), 1, cc.as_slice());
                let src = with_src(col);
                let k1 = self.rate(&a0, &cc, src)?;
                let k2 = self.rate(&am, &(&cc + &k1 * (0.5 * h)), src)?;
                let k3 = self.rate(&am, &(&cc + &k2 * (0.5 * h)), src)?;
                let k4 = self.rate(&a1, &(&cc + &k3 * h), src)?;
                let upd = &cc + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
                next.set_column(col, &upd.column(0));
            }
            cs.push(next);
            comps.push(comp.clone());
        }
        Ok((comps, cs))
    }
}

/// Extended-metric Legendre map `∂L̂/∂v`.
pub fn legendre_extended(system: &System, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    let n = system.n();
    let vd = Dual::seed(v);
    let xd: Vec<Dual> = x.iter().map(|&c| Dual::constant(c)).collect();
    Ok(extend_metric(system).lagrangian(&xd, &vd)?.grad(n))
}

fn covectors_from(system: &System, traj: &Trajectory, comps: &[Vec<usize>], cs: &[DMatrix<f64>], col: usize) -> Result<Vec<Vec<f64>>> {
    let n = system.n();
    (0..traj.len())
        .map(|i| {
            let th = coframe(system, &traj.xs[i], &comps[i])?;
            Ok((0..n)
                .map(|j| (0..th.len()).map(|a| cs[i][(a, col)] * th[a][j]).sum())
                .collect())
        })
        .collect()
}

fn annihilation_residual(system: &System, traj: &Trajectory, gammas: &[Vec<f64>]) -> Result<f64> {
    let mut worst = 0.0f64;
    for (x, g) in traj.xs.iter().zip(gammas) {
        let nrm = linalg::norm(g);
        if nrm == 0.0 {
            continue;
        }
        let m = system.frame_at(x)?;
        for i in 0..system.k() {
            let pairing: f64 = (0..system.n()).map(|r| m[r][i] * g[r]).sum();
            worst = worst.max(pairing.abs() / nrm);
        }
    }
    Ok(worst)
}

fn transport(system: &System, traj: &Trajectory, gamma0: &[f64], kind: Transport) -> Result<AnnihilatorSection> {
    let n = system.n();
    if system.k() == n {
        return Ok(AnnihilatorSection {
            times: traj.times.clone(),
            gammas: vec![vec![0.0; n]; traj.len()],
            residual: 0.0,
            annihilation_residual: 0.0,
        });
    }
    let comp = completion(system, &traj.xs[0])?;
    let c0: Vec<f64> = comp.iter().map(|&j| gamma0[j]).collect();
    let ode = AnnihilatorOde {
        system,
        kind,
        source: false,
    };
    let (comps, cs) = ode.integrate(traj, DMatrix::from_column_slice(c0.len(), 1, &c0))?;
    let gammas = covectors_from(system, traj, &comps, &cs, 0)?;
    let start_error = {
        let th0 = coframe(system, &traj.xs[0], &comp)?;
        let back: Vec<f64> = (0..n).map(|j| (0..c0.len()).map(|a| c0[a] * th0[a][j]).sum()).collect();
        linalg::norm(&back.iter().zip(gamma0).map(|(a, b)| a - b).collect::<Vec<_>>())
    };
    Ok(AnnihilatorSection {
        annihilation_residual: annihilation_residual(system, traj, &gammas)?,
        residual: start_error,
        times: traj.times.clone(),
        gammas,
    })
}

/// Solves `∇^T_σ̇ γ = 0` from `γ(0) = γ₀ ∈ D⁰`. The `residual` field reports
/// how far `γ₀` was from `D⁰`.
pub fn transport_t(system: &System, traj: &Trajectory, gamma0: &[f64]) -> Result<AnnihilatorSection> {
    transport(system, traj, gamma0, Transport::T)
}

/// Solves `∇^H_σ̇ γ = 0` from `γ(0) = γ₀ ∈ D⁰`.
pub fn transport_h(system: &System, traj: &Trajectory, gamma0: &[f64]) -> Result<AnnihilatorSection> {
    transport(system, traj, gamma0, Transport::H)
}

/// Constraint rows `γ([σ̇, X_j])` per sample, as linear maps of the coframe
/// coefficients.
fn bracket_constraints(system: &System, traj: &Trajectory, comps: &[Vec<usize>]) -> Result<Vec<Mat<f64>>> {
    let (n, k) = (system.n(), system.k());
    (0..traj.len())
        .map(|i| {
            let x = &traj.xs[i];
            let u = &traj.us[i];
            let th = coframe(system, x, &comps[i])?;
            let (vals, d) = geometry::frame_jacobian(system, x)?;
            let xf: Vec<f64> = (0..n).map(|r| (0..k).map(|l| vals[r][l] * u[l]).sum()).collect();
            // DX_σ̇ with frozen u
            let dxf = |r: usize, m: usize| -> f64 { (0..k).map(|l| d[m][r][l] * u[l]).sum() };
            Ok((0..k)
                .map(|j| {
                    let br: Vec<f64> = (0..n)
                        .map(|r| (0..n).map(|m| d[m][r][j] * xf[m] - dxf(r, m) * vals[m][j]).sum())
                        .collect();
                    th.iter().map(|row| linalg::dot(row, &br)).collect()
                })
                .collect())
        })
        .collect()
}

/// Searches for a nonzero `T`-parallel section `γ ⊂ D⁰` along the curve with
/// `T(σ̇, γ) = 0`, i.e. `γ ⊥ D + [σ̇, D]`. Returns a unit-norm certificate
/// when the best candidate meets `tol`.
pub fn abnormal_check(system: &System, traj: &Trajectory, tol: f64) -> Result<Option<AnnihilatorSection>> {
    let (n, k) = (system.n(), system.k());
    if k == n {
        return Ok(None);
    }
    let q = n - k;
    let ode = AnnihilatorOde {
        system,
        kind: Transport::T,
        source: false,
    };
    let (comps, phis) = ode.integrate(traj, DMatrix::identity(q, q))?;
    let rows = bracket_constraints(system, traj, &comps)?;
    let mut stacked = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        for row in r {
            let v = DMatrix::from_row_slice(1, q, row) * &phis[i];
            stacked.push(v.iter().cloned().collect::<Vec<_>>());
        }
    }
    let c = DMatrix::from_fn(stacked.len(), q, |i, j| stacked[i][j]);
    let svd = c.svd(false, true);
    let vt = svd.v_t.expect("requested");
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty");
    let c0 = DMatrix::from_fn(q, 1, |a, _| vt[(imin, a)]);
    let gammas: Vec<Vec<f64>> = (0..traj.len())
        .map(|i| {
            let th = coframe(system, &traj.xs[i], &comps[i])?;
            let ci = &phis[i] * &c0;
            Ok((0..n).map(|j| (0..q).map(|a| ci[(a, 0)] * th[a][j]).sum()).collect())
        })
        .collect::<Result<_>>()?;
    let g0n = linalg::norm(&gammas[0]);
    if g0n == 0.0 {
        return Ok(None);
    }
    let gammas: Vec<Vec<f64>> = gammas.into_iter().map(|g| g.into_iter().map(|c| c / g0n).collect()).collect();
    let mut residual = 0.0f64;
    for i in 0..traj.len() {
        let v = traj.velocity(system, i)?;
        let t = tensor_t(system, &traj.xs[i], &v, &gammas[i])?;
        residual = residual.max(linalg::norm(&t.covector));
    }
    if residual > tol {
        return Ok(None);
    }
    Ok(Some(AnnihilatorSection {
        annihilation_residual: annihilation_residual(system, traj, &gammas)?,
        residual,
        times: traj.times.clone(),
        gammas,
    }))
}

#[derive(Clone, Debug, Serialize)]
pub struct VakonomicOutcome {
    /// Best solution of `∇^T_σ̇ γ = −T^B(σ̇, 𝓛(σ̇))` in the least-squares sense
    /// of the subspace condition.
    pub gamma: AnnihilatorSection,
    /// `max_t ‖P*(γ̇ + (∂σ̇)ᵀγ) + T^B(σ̇, 𝓛(σ̇))‖` evaluated with grid derivatives.
    pub ode_residual: f64,
    /// `max_t max_j |γ([σ̇, X_j])|`.
    pub subspace_residual: f64,
    /// Initial covectors of homogeneous solutions that satisfy the subspace
    /// condition on their own.
    pub free_directions: Vec<Vec<f64>>,
    pub accepted: bool,
}

impl VakonomicOutcome {
    pub fn certificate(&self) -> Option<&AnnihilatorSection> {
        self.accepted.then_some(&self.gamma)
    }
}

/// Integrates the Vakonomic covector equation along `traj` and tests the
/// condition `γ(t) ∈ (D + [σ̇, D])⁰` for the best initial value.
pub fn vakonomic_comparison(system: &System, traj: &Trajectory, tol: f64) -> Result<VakonomicOutcome> {
    let (n, k) = (system.n(), system.k());
    if k == n {
        return Ok(VakonomicOutcome {
            gamma: AnnihilatorSection {
                times: traj.times.clone(),
                gammas: vec![vec![0.0; n]; traj.len()],
                residual: 0.0,
                annihilation_residual: 0.0,
            },
            ode_residual: 0.0,
            subspace_residual: 0.0,
            free_directions: vec![],
            accepted: true,
        });
    }
    let q = n - k;
    let ode = AnnihilatorOde {
        system,
        kind: Transport::T,
        source: true,
    };
    // column 0: particular solution from c = 0; columns 1..: fundamental matrix
    let mut c0 = DMatrix::zeros(q, q + 1);
    for a in 0..q {
        c0[(a, a + 1)] = 1.0;
    }
    let (comps, cs) = ode.integrate(traj, c0)?;
    let rows = bracket_constraints(system, traj, &comps)?;
    let mut a_rows = Vec::new();
    let mut rhs = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        for row in r {
            let rm = DMatrix::from_row_slice(1, q, row);
            let part = (&rm * cs[i].column(0))[(0, 0)];
            let hom = &rm * cs[i].columns(1, q);
            a_rows.push(hom.iter().cloned().collect::<Vec<_>>());
            rhs.push(-part);
        }
    }
    let a = DMatrix::from_fn(a_rows.len(), q, |i, j| a_rows[i][j]);
    let c_best = linalg::lstsq(&a, &rhs);
    let free = linalg::null_space(&a, 1e-8);
    let coeffs: Vec<DMatrix<f64>> = cs
        .iter()
        .map(|c| c.column(0).into_owned() + c.columns(1, q) * nalgebra::DVector::from_column_slice(&c_best))
        .map(|v| DMatrix::from_column_slice(q, 1, v.as_slice()))
        .collect();
    let gammas = covectors_from(system, traj, &comps, &coeffs, 0)?;
    let mut subspace_residual = 0.0f64;
    for (i, r) in rows.iter().enumerate() {
        for row in r {
            let val: f64 = (0..q).map(|a| row[a] * coeffs[i][(a, 0)]).sum();
            subspace_residual = subspace_residual.max(val.abs());
        }
    }
    // residual of the defining equation with grid derivatives of γ
    let mut ode_residual = 0.0f64;
    let sampler = CurveSampler::new(system, traj)?;
    for i in 0..traj.len() {
        let pt = sampler.at(i);
        let gdot = grid_derivative(&traj.times, &gammas, i);
        let xd = Dual::seed(&pt.x);
        let fm = system.frame_at(&xd)?;
        let ud: Vec<Dual> = pt.u.iter().map(|&c| Dual::constant(c)).collect();
        let xf = linalg::mat_vec(&fm, &ud);
        let g = &gammas[i];
        let lhs: Vec<f64> = (0..n)
            .map(|j| gdot[j] + (0..n).map(|r| g[r] * xf[r].d(j)).sum::<f64>())
            .collect();
        let split = geometry::projection_split(system, &pt.x)?;
        let mut res = split.annihilator_part(&lhs);
        if pt.v.iter().any(|&c| c != 0.0) {
            let alpha = legendre_extended(system, &pt.x, &pt.v)?;
            let tb = tensor_tb(system, &pt.x, &pt.v, &alpha)?;
            for j in 0..n {
                res[j] += tb.covector[j];
            }
        }
        ode_residual = ode_residual.max(linalg::norm(&res));
    }
    let free_directions = (0..free.ncols())
        .map(|f| {
            let th = coframe(system, &traj.xs[0], &comps[0])?;
            Ok((0..n).map(|j| (0..q).map(|a| free[(a, f)] * th[a][j]).sum()).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(VakonomicOutcome {
        gamma: AnnihilatorSection {
            annihilation_residual: annihilation_residual(system, traj, &gammas)?,
            residual: subspace_residual,
            times: traj.times.clone(),
            gammas,
        },
        ode_residual,
        subspace_residual,
        free_directions,
        accepted: subspace_residual <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{flow, trajectory_from_controls, ExtremalState, FlowOptions};
    use crate::systems;

    fn line_controls(system: &System, x0: &[f64], u: &[f64], t: f64, samples: usize) -> Trajectory {
        let times: Vec<f64> = (0..samples).map(|i| t * i as f64 / (samples - 1) as f64).collect();
        let us = vec![u.to_vec(); samples];
        trajectory_from_controls(system, x0, &times, &us).unwrap()
    }

    #[test]
    fn fornberg_reproduces_polynomials() {
        let nodes = [0.0, 0.1, 0.25, 0.3, 0.5];
        let w = fornberg_weights(0.25, &nodes);
        let d: f64 = nodes.iter().zip(&w).map(|(x, c)| c * x.powi(4)).sum();
        assert!((d - 4.0 * 0.25f64.powi(3)).abs() < 1e-12);
    }

    #[test]
    fn heisenberg_t_tensor() {
        let h = systems::heisenberg();
        let t = tensor_t(&h, &[0.0; 3], &[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]).unwrap();
        assert_eq!(t.target, Subbundle::HorizontalDual);
        // pairing with X₂ = (0, 1, 0) at the origin
        assert!((t.covector[1] + 1.0).abs() < 1e-14);
        assert!(subbundle_residual(&h, &[0.0; 3], &t).unwrap() < 1e-12);
        let flat = tensor_t(&systems::planar(), &[0.3, 0.1, 0.2], &[1.0, 2.0, 0.0], &[0.0, 0.0, 1.0]).unwrap();
        assert!(linalg::norm(&flat.covector) < 1e-15);
    }

    #[test]
    fn martinet_line_is_abnormal() {
        let m = systems::martinet();
        let traj = line_controls(&m, &[0.0; 3], &[0.0, 1.0], 1.0, 101);
        let cert = abnormal_check(&m, &traj, 1e-8).unwrap().expect("certificate");
        assert!(cert.residual <= 1e-8);
        let g0 = &cert.gammas[0];
        assert!(g0[0].abs() < 1e-10 && g0[1].abs() < 1e-10 && (g0[2].abs() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn heisenberg_geodesic_is_not_abnormal() {
        let h = systems::heisenberg();
        let traj = flow(&h, &ExtremalState::new(&[0.0; 3], &[0.6, 0.8, 2.0]), 1.0, &FlowOptions { dt: 1e-2, ..Default::default() }).unwrap();
        assert!(abnormal_check(&h, &traj, 1e-6).unwrap().is_none());
    }

    #[test]
    fn transport_stays_in_annihilator_and_is_linear() {
        let h = systems::heisenberg();
        let traj = flow(&h, &ExtremalState::new(&[0.1, 0.0, 0.0], &[0.6, 0.8, 2.0]), 1.0, &FlowOptions { dt: 1e-2, ..Default::default() }).unwrap();
        let x0 = &traj.xs[0];
        let g0 = [x0[1] / 2.0, -x0[0] / 2.0, 1.0];
        let a = transport_t(&h, &traj, &g0).unwrap();
        assert!(a.annihilation_residual < 1e-8);
        let g2: Vec<f64> = g0.iter().map(|c| 3.0 * c).collect();
        let b = transport_t(&h, &traj, &g2).unwrap();
        for (ga, gb) in a.gammas.iter().zip(&b.gammas) {
            for j in 0..3 {
                assert!((3.0 * ga[j] - gb[j]).abs() < 1e-10);
            }
        }
        let flat = line_controls(&systems::planar(), &[0.0; 3], &[1.0, 0.5], 1.0, 21);
        let c = transport_t(&systems::planar(), &flat, &[0.0, 0.0, 2.0]).unwrap();
        assert!(c.gammas.iter().all(|g| (g[2] - 2.0).abs() < 1e-14 && g[0] == 0.0));
    }

    #[test]
    fn bracket_projection_identity() {
        let h = systems::heisenberg();
        let (full, c, s) = nonholonomic_bracket(&h, &[0.3, -0.2, 0.5], &[0.7, 0.4], &[0.1, 0.9, -0.3]).unwrap();
        for j in 0..3 {
            assert!((c[j] + s[j] - full[j]).abs() < 1e-12);
        }
    }

    fn dual_extended_norm(system: &System, x: &[f64], alpha: &[f64]) -> f64 {
        let n = system.n();
        let h = 1e-4;
        let v0 = vec![0.3; n];
        let ghat = DMatrix::from_fn(n, n, |i, j| {
            let mut vp = v0.clone();
            let mut vm = v0.clone();
            vp[j] += h;
            vm[j] -= h;
            (legendre_extended(system, x, &vp).unwrap()[i] - legendre_extended(system, x, &vm).unwrap()[i]) / (2.0 * h)
        });
        let a = nalgebra::DVector::from_column_slice(alpha);
        (a.transpose() * ghat.try_inverse().unwrap() * &a)[(0, 0)].sqrt()
    }

    #[test]
    fn tb_matches_finite_differences() {
        let h = systems::heisenberg();
        let x = [0.0; 3];
        let v = [1.0, 0.0, 0.0];
        let alpha = [1.0, 0.0, 0.0];
        let got = tensor_tb(&h, &x, &v, &alpha).unwrap();
        let eps = 1e-5;
        let ext = |s: f64| -> Vec<f64> {
            let y: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + s * b).collect();
            let sp = geometry::projection_split(&h, &y).unwrap();
            sp.p.transpose().column(0).iter().cloned().collect()
        };
        let (ap, am) = (ext(eps), ext(-eps));
        let adot: Vec<f64> = (0..3).map(|j| (ap[j] - am[j]) / (2.0 * eps)).collect();
        let mut nfd = vec![vec![0.0; 3]; 3];
        for j in 0..3 {
            let mut vp = v.to_vec();
            let mut vm = v.to_vec();
            vp[j] += 1e-4;
            vm[j] -= 1e-4;
            let (gp, gm) = (dynamics::spray(&h, &x, &vp).unwrap(), dynamics::spray(&h, &x, &vm).unwrap());
            for i in 0..3 {
                nfd[i][j] = 0.25 * (gp[i] - gm[i]) / 1e-4;
            }
        }
        let raw: Vec<f64> = (0..3).map(|j| adot[j] - (0..3).map(|i| nfd[i][j] * alpha[i]).sum::<f64>()).collect();
        let want = geometry::projection_split(&h, &x).unwrap().annihilator_part(&raw);
        for j in 0..3 {
            assert!((got.covector[j] - want[j]).abs() < 1e-6, "{:?} {:?}", got.covector, want);
        }
        let e = systems::euclidean(3);
        let z = tensor_tb(&e, &[0.2, 0.1, 0.0], &[1.0, 2.0, 3.0], &[0.5, -1.0, 2.0]).unwrap();
        assert!(linalg::norm(&z.covector) < 1e-14);
    }

    #[test]
    fn barthel_and_h_transport_preserve_dual_norm() {
        let h = systems::heisenberg();
        let traj = flow(&h, &ExtremalState::new(&[0.1, -0.2, 0.0], &[0.6, 0.8, 2.0]), 1.0, &FlowOptions::default()).unwrap();
        let a0 = [0.3, -0.7, 0.4];
        let field = barthel_transport(&h, &traj, &a0).unwrap();
        let f0 = dual_extended_norm(&h, &traj.xs[0], &a0);
        for i in (0..traj.len()).step_by(50) {
            assert!((dual_extended_norm(&h, &traj.xs[i], &field.samples[i]) - f0).abs() < 1e-6);
        }
        let x0 = &traj.xs[0];
        let g0 = [x0[1] / 2.0, -x0[0] / 2.0, 1.0];
        let sec = transport_h(&h, &traj, &g0).unwrap();
        assert!(sec.annihilation_residual < 1e-8);
        let f0 = dual_extended_norm(&h, x0, &g0);
        for i in (0..traj.len()).step_by(50) {
            assert!((dual_extended_norm(&h, &traj.xs[i], &sec.gammas[i]) - f0).abs() < 1e-6);
        }
        // ∇^H is the projected Barthel derivative, and vanishes along its own transport
        let cf = CovectorField { times: sec.times.clone(), samples: sec.gammas.clone() };
        for i in [3, 500, 997] {
            let full = barthel_covariant_derivative(&h, &traj, &cf, i).unwrap();
            let proj = geometry::projection_split(&h, &traj.xs[i]).unwrap().annihilator_part(&full);
            let nh = nabla_h(&h, &traj, &cf, i).unwrap();
            for j in 0..3 {
                assert!((proj[j] - nh[j]).abs() < 1e-12);
            }
            assert!(linalg::norm(&nh) < 1e-7, "{nh:?}");
        }
    }

    #[test]
    fn vakonomic_outcomes() {
        let h = systems::heisenberg();
        let traj = line_controls(&h, &[0.0; 3], &[1.0, 0.0], 1.0, 1001);
        let out = vakonomic_comparison(&h, &traj, 1e-8).unwrap();
        assert!(out.ode_residual <= 1e-8, "{}", out.ode_residual);
        let m = systems::martinet();
        let traj = line_controls(&m, &[0.0; 3], &[0.0, 1.0], 1.0, 1001);
        let out = vakonomic_comparison(&m, &traj, 1e-8).unwrap();
        assert!(out.ode_residual <= 1e-8);
        assert_eq!(out.free_directions.len(), 1);
        let d = &out.free_directions[0];
        assert!(d[0].abs() < 1e-10 && d[1].abs() < 1e-10 && d[2].abs() > 0.1);
        let e = systems::euclidean(2);
        let traj = line_controls(&e, &[0.0; 2], &[1.0, 0.0], 1.0, 11);
        assert!(vakonomic_comparison(&e, &traj, 1e-8).unwrap().certificate().is_some());
    }
}
