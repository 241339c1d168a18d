//! Sub-Hamiltonian dynamics and the Berwald spray of the extended metric.
//!
//! With `p̂ᵢ = ⟨p, Xᵢ(x)⟩` the sub-Hamiltonian is
//! `η(x, p) = sup_u (⟨p̂, u⟩ − L(x, u)) = ½F*(p̂)²`, attained at the inverse
//! Legendre image `u*`. The envelope theorem gives the vector field without
//! differentiating through the Newton solve:
//!
//! ```text
//! ẋ = Σ u*ᵢ Xᵢ(x)
//! ṗ_m = −(Σᵢ u*ᵢ ∂_m p̂ᵢ − ∂L/∂x_m(x, u*))
//! ```

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Dual, Scalar, Taylor};
use crate::geometry::{self, extend_metric};
use crate::linalg::{self, Mat};
use crate::metric;
use crate::ode;
use crate::systems::System;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExtremalState {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

impl ExtremalState {
    pub fn new(x: &[f64], p: &[f64]) -> Self {
        ExtremalState {
            x: x.to_vec(),
            p: p.to_vec(),
        }
    }
}

/// Time-sampled curve with its controls and diagnostic channels.
#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub xs: Vec<Vec<f64>>,
    /// Cotangent momenta; zero rows for curves given by controls only.
    pub ps: Vec<Vec<f64>>,
    pub us: Vec<Vec<f64>>,
    pub eta: Vec<f64>,
    pub speed: Vec<f64>,
    pub horiz_residual: Vec<f64>,
    /// False when the η drift exceeded the requested tolerance.
    pub conserved: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_x(&self) -> &[f64] {
        self.xs.last().expect("trajectory has samples")
    }

    pub fn eta_drift(&self) -> f64 {
        let e0 = self.eta[0];
        self.eta.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max)
    }

    pub fn max_horizontality_residual(&self) -> f64 {
        self.horiz_residual.iter().cloned().fold(0.0, f64::max)
    }

    /// Velocity `Σ uᵢ Xᵢ(x)` at sample `i`.
    pub fn velocity(&self, system: &System, i: usize) -> Result<Vec<f64>> {
        let m = system.frame_at(&self.xs[i])?;
        Ok(linalg::mat_vec(&m, &self.us[i]))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FlowOptions {
    /// RK4 step; ignored when `adaptive` is set.
    pub dt: f64,
    pub adaptive: bool,
    pub rtol: f64,
    pub conservation_tol: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            dt: 1e-3,
            adaptive: false,
            rtol: 1e-9,
            conservation_tol: 1e-8,
        }
    }
}

/// `p̂ᵢ = ⟨p, Xᵢ(x)⟩`.
pub fn fiber_momentum(system: &System, x: &[f64], p: &[f64]) -> Result<Vec<f64>> {
    let m = system.frame_at(x)?;
    Ok((0..system.k())
        .map(|i| (0..system.n()).map(|r| m[r][i] * p[r]).sum())
        .collect())
}

fn optimal_control(system: &System, x: &[f64], phat: &[f64]) -> Result<Vec<f64>> {
    if phat.iter().all(|&c| c == 0.0) {
        if system.metric.is_quadratic() {
            return Ok(vec![0.0; phat.len()]);
        }
        return Err(Error::domain("zero fiber momentum for a non-quadratic metric"));
    }
    metric::legendre_inverse(system, x, phat)
}

/// `η(x, p) = ½F*(p̂)²`.
pub fn eta(system: &System, x: &[f64], p: &[f64]) -> Result<f64> {
    let phat = fiber_momentum(system, x, p)?;
    if phat.iter().all(|&c| c == 0.0) {
        return Ok(0.0);
    }
    // ½⟨p̂, u*⟩ is ½F*² because L is 2-homogeneous
    let u = metric::legendre_inverse(system, x, &phat)?;
    Ok(0.5 * linalg::dot(&phat, &u))
}

/// `E(p) = Σ uᵢ Xᵢ` with `u` the inverse Legendre image of `p̂`.
pub fn anchor_e(system: &System, x: &[f64], p: &[f64]) -> Result<Vec<f64>> {
    let m = system.frame_at(x)?;
    let phat = fiber_momentum(system, x, p)?;
    let u = optimal_control(system, x, &phat)?;
    Ok(linalg::mat_vec(&m, &u))
}

/// `(ẋ, ṗ) = (∂η/∂p, −∂η/∂x)`.
pub fn hamiltonian_vector_field(system: &System, x: &[f64], p: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (xdot, pdot, _) = field_with_control(system, x, p)?;
    Ok((xdot, pdot))
}

fn field_with_control(system: &System, x: &[f64], p: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let (n, k) = (system.n(), system.k());
    let xd = Dual::seed(x);
    let fd = system.frame_at(&xd)?;
    let phat: Vec<f64> = (0..k).map(|i| (0..n).map(|r| fd[r][i].re * p[r]).sum()).collect();
    let u = optimal_control(system, x, &phat)?;
    let xdot: Vec<f64> = (0..n)
        .map(|r| (0..k).map(|i| fd[r][i].re * u[i]).sum())
        .collect();
    let ud: Vec<Dual> = u.iter().map(|&c| Dual::constant(c)).collect();
    let lx = if u.iter().all(|&c| c == 0.0) {
        Dual::constant(0.0)
    } else {
        system.metric.lagrangian(&xd, &ud)?
    };
    let pdot: Vec<f64> = (0..n)
        .map(|m| {
            let mut dphat_u = 0.0;
            for i in 0..k {
                let mut s = 0.0;
                for r in 0..n {
                    s += p[r] * fd[r][i].d(m);
                }
                dphat_u += u[i] * s;
            }
            -(dphat_u - lx.d(m))
        })
        .collect();
    Ok((xdot, pdot, u))
}

/// Evaluation handle for η and its vector field on one system.
#[derive(Clone, Copy, Debug)]
pub struct SubHamiltonian<'a> {
    pub system: &'a System,
}

impl<'a> SubHamiltonian<'a> {
    pub fn new(system: &'a System) -> Self {
        SubHamiltonian { system }
    }
    pub fn value(&self, state: &ExtremalState) -> Result<f64> {
        eta(self.system, &state.x, &state.p)
    }
    pub fn vector_field(&self, state: &ExtremalState) -> Result<(Vec<f64>, Vec<f64>)> {
        hamiltonian_vector_field(self.system, &state.x, &state.p)
    }
}

/// Integrates the sub-Hamiltonian field and fills the diagnostic channels.
pub fn flow(system: &System, state0: &ExtremalState, t_final: f64, opts: &FlowOptions) -> Result<Trajectory> {
    let n = system.n();
    if !(t_final >= 0.0) {
        return Err(Error::invalid("flow time must be nonnegative"));
    }
    let mut y0 = state0.x.clone();
    y0.extend_from_slice(&state0.p);
    let rhs = |_t: f64, y: &[f64]| -> Result<Vec<f64>> {
        let (mut xd, pd) = hamiltonian_vector_field(system, &y[..n], &y[n..])?;
        xd.extend(pd);
        Ok(xd)
    };
    let (times, states) = if t_final == 0.0 {
        (vec![0.0], vec![y0])
    } else if opts.adaptive {
        let o = ode::AdaptiveOptions {
            rtol: opts.rtol,
            atol: opts.rtol * 1e-3,
            h_init: opts.dt.min(t_final),
            ..Default::default()
        };
        ode::dopri45(rhs, 0.0, &y0, t_final, &o)?
    } else {
        let steps = (t_final / opts.dt).ceil().max(1.0) as usize;
        ode::rk4(rhs, 0.0, &y0, t_final, steps)?
    };
    let mut traj = Trajectory {
        times,
        xs: Vec::with_capacity(states.len()),
        ps: Vec::with_capacity(states.len()),
        us: Vec::with_capacity(states.len()),
        eta: Vec::with_capacity(states.len()),
        speed: Vec::with_capacity(states.len()),
        horiz_residual: Vec::with_capacity(states.len()),
        conserved: true,
    };
    for y in states {
        let (x, p) = (&y[..n], &y[n..]);
        let (xdot, _, u) = field_with_control(system, x, p)?;
        let phat = fiber_momentum(system, x, p)?;
        traj.eta.push(0.5 * linalg::dot(&phat, &u));
        traj.speed.push(if u.iter().all(|&c| c == 0.0) {
            0.0
        } else {
            system.metric.norm(x, &u)?
        });
        traj.horiz_residual.push(geometry::horizontality_residual(system, x, &xdot)?);
        traj.xs.push(x.to_vec());
        traj.ps.push(p.to_vec());
        traj.us.push(u);
    }
    traj.conserved = traj.eta_drift() <= opts.conservation_tol;
    Ok(traj)
}

/// Horizontal curve `ẋ = Σ uᵢ(t) Xᵢ(x)` for controls sampled on `times`,
/// linearly interpolated between samples. The η channel holds `½F(σ̇)²`.
pub fn trajectory_from_controls(system: &System, x0: &[f64], times: &[f64], controls: &[Vec<f64>]) -> Result<Trajectory> {
    if times.len() != controls.len() || times.is_empty() {
        return Err(Error::invalid("times and controls must be nonempty and of equal length"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("times must be strictly increasing"));
    }
    let n = system.n();
    let k = system.k();
    let mut xs = vec![x0.to_vec()];
    for s in 0..times.len() - 1 {
        let (t0, t1) = (times[s], times[s + 1]);
        let (u0, u1) = (&controls[s], &controls[s + 1]);
        let mut rhs = |t: f64, x: &[f64]| -> Result<Vec<f64>> {
            let w = (t - t0) / (t1 - t0);
            let u: Vec<f64> = (0..k).map(|i| (1.0 - w) * u0[i] + w * u1[i]).collect();
            let m = system.frame_at(x)?;
            Ok(linalg::mat_vec(&m, &u))
        };
        let next = ode::rk4_step(&mut rhs, t0, &xs[s], t1 - t0)?;
        xs.push(next);
    }
    let mut traj = Trajectory {
        times: times.to_vec(),
        xs,
        ps: vec![vec![0.0; n]; times.len()],
        us: controls.to_vec(),
        eta: Vec::new(),
        speed: Vec::new(),
        horiz_residual: Vec::new(),
        conserved: true,
    };
    for i in 0..times.len() {
        let f = system.metric.norm(&traj.xs[i], &traj.us[i]).unwrap_or(0.0);
        traj.speed.push(f);
        traj.eta.push(0.5 * f * f);
        let v = traj.velocity(system, i)?;
        traj.horiz_residual.push(geometry::horizontality_residual(system, &traj.xs[i], &v)?);
    }
    Ok(traj)
}

/// Spray coefficients `Gⁱ` and Barthel coefficients `Nⁱⱼ` at `(x, v)`.
#[derive(Clone, Debug, Serialize)]
pub struct BarthelData {
    pub g: Vec<f64>,
    /// `n[i][j] = Nⁱⱼ = ½ ∂Gⁱ/∂vʲ`
    pub n: Mat<f64>,
}

fn spray_polys(system: &System, x: &[f64], v: &[f64], order: usize) -> Result<Vec<Taylor>> {
    let n = system.n();
    if v.iter().all(|&c| c == 0.0) {
        return Err(Error::domain("spray requires v != 0"));
    }
    let mut z = x.to_vec();
    z.extend_from_slice(v);
    let zt = Taylor::seed(&z, order);
    let l = extend_metric(system).lagrangian(&zt[..n], &zt[n..])?;
    let lv: Vec<Taylor> = (0..n).map(|j| l.partial(n + j)).collect();
    let hess: Mat<Taylor> = (0..n)
        .map(|j| (0..n).map(|m| lv[j].partial(n + m)).collect())
        .collect();
    let rhs: Vec<Taylor> = (0..n)
        .map(|j| {
            let mut acc = -l.partial(j);
            for kx in 0..n {
                acc = acc + lv[j].partial(kx) * zt[n + kx].clone();
            }
            acc
        })
        .collect();
    linalg::solve(hess, rhs).map_err(|_| Error::SingularHessian)
}

/// `Gⁱ = gⁱʲ(∂²L̂/∂vʲ∂xᵏ vᵏ − ∂L̂/∂xʲ)` for the extended metric `L̂ = ½F̂²`.
pub fn spray(system: &System, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    Ok(spray_polys(system, x, v, 2)?.iter().map(|g| g.value()).collect())
}

pub fn barthel(system: &System, x: &[f64], v: &[f64]) -> Result<BarthelData> {
    let n = system.n();
    let g = spray_polys(system, x, v, 3)?;
    Ok(BarthelData {
        g: g.iter().map(|c| c.value()).collect(),
        n: (0..n)
            .map(|i| (0..n).map(|j| 0.5 * g[i].derivative(&[n + j])).collect())
            .collect(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct InvarianceReport {
    pub times: Vec<f64>,
    pub xs: Vec<Vec<f64>>,
    pub vs: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub initial_residual: f64,
    pub max_residual: f64,
}

/// Integrates the geodesic `ẋ = v, v̇ = −G(x, v)` of the extended metric and
/// tracks the g-distance from `v(t)` to `D_{x(t)}`.
pub fn geodesic_invariance_check(system: &System, x0: &[f64], v0: &[f64], t_final: f64, dt: f64) -> Result<InvarianceReport> {
    let n = system.n();
    let mut y0 = x0.to_vec();
    y0.extend_from_slice(v0);
    let steps = (t_final / dt).ceil().max(1.0) as usize;
    let (times, states) = ode::rk4(
        |_, y| {
            let g = spray(system, &y[..n], &y[n..])?;
            let mut d = y[n..].to_vec();
            d.extend(g.into_iter().map(|c| -c));
            Ok(d)
        },
        0.0,
        &y0,
        t_final,
        steps,
    )?;
    let mut residuals = Vec::with_capacity(states.len());
    for y in &states {
        residuals.push(geometry::horizontality_residual(system, &y[..n], &y[n..])?);
    }
    Ok(InvarianceReport {
        initial_residual: residuals[0],
        max_residual: residuals.iter().cloned().fold(0.0, f64::max),
        residuals,
        xs: states.iter().map(|y| y[..n].to_vec()).collect(),
        vs: states.iter().map(|y| y[n..].to_vec()).collect(),
        times,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::SubFinslerMetric;
    use crate::systems;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn eta_examples() {
        let h = systems::heisenberg();
        assert!((eta(&h, &[0.0; 3], &[1.0, 0.0, 5.0]).unwrap() - 0.5).abs() < 1e-15);
        // p in the annihilator at x = (1, 0, 0): p = (0, -1/2, 1)
        assert_eq!(eta(&h, &[1.0, 0.0, 0.0], &[0.0, -0.5, 1.0]).unwrap(), 0.0);
        let x = [0.2, -0.4, 0.9];
        let p = [0.3, 0.1, -0.7];
        let p2: Vec<f64> = p.iter().map(|c| 2.0 * c).collect();
        assert!((eta(&h, &x, &p2).unwrap() - 4.0 * eta(&h, &x, &p).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn heisenberg_field_closed_form() {
        let h = systems::heisenberg();
        let (xd, pd) = hamiltonian_vector_field(&h, &[0.0; 3], &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(xd, vec![1.0, 0.0, 0.0]);
        assert!(close(&pd, &[0.0; 3], 1e-15));
        // closed form: η = ½((p1 − y p3/2)² + (p2 + x p3/2)²)
        let (x, p) = ([0.3, -0.7, 0.2], [0.5, 1.1, -0.9]);
        let a = p[0] - x[1] * p[2] / 2.0;
        let b = p[1] + x[0] * p[2] / 2.0;
        let (xd, pd) = hamiltonian_vector_field(&h, &x, &p).unwrap();
        let xd_ref = [a, b, -a * x[1] / 2.0 + b * x[0] / 2.0];
        let pd_ref = [-b * p[2] / 2.0, a * p[2] / 2.0, 0.0];
        assert!(close(&xd, &xd_ref, 1e-14), "{xd:?}");
        assert!(close(&pd, &pd_ref, 1e-14), "{pd:?}");
        assert!(close(&anchor_e(&h, &x, &p).unwrap(), &xd, 1e-15));
    }

    #[test]
    fn field_matches_finite_differences_of_eta() {
        let mut s = systems::unicycle();
        s = s.with_metric(SubFinslerMetric::curvature_weighted(3.0)).unwrap();
        let x = [0.4, 0.1, -0.3, 1.0];
        let p = [0.7, -0.2, 0.5, 0.3];
        let (xd, pd) = hamiltonian_vector_field(&s, &x, &p).unwrap();
        let h = 1e-6;
        for m in 0..4 {
            let mut xp = x;
            let mut xm = x;
            xp[m] += h;
            xm[m] -= h;
            let dx = (eta(&s, &xp, &p).unwrap() - eta(&s, &xm, &p).unwrap()) / (2.0 * h);
            assert!((pd[m] + dx).abs() < 1e-8, "{m}: {} vs {}", pd[m], -dx);
            let mut pp = p;
            let mut pm = p;
            pp[m] += h;
            pm[m] -= h;
            let dp = (eta(&s, &x, &pp).unwrap() - eta(&s, &x, &pm).unwrap()) / (2.0 * h);
            assert!((xd[m] - dp).abs() < 1e-8);
        }
    }

    #[test]
    fn straight_heisenberg_geodesic() {
        let h = systems::heisenberg();
        let traj = flow(&h, &ExtremalState::new(&[0.0; 3], &[1.0, 0.0, 0.0]), 1.0, &FlowOptions::default()).unwrap();
        assert!(close(traj.final_x(), &[1.0, 0.0, 0.0], 1e-9));
        assert!(traj.max_horizontality_residual() < 1e-8);
        assert!(traj.conserved);
    }

    #[test]
    fn heisenberg_flow_matches_closed_form() {
        let h = systems::heisenberg();
        let (a, b, c) = (0.6f64, -0.8f64, 2.0f64);
        let traj = flow(&h, &ExtremalState::new(&[0.0; 3], &[a, b, c]), 2.0, &FlowOptions::default()).unwrap();
        let t = 2.0f64;
        // x + iy = w0 (e^{ict} − 1)/(ic)
        let (re, im) = (((c * t).sin()) / c, (1.0 - (c * t).cos()) / c);
        let x = a * re - b * im;
        let y = a * im + b * re;
        let z = (a * a + b * b) / (2.0 * c * c) * (c * t - (c * t).sin());
        assert!(close(traj.final_x(), &[x, y, z], 1e-10), "{:?}", traj.final_x());
    }

    #[test]
    fn annihilator_start_is_stationary() {
        let h = systems::heisenberg();
        let x0 = [1.0, 0.0, 0.0];
        let traj = flow(&h, &ExtremalState::new(&x0, &[0.0, -0.5, 1.0]), 1.0, &FlowOptions { dt: 1e-2, ..Default::default() }).unwrap();
        assert!(traj.xs.iter().all(|x| close(x, &x0, 1e-15)));
    }

    #[test]
    fn adaptive_flow_agrees() {
        let h = systems::heisenberg();
        let s0 = ExtremalState::new(&[0.0; 3], &[0.6, -0.8, 2.0]);
        let a = flow(&h, &s0, 1.0, &FlowOptions { adaptive: true, ..Default::default() }).unwrap();
        let b = flow(&h, &s0, 1.0, &FlowOptions::default()).unwrap();
        assert!(close(a.final_x(), b.final_x(), 1e-8));
    }

    #[test]
    fn barthel_flat_and_homogeneous() {
        let e = systems::euclidean(3);
        let b = barthel(&e, &[0.1, 0.2, 0.3], &[1.0, -1.0, 0.5]).unwrap();
        assert!(b.g.iter().all(|c| c.abs() < 1e-14));
        assert!(b.n.iter().flatten().all(|c| c.abs() < 1e-14));
        let h = systems::heisenberg();
        let (x, v) = ([0.3, 0.2, -0.1], [0.4, -0.7, 0.2]);
        let g1 = spray(&h, &x, &v).unwrap();
        let g2 = spray(&h, &x, &[0.8, -1.4, 0.4]).unwrap();
        for i in 0..3 {
            assert!((g2[i] - 4.0 * g1[i]).abs() <= 1e-9 * g1[i].abs().max(1e-12));
        }
        let full = barthel(&h, &x, &v).unwrap();
        assert!(close(&full.g, &g1, 1e-13));
        // Euler: N·v = G for a 2-homogeneous spray
        for i in 0..3 {
            let nv: f64 = (0..3).map(|j| full.n[i][j] * v[j]).sum();
            assert!((nv - g1[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_invariance() {
        let s = systems::planar();
        let r = geodesic_invariance_check(&s, &[0.0; 3], &[1.0, 0.5, 0.0], 2.0, 1e-2).unwrap();
        assert!(r.max_residual < 1e-14);
        let tilted = geodesic_invariance_check(&s, &[0.0; 3], &[1.0, 0.0, 0.3], 1.0, 1e-2).unwrap();
        assert!(tilted.initial_residual > 0.29);
    }
}
