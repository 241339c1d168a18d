//! Two-point boundary values: shooting on initial momenta, the length
//! functional, first-variation checks and a direct transcription used as an
//! independent oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{self, ExtremalState, FlowOptions, Trajectory};
use crate::error::{Error, Result};
use crate::expr::{Dual, Scalar};
use crate::geometry;
use crate::linalg::{self, Mat};
use crate::metric;
use crate::ode;
use crate::systems::System;

#[derive(Clone, Debug, Serialize)]
pub struct ShootingOptions {
    pub restarts: usize,
    pub max_newton_iters: usize,
    pub endpoint_tol: f64,
    pub time_horizon: f64,
    pub rng_seed: u64,
    /// RK4 steps over the horizon while screening restarts.
    pub coarse_steps: usize,
    /// RK4 steps over the horizon while polishing and for the final curve.
    pub fine_steps: usize,
    /// Worker threads; 0 uses the global rayon pool.
    pub threads: usize,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        ShootingOptions {
            restarts: 32,
            max_newton_iters: 100,
            endpoint_tol: 1e-9,
            time_horizon: 1.0,
            rng_seed: 0,
            coarse_steps: 100,
            fine_steps: 1000,
            threads: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GeodesicResult {
    /// Initial momentum normalized to η = ½ (unit speed).
    pub p0: Vec<f64>,
    /// Unit-speed curve over `[0, length]`.
    pub trajectory: Trajectory,
    pub length: f64,
    pub endpoint_error: f64,
    pub converged: bool,
    pub restarts_used: usize,
    /// Index of the restart that produced this result.
    pub restart_index: usize,
    pub warnings: Vec<String>,
}

fn wrapped_residual(system: &System, x: &[f64], target: &[f64]) -> Vec<f64> {
    let mut d: Vec<f64> = x.iter().zip(target).map(|(a, b)| a - b).collect();
    system.wrap_displacement(&mut d);
    d
}

fn endpoint_steps(system: &System, x0: &[f64], p0: &[f64], t: f64, steps: usize) -> Result<Vec<f64>> {
    let n = system.n();
    if t == 0.0 {
        return Ok(x0.to_vec());
    }
    let mut y = x0.to_vec();
    y.extend_from_slice(p0);
    let h = t / steps as f64;
    let mut rhs = |_t: f64, y: &[f64]| -> Result<Vec<f64>> {
        let (mut xd, pd) = dynamics::hamiltonian_vector_field(system, &y[..n], &y[n..])?;
        xd.extend(pd);
        Ok(xd)
    };
    for s in 0..steps {
        y = ode::rk4_step(&mut rhs, s as f64 * h, &y, h)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::StepFailure { t: s as f64 * h });
        }
    }
    y.truncate(n);
    Ok(y)
}

/// Base point reached by the sub-Hamiltonian flow at time `t` (RK4, dt = 1e-3).
pub fn endpoint_map(system: &System, x0: &[f64], p0: &[f64], t: f64) -> Result<Vec<f64>> {
    let steps = (t / 1e-3).ceil().max(1.0) as usize;
    endpoint_steps(system, x0, p0, t, steps)
}

struct LmOutcome {
    p: Vec<f64>,
    residual: f64,
}

/// Levenberg–Marquardt on a square residual with a forward-difference Jacobian.
fn levenberg_marquardt<F>(f: F, p0: &[f64], max_iters: usize, tol: f64) -> Result<LmOutcome>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = p0.len();
    let mut p = p0.to_vec();
    let mut r = f(&p)?;
    let mut rn = linalg::norm(&r);
    let mut lambda = 1e-3;
    for _ in 0..max_iters {
        if rn <= tol {
            break;
        }
        let m = r.len();
        let mut jac = vec![vec![0.0; n]; m];
        for j in 0..n {
            let h = 1e-7 * p[j].abs().max(1.0);
            let mut pp = p.clone();
            pp[j] += h;
            let rp = f(&pp)?;
            for i in 0..m {
                jac[i][j] = (rp[i] - r[i]) / h;
            }
        }
        let mut a = vec![vec![0.0; n]; n];
        let mut g = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = (0..m).map(|l| jac[l][i] * jac[l][j]).sum();
            }
            g[i] = (0..m).map(|l| jac[l][i] * r[l]).sum();
        }
        let mut accepted = false;
        for _ in 0..12 {
            let mut damped = a.clone();
            for (i, row) in damped.iter_mut().enumerate() {
                row[i] += lambda * a[i][i].max(1e-12);
            }
            let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
            let Ok(delta) = linalg::solve(damped, neg_g) else {
                lambda *= 4.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(&delta).map(|(a, b)| a + b).collect();
            match f(&trial) {
                Ok(rt) if linalg::norm(&rt) < rn => {
                    p = trial;
                    rn = linalg::norm(&rt);
                    r = rt;
                    lambda = (lambda / 3.0).max(1e-12);
                    accepted = true;
                    break;
                }
                _ => lambda *= 4.0,
            }
        }
        if !accepted {
            break;
        }
    }
    Ok(LmOutcome { p, residual: rn })
}

/// Covector with `⟨p, Xᵢ(x)⟩ = p̂ᵢ` and no component along the taming-orthogonal
/// complement of `D` (minimal Euclidean norm).
fn lift_momentum(system: &System, x: &[f64], phat: &[f64]) -> Result<Vec<f64>> {
    let m = geometry::frame_matrix(system, x)?;
    Ok(linalg::lstsq(&m.transpose(), phat))
}

fn initial_guesses(system: &System, x0: &[f64], delta: &[f64], opts: &ShootingOptions) -> Result<Vec<Vec<f64>>> {
    let n = system.n();
    let k = system.k();
    let t = opts.time_horizon;
    let split = geometry::projection_split(system, x0)?;
    let dh = linalg::norm(&split.horizontal(delta));
    let dv = linalg::norm(&split.vertical(delta));
    let d_guess = (dh + 2.0 * dv.sqrt()).max(1e-6) / t;
    let xm = geometry::frame_matrix(system, x0)?;
    let annihilator = linalg::null_space(&xm.transpose(), system.rank_tol);
    let mut guesses = Vec::with_capacity(opts.restarts);
    // restart 0: straight-line fiber velocity toward the target
    let u = linalg::lstsq(&xm, delta);
    let smart = if linalg::norm(&u) > 1e-12 {
        let uu: Vec<f64> = u.iter().map(|c| c / t).collect();
        Some(lift_momentum(system, x0, &metric::legendre(system, x0, &uu)?)?)
    } else {
        None
    };
    for r in 0..opts.restarts.max(1) {
        if r == 0 {
            if let Some(p) = &smart {
                guesses.push(p.clone());
                continue;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.rng_seed);
        rng.set_stream(r as u64);
        let dir: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dir = if linalg::norm(&dir) < 1e-6 {
            let mut d = vec![0.0; k];
            d[0] = 1.0;
            d
        } else {
            dir
        };
        let fs = metric::dual_metric(system, x0, &dir)?;
        let scale = rng.gen_range(0.5..2.0) * d_guess / fs;
        let phat: Vec<f64> = dir.iter().map(|c| c * scale).collect();
        let mut p = lift_momentum(system, x0, &phat)?;
        for c in 0..annihilator.ncols() {
            let coef = rng.gen_range(-2.0 * std::f64::consts::PI..2.0 * std::f64::consts::PI);
            for i in 0..n {
                p[i] += coef * annihilator[(i, c)];
            }
        }
        guesses.push(p);
    }
    Ok(guesses)
}

struct Candidate {
    index: usize,
    p: Vec<f64>,
    length: f64,
    residual: f64,
}

fn run_restarts<F>(opts: &ShootingOptions, count: usize, job: F) -> Vec<Option<Candidate>>
where
    F: Fn(usize) -> Option<Candidate> + Sync + Send,
{
    let work = || (0..count).into_par_iter().map(&job).collect::<Vec<_>>();
    if opts.threads > 0 {
        match rayon::ThreadPoolBuilder::new().num_threads(opts.threads).build() {
            Ok(pool) => pool.install(work),
            Err(_) => work(),
        }
    } else {
        work()
    }
}

fn zero_length_result(system: &System, x0: &[f64]) -> Result<GeodesicResult> {
    let n = system.n();
    let traj = dynamics::flow(
        system,
        &ExtremalState::new(x0, &vec![0.0; n]),
        0.0,
        &FlowOptions::default(),
    );
    let traj = match traj {
        Ok(t) => t,
        Err(_) => Trajectory {
            times: vec![0.0],
            xs: vec![x0.to_vec()],
            ps: vec![vec![0.0; n]],
            us: vec![vec![0.0; system.k()]],
            eta: vec![0.0],
            speed: vec![0.0],
            horiz_residual: vec![0.0],
            conserved: true,
        },
    };
    Ok(GeodesicResult {
        p0: vec![0.0; n],
        trajectory: traj,
        length: 0.0,
        endpoint_error: 0.0,
        converged: true,
        restarts_used: 0,
        restart_index: 0,
        warnings: vec![],
    })
}

/// Multi-start shooting for the shortest normal geodesic from `x0` to `x1`.
pub fn shoot(system: &System, x0: &[f64], x1: &[f64], opts: &ShootingOptions) -> Result<GeodesicResult> {
    let n = system.n();
    if x0.len() != n || x1.len() != n {
        return Err(Error::invalid(format!("points must have {n} coordinates")));
    }
    let delta = wrapped_residual(system, x1, x0);
    if linalg::norm(&delta) == 0.0 {
        return zero_length_result(system, x0);
    }
    let t = opts.time_horizon;
    let guesses = initial_guesses(system, x0, &delta, opts)?;
    let coarse_tol = (1e-5 * linalg::norm(&delta).max(1.0)).max(opts.endpoint_tol);
    let coarse = |p: &[f64]| -> Result<Vec<f64>> {
        let xe = endpoint_steps(system, x0, p, t, opts.coarse_steps)?;
        Ok(wrapped_residual(system, &xe, x1))
    };
    let outcomes = run_restarts(opts, guesses.len(), |i| {
        let out = levenberg_marquardt(coarse, &guesses[i], opts.max_newton_iters, coarse_tol * 1e-2).ok()?;
        let e = dynamics::eta(system, x0, &out.p).ok()?;
        Some(Candidate {
            index: i,
            length: (2.0 * e).sqrt() * t,
            p: out.p,
            residual: out.residual,
        })
    });
    let best_coarse_residual = outcomes
        .iter()
        .flatten()
        .map(|c| c.residual)
        .fold(f64::INFINITY, f64::min);
    let mut converged: Vec<Candidate> = outcomes
        .into_iter()
        .flatten()
        .filter(|c| c.residual <= coarse_tol)
        .collect();
    if converged.is_empty() {
        return Err(Error::NoConvergence {
            reason: format!("none of {} restarts reached the target", guesses.len()),
            best_residual: best_coarse_residual,
        });
    }
    converged.sort_by(|a, b| a.length.total_cmp(&b.length).then(a.index.cmp(&b.index)));
    let shortest = converged[0].length;
    let fine = |p: &[f64]| -> Result<Vec<f64>> {
        let xe = endpoint_steps(system, x0, p, t, opts.fine_steps)?;
        Ok(wrapped_residual(system, &xe, x1))
    };
    let mut best: Option<Candidate> = None;
    let mut best_fine_residual = f64::INFINITY;
    for c in converged
        .into_iter()
        .filter(|c| c.length <= shortest * (1.0 + 1e-3) + 1e-9)
    {
        let Ok(out) = levenberg_marquardt(fine, &c.p, opts.max_newton_iters, opts.endpoint_tol) else {
            continue;
        };
        best_fine_residual = best_fine_residual.min(out.residual);
        if out.residual > opts.endpoint_tol {
            continue;
        }
        let Ok(e) = dynamics::eta(system, x0, &out.p) else {
            continue;
        };
        let cand = Candidate {
            index: c.index,
            length: (2.0 * e).sqrt() * t,
            p: out.p,
            residual: out.residual,
        };
        let better = match &best {
            None => true,
            Some(b) => {
                cand.length < b.length - 1e-12 || (cand.length <= b.length + 1e-12 && cand.index < b.index)
            }
        };
        if better {
            best = Some(cand);
        }
    }
    let Some(best) = best else {
        return Err(Error::NoConvergence {
            reason: "polishing did not reach the endpoint tolerance".into(),
            best_residual: best_fine_residual,
        });
    };
    let speed = best.length / t;
    let p_unit: Vec<f64> = best.p.iter().map(|c| c / speed).collect();
    let traj = dynamics::flow(
        system,
        &ExtremalState::new(x0, &p_unit),
        best.length,
        &FlowOptions {
            dt: best.length / opts.fine_steps as f64,
            ..Default::default()
        },
    )?;
    let endpoint_error = linalg::norm(&wrapped_residual(system, traj.final_x(), x1));
    let length = length(system, &traj)?;
    Ok(GeodesicResult {
        p0: p_unit,
        length,
        converged: endpoint_error <= opts.endpoint_tol,
        endpoint_error,
        trajectory: traj,
        restarts_used: guesses.len(),
        restart_index: best.index,
        warnings: vec![],
    })
}

/// `∫ F(σ̇) dt` by composite Simpson on the (possibly nonuniform) sample grid.
pub fn length(system: &System, traj: &Trajectory) -> Result<f64> {
    let _ = system;
    let worst = traj.max_horizontality_residual();
    if worst > 1e-6 {
        return Err(Error::NonHorizontal { residual: worst });
    }
    Ok(simpson(&traj.times, &traj.speed))
}

/// Composite Simpson rule for samples on a nonuniform grid.
pub fn simpson(t: &[f64], f: &[f64]) -> f64 {
    let m = t.len();
    if m < 2 {
        return 0.0;
    }
    if m == 2 {
        return 0.5 * (t[1] - t[0]) * (f[0] + f[1]);
    }
    let intervals = m - 1;
    let mut acc = 0.0;
    let mut i = 0;
    while i + 2 <= intervals {
        let h0 = t[i + 1] - t[i];
        let h1 = t[i + 2] - t[i + 1];
        let hs = h0 + h1;
        acc += hs / 6.0
            * ((2.0 - h1 / h0) * f[i] + hs * hs / (h0 * h1) * f[i + 1] + (2.0 - h0 / h1) * f[i + 2]);
        i += 2;
    }
    if intervals % 2 == 1 {
        // last interval from the quadratic through the final three samples
        let j = m - 2;
        let h0 = t[j] - t[j - 1];
        let h1 = t[j + 1] - t[j];
        let alpha = (2.0 * h1 * h1 + 3.0 * h0 * h1) / (6.0 * (h0 + h1));
        let beta = (h1 * h1 + 3.0 * h0 * h1) / (6.0 * h0);
        let eta = h1 * h1 * h1 / (6.0 * h0 * (h0 + h1));
        acc += alpha * f[j + 1] + beta * f[j] - eta * f[j - 1];
    }
    acc
}

/// Sub-Finsler distance: the length of the shortest converged shooting result.
pub fn distance(system: &System, x0: &[f64], x1: &[f64], opts: &ShootingOptions) -> Result<(f64, GeodesicResult)> {
    let mut warnings = Vec::new();
    if let Err(e) = geometry::bracket_generating_step(system, x0, 6) {
        warnings.push(format!("start point: {e}"));
    }
    let mut res = shoot(system, x0, x1, opts)?;
    res.warnings.extend(warnings);
    Ok((res.length, res))
}

/// RK4 on `ẋ = X(x)u(t)` augmented with `ℓ̇ = F(x, u(t))`, controls linearly
/// interpolated between samples. Returns the final state and length.
fn integrate_controls(system: &System, x0: &[f64], times: &[f64], us: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
    let (n, k) = (system.n(), system.k());
    let mut y = x0.to_vec();
    y.push(0.0);
    for s in 0..times.len() - 1 {
        let (t0, t1) = (times[s], times[s + 1]);
        let (u0, u1) = (&us[s], &us[s + 1]);
        let mut rhs = |t: f64, y: &[f64]| -> Result<Vec<f64>> {
            let w = (t - t0) / (t1 - t0);
            let u: Vec<f64> = (0..k).map(|i| (1.0 - w) * u0[i] + w * u1[i]).collect();
            let x = &y[..n];
            let mut d = linalg::mat_vec(&system.frame_at(x)?, &u);
            d.push(if u.iter().all(|&c| c == 0.0) { 0.0 } else { system.metric.norm(x, &u)? });
            Ok(d)
        };
        y = ode::rk4_step(&mut rhs, t0, &y, t1 - t0)?;
    }
    let len = y.pop().expect("augmented");
    Ok((y, len))
}

const VARIATION_MODES: usize = 8;
const VARIATION_EPS: f64 = 1e-5;

/// Largest normalized first variation `|dℓ(σ)·δu| / ‖δu‖` over random control
/// variations that fix the endpoints to first order.
pub fn first_variation_residual(system: &System, traj: &Trajectory, num_variations: usize, rng_seed: u64) -> Result<f64> {
    let worst = traj.max_horizontality_residual();
    if worst > 1e-6 {
        return Err(Error::NonHorizontal { residual: worst });
    }
    let (n, k) = (system.n(), system.k());
    let times = &traj.times;
    if times.len() < 3 {
        return Ok(0.0);
    }
    let (ta, tb) = (times[0], *times.last().unwrap());
    let span = tb - ta;
    let x0 = &traj.xs[0];
    let base_us = &traj.us;
    let basis_count = VARIATION_MODES * k;
    // basis b_{m,c}(t) = sin(mπ(t − t₀)/T) e_c
    let basis_value = |b: usize, t: f64| -> (usize, f64) {
        let (m, c) = (b / k + 1, b % k);
        (c, (m as f64 * std::f64::consts::PI * (t - ta) / span).sin())
    };
    let perturbed = |coef: &[f64], eps: f64| -> Vec<Vec<f64>> {
        times
            .iter()
            .zip(base_us)
            .map(|(&t, u)| {
                let mut u = u.clone();
                for (b, &c) in coef.iter().enumerate() {
                    if c != 0.0 {
                        let (comp, v) = basis_value(b, t);
                        u[comp] += eps * c * v;
                    }
                }
                u
            })
            .collect()
    };
    let endpoint = |us: &[Vec<f64>]| -> Result<Vec<f64>> { Ok(integrate_controls(system, x0, times, us)?.0) };
    let length_of = |us: &[Vec<f64>]| -> Result<f64> { Ok(integrate_controls(system, x0, times, us)?.1) };
    // endpoint differential on the variation basis, by central differences
    let mut de = nalgebra::DMatrix::zeros(n, basis_count);
    for b in 0..basis_count {
        let mut e = vec![0.0; basis_count];
        e[b] = 1.0;
        let plus = endpoint(&perturbed(&e, VARIATION_EPS))?;
        let minus = endpoint(&perturbed(&e, -VARIATION_EPS))?;
        for i in 0..n {
            let mut d = plus[i] - minus[i];
            if system.periodic[i] {
                d = crate::systems::wrap_angle(d);
            }
            de[(i, b)] = d / (2.0 * VARIATION_EPS);
        }
    }
    let kernel = linalg::null_space(&de, 1e-9);
    if kernel.ncols() == 0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut worst = 0.0f64;
    for _ in 0..num_variations.max(1) {
        let w: Vec<f64> = (0..kernel.ncols()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let coef: Vec<f64> = (0..basis_count)
            .map(|b| (0..kernel.ncols()).map(|c| kernel[(b, c)] * w[c]).sum())
            .collect();
        let du = perturbed(&coef, 1.0);
        let du_sq: Vec<f64> = du
            .iter()
            .zip(base_us)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
            .collect();
        let norm = simpson(times, &du_sq).max(0.0).sqrt();
        if norm == 0.0 {
            continue;
        }
        let lp = length_of(&perturbed(&coef, VARIATION_EPS))?;
        let lm = length_of(&perturbed(&coef, -VARIATION_EPS))?;
        worst = worst.max(((lp - lm) / (2.0 * VARIATION_EPS)).abs() / norm);
    }
    Ok(worst)
}

#[derive(Clone, Debug, Serialize)]
pub struct DirectResult {
    /// `Σ F(xᵢ, uᵢ) Δt` without the penalty term.
    pub cost: f64,
    /// Piecewise-constant controls on `N` intervals of `[0, 1]`.
    pub controls: Vec<Vec<f64>>,
    pub states: Vec<Vec<f64>>,
    pub endpoint_error: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct DirectOptions {
    pub penalties: Vec<f64>,
    pub max_iters_per_round: usize,
    pub grad_tol: f64,
    pub endpoint_tol: f64,
}

impl Default for DirectOptions {
    fn default() -> Self {
        DirectOptions {
            penalties: vec![1e2, 1e3, 1e4],
            max_iters_per_round: 4000,
            grad_tol: 1e-9,
            endpoint_tol: 1e-3,
        }
    }
}

fn control_step<T: Scalar>(system: &System, x: &[T], u: &[T], h: f64) -> Result<Vec<T>> {
    let f = |x: &[T]| -> Result<Vec<T>> { Ok(linalg::mat_vec(&system.frame_at(x)?, u)) };
    let add = |x: &[T], k: &[T], c: f64| -> Vec<T> {
        x.iter().zip(k).map(|(a, b)| a.clone() + b.scale(c)).collect()
    };
    let k1 = f(x)?;
    let k2 = f(&add(x, &k1, 0.5 * h))?;
    let k3 = f(&add(x, &k2, 0.5 * h))?;
    let k4 = f(&add(x, &k3, h))?;
    Ok((0..x.len())
        .map(|i| {
            x[i].clone()
                + (k1[i].clone() + k2[i].scale(2.0) + k3[i].scale(2.0) + k4[i].clone()).scale(h / 6.0)
        })
        .collect())
}

struct DirectProblem<'a> {
    system: &'a System,
    x0: Vec<f64>,
    x1: Vec<f64>,
    steps: usize,
}

impl<'a> DirectProblem<'a> {
    fn dt(&self) -> f64 {
        1.0 / self.steps as f64
    }

    fn rollout(&self, us: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut xs = Vec::with_capacity(self.steps + 1);
        xs.push(self.x0.clone());
        for (i, u) in us.iter().enumerate() {
            let next = control_step(self.system, &xs[i], u, self.dt())?;
            xs.push(next);
        }
        Ok(xs)
    }

    fn speed(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        if u.iter().all(|&c| c == 0.0) {
            return Ok(0.0);
        }
        self.system.metric.norm(x, u)
    }

    /// (length part, penalized objective)
    fn objective(&self, us: &[Vec<f64>], mu: f64) -> Result<(f64, f64)> {
        let xs = self.rollout(us)?;
        let mut len = 0.0;
        for (x, u) in xs.iter().zip(us) {
            len += self.speed(x, u)? * self.dt();
        }
        let r = wrapped_residual(self.system, &xs[self.steps], &self.x1);
        Ok((len, len + mu * linalg::dot(&r, &r)))
    }

    /// Adjoint gradient of the penalized objective.
    fn gradient(&self, us: &[Vec<f64>], mu: f64) -> Result<Vec<Vec<f64>>> {
        let (n, k) = (self.system.n(), self.system.k());
        let xs = self.rollout(us)?;
        let r = wrapped_residual(self.system, &xs[self.steps], &self.x1);
        let mut lam: Vec<f64> = r.iter().map(|c| 2.0 * mu * c).collect();
        let mut grad = vec![vec![0.0; k]; self.steps];
        for i in (0..self.steps).rev() {
            let mut z = xs[i].clone();
            z.extend_from_slice(&us[i]);
            let zd = Dual::seed(&z);
            let step = control_step(self.system, &zd[..n], &zd[n..], self.dt())?;
            // speed gradient; F is not differentiable at u = 0
            let fgrad = if us[i].iter().all(|&c| c == 0.0) {
                vec![0.0; n + k]
            } else {
                let l = self.system.metric.lagrangian(&zd[..n], &zd[n..])?;
                let f = (2.0 * l.re).sqrt();
                (0..n + k).map(|j| l.d(j) / f).collect()
            };
            let mut new_lam = vec![0.0; n];
            for j in 0..n + k {
                let mut acc = self.dt() * fgrad[j];
                for (m, s) in step.iter().enumerate() {
                    acc += s.d(j) * lam[m];
                }
                if j < n {
                    new_lam[j] = acc;
                } else {
                    grad[i][j - n] = acc;
                }
            }
            lam = new_lam;
        }
        Ok(grad)
    }
}

/// Brute-force transcription: minimize `Σ F(xᵢ, uᵢ)Δt + μ‖x_N − x₁‖²` over
/// piecewise-constant controls with an increasing penalty.
pub fn direct_solve(system: &System, x0: &[f64], x1: &[f64], steps: usize) -> Result<DirectResult> {
    direct_solve_with(system, x0, x1, steps, &DirectOptions::default())
}

pub fn direct_solve_with(system: &System, x0: &[f64], x1: &[f64], steps: usize, opts: &DirectOptions) -> Result<DirectResult> {
    if steps < 10 {
        return Err(Error::invalid("direct_solve needs at least 10 intervals"));
    }
    let k = system.k();
    let prob = DirectProblem {
        system,
        x0: x0.to_vec(),
        x1: x1.to_vec(),
        steps,
    };
    let delta = wrapped_residual(system, x1, x0);
    let xm = geometry::frame_matrix(system, x0)?;
    let straight = linalg::lstsq(&xm, &delta);
    let wiggle = 0.1 * linalg::norm(&straight).max(0.1);
    let mut us: Mat<f64> = (0..steps)
        .map(|i| {
            let th = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / steps as f64;
            let mut u = straight.clone();
            if k >= 2 {
                u[0] += wiggle * th.cos();
                u[1] += wiggle * th.sin();
            } else {
                u[0] += wiggle * th.sin();
            }
            u
        })
        .collect();
    let mut iterations = 0;
    for &mu in &opts.penalties {
        let mut g = prob.gradient(&us, mu)?;
        let (_, mut fval) = prob.objective(&us, mu)?;
        let mut step = 1e-2;
        let mut prev: Option<(Mat<f64>, Mat<f64>)> = None;
        for _ in 0..opts.max_iters_per_round {
            iterations += 1;
            let gnorm2: f64 = g.iter().flatten().map(|v| v * v).sum();
            if gnorm2.sqrt() <= opts.grad_tol {
                break;
            }
            if let Some((pu, pg)) = &prev {
                // Barzilai–Borwein initial step
                let mut ss = 0.0;
                let mut sy = 0.0;
                for i in 0..steps {
                    for c in 0..k {
                        let s = us[i][c] - pu[i][c];
                        let y = g[i][c] - pg[i][c];
                        ss += s * s;
                        sy += s * y;
                    }
                }
                if sy > 0.0 {
                    step = (ss / sy).clamp(1e-8, 1e3);
                } else {
                    step = (step * 2.0).min(1e3);
                }
            }
            let mut accepted = None;
            let mut t = step;
            for _ in 0..40 {
                let trial: Mat<f64> = us
                    .iter()
                    .zip(&g)
                    .map(|(u, gi)| u.iter().zip(gi).map(|(a, b)| a - t * b).collect())
                    .collect();
                if let Ok((_, ft)) = prob.objective(&trial, mu) {
                    if ft <= fval - 1e-4 * t * gnorm2 {
                        accepted = Some((trial, ft));
                        break;
                    }
                }
                t *= 0.5;
            }
            let Some((trial, ft)) = accepted else { break };
            let improvement = fval - ft;
            prev = Some((std::mem::replace(&mut us, trial), g));
            fval = ft;
            g = prob.gradient(&us, mu)?;
            if improvement <= 1e-15 * fval.abs().max(1.0) {
                break;
            }
        }
    }
    let xs = prob.rollout(&us)?;
    let endpoint_error = linalg::norm(&wrapped_residual(system, &xs[steps], x1));
    let (cost, _) = prob.objective(&us, 0.0)?;
    if endpoint_error > opts.endpoint_tol {
        return Err(Error::NoConvergence {
            reason: "direct transcription did not reach the target".into(),
            best_residual: endpoint_error,
        });
    }
    Ok(DirectResult {
        cost,
        controls: us,
        states: xs,
        endpoint_error,
        iterations,
    })
}
