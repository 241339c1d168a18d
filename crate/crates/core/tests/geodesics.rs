use subfins::dynamics::{self, ExtremalState, FlowOptions};
use subfins::solve::{self, ShootingOptions};
use subfins::systems;

fn opts() -> ShootingOptions {
    ShootingOptions {
        restarts: 12,
        ..Default::default()
    }
}

#[test]
fn heisenberg_dilation_and_symmetry() {
    let h = systems::heisenberg();
    let a = [0.0; 3];
    let b = [0.3, -0.2, 0.15];
    let (d, _) = solve::distance(&h, &a, &b, &opts()).unwrap();
    // δ_λ(x, y, z) = (λx, λy, λ²z) scales the distance by λ
    let lam = 2.0;
    let bl = [lam * b[0], lam * b[1], lam * lam * b[2]];
    let (dl, _) = solve::distance(&h, &a, &bl, &opts()).unwrap();
    assert!((dl - lam * d).abs() < 1e-6 * dl, "{dl} vs {}", lam * d);
    let (back, _) = solve::distance(&h, &b, &a, &opts()).unwrap();
    assert!((back - d).abs() < 1e-6 * d);
}

#[test]
fn vertical_displacement_matches_closed_form() {
    // d((0,0,0), (0,0,z)) = sqrt(4π|z|) for this frame
    let h = systems::heisenberg();
    let z = 0.25;
    let (d, r) = solve::distance(&h, &[0.0; 3], &[0.0, 0.0, z], &opts()).unwrap();
    assert!(r.converged);
    assert!((d - (4.0 * std::f64::consts::PI * z).sqrt()).abs() < 1e-6, "{d}");
}

#[test]
fn short_flow_arcs_are_recovered_by_shooting() {
    let h = systems::heisenberg();
    let x0 = [0.1, 0.2, -0.1];
    // unit speed: p̂ on the unit circle
    let p0 = [0.6, 0.8, 1.0];
    let phat = dynamics::fiber_momentum(&h, &x0, &p0).unwrap();
    let s = (phat[0] * phat[0] + phat[1] * phat[1]).sqrt();
    let p0: Vec<f64> = p0.iter().map(|c| c / s).collect();
    let t = 0.8;
    let traj = dynamics::flow(&h, &ExtremalState::new(&x0, &p0), t, &FlowOptions::default()).unwrap();
    let (d, r) = solve::distance(&h, &x0, traj.final_x(), &opts()).unwrap();
    assert!(r.converged);
    assert!((d - t).abs() < 1e-6, "{d} vs {t}");
    assert!(solve::first_variation_residual(&h, &traj, 8, 3).unwrap() < 1e-6);
}

#[test]
fn unicycle_geodesic_keeps_no_slip() {
    let u = systems::unicycle();
    let r = solve::shoot(&u, &[0.0; 4], &[0.3, 0.4, 0.2, 0.5], &opts()).unwrap();
    assert!(r.converged, "{:?}", r.warnings);
    for (x, v) in r.trajectory.xs.iter().zip(0..) {
        let vel = r.trajectory.velocity(&u, v).unwrap();
        assert!((x[0].sin() * vel[1] - x[0].cos() * vel[2]).abs() < 1e-12);
    }
}

#[test]
fn triangle_inequality_on_heisenberg() {
    let h = systems::heisenberg();
    let (a, b, c) = ([0.1, -0.3, 0.2], [-0.4, 0.2, -0.1], [0.3, 0.5, 0.4]);
    let d = |p: &[f64; 3], q: &[f64; 3]| solve::distance(&h, p, q, &opts()).unwrap().0;
    let (ab, bc, ac) = (d(&a, &b), d(&b, &c), d(&a, &c));
    assert!(ac <= 1.02 * (ab + bc), "{ac} > {ab} + {bc}");
}

#[test]
fn equal_endpoints_and_iteration_cap() {
    let h = systems::heisenberg();
    let r = solve::shoot(&h, &[0.2, 0.1, 0.0], &[0.2, 0.1, 0.0], &opts()).unwrap();
    assert!(r.converged && r.length == 0.0);
    let capped = ShootingOptions {
        restarts: 1,
        max_newton_iters: 1,
        ..Default::default()
    };
    let e = solve::shoot(&h, &[0.0; 3], &[2.0, -1.5, 3.0], &capped).unwrap_err();
    assert!(matches!(e, subfins::Error::NoConvergence { .. }), "{e:?}");
}
