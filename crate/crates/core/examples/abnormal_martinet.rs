//! The Martinet line `x = z = 0` carries an abnormal certificate proportional
//! to `dz`; a Heisenberg geodesic carries none.

use subfins::dynamics;
use subfins::nonholonomic;
use subfins::solve::{self, ShootingOptions};
use subfins::systems;

fn main() -> subfins::Result<()> {
    let m = systems::martinet();
    let times: Vec<f64> = (0..=200).map(|i| i as f64 / 200.0).collect();
    let controls = vec![vec![0.0, 1.0]; times.len()];
    let line = dynamics::trajectory_from_controls(&m, &[0.0; 3], &times, &controls)?;
    match nonholonomic::abnormal_check(&m, &line, 1e-8)? {
        Some(c) => println!(
            "martinet line: certificate gamma(0) = {:?}, residual {:.1e}",
            c.gammas[0], c.residual
        ),
        None => println!("martinet line: no certificate"),
    }
    let h = systems::heisenberg();
    let g = solve::shoot(&h, &[0.0; 3], &[0.5, 0.2, 0.1], &ShootingOptions::default())?;
    let c = nonholonomic::abnormal_check(&h, &g.trajectory, 1e-6)?;
    println!("heisenberg geodesic certified abnormal: {}", c.is_some());
    let v = nonholonomic::vakonomic_comparison(&m, &line, 1e-8)?;
    println!(
        "martinet vakonomic: accepted {}, free directions {:?}",
        v.accepted, v.free_directions
    );
    Ok(())
}
