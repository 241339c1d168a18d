//! Shoots a geodesic on the Heisenberg group and reports its length.

use subfins::solve::{self, ShootingOptions};
use subfins::systems;

fn main() -> subfins::Result<()> {
    let h = systems::heisenberg();
    let target = [1.0, 0.0, 0.25];
    let (d, g) = solve::distance(&h, &[0.0; 3], &target, &ShootingOptions::default())?;
    println!("d(0, {target:?}) = {d:.8}");
    println!("p0 = {:?}", g.p0);
    println!("endpoint error {:.2e}, converged {}", g.endpoint_error, g.converged);
    let fv = solve::first_variation_residual(&h, &g.trajectory, 8, 0)?;
    println!("first variation residual {fv:.2e}");
    Ok(())
}
