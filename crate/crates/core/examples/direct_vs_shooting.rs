//! Compares the shooting length with a direct transcription of the energy.

use subfins::solve::{self, ShootingOptions};
use subfins::systems;

fn main() -> subfins::Result<()> {
    let h = systems::heisenberg();
    let (a, b) = ([0.0; 3], [0.6, -0.3, 0.2]);
    let (d, _) = solve::distance(&h, &a, &b, &ShootingOptions::default())?;
    let direct = solve::direct_solve(&h, &a, &b, 100)?;
    let d_direct = direct.cost;
    println!("shooting {d:.6}  direct {d_direct:.6}  relative gap {:.2e}", (d - d_direct).abs() / d);
    println!("direct endpoint error {:.2e} after {} iterations", direct.endpoint_error, direct.iterations);
    Ok(())
}
