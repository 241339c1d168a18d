//! Lie brackets and the bracket generating step of the catalog systems.

use subfins::geometry;
use subfins::systems;

fn main() -> subfins::Result<()> {
    for name in ["heisenberg", "martinet", "planar", "unicycle"] {
        let sys = systems::make_system(name)?;
        let x = vec![0.0; sys.n()];
        let ranks = geometry::bracket_ranks(&sys, &x, 4)?;
        let step = geometry::bracket_generating_step(&sys, &x, 4);
        println!("{name:<11} ranks {ranks:?} step {step:?}");
    }
    let m = systems::martinet();
    println!("martinet [X1,X2] at x=1: {:?}", geometry::lie_bracket(&m, 0, 1, &[1.0, 0.0, 0.0])?);
    println!("martinet ranks at x=1: {:?}", geometry::bracket_ranks(&m, &[1.0, 0.0, 0.0], 3)?);
    Ok(())
}
