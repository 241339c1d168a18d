//! Integrates a normal extremal of the unicycle under the curvature weighted
//! metric and checks the conserved quantity and the no-slip constraint.

use subfins::dynamics::{self, ExtremalState, FlowOptions};
use subfins::metric::SubFinslerMetric;
use subfins::systems;

fn main() -> subfins::Result<()> {
    let sys = systems::unicycle().with_metric(SubFinslerMetric::curvature_weighted(0.5))?;
    let state = ExtremalState::new(&[0.3, 0.0, 0.0, 0.0], &[0.5, 0.4, 0.1, 0.6]);
    let traj = dynamics::flow(&sys, &state, 5.0, &FlowOptions::default())?;
    let x = traj.final_x();
    println!("{} samples, x(5) = {x:?}", traj.len());
    println!("eta drift {:.2e}", traj.eta_drift());
    println!("horizontality residual {:.2e}", traj.max_horizontality_residual());
    let mut slip: f64 = 0.0;
    for i in 0..traj.len() {
        let v = traj.velocity(&sys, i)?;
        let phi = traj.xs[i][0];
        slip = slip.max((phi.sin() * v[1] - phi.cos() * v[2]).abs());
    }
    println!("max no-slip violation {slip:.2e}");
    Ok(())
}
