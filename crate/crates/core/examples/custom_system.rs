//! Builds a system from a JSON configuration and flows it.

use subfins::dynamics::{self, ExtremalState, FlowOptions};
use subfins::io::Config;

const CONFIG: &str = r#"{
  "system": {
    "name": "engel_like",
    "dim": 3,
    "coordinates": ["x", "y", "z"],
    "frame": [["1", "0", "0"], ["0", "1", "x^2"]],
    "metric": {"type": "custom", "F2": "u1^2 + u2^2 + 0.1*u1^2*u2^2/(u1^2 + u2^2)"}
  }
}"#;

fn main() -> subfins::Result<()> {
    let cfg = Config::parse(CONFIG)?;
    let sys = cfg.system()?;
    println!("{} with n = {}, k = {}", sys.name, sys.n(), sys.k());
    let traj = dynamics::flow(&sys, &ExtremalState::new(&[0.0; 3], &[0.6, 0.8, 0.5]), 2.0, &FlowOptions::default())?;
    println!("x(2) = {:?}", traj.final_x());
    println!("eta drift {:.2e}", traj.eta_drift());
    Ok(())
}
