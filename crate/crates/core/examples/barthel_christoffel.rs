//! For a Riemannian metric the Barthel endomorphism `N(v)` reduces to the
//! Christoffel contraction `Γ(v, ·)`.

use subfins::dynamics;
use subfins::metric::SubFinslerMetric;
use subfins::systems::System;

fn main() -> subfins::Result<()> {
    // g = diag(1, 1 + x1²) on the plane
    let base = System::new("warped", &["x1", "x2"], &[false; 2], &[vec!["1", "0"], vec!["0", "1"]])?;
    let q = SubFinslerMetric::quadratic(&[vec!["1", "0"], vec!["0", "1 + x1^2"]], &base.coords)?;
    let sys = base.with_metric(q)?;
    let x = [0.7, -0.3];
    let v = [0.4, 1.1];
    let b = dynamics::barthel(&sys, &x, &v)?;
    let nv: Vec<f64> = (0..2).map(|i| b.n[i][0] * v[0] + b.n[i][1] * v[1]).collect();
    let w = 1.0 + x[0] * x[0];
    // Γ¹₂₂ = −x1, Γ²₁₂ = x1 / (1 + x1²)
    let gamma = [-x[0] * v[1] * v[1], 2.0 * x[0] / w * v[0] * v[1]];
    println!("N v          = {nv:?}");
    println!("Gamma(v, v)  = {gamma:?}");
    println!("spray G      = {:?}", b.g);
    Ok(())
}
