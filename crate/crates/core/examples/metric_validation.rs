//! Checks homogeneity, convexity and positivity of several fiber metrics and
//! evaluates the dual norm through the Legendre map.

use subfins::metric::{self, SubFinslerMetric};
use subfins::systems;

fn main() -> subfins::Result<()> {
    let h = systems::heisenberg();
    let quartic = SubFinslerMetric::custom("u1^2 + u2^2 + sqrt(u1^4 + u2^4)", &h.coords, 2, true)?;
    let uni = systems::unicycle();
    let cases = [
        h.clone(),
        h.clone().with_metric(quartic)?,
        uni.clone().with_metric(SubFinslerMetric::curvature_weighted(1.0))?,
    ];
    for sys in &cases {
        let r = metric::validate(sys, 2000, 7);
        println!(
            "{:<24} homogeneity {:.1e}  min eigenvalue {:.3}  passed {}",
            r.metric,
            r.max_homogeneity_violation,
            r.min_hessian_eigenvalue,
            r.passed()
        );
    }
    let sys = &cases[1];
    let x = [0.1, -0.2, 0.3];
    let u = [0.7, -0.4];
    let phat = metric::legendre(sys, &x, &u)?;
    println!("F(u) = {:.12}", sys.metric.norm(&x, &u)?);
    println!("F*(L(u)) = {:.12}", metric::dual_metric(sys, &x, &phat)?);
    Ok(())
}
