//! Evaluates the sub-Laplacian and scans for flatness.

use subfins::laplacian::{self, ScalarField};
use subfins::systems;

fn main() -> subfins::Result<()> {
    let h = systems::heisenberg();
    let f = ScalarField::parse("(x^2 + y^2)/2", &h)?;
    println!("Delta (x^2+y^2)/2 at 0 = {}", laplacian::sub_laplacian(&h, &f, &[0.0; 3])?);
    let z = ScalarField::parse("z", &h)?;
    println!("horizontal gradient of z at (1,2,0) = {:?}", laplacian::horizontal_gradient(&h, &z, &[1.0, 2.0, 0.0])?);
    let region = vec![(-1.0, 1.0); 3];
    for sys in [systems::euclidean(3), h] {
        for (label, fields) in [
            ("linear", laplacian::linear_test_fields(&sys)),
            ("default", laplacian::default_test_fields(&sys)),
        ] {
            let r = laplacian::flatness_scan(&sys, &fields, &region, 50, 11)?;
            println!("{:<12} {label:<8} max |Delta h| {:.3}  flat {}", sys.name, r.max_abs, r.flat);
        }
    }
    Ok(())
}
