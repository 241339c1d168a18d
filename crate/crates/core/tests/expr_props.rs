mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use subfins::expr::{Scalar, ScalarExpr, Taylor};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn print_then_parse_is_identity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = common::random_expr(&mut rng, 5).source;
        let e = ScalarExpr::parse(&src, &common::VARS).unwrap();
        let printed = e.to_string();
        let again = ScalarExpr::parse(&printed, &common::VARS).unwrap();
        prop_assert_eq!(e.ast(), again.ast(), "{} printed as {}", src, printed);
    }

    #[test]
    fn dual_gradient_matches_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = common::smooth_sample(&mut rng);
        let f = |p: &[f64]| s.expr.eval_f64(p).ok();
        prop_assert!((f(&s.point).unwrap() - s.value).abs() <= 1e-13 * (1.0 + s.value.abs()));
        for i in 0..3 {
            let fd = common::richardson(&f, &s.point, i).unwrap();
            prop_assert!((fd - s.gradient[i]).abs() <= 1e-6 * (1.0 + s.gradient[i].abs()),
                "{}: d/d{} AD {} FD {}", s.expr, common::VARS[i], s.gradient[i], fd);
        }
    }

    #[test]
    fn taylor_agrees_with_dual(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = common::smooth_sample(&mut rng);
        let t = s.expr.eval(&Taylor::seed(&s.point, 2)).unwrap();
        prop_assert!((t.value() - s.value).abs() <= 1e-12 * (1.0 + s.value.abs()));
        for i in 0..3 {
            prop_assert!((t.derivative(&[i]) - s.gradient[i]).abs() <= 1e-10 * (1.0 + s.gradient[i].abs()));
        }
        // mixed partials are symmetric
        let h = t.hessian(3);
        for i in 0..3 {
            for j in 0..3 {
                prop_assert_eq!(h[i][j], h[j][i]);
            }
        }
    }
}

#[test]
fn unknown_names_are_rejected() {
    assert!(ScalarExpr::parse("x + w", &common::VARS).is_err());
    assert!(ScalarExpr::parse("foo(x)", &common::VARS).is_err());
}
