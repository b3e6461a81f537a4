use approx::assert_relative_eq;
use exoed_core::model::{builtin_bod, builtin_second_order, finite_difference_jacobian, Model};
use exoed_core::stats::{chi2_cdf, chi2_quantile, f_cdf, f_quantile};
use proptest::prelude::*;

fn check_jacobian(model: &dyn Model, p: &[f64], u: &[f64]) {
    let n = model.num_params() * model.num_outputs();
    let mut analytic = vec![0.0; n];
    let mut fd = vec![0.0; n];
    assert!(model.analytic_jacobian(p, u, &mut analytic));
    finite_difference_jacobian(model, p, u, &mut fd);
    for (a, f) in analytic.iter().zip(&fd) {
        assert_relative_eq!(*a, *f, epsilon = 1e-7, max_relative = 1e-6);
    }
}

proptest! {
    #[test]
    fn bod_jacobian_matches_differences(p1 in 0.5f64..5.0, p2 in 0.05f64..2.0, u in 0.0f64..20.0) {
        check_jacobian(&builtin_bod(), &[p1, p2], &[u]);
    }

    #[test]
    fn second_order_jacobian_matches_differences(p1 in 0.1f64..2.0, p2 in 0.2f64..3.0, u in 0.0f64..10.0) {
        check_jacobian(&builtin_second_order(-4.0).unwrap(), &[p1, p2], &[u]);
    }

    #[test]
    fn chi2_quantile_inverts_cdf(alpha in 0.01f64..0.999, dof in 1u32..12) {
        let x = chi2_quantile(alpha, dof).unwrap();
        prop_assert!((chi2_cdf(x, dof) - alpha).abs() < 1e-9);
    }

    #[test]
    fn f_quantile_inverts_cdf(alpha in 0.01f64..0.999, d1 in 1u32..6, d2 in 1u32..30) {
        let x = f_quantile(alpha, d1, d2).unwrap();
        prop_assert!((f_cdf(x, d1, d2) - alpha).abs() < 1e-9);
    }
}

#[test]
fn two_dof_closed_forms() {
    for alpha in [0.5, 0.9, 0.9545, 0.99] {
        assert_relative_eq!(
            chi2_quantile(alpha, 2).unwrap(),
            -2.0 * f64::ln(1.0 - alpha),
            max_relative = 1e-9
        );
        assert_relative_eq!(
            f_quantile(alpha, 2, 2).unwrap(),
            alpha / (1.0 - alpha),
            max_relative = 1e-9
        );
    }
}

#[test]
fn out_of_range_requests_fail() {
    assert!(chi2_quantile(1.0, 2).is_err());
    assert!(chi2_quantile(-0.1, 2).is_err());
    assert!(chi2_quantile(0.9, 0).is_err());
    assert!(f_quantile(0.9, 2, 0).is_err());
}
