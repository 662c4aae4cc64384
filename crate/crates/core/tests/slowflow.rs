use std::f64::consts::{FRAC_PI_2, PI};

use avm_core::slowflow::*;
use proptest::prelude::*;

proptest! {
    #[test]
    fn first_integral_is_constant_along_the_field(theta in 0.01f64..1.56, delta in 0.01f64..3.13) {
        let (a, b) = unperturbed_rhs_tau2(theta, delta);
        let d = 2.0 * (2.0 * theta).cos() * delta.sin() * a + (2.0 * theta).sin() * delta.cos() * b;
        prop_assert!(d.abs() <= 1e-14);
    }

    #[test]
    fn closed_form_half_period_symmetry(level in 0.01f64..0.99, t in 0.0f64..50.0) {
        let half = 0.5 * period_tau2(level).unwrap();
        let (th, de) = exact_solution_tau2(level, t).unwrap();
        let (th_h, de_h) = exact_solution_tau2(level, t + half).unwrap();
        prop_assert!((th_h - (FRAC_PI_2 - th)).abs() <= 1e-12);
        prop_assert!((de_h - (PI - de)).abs() <= 1e-12);
        prop_assert!(th > 0.0 && th < FRAC_PI_2 && de > 0.0 && de < PI);
        prop_assert!((first_integral(th, de) - level).abs() <= 1e-12);
    }

    #[test]
    fn level_is_decreasing_in_rho(k in 1u32..6, p in 0.3f64..2.0, a in 1.0001f64..50.0, gap in 1.0001f64..2.0) {
        let params = SlowFlowParams::unforced(p, k).unwrap();
        let rho = a * params.threshold_rho();
        let (lo, hi) = (params.level_for_rho(rho), params.level_for_rho(gap * rho));
        prop_assert!(hi < lo && lo < 1.0 && hi > 0.0);
    }
}
