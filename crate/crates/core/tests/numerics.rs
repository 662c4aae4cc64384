use std::f64::consts::{FRAC_PI_2, PI};

use avm_core::melnikov::{melnikov_bar, melnikov_tilde, MelnikovError};
use avm_core::numerics::*;
use avm_core::slowflow::{exact_solution_tau2, unperturbed_field_tau2, SlowFlowParams};
use proptest::prelude::*;

fn exp_error(tol: f64) -> f64 {
    let y = flow_map(
        |_t, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[0];
            Ok::<(), FieldFault>(())
        },
        &[1.0],
        (0.0, 1.0),
        &IntegratorSpec::rk45(tol),
    )
    .unwrap();
    (y[0] - std::f64::consts::E).abs()
}

#[test]
fn tightening_tolerance_never_hurts_the_exponential() {
    let tols: Vec<f64> = (0..=9).map(|i| 1e-6 * 0.5f64.powi(i)).chain([1e-8, 1e-9]).collect();
    let mut tols = tols;
    tols.sort_by(|a, b| b.total_cmp(a));
    let errs: Vec<f64> = tols.iter().map(|&t| exp_error(t)).collect();
    for (w, t) in errs.windows(2).zip(tols.windows(2)) {
        assert!(w[1] <= w[0] + 1e-15, "tol {:e} -> {:e}: {:e} -> {:e}", t[0], t[1], w[0], w[1]);
    }
    assert!(errs[0] / errs.last().unwrap() > 100.0);
}

#[test]
fn period_of_the_unforced_core_from_the_closed_form() {
    let theta0: f64 = 0.35;
    let level = (2.0 * theta0).sin();
    let span = PI / level;
    let y = flow_map(unperturbed_field_tau2, &[theta0, FRAC_PI_2], (0.0, span), &IntegratorSpec::rk45(1e-12)).unwrap();
    assert!((y[0] - theta0).abs() < 1e-8 && (y[1] - FRAC_PI_2).abs() < 1e-8);
    let (th, de) = exact_solution_tau2(level, span).unwrap();
    assert!((th - theta0).abs() < 1e-12 && (de - FRAC_PI_2).abs() < 1e-12);
}

#[test]
fn identity_system_root() {
    let r = find_root_nd(|x: &[f64]| Ok::<_, NumericsError>(x.to_vec()), &[0.3, -0.2], &RootSpec::default()).unwrap();
    assert!(r.residual_norm() <= 1e-10);
    assert!(r.x.iter().all(|v| v.abs() <= 1e-10));
    let id = nalgebra::DMatrix::<f64>::identity(2, 2);
    assert!((r.jacobian - id).abs().max() < 1e-10);
}

#[test]
fn melnikov_pair_with_fixed_weights_converges_to_sin_root() {
    let params = SlowFlowParams::unforced(1.0, 1).unwrap();
    let q = QuadratureSpec::simpson(1e-12);
    let rho0 = params.rho_for_level(1e-3);
    let spec = RootSpec {
        linear_solve: LinearSolve::MinNorm { rcond: 1e-8 },
        ..RootSpec::default()
    };
    // (mu1, mu2) = (0, 1) picks the second column of [Mbar_ij].
    let f = |x: &[f64]| -> std::result::Result<Vec<f64>, MelnikovError> {
        let m = melnikov_bar(x[0], x[1], &params, &q)?;
        Ok(vec![m.m12, m.m22])
    };
    let r = find_root_nd(f, &[0.05, rho0], &spec).unwrap();
    assert!(r.residual_norm() <= 1e-10);
    assert!(r.x[0].sin().abs() < 1e-6, "{:?}", r.x);
}

#[test]
fn bracketed_root_of_mtilde_near_half_pi() {
    let params = SlowFlowParams::unforced(1.0, 2).unwrap();
    let rho = params.rho_for_level(1e-3);
    let q = QuadratureSpec::simpson(1e-12);
    let spec = RootSpec {
        residual_tol: 1e-12,
        ..RootSpec::default()
    };
    let r = find_root_1d(|b| melnikov_tilde(b, rho, &params, &q).unwrap(), (1.2, 1.9), &spec).unwrap();
    assert!((r - FRAC_PI_2).abs() < 1e-6, "{r}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn odd_integrands_vanish_on_symmetric_intervals(a in 0.1f64..5.0, c1 in -3.0f64..3.0, c3 in -3.0f64..3.0, w in 0.1f64..6.0) {
        let f = |x: f64| c1 * x + c3 * x.powi(3) + (w * x).sin() * (x * x).cos();
        for spec in [QuadratureSpec::default(), QuadratureSpec::gauss_legendre_for_harmonic(2)] {
            let v = quad(f, -a, a, &spec).unwrap();
            prop_assert!(v.abs() <= spec.abs_tol, "{v:e}");
        }
    }

    #[test]
    fn newton_output_satisfies_its_tolerance(a in 0.5f64..3.0, b in -2.0f64..2.0, x0 in -1.0f64..1.0, y0 in -1.0f64..1.0) {
        let f = |x: &[f64]| Ok::<_, NumericsError>(vec![a * x[0] + x[1].powi(3) - b, x[1] - 0.5 * x[0].sin()]);
        if let Ok(r) = find_root_nd(f, &[x0, y0], &RootSpec::default()) {
            let v = f(&r.x).unwrap();
            prop_assert!(v.iter().all(|e| e.abs() <= 1e-10));
        }
    }

    #[test]
    fn brent_finds_the_cubic_root(r in -5.0f64..5.0) {
        let x = find_root_1d(|x| (x - r) * (x * x + 1.0), (-6.0, 6.0), &RootSpec::default()).unwrap();
        prop_assert!(((x - r) * (x * x + 1.0)).abs() <= 1e-10);
    }
}
