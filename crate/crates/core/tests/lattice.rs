use avm_core::lattice::*;
use avm_core::numerics::{flow_map, integrate, FieldFault, IntegratorSpec};
use proptest::prelude::*;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn standing_waves_diagonalize_the_chain() {
    for n in 1..=32 {
        let m = stiffness_matrix(n);
        for p in 1..=n {
            let phi = nnm_shape(p, n).unwrap();
            let w = nnm_frequency(p, n).unwrap();
            let mphi = &m * nalgebra::DVector::from_column_slice(&phi);
            for i in 0..n {
                assert!((mphi[i] - w * w * phi[i]).abs() <= 1e-12, "N={n} p={p}");
            }
            for q in 1..=n {
                let psi = nnm_shape(q, n).unwrap();
                let expect = if p == q { (n as f64 + 1.0) / 2.0 } else { 0.0 };
                assert!((dot(&phi, &psi) - expect).abs() <= 1e-12, "N={n} p={p} q={q}");
            }
        }
    }
}

#[test]
fn unforced_lattice_conserves_energy() {
    let cfg = LatticeConfig::free(5).unwrap();
    let tol = 1e-10;
    let mut y0 = LatticeState::zeros(5);
    y0.w = vec![0.05, -0.02, 0.08, 0.01, -0.04];
    y0.s = vec![0.001, 0.0, -0.002, 0.001, 0.0];
    y0.dw = vec![0.01, 0.0, -0.01, 0.02, 0.0];
    let e0 = lattice_energy(&y0).unwrap();
    let traj = integrate(exact_lattice_field(&cfg), &y0.to_vec(), (0.0, 200.0), &IntegratorSpec::rk45(tol)).unwrap();
    let drift = traj
        .nodes()
        .map(|(_, y)| (lattice_energy(&LatticeState::from_slice(5, y).unwrap()).unwrap() - e0).abs())
        .fold(0.0, f64::max);
    assert!(drift <= 10.0 * tol, "{drift:e}");
}

#[test]
fn unforced_reduced_model_conserves_its_energy() {
    let cfg = LatticeConfig::free(4).unwrap();
    let tol = 1e-10;
    let y0 = [0.3, -0.1, 0.2, 0.05, 0.0, 0.02, 0.0, -0.01];
    let e0 = reduced_energy(&y0[..4], &y0[4..]);
    let traj = integrate(reduced_field(&cfg), &y0, (0.0, 300.0), &IntegratorSpec::rk45(tol)).unwrap();
    let drift = traj.nodes().map(|(_, y)| (reduced_energy(&y[..4], &y[4..]) - e0).abs()).fold(0.0, f64::max);
    assert!(drift <= 10.0 * tol, "{drift:e}");
}

#[test]
fn two_mode_truncation_conserves_energy_without_forcing() {
    let params = TwoModeParams {
        omega_k: 0.6,
        omega_p: 1.1,
        eps: 0.0,
        mu1: 0.6,
        mu2: 0.8,
    };
    let y0 = [0.4, 0.0, -0.3, 0.1];
    let e0 = two_mode_energy(y0, &params);
    let traj = integrate(
        |t, y: &[f64], dy: &mut [f64]| {
            dy.copy_from_slice(&two_mode_rhs([y[0], y[1], y[2], y[3]], t, &params));
            Ok::<(), FieldFault>(())
        },
        &y0,
        (0.0, 200.0),
        &IntegratorSpec::rk45(1e-10),
    )
    .unwrap();
    let drift = traj
        .nodes()
        .map(|(_, y)| (two_mode_energy([y[0], y[1], y[2], y[3]], &params) - e0).abs())
        .fold(0.0, f64::max);
    assert!(drift <= 1e-9, "{drift:e}");
}

fn modal_trajectory(convention: ModalConvention, n: usize, start: &ModalState, forcing: &[(usize, f64)], span: f64) -> Vec<f64> {
    let start = start.convert(convention);
    let mut y0 = start.amp.clone();
    y0.extend(&start.vel);
    let end = flow_map(
        |t, y: &[f64], dy: &mut [f64]| {
            let s = ModalState {
                amp: y[..n].to_vec(),
                vel: y[n..].to_vec(),
                convention,
            };
            let d = modal_rhs(&s, t, forcing, n).map_err(|e| FieldFault(e.to_string()))?;
            dy[..n].copy_from_slice(&d.amp);
            dy[n..].copy_from_slice(&d.vel);
            Ok(())
        },
        &y0,
        (0.0, span),
        &IntegratorSpec::rk45(1e-12),
    )
    .unwrap();
    ModalState {
        amp: end[..n].to_vec(),
        vel: end[n..].to_vec(),
        convention,
    }
    .to_physical()
}

#[test]
fn modal_equations_reproduce_the_reduced_model() {
    let n = 4;
    let forcing = [(2, 0.01)];
    let cfg = LatticeConfig::new(n, 0.0, vec![ForcingTerm::resonant(2, 0.01)]).unwrap();
    let w0 = vec![0.2, 0.1, -0.05, 0.12];
    let dw0 = vec![0.0, 0.01, 0.0, -0.02];
    let start = ModalState::from_physical(&w0, &dw0, ModalConvention::C);
    let span = 5.0 * nnm_period(1, n, 0.2).unwrap();
    let mut y0 = w0.clone();
    y0.extend(&dw0);
    let direct = flow_map(reduced_field(&cfg), &y0, (0.0, span), &IntegratorSpec::rk45(1e-12)).unwrap();
    for convention in [ModalConvention::C, ModalConvention::A] {
        let w = modal_trajectory(convention, n, &start, &forcing, span);
        for i in 0..n {
            assert!((w[i] - direct[i]).abs() <= 1e-8, "{convention:?} {i}: {} vs {}", w[i], direct[i]);
        }
    }
}

#[test]
fn reduced_mismatch_shrinks_with_amplitude() {
    let cfg = LatticeConfig::free(4).unwrap();
    let spec = IntegratorSpec::rk45(1e-10);
    let run = |a: f64| {
        let horizon = 5.0 * nnm_period(1, 4, a).unwrap();
        compare_exact_vs_reduced(&cfg, 1, a, horizon, &spec).unwrap().sup_mismatch
    };
    let (big, small) = (run(0.05), run(0.025));
    assert!(big / small >= 1.5, "{big:e} / {small:e}");
}

proptest! {
    #[test]
    fn reduced_rhs_is_odd(w in prop::collection::vec(-2.0f64..2.0, 1..12)) {
        let neg: Vec<f64> = w.iter().map(|v| -v).collect();
        let a = reduced_rhs(&w);
        let b = reduced_rhs(&neg);
        prop_assert!(a.iter().zip(&b).all(|(x, y)| *x == -*y));
    }

    #[test]
    fn sum_and_matrix_forms_agree(w in prop::collection::vec(-2.0f64..2.0, 1..12)) {
        let a = reduced_rhs(&w);
        let b = reduced_rhs_matrix(&w);
        let scale = 1.0 + a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-13 * scale));
    }

    #[test]
    fn modal_projection_round_trips(w in prop::collection::vec(-1.0f64..1.0, 1..16)) {
        let n = w.len();
        let dw = vec![0.0; n];
        for c in [ModalConvention::C, ModalConvention::A] {
            let back = ModalState::from_physical(&w, &dw, c).to_physical();
            prop_assert!(back.iter().zip(&w).all(|(x, y)| (x - y).abs() <= 1e-12));
        }
    }
}
