//! Newton continuation of tori: gauge, frequency, robustness, pull-back.

mod common;

use kam_core::families::{self, direct_case};
use kam_core::fourier_taylor::RescaleDirection;
use kam_core::freq_arith::mu_nu;
use kam_core::normal_form::{one_step_normal_form, NormalFormResult};
use kam_core::torus_solver::{
    pull_back, pull_back_with, solve_torus, solve_torus_with, verify_by_integration_with,
    PulledBackTorus, TargetFrequency, TorusEmbedding, TorusOptions,
};
use kam_core::KamError;

fn direct(mu: f64) -> TorusEmbedding {
    let (h, t) = direct_case(mu).unwrap();
    solve_torus(&h, &t, 1e-10, 12).unwrap()
}

fn nf(eps: f64) -> (kam_core::fourier_taylor::HamiltonianSpec, NormalFormResult) {
    let phys = families::single_harmonic(0.5).unwrap();
    let h2 = phys.rescale(RescaleDirection::Scale1, eps).unwrap();
    let p = mu_nu(&h2.omega, eps, 1.0, None).unwrap();
    (phys, one_step_normal_form(&h2, &p, 8).unwrap())
}

fn nf_torus(nf: &NormalFormResult, i0: &[f64]) -> TorusEmbedding {
    let mut t = TargetFrequency::from_normal_form(nf, i0).unwrap();
    t.certify(0.01, 1.5, 64).unwrap();
    solve_torus_with(&nf.h_tilde, &t, &TorusOptions::default(), None).unwrap()
}

#[test]
fn gauge_is_unique_from_perturbed_guesses() {
    let (h, t) = direct_case(1e-4).unwrap();
    let base = solve_torus(&h, &t, 1e-10, 12).unwrap();
    let g = base.grid();
    for (amp, shift) in [(1e-3, 0.0), (-2e-3, 1e-3), (5e-4, -2e-3)] {
        let mut guess = base.clone();
        for p in 0..g.total {
            let x = g.point(p);
            let s = (2.0 * std::f64::consts::PI * (x[0] + 2.0 * x[1])).sin();
            guess.u[0][p] += amp * s;
            guess.u[1][p] += amp; // breaks the zero-mean gauge
            guess.v[1][p] -= amp * s;
        }
        guess.i0[0] += shift;
        let k = solve_torus_with(&h, &t, &TorusOptions::default(), Some(&guess)).unwrap();
        for j in 0..2 {
            assert!((k.i0[j] - base.i0[j]).abs() < 1e-9);
            assert!(common::sup(k.u[j].iter().zip(&base.u[j]).map(|(a, b)| a - b)) < 1e-9);
            assert!(common::sup(k.v[j].iter().zip(&base.v[j]).map(|(a, b)| a - b)) < 1e-9);
        }
    }
}

#[test]
fn orbits_rotate_with_the_target_frequency() {
    let (h, t) = direct_case(1e-4).unwrap();
    let k = solve_torus(&h, &t, 1e-10, 12).unwrap();
    // Target is 3 omega by construction of the starting action.
    let w = families::golden().to_f64();
    for j in 0..2 {
        assert!((k.omega_target()[j] - 3.0 * w[j]).abs() < 1e-12);
    }
    // With the right frequency the phase error is pure integrator error and
    // drops fourfold when the step is halved.
    let coarse = verify_by_integration_with(&h, &k, 20.0, 1.0 / 300.0, 4).unwrap();
    let fine = verify_by_integration_with(&h, &k, 20.0, 1.0 / 600.0, 4).unwrap();
    let ratio = coarse.max_phase_error / fine.max_phase_error;
    assert!((3.5..4.5).contains(&ratio), "{coarse:?} {fine:?}");
    assert!(fine.max_deviation < 1e-8, "{fine:?}");
}

#[test]
fn smaller_perturbation_never_needs_more_iterations() {
    let mut prev = usize::MAX;
    for mu in [4e-4, 2e-4, 1e-4, 5e-5] {
        let it = direct(mu).diag.iterations();
        assert!(it <= prev, "mu = {mu:e}: {it} > {prev}");
        prev = it;
    }
}

#[test]
fn residuals_decay_quadratically_across_a_mu_bracket() {
    // e1 ~ C e0^2: the log-log slope of e1 against e0 across mu is 2.
    let pts: Vec<(f64, f64)> = [1e-4, 3e-4, 1e-3]
        .iter()
        .map(|&m| {
            let d = direct(m).diag.defects;
            (d[0], d[1])
        })
        .collect();
    let slope = (pts[2].1.ln() - pts[0].1.ln()) / (pts[2].0.ln() - pts[0].0.ln());
    assert!((slope - 2.0).abs() < 0.2, "slope {slope}");
}

#[test]
fn starting_guess_drifts_away_under_the_flow() {
    let (h, t) = direct_case(1e-3).unwrap();
    let k = solve_torus(&h, &t, 1e-10, 12).unwrap();
    let mut flat = k.clone();
    for j in 0..2 {
        flat.u[j].iter_mut().for_each(|x| *x = 0.0);
        flat.v[j].iter_mut().for_each(|x| *x = 0.0);
        flat.i0[j] = t.i0[j];
    }
    let step = 1.0 / 300.0;
    let good = verify_by_integration_with(&h, &k, 10.0, step, 4)
        .unwrap()
        .max_deviation;
    let short = verify_by_integration_with(&h, &flat, 1.0, step, 4)
        .unwrap()
        .max_deviation;
    let long = verify_by_integration_with(&h, &flat, 10.0, step, 4)
        .unwrap()
        .max_deviation;
    assert!(short > 1e3 * good, "{short:e} vs {good:e}");
    assert!(long > short, "{long:e} <= {short:e}");
}

#[test]
fn identity_normal_form_only_rescales() {
    // b = 0: A is constant, chi = 0 and Phi = Id.
    let eps = 1e-3;
    let phys = families::single_harmonic(0.0).unwrap();
    let h2 = phys.rescale(RescaleDirection::Scale1, eps).unwrap();
    let p = mu_nu(&h2.omega, eps, 1.0, None).unwrap();
    let r = one_step_normal_form(&h2, &p, 8).unwrap();
    let i0 = [0.3, -0.2];
    let k = nf_torus(&r, &i0);
    let pb = pull_back(&k, &r, eps).unwrap();
    for j in 0..2 {
        assert!((pb.i0[j] - eps * k.i0[j]).abs() < 1e-18);
        assert!(common::sup(pb.u[j].iter().zip(&k.u[j]).map(|(a, b)| a - b)) < 1e-15);
        assert!((pb.omega[j] - eps * k.omega_target()[j]).abs() < 1e-15);
    }
}

#[test]
fn pulled_back_torus_is_invariant_for_the_original_hamiltonian() {
    let eps = 1e-2;
    let (phys, r) = nf(eps);
    let k = nf_torus(&r, &[0.2, -0.3]);
    let pb = pull_back(&k, &r, eps).unwrap();
    let d = pb.defect_in(&phys).unwrap();
    assert!(
        d <= 10.0 * pb.scaled_defect + 1e-13,
        "{d:e} vs {:e}",
        pb.scaled_defect
    );
    let v = pb.verify(&phys, 50.0, 5e-3, 4).unwrap();
    assert!(v.max_deviation < 1e-9, "{v:?}");
}

/// The same construction with `Phi^-1` in place of `Phi`.
fn pulled_back_with_inverse(k: &TorusEmbedding, r: &NormalFormResult, eps: f64) -> PulledBackTorus {
    let mut pb = pull_back(k, r, eps).unwrap();
    let g = k.grid();
    let mut i0 = [0.0; 2];
    for p in 0..g.total {
        let phi = g.point(p);
        let theta: Vec<f64> = (0..2).map(|j| phi[j] + k.u[j][p]).collect();
        let action: Vec<f64> = (0..2).map(|j| k.i0[j] + k.v[j][p]).collect();
        let (t, a) = r.phi.apply(&theta, &action, true);
        for j in 0..2 {
            pb.u[j][p] = t[j] - phi[j];
            pb.v[j][p] = eps * a[j];
            i0[j] += eps * a[j] / g.total as f64;
        }
    }
    for j in 0..2 {
        pb.v[j].iter_mut().for_each(|x| *x -= i0[j]);
    }
    pb.i0 = i0.to_vec();
    pb
}

#[test]
fn pull_back_direction_is_phi_not_its_inverse() {
    let eps = 1e-2;
    let (phys, r) = nf(eps);
    let k = nf_torus(&r, &[0.2, -0.3]);
    let right = pull_back(&k, &r, eps).unwrap().defect_in(&phys).unwrap();
    let wrong = pulled_back_with_inverse(&k, &r, eps)
        .defect_in(&phys)
        .unwrap();
    assert!(right < 1e-13, "{right:e}");
    assert!(wrong > 1e3 * right, "Phi: {right:e}, Phi^-1: {wrong:e}");
}

#[test]
fn tori_near_the_boundary_are_refused() {
    let eps = 1e-3;
    let (_, r) = nf(eps);
    let k = nf_torus(&r, &[0.97, 0.0]);
    match pull_back_with(&k, &r, eps, 0.25) {
        Err(KamError::OutsideImage { margin, required }) => assert!(margin < required),
        other => panic!("expected OutsideImage, got {other:?}"),
    }
}

#[test]
fn resonant_target_breaks_down() {
    let (h, _) = direct_case(1e-4).unwrap();
    // Action whose frequency is proportional to (1, 1/2).
    let rhs = nalgebra::DVector::from_vec(vec![
        0.5 * (2.0 - 1.0),
        0.5 * (1.0 - families::golden().to_f64()[1]),
    ]);
    let i0: Vec<f64> = families::a0()
        .lu()
        .solve(&rhs)
        .unwrap()
        .iter()
        .copied()
        .collect();
    let mut t = TargetFrequency::from_spec(&h, &i0).unwrap();
    assert!(matches!(
        solve_torus(&h, &t, 1e-10, 12),
        Err(KamError::InvalidParameter(_))
    ));
    let cert = t.certify(0.1, 1.0, 64).unwrap();
    assert!(!cert.passed);
    let k = cert.witness.clone().unwrap();
    assert!(k == [1, -2] || k == [-1, 2], "{k:?}");
    assert!(matches!(
        solve_torus(&h, &t, 1e-10, 12),
        Err(KamError::SmallDivisorBreakdown { .. })
    ));
}
