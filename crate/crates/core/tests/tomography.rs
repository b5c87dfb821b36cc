use fockforge_core::detection::{DetectionTree, DetectorModel};
use fockforge_core::fock::{trace_distance, Basis, DensityMatrix, FockVector};
use fockforge_core::polarization::su2_from_angles;
use fockforge_core::tomography::*;
use nalgebra::DMatrix;
use num_complex::Complex64;

fn fact(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// |Φ⟩ for 2n photons written out term by term.
fn phi_state(n: usize) -> FockVector {
    let terms = (0..=n).map(|k| {
        let amp = fact(n) / (fact(k) * fact(n - k)) * (fact(2 * k) * fact(2 * (n - k))).sqrt()
            / (fact(n) * 2f64.powi(n as i32));
        (2 * k, 2 * (n - k), Complex64::new(amp, 0.0))
    });
    FockVector::from_terms(2 * n, terms).unwrap()
}

fn nominal(rho: &DensityMatrix, model: &MeasurementModel, scale: f64) -> Vec<CountRecord> {
    let plan = default_settings(model).unwrap();
    expected_records(rho, &plan.settings, model, scale, 1.0, |_, s| su2_from_angles(s.setting)).unwrap()
}

fn random_mixed(d: usize, seed: u64) -> DensityMatrix {
    // deterministic full-rank state from a fixed pseudo-random factor
    let mut x = seed as f64 * 0.6180339887;
    let mut next = || {
        x = (x * 9301.0 + 49297.0) % 233280.0;
        x / 233280.0 - 0.5
    };
    let a = DMatrix::from_fn(d, d, |_, _| Complex64::new(next(), next()));
    let m = a.adjoint() * &a + DMatrix::identity(d, d) * Complex64::new(0.05, 0.0);
    let tr = m.trace();
    DensityMatrix::new(Basis::Sector { photons: d - 1 }, m / tr).unwrap()
}

#[test]
fn target_state_is_normalized() {
    for n in 1..=3 {
        assert!((phi_state(n).norm_sqr() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn ideal_two_photon_fidelity() {
    let model = MeasurementModel::number_resolving(2);
    let target = phi_state(1);
    let rho = DensityMatrix::pure_in_sector(&target, 2).unwrap();
    let recs = poisson_records(&nominal(&rho, &model, 1e5), 11);
    let res = mle_reconstruct(&recs, &model, &MleOptions::default()).unwrap();
    assert!(res.converged());
    assert!(fidelity_to(&res.rho, &target).unwrap() >= 0.99);
}

#[test]
fn ideal_four_photon_fidelity_with_threshold_tree() {
    let model = MeasurementModel {
        photons: 4,
        tree: DetectionTree::new(4, 4).unwrap(),
        detector: DetectorModel::ideal(),
    };
    let target = phi_state(2);
    let rho = DensityMatrix::pure_in_sector(&target, 4).unwrap();
    let recs = poisson_records(&nominal(&rho, &model, 1e5), 5);
    let res = mle_reconstruct(&recs, &model, &MleOptions::default()).unwrap();
    assert!(res.converged());
    assert!(fidelity_to(&res.rho, &target).unwrap() >= 0.99);
}

#[test]
fn maximally_mixed_is_recovered() {
    for n in [2, 4] {
        let model = MeasurementModel::number_resolving(n);
        let rho = DensityMatrix::maximally_mixed(Basis::Sector { photons: n });
        let recs = poisson_records(&nominal(&rho, &model, 1e5), 3);
        let res = mle_reconstruct(&recs, &model, &MleOptions::default()).unwrap();
        assert!(trace_distance(res.rho.entries(), rho.entries()) < 0.05);
    }
}

#[test]
fn linear_inversion_and_mle_agree_on_exact_data() {
    for n in [2, 4] {
        let model = MeasurementModel::number_resolving(n);
        let rho = random_mixed(n + 1, n as u64 + 1);
        let recs = nominal(&rho, &model, 1e4);
        let li = linear_inversion(&recs, &model).unwrap();
        assert!(trace_distance(&li, rho.entries()) < 1e-9);
        let res = mle_reconstruct(&recs, &model, &MleOptions::default()).unwrap();
        assert!(res.converged(), "n={n}: {:?} after {}, eig {:?}", res.termination, res.iterations, rho.eigenvalues());
        let d = trace_distance(&li, res.rho.entries());
        assert!(d < 1e-6, "n={n}: trace distance {d}");
    }
}

#[test]
fn likelihood_never_decreases() {
    let model = MeasurementModel::number_resolving(4);
    let rho = DensityMatrix::pure_in_sector(&phi_state(2), 4).unwrap();
    let recs = poisson_records(&nominal(&rho, &model, 2e3), 9);
    let opts = MleOptions { keep_history: true, ..MleOptions::default() };
    let res = mle_reconstruct(&recs, &model, &opts).unwrap();
    assert_eq!(res.history.len(), res.iterations + 1);
    for w in res.history.windows(2) {
        assert!(w[1] >= w[0]);
    }
}

#[test]
fn global_phase_does_not_change_the_estimate() {
    let model = MeasurementModel::number_resolving(2);
    let target = phi_state(1);
    let shifted = target.scaled(Complex64::from_polar(1.0, 1.234));
    let a = nominal(&DensityMatrix::pure_in_sector(&target, 2).unwrap(), &model, 1e4);
    let b = nominal(&DensityMatrix::pure_in_sector(&shifted, 2).unwrap(), &model, 1e4);
    for (ra, rb) in a.iter().zip(&b) {
        for ((_, x), (_, y)) in ra.counts.iter().zip(&rb.counts) {
            assert!((x - y).abs() < 1e-8);
        }
    }
    let ra = mle_reconstruct(&poisson_records(&a, 1), &model, &MleOptions::default()).unwrap();
    let rb = mle_reconstruct(&poisson_records(&b, 1), &model, &MleOptions::default()).unwrap();
    assert!(trace_distance(ra.rho.entries(), rb.rho.entries()) < 1e-9);
}

#[test]
fn bootstrap_is_reproducible() {
    let model = MeasurementModel::number_resolving(2);
    let target = phi_state(1);
    let rho = DensityMatrix::pure_in_sector(&target, 2).unwrap();
    let recs = poisson_records(&nominal(&rho, &model, 500.0), 2);
    let (res, a) = fidelity_with_errorbars(&recs, &model, &target, 20, 77, &MleOptions::default()).unwrap();
    let (_, b) = fidelity_with_errorbars(&recs, &model, &target, 20, 77, &MleOptions::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.failures, 0);
    assert!(a.std > 0.0 && a.std < 0.05);
    assert_eq!(res.fidelity, Some(a.point));
    let json: serde_json::Value = serde_json::from_str(&res.to_json().unwrap()).unwrap();
    assert!(json["rho"]["re"].is_array());
    assert_eq!(json["converged"], serde_json::Value::Bool(true));
}

#[test]
fn fock_state_target() {
    let model = MeasurementModel::number_resolving(4);
    let target = FockVector::number_state(2, 2, 4).unwrap();
    let rho = DensityMatrix::pure_in_sector(&target, 4).unwrap();
    let recs = poisson_records(&nominal(&rho, &model, 1e5), 8);
    let res = fock_state_tomography(&recs, &model, &MleOptions::default()).unwrap();
    assert!(fidelity_to(&res.rho, &target).unwrap() >= 0.99);
}
