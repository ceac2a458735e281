//! CCE-1 bath coherence against brute-force propagation of the full
//! electron ⊗ nuclei density matrix.

mod common;

use common::{bath, brute_force_cpmg};
use proptest::prelude::*;
use spindecay::decoherence::cpmg_coherence_quantum;

#[test]
fn single_nucleus_matches_four_dimensional_propagation() {
    let b = bath(&[(14.3, 1.0, 0.5)]);
    let taus = [0.01, 0.0349650, 0.05, 0.1049, 0.3, 1.7];
    for n in [1, 2, 3, 16, 33] {
        let tr = cpmg_coherence_quantum(&b, n, &taus).unwrap();
        for (tau, l) in taus.iter().zip(&tr.coherence) {
            let reference = brute_force_cpmg(&b, n, *tau);
            assert!((l - reference).abs() < 1e-10, "n={n} τ={tau}: {l} vs {reference}");
        }
    }
}

#[test]
fn two_nuclei_match_eight_dimensional_propagation() {
    let b = bath(&[(14.3, 1.0, 0.5), (14.3, -0.4, 0.8)]);
    let taus = [0.02, 0.0349650, 0.11, 0.6];
    for n in [1, 4, 16, 64] {
        let tr = cpmg_coherence_quantum(&b, n, &taus).unwrap();
        for (tau, l) in taus.iter().zip(&tr.coherence) {
            let reference = brute_force_cpmg(&b, n, *tau);
            assert!((l - reference).abs() < 1e-10, "n={n} τ={tau}: {l} vs {reference}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_single_nucleus_agrees_with_oracle(
        larmor in 0.5f64..30.0,
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        n in 1usize..24,
        tau in 0.005f64..2.0,
    ) {
        let bath = bath(&[(larmor, a, b)]);
        let l = cpmg_coherence_quantum(&bath, n, &[tau]).unwrap().coherence[0];
        let reference = brute_force_cpmg(&bath, n, tau);
        prop_assert!((l - reference).abs() < 1e-10);
        prop_assert!(l.abs() <= 1.0);
    }
}
