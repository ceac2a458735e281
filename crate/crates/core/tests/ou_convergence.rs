//! Monte-Carlo CPMG coherence under OU noise against the Gaussian closed form.

use spindecay::decoherence::{cpmg_coherence, gaussian_ou_coherence, NoiseModel, OuNoise};

const OU: OuNoise = OuNoise {
    sigma: 0.5,
    correlation_time: 2.0,
    seed: 0,
};
const N_PULSES: usize = 4;
const TAU: f64 = 0.75;

fn estimate(seed: u64, realizations: usize) -> (f64, f64) {
    let model = NoiseModel::Ou(OuNoise { seed, ..OU });
    let tr = cpmg_coherence(&model, N_PULSES, &[TAU], realizations, seed).unwrap();
    (tr.coherence[0], tr.stderr[0])
}

#[test]
fn closed_form_sits_mid_decay() {
    let c = gaussian_ou_coherence(&OU, N_PULSES, TAU);
    assert!(c > 0.2 && c < 0.8, "{c}");
}

#[test]
fn quadrupling_realizations_halves_standard_error() {
    let ratios: Vec<f64> = (0..8).map(|s| estimate(s, 500).1 / estimate(100 + s, 2000).1).collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!((mean - 2.0).abs() < 0.1, "{ratios:?}");
}

#[test]
fn estimates_pass_chi_square_against_closed_form() {
    // 20 independent seeds, one degree of freedom each; 5% critical value 31.41.
    let exact = gaussian_ou_coherence(&OU, N_PULSES, TAU);
    for realizations in [500, 2000] {
        let chi2: f64 = (0..20)
            .map(|s| {
                let (c, se) = estimate(1000 + s, realizations);
                ((c - exact) / se).powi(2)
            })
            .sum();
        assert!(chi2 < 31.41, "N={realizations}: chi2 {chi2}");
    }
}
