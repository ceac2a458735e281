//! Relaxation laws and dephasing engines for the decoupled electron spin.
//!
//! All bath engines treat π pulses as instantaneous: between pulses the
//! electron sits in a fixed eigenstate of the toggling frame, so a CPMG-n
//! train of total length `t = nτ` becomes `n + 1` segments of lengths
//! `τ/2, τ, …, τ, τ/2` with alternating sign.

mod classical;
mod quantum;

pub use classical::{
    cpmg_coherence_classical, gaussian_ou_coherence, ou_trajectory, ou_trajectory_realization, AcFieldBath,
    AmplitudeDistribution, ClassicalNoise, OuNoise,
};
pub use quantum::{cpmg_coherence_quantum, BathNucleus, QuantumBath};

use crate::error::{Error, Result};
use crate::trace::DecayTrace;

/// `1/T1 = c·T³` with T1 in ms and temperature in K.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RamanRelaxation {
    pub coefficient: f64,
}

impl RamanRelaxation {
    pub fn new(coefficient: f64) -> Result<Self> {
        if !(coefficient > 0.0 && coefficient.is_finite()) {
            return Err(Error::invalid(format!(
                "Raman coefficient must be > 0, got {coefficient}"
            )));
        }
        Ok(Self { coefficient })
    }

    /// Coefficient reproducing `t1_ms` at `temperature`.
    pub fn calibrate(temperature: f64, t1_ms: f64) -> Result<Self> {
        if !(temperature > 0.0 && t1_ms > 0.0) {
            return Err(Error::invalid("calibration needs temperature > 0 and T1 > 0"));
        }
        Self::new(1.0 / (t1_ms * temperature.powi(3)))
    }

    pub fn t1(&self, temperature: f64) -> Result<f64> {
        t1_raman(self.coefficient, temperature)
    }
}

/// T1 in ms.
pub fn t1_raman(coefficient: f64, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("temperature must be > 0 K, got {temperature}")));
    }
    Ok(1.0 / (coefficient * temperature.powi(3)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StretchedExponential {
    /// µs
    pub t_coh: f64,
    pub beta: f64,
}

impl StretchedExponential {
    pub fn new(t_coh: f64, beta: f64) -> Result<Self> {
        if !(t_coh > 0.0) || !(beta > 0.0 && beta <= 4.0) {
            return Err(Error::invalid(format!(
                "stretched exponential needs T_coh > 0 and beta in (0, 4], got {t_coh}, {beta}"
            )));
        }
        Ok(Self { t_coh, beta })
    }
}

pub fn stretched_envelope(params: &StretchedExponential, t: f64) -> f64 {
    (-(t.max(0.0) / params.t_coh).powf(params.beta)).exp()
}

/// Uniformly sampled detuning, MHz; sample `k` holds on `[k·dt, (k+1)·dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSeries {
    /// µs
    pub dt: f64,
    pub values: Vec<f64>,
}

impl NoiseSeries {
    /// Value held at sample `k`; the last sample holds past the end.
    pub fn sample(&self, k: usize) -> f64 {
        match self.values.len() {
            0 => 0.0,
            len => self.values[k.min(len - 1)],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    /// Static Gaussian detuning per shot with this std, MHz.
    QuasiStatic {
        sigma: f64,
    },
    Ou(OuNoise),
    AcField(AcFieldBath),
    Quantum(QuantumBath),
}

impl NoiseModel {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseModel::QuasiStatic { .. } => "quasi_static",
            NoiseModel::Ou(_) => "ou",
            NoiseModel::AcField(_) => "ac_field",
            NoiseModel::Quantum(_) => "quantum",
        }
    }
}

/// Coherence of a CPMG-n train at each `tau` for any noise model. Classical
/// models average `realizations` shots drawn from `seed`.
pub fn cpmg_coherence(
    model: &NoiseModel,
    n: usize,
    taus: &[f64],
    realizations: usize,
    seed: u64,
) -> Result<DecayTrace> {
    match model {
        NoiseModel::QuasiStatic { sigma } => {
            let noise = ClassicalNoise::QuasiStatic { sigma: *sigma };
            cpmg_coherence_classical(&noise, n, taus, realizations, seed)
        }
        NoiseModel::Ou(ou) => cpmg_coherence_classical(&ClassicalNoise::Ou(*ou), n, taus, realizations, seed),
        NoiseModel::AcField(ac) => cpmg_coherence_classical(&ClassicalNoise::AcField(*ac), n, taus, realizations, seed),
        NoiseModel::Quantum(bath) => cpmg_coherence_quantum(bath, n, taus),
    }
}

/// Multiply a trace by `exp(−t/(2·T1))`, T1 in µs.
pub fn apply_t1_factor(trace: &mut DecayTrace, t1: f64) {
    for (c, (&t, e)) in trace
        .coherence
        .iter_mut()
        .zip(trace.t.iter().zip(trace.stderr.iter_mut()))
    {
        let f = (-t / (2.0 * t1)).exp();
        *c *= f;
        *e *= f;
    }
}

/// Dip positions `(2k−1)·n/(2·f_l)` for k = 1..=k_max, µs.
pub fn dip_times(n: usize, larmor: f64, k_max: usize) -> Result<Vec<f64>> {
    if n == 0 || !(larmor > 0.0) || k_max == 0 {
        return Err(Error::invalid("dip_times needs n >= 1, f_l > 0, k_max >= 1"));
    }
    Ok((1..=k_max)
        .map(|k| (2 * k - 1) as f64 * n as f64 / (2.0 * larmor))
        .collect())
}

/// Toggling-frame segments `(length, sign)` of an ideal CPMG-n train.
pub fn toggling_segments(n: usize, tau: f64) -> Vec<(f64, f64)> {
    let mut segs = Vec::with_capacity(n + 1);
    let mut sign = 1.0;
    for j in 0..=n {
        let len = if j == 0 || j == n { 0.5 * tau } else { tau };
        segs.push((len, sign));
        sign = -sign;
    }
    segs
}

pub(crate) fn validate_taus(n: usize, taus: &[f64]) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("CPMG needs n >= 1"));
    }
    if let Some(t) = taus.iter().find(|t| !(**t >= 0.0) || !t.is_finite()) {
        return Err(Error::invalid(format!("tau {t} µs must be finite and >= 0")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raman_calibration_predicts_low_temperature_t1() {
        let r = RamanRelaxation::calibrate(71.0, 0.0304).unwrap();
        let t1 = r.t1(8.0).unwrap();
        assert!((t1 - 0.0304 * (71.0f64 / 8.0).powi(3)).abs() < 1e-9);
        assert!((t1 - 25.0).abs() / 25.0 < 0.2, "{t1}");
        let ratio = r.t1(10.0).unwrap() / r.t1(20.0).unwrap();
        assert!((ratio - 8.0).abs() < 1e-12);
        assert!(t1_raman(1.0, 0.0).is_err());
    }

    #[test]
    fn stretched_closed_form() {
        let p = StretchedExponential::new(50.0, 2.3).unwrap();
        assert_eq!(stretched_envelope(&p, 0.0), 1.0);
        assert!((stretched_envelope(&p, 50.0) - (-1.0f64).exp()).abs() < 1e-15);
        let e = StretchedExponential::new(10.0, 1.0).unwrap();
        assert!((stretched_envelope(&e, 20.0) - 0.1353352832366127).abs() < 1e-15);
        assert!(StretchedExponential::new(1.0, 4.5).is_err());
    }

    #[test]
    fn dip_formula() {
        let d = dip_times(16, 14.3, 3).unwrap();
        assert!((d[0] - 0.5594405594405595).abs() < 1e-12);
        assert!((d[1] - d[0] - 16.0 / 14.3).abs() < 1e-12);
        assert!((d[2] - d[1] - 16.0 / 14.3).abs() < 1e-12);
        let d32 = dip_times(32, 14.3, 3).unwrap();
        for (a, b) in d.iter().zip(&d32) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
        assert!(dip_times(0, 14.3, 1).is_err());
    }

    #[test]
    fn segments_cover_n_tau() {
        let s = toggling_segments(5, 2.0);
        assert_eq!(s.len(), 6);
        assert!((s.iter().map(|x| x.0).sum::<f64>() - 10.0).abs() < 1e-12);
        assert!(s.iter().map(|x| x.0 * x.1).sum::<f64>().abs() < 1e-12);
    }
}
