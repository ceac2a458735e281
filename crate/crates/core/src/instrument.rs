//! Amplifier phase droop, IQ demodulation and per-shot pulse imperfections.

use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::pulse::{propagate, DensityState, Element, PropagateOptions, PulseSequence};
use crate::rng::realization_rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplifierModel {
    /// Degrees accumulated over `droop_span`.
    pub droop_total: f64,
    /// µs
    pub droop_span: f64,
    /// Relative std of the static per-shot ω1 scale.
    pub amplitude_jitter_rel: f64,
}

impl AmplifierModel {
    /// Travelling-wave tube: 27° over 15 µs.
    pub const TWTA: AmplifierModel = AmplifierModel {
        droop_total: 27.0,
        droop_span: 15.0,
        amplitude_jitter_rel: 0.0,
    };

    /// Solid-state: 3° over 800 µs.
    pub const SSPA: AmplifierModel = AmplifierModel {
        droop_total: 3.0,
        droop_span: 800.0,
        amplitude_jitter_rel: 0.0,
    };

    pub const IDEAL: AmplifierModel = AmplifierModel {
        droop_total: 0.0,
        droop_span: 1.0,
        amplitude_jitter_rel: 0.0,
    };

    pub fn preset(name: &str) -> Result<Self> {
        name.parse()
    }

    pub fn with_jitter(mut self, rel: f64) -> Self {
        self.amplitude_jitter_rel = rel;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.droop_span > 0.0) || !(self.amplitude_jitter_rel >= 0.0) || !self.droop_total.is_finite() {
            return Err(Error::invalid(format!(
                "amplifier needs droop_span > 0 and jitter >= 0, got span {} µs, jitter {}",
                self.droop_span, self.amplitude_jitter_rel
            )));
        }
        Ok(())
    }

    pub fn is_ideal(&self) -> bool {
        self.droop_total == 0.0 && self.amplitude_jitter_rel == 0.0
    }
}

impl FromStr for AmplifierModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "twta" => Ok(Self::TWTA),
            "sspa" => Ok(Self::SSPA),
            "ideal" | "none" => Ok(Self::IDEAL),
            other => Err(Error::invalid(format!("unknown amplifier preset {other:?}"))),
        }
    }
}

/// Degrees; linear in on-time and clamped at `droop_total` past the span.
pub fn phase_droop(model: &AmplifierModel, cumulative_on_time: f64) -> f64 {
    let t = cumulative_on_time.max(0.0);
    if t >= model.droop_span {
        model.droop_total
    } else {
        model.droop_total * (t / model.droop_span)
    }
}

/// `atan2(I, Q)` in degrees, unwrapped across samples; `None` where I = Q = 0.
pub fn iq_demodulate(i_series: &[f64], q_series: &[f64]) -> Result<Vec<Option<f64>>> {
    if i_series.len() != q_series.len() {
        return Err(Error::invalid(format!(
            "I and Q lengths differ: {} vs {}",
            i_series.len(),
            q_series.len()
        )));
    }
    let mut prev: Option<f64> = None;
    Ok(i_series
        .iter()
        .zip(q_series)
        .map(|(&i, &q)| {
            if i == 0.0 && q == 0.0 {
                return None;
            }
            let mut phi = i.atan2(q).to_degrees();
            if let Some(p) = prev {
                phi -= 360.0 * ((phi - p) / 360.0).round();
            }
            prev = Some(phi);
            Some(phi)
        })
        .collect())
}

/// ω1 scale of one shot.
pub fn jitter_factor(model: &AmplifierModel, seed: u64, shot: u64) -> f64 {
    if model.amplitude_jitter_rel == 0.0 {
        return 1.0;
    }
    let mut rng = realization_rng(seed, "amplitude-jitter", shot);
    let z: f64 = StandardNormal.sample(&mut rng);
    1.0 + model.amplitude_jitter_rel * z
}

/// Shot 0 of [`apply_imperfections_shot`].
pub fn apply_imperfections(sequence: &PulseSequence, model: &AmplifierModel, seed: u64) -> PulseSequence {
    apply_imperfections_shot(sequence, model, seed, 0)
}

/// Offset each pulse phase by the droop at the midpoint of its on-time and
/// scale every rotation by this shot's jitter factor. On-time restarts at
/// zero every shot.
pub fn apply_imperfections_shot(
    sequence: &PulseSequence,
    model: &AmplifierModel,
    seed: u64,
    shot: u64,
) -> PulseSequence {
    if model.is_ideal() {
        return sequence.clone();
    }
    let scale = jitter_factor(model, seed, shot);
    let mut on_time = 0.0;
    let mut out = sequence.clone();
    for e in out.elements.iter_mut() {
        if let Element::Pulse(p) = e {
            let len = p.length();
            p.phase += phase_droop(model, on_time + 0.5 * len).to_radians();
            on_time += len;
            p.rabi_frequency *= scale;
            if let Some(a) = p.ideal_angle.as_mut() {
                *a *= scale;
            }
        }
    }
    out
}

/// In-phase and quadrature echo amplitudes for each sequence under `model`.
pub fn echo_channels(sequences: &[PulseSequence], model: &AmplifierModel, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    model.validate()?;
    let mut i = Vec::with_capacity(sequences.len());
    let mut q = Vec::with_capacity(sequences.len());
    for seq in sequences {
        let s = apply_imperfections(seq, model, seed);
        let out = propagate(&DensityState::thermal(), &s, &PropagateOptions::default())?;
        i.push(out.signal);
        q.push(out.quadrature);
    }
    Ok((i, q))
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

/// Q-channel rms over I-channel rms.
pub fn channel_leakage(i: &[f64], q: &[f64]) -> f64 {
    rms(q) / rms(i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulse::{build_cpmg, Pulse};

    #[test]
    fn droop_endpoints() {
        assert_eq!(phase_droop(&AmplifierModel::TWTA, 15.0), 27.0);
        assert_eq!(phase_droop(&AmplifierModel::SSPA, 800.0), 3.0);
        assert_eq!(phase_droop(&AmplifierModel::TWTA, 0.0), 0.0);
        assert_eq!(phase_droop(&AmplifierModel::TWTA, 100.0), 27.0);
        assert!((phase_droop(&AmplifierModel::TWTA, 7.5) - 13.5).abs() < 1e-12);
    }

    #[test]
    fn demodulation_quadrants() {
        let p = iq_demodulate(&[0.0, 1.0, 0.0], &[1.0, 1.0, 0.0]).unwrap();
        assert_eq!(p[0], Some(0.0));
        assert!((p[1].unwrap() - 45.0).abs() < 1e-12);
        assert_eq!(p[2], None);
        assert!(iq_demodulate(&[1.0], &[]).is_err());
    }

    #[test]
    fn unwrap_is_continuous() {
        let phases: Vec<f64> = (0..200).map(|k| k as f64 * 7.0).collect();
        let i: Vec<f64> = phases.iter().map(|p| p.to_radians().sin()).collect();
        let q: Vec<f64> = phases.iter().map(|p| p.to_radians().cos()).collect();
        let out = iq_demodulate(&i, &q).unwrap();
        for (a, b) in out.iter().zip(&phases) {
            assert!((a.unwrap() - b).abs() < 1e-9);
        }
    }

    #[test]
    fn ideal_model_is_identity() {
        let seq = build_cpmg(16, 1.0, Pulse::half_pi(25.0), Pulse::pi(25.0)).unwrap();
        let zero = AmplifierModel {
            droop_total: 0.0,
            droop_span: 15.0,
            amplitude_jitter_rel: 0.0,
        };
        assert_eq!(apply_imperfections(&seq, &zero, 99), seq);
    }

    #[test]
    fn droop_advances_with_on_time() {
        let seq = build_cpmg(4, 1.0, Pulse::half_pi(25.0), Pulse::pi(25.0)).unwrap();
        let out = apply_imperfections(&seq, &AmplifierModel::TWTA, 1);
        let offsets: Vec<f64> = out
            .pulses()
            .zip(seq.pulses())
            .map(|(a, b)| (a.phase - b.phase).to_degrees())
            .collect();
        assert!((offsets[0] - 1.8 * 0.005).abs() < 1e-9);
        assert!((offsets[1] - 1.8 * 0.02).abs() < 1e-9);
        assert!(offsets.windows(2).all(|w| w[1] > w[0]));
    }
}
