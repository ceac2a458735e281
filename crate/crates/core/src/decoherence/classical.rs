//! Classical dephasing: each shot draws a detuning history δ(t) and picks up
//! the toggled phase `Φ = 2π·Σ_j s_j ∫_j δ dt`; the coherence is `<cos Φ>`.
//!
//! Every τ point of a shot reuses the same random stream, so traces are
//! smooth in τ and shots are reproducible independent of scheduling.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{toggling_segments, validate_taus, NoiseSeries};
use crate::error::{Error, Result};
use crate::rng::realization_rng;
use crate::trace::DecayTrace;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuNoise {
    /// Stationary std of the detuning, MHz.
    pub sigma: f64,
    /// µs
    pub correlation_time: f64,
    pub seed: u64,
}

impl OuNoise {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !(self.correlation_time > 0.0) {
            return Err(Error::invalid(format!(
                "OU noise needs sigma >= 0 and tau_c > 0, got {} MHz, {} µs",
                self.sigma, self.correlation_time
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmplitudeDistribution {
    /// Amplitude √2·b every shot.
    Fixed,
    /// Rayleigh amplitudes with scale b.
    Rayleigh,
}

/// δ(t) = a·cos(2π·f_l·t + φ) with φ uniform per shot; `coupling_rms` is
/// the rms of δ over shots and phases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcFieldBath {
    /// MHz
    pub larmor: f64,
    /// MHz
    pub coupling_rms: f64,
    pub amplitude: AmplitudeDistribution,
}

impl AcFieldBath {
    pub fn validate(&self) -> Result<()> {
        if !(self.larmor > 0.0) || !(self.coupling_rms >= 0.0) {
            return Err(Error::invalid("a.c. bath needs f_l > 0 and b >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassicalNoise {
    QuasiStatic { sigma: f64 },
    Ou(OuNoise),
    AcField(AcFieldBath),
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Stationary OU series of `ceil(duration/dt) + 1` samples; realization 0.
pub fn ou_trajectory(noise: &OuNoise, duration: f64, dt: f64) -> Result<NoiseSeries> {
    ou_trajectory_realization(noise, duration, dt, 0)
}

/// Exact discretisation `x_{k+1} = a·x_k + σ·√(1−a²)·ξ_k`, `a = exp(−dt/τc)`.
pub fn ou_trajectory_realization(noise: &OuNoise, duration: f64, dt: f64, index: u64) -> Result<NoiseSeries> {
    noise.validate()?;
    if !(dt > 0.0) || dt > noise.correlation_time / 10.0 {
        return Err(Error::invalid(format!(
            "OU step {dt} µs must be in (0, tau_c/10 = {} µs]",
            noise.correlation_time / 10.0
        )));
    }
    if !(duration >= 0.0) {
        return Err(Error::invalid("duration must be >= 0"));
    }
    let steps = (duration / dt).ceil() as usize + 1;
    let mut rng = realization_rng(noise.seed, "ou-trajectory", index);
    let a = (-dt / noise.correlation_time).exp();
    let kick = noise.sigma * (1.0 - a * a).sqrt();
    let mut x = noise.sigma * normal(&mut rng);
    let mut values = Vec::with_capacity(steps);
    for _ in 0..steps {
        values.push(x);
        x = a * x + kick * normal(&mut rng);
    }
    Ok(NoiseSeries { dt, values })
}

/// `2u − 3 + 4e^{−u} − e^{−2u}`, accurate for small u.
fn integral_variance_factor(u: f64) -> f64 {
    if u < 1e-2 {
        let u3 = u * u * u;
        u3 * (2.0 / 3.0 - u * (0.5 - u * (7.0 / 30.0 - u / 12.0)))
    } else {
        let a = (-u).exp();
        2.0 * u - 3.0 + 4.0 * a - a * a
    }
}

/// Advance an OU process over `len` and return `(x_end, ∫x dt)` drawn
/// exactly from their joint Gaussian law given the start value.
fn ou_segment(x0: f64, len: f64, sigma: f64, tau_c: f64, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u = len / tau_c;
    let one_minus_a = -(-u).exp_m1();
    let a = 1.0 - one_minus_a;
    let s2 = sigma * sigma;
    let var_x = s2 * one_minus_a * (1.0 + a);
    let var_i = s2 * tau_c * tau_c * integral_variance_factor(u);
    let cov = s2 * tau_c * one_minus_a * one_minus_a;
    let z1 = normal(rng);
    let z2 = normal(rng);
    let mean_x = a * x0;
    let mean_i = tau_c * one_minus_a * x0;
    if var_x <= 0.0 {
        return (mean_x, mean_i);
    }
    let sx = var_x.sqrt();
    let c = cov / sx;
    let rest = (var_i - c * c).max(0.0).sqrt();
    (mean_x + sx * z1, mean_i + c * z1 + rest * z2)
}

fn shot_phases(noise: &ClassicalNoise, n: usize, taus: &[f64], seed: u64, index: u64, out: &mut [f64]) {
    match noise {
        ClassicalNoise::QuasiStatic { sigma } => {
            let mut rng = realization_rng(seed, "quasi-static", index);
            let delta = sigma * normal(&mut rng);
            for (phi, &tau) in out.iter_mut().zip(taus) {
                let net: f64 = toggling_segments(n, tau).iter().map(|(l, s)| l * s).sum();
                *phi = 2.0 * PI * delta * net;
            }
        }
        ClassicalNoise::Ou(ou) => {
            for (phi, &tau) in out.iter_mut().zip(taus) {
                let mut rng = realization_rng(seed, "ou", index);
                let mut x = ou.sigma * normal(&mut rng);
                let mut acc = 0.0;
                for (len, sign) in toggling_segments(n, tau) {
                    let (x1, integral) = ou_segment(x, len, ou.sigma, ou.correlation_time, &mut rng);
                    acc += sign * integral;
                    x = x1;
                }
                *phi = 2.0 * PI * acc;
            }
        }
        ClassicalNoise::AcField(ac) => {
            let mut rng = realization_rng(seed, "ac-field", index);
            let phase = 2.0 * PI * rng.random::<f64>();
            let amp = match ac.amplitude {
                AmplitudeDistribution::Fixed => std::f64::consts::SQRT_2 * ac.coupling_rms,
                AmplitudeDistribution::Rayleigh => {
                    let u: f64 = 1.0 - rng.random::<f64>();
                    ac.coupling_rms * (-2.0 * u.ln()).sqrt()
                }
            };
            let w = 2.0 * PI * ac.larmor;
            for (phi, &tau) in out.iter_mut().zip(taus) {
                let mut t = 0.0;
                let mut acc = 0.0;
                for (len, sign) in toggling_segments(n, tau) {
                    acc += sign * ((w * (t + len) + phase).sin() - (w * t + phase).sin());
                    t += len;
                }
                // 2π·∫ a·cos(wt+φ) dt = (a/f)·Δsin
                *phi = amp / ac.larmor * acc;
            }
        }
    }
}

/// Shots are summed in fixed blocks so the result does not depend on the
/// thread count.
const BLOCK: usize = 64;

pub fn cpmg_coherence_classical(
    noise: &ClassicalNoise,
    n: usize,
    taus: &[f64],
    realizations: usize,
    seed: u64,
) -> Result<DecayTrace> {
    validate_taus(n, taus)?;
    if realizations == 0 {
        return Err(Error::invalid("need at least one realization"));
    }
    let (model, extra) = match noise {
        ClassicalNoise::QuasiStatic { sigma } => {
            if !(*sigma >= 0.0) {
                return Err(Error::invalid("quasi-static sigma must be >= 0"));
            }
            ("quasi_static", format!("sigma={sigma}"))
        }
        ClassicalNoise::Ou(ou) => {
            ou.validate()?;
            ("ou", format!("sigma={};tau_c={}", ou.sigma, ou.correlation_time))
        }
        ClassicalNoise::AcField(ac) => {
            ac.validate()?;
            ("ac_field", format!("f_l={};b={}", ac.larmor, ac.coupling_rms))
        }
    };
    let m = taus.len();
    let blocks: Vec<(Vec<f64>, Vec<f64>)> = (0..realizations.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut sum = vec![0.0; m];
            let mut sum_sq = vec![0.0; m];
            let mut phases = vec![0.0; m];
            for i in b * BLOCK..((b + 1) * BLOCK).min(realizations) {
                shot_phases(noise, n, taus, seed, i as u64, &mut phases);
                for k in 0..m {
                    let c = phases[k].cos();
                    sum[k] += c;
                    sum_sq[k] += c * c;
                }
            }
            (sum, sum_sq)
        })
        .collect();
    let mut sum = vec![0.0; m];
    let mut sum_sq = vec![0.0; m];
    for (s, q) in &blocks {
        for k in 0..m {
            sum[k] += s[k];
            sum_sq[k] += q[k];
        }
    }
    let r = realizations as f64;
    let coherence: Vec<f64> = sum.iter().map(|s| s / r).collect();
    let stderr: Vec<f64> = if realizations > 1 {
        sum_sq
            .iter()
            .zip(&coherence)
            .map(|(q, mean)| ((q / r - mean * mean).max(0.0) * r / (r - 1.0) / r).sqrt())
            .collect()
    } else {
        vec![0.0; m]
    };
    let t = taus.iter().map(|tau| n as f64 * tau).collect();
    Ok(DecayTrace::new(t, coherence, stderr)?
        .with_meta("sequence", "cpmg")
        .with_meta("n", n)
        .with_meta("model", model)
        .with_meta("noise", extra)
        .with_meta("realizations", realizations)
        .with_meta("seed", seed))
}

/// Gaussian-phase coherence `exp(−Var Φ/2)` of a CPMG-n train under OU
/// noise, from the exact double integral of the OU covariance.
pub fn gaussian_ou_coherence(noise: &OuNoise, n: usize, tau: f64) -> f64 {
    let tc = noise.correlation_time;
    let s2 = noise.sigma * noise.sigma;
    let mut var = 0.0;
    // Σ_{j<i} s_j·(1 − e^{−L_j/τc})·e^{−(start_i − end_j)/τc}
    let mut carry = 0.0;
    for (len, sign) in toggling_segments(n, tau) {
        let u = len / tc;
        let one_minus_a = -(-u).exp_m1();
        let own = if u < 1e-3 {
            u * u * (0.5 - u * (1.0 / 6.0 - u / 24.0))
        } else {
            u - one_minus_a
        };
        var += 2.0 * s2 * tc * tc * (own + sign * one_minus_a * carry);
        carry = carry * (1.0 - one_minus_a) + sign * one_minus_a;
    }
    (-0.5 * (2.0 * PI).powi(2) * var).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_series_is_zero() {
        let ou = OuNoise {
            sigma: 0.0,
            correlation_time: 1.0,
            seed: 3,
        };
        let s = ou_trajectory(&ou, 10.0, 0.05).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
        assert!(ou_trajectory(&ou, 10.0, 0.2).is_err());
    }

    #[test]
    fn ou_statistics() {
        // Eight independent 1e5-step trajectories, pooled.
        let ou = OuNoise {
            sigma: 2.0,
            correlation_time: 1.0,
            seed: 11,
        };
        let dt = 0.1;
        let lag = 10;
        let (mut sxx, mut sxy, mut nx, mut ny) = (0.0, 0.0, 0.0, 0.0);
        for index in 0..8 {
            let s = ou_trajectory_realization(&ou, 1e5 * dt, dt, index).unwrap();
            let x = &s.values;
            assert_eq!(x.len(), 100_001);
            sxx += x.iter().map(|v| v * v).sum::<f64>();
            nx += x.len() as f64;
            sxy += x.windows(lag + 1).map(|w| w[0] * w[lag]).sum::<f64>();
            ny += (x.len() - lag) as f64;
        }
        let var = sxx / nx;
        assert!((var / 4.0 - 1.0).abs() < 0.03, "{var}");
        let acf = sxy / ny;
        assert!((acf / (4.0 * (-1.0f64).exp()) - 1.0).abs() < 0.05, "{acf}");
    }

    #[test]
    fn gaussian_ou_coherence_matches_direct_double_integral() {
        // Midpoint rule on σ²∬ f(s) f(t) e^{−|s−t|/τc}, with f flipping sign
        // at each π pulse (τ/2, 3τ/2, …).
        let ou = OuNoise {
            sigma: 0.4,
            correlation_time: 1.5,
            seed: 0,
        };
        for (n, tau) in [(1, 0.8), (4, 0.5), (7, 0.3)] {
            let total = n as f64 * tau;
            let steps = 1400;
            let h = total / steps as f64;
            let f: Vec<f64> = (0..steps)
                .map(|i| {
                    let t = (i as f64 + 0.5) * h;
                    let flips = ((t / tau) + 0.5).floor() as i32;
                    if flips % 2 == 0 {
                        1.0
                    } else {
                        -1.0
                    }
                })
                .collect();
            let mut var = 0.0;
            for i in 0..steps {
                for j in 0..steps {
                    let d = (i as f64 - j as f64).abs() * h;
                    var += f[i] * f[j] * (-d / ou.correlation_time).exp();
                }
            }
            var *= ou.sigma * ou.sigma * h * h;
            let direct = (-0.5 * (2.0 * PI).powi(2) * var).exp();
            let exact = gaussian_ou_coherence(&ou, n, tau);
            assert!((exact - direct).abs() < 2e-3, "n={n}: {exact} vs {direct}");
        }
    }

    #[test]
    fn sampled_ou_coherence_matches_gaussian_closed_form() {
        let ou = OuNoise {
            sigma: 0.5,
            correlation_time: 2.0,
            seed: 21,
        };
        let taus: Vec<f64> = (1..=8).map(|k| 0.1 * k as f64).collect();
        let tr = cpmg_coherence_classical(&ClassicalNoise::Ou(ou), 4, &taus, 4000, 21).unwrap();
        for (k, &tau) in taus.iter().enumerate() {
            let exact = gaussian_ou_coherence(&ou, 4, tau);
            let (c, se) = (tr.coherence[k], tr.stderr[k]);
            assert!((c - exact).abs() < 4.0 * se + 1e-3, "tau={tau}: {c} ± {se} vs {exact}");
        }
    }

    #[test]
    fn small_u_variance_matches_direct_formula() {
        // Either side of the switch-over both forms are accurate to ~1e-9.
        for &u in &[0.0101f64, 0.0099] {
            let a = (-u).exp();
            let direct = 2.0 * u - 3.0 + 4.0 * a - a * a;
            assert!((integral_variance_factor(u) / direct - 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn quiet_noise_keeps_full_coherence() {
        let taus = [0.5, 1.0, 2.0];
        for noise in [
            ClassicalNoise::Ou(OuNoise {
                sigma: 0.0,
                correlation_time: 10.0,
                seed: 1,
            }),
            ClassicalNoise::AcField(AcFieldBath {
                larmor: 14.3,
                coupling_rms: 0.0,
                amplitude: AmplitudeDistribution::Fixed,
            }),
            ClassicalNoise::QuasiStatic { sigma: 3.0 },
        ] {
            let tr = cpmg_coherence_classical(&noise, 4, &taus, 100, 5).unwrap();
            for c in &tr.coherence {
                assert!((c - 1.0).abs() < 1e-12, "{noise:?}: {c}");
            }
        }
    }
}
