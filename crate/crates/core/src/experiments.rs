//! End-to-end pipelines shared by the command line and the test suites.

use std::f64::consts::{E, FRAC_PI_2, PI};

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::analysis::{
    fft_peaks, fit_scaling, fit_stretched, fit_stretched_envelope, fit_t1_power, FftPeak, FitResult,
};
use crate::decoherence::{cpmg_coherence, NoiseModel, RamanRelaxation};
use crate::error::{Error, Result};
use crate::instrument::{apply_imperfections_shot, AmplifierModel};
use crate::pulse::{
    build_cpmg, build_inversion_recovery, build_rabi, build_xy8, propagate, DensityState, PropagateOptions, Pulse,
    PulseSequence, Relaxation,
};
use crate::rng::{realization_rng, substream_seed};
use crate::spectrum::{
    bandwidth_ratio, derivative_extrema, excitation_fraction, rising_edges, simulate_fsed, Broadening, FieldRange,
    PowderGrid, Spectrum,
};
use crate::spin_core::{first_order_field, Orientation, SpinSystem, StateLabel};
use crate::trace::{DecayTrace, Table};

#[derive(Debug, Clone)]
pub struct FsedReport {
    pub spectrum: Spectrum,
    /// Width of the region above 2% of the maximum, Gauss.
    pub support_width: f64,
    /// Low-field edges of resolved features, Gauss.
    pub edges: Vec<f64>,
    /// Derivative extremum nearest each θ = 0 hyperfine line of the first
    /// nucleus, ascending in field; `None` where nothing lies within
    /// [`PARALLEL_MATCH_TOL`].
    pub parallel_features: Vec<Option<f64>>,
    /// Intensity-weighted fraction within ±bandwidth/2 of a carrier
    /// resonant at the spectral maximum.
    pub excitation_fraction: Option<f64>,
    /// Bandwidth in Gauss over the support width.
    pub bandwidth_ratio: Option<f64>,
}

pub const SUPPORT_FRACTION: f64 = 0.02;
/// Derivative maxima below this fraction of the largest are not features.
pub const EDGE_MIN_HEIGHT: f64 = 0.02;
/// Gauss between a first-order θ = 0 line and the feature assigned to it.
pub const PARALLEL_MATCH_TOL: f64 = 15.0;

/// Spectral features belonging to the unique-axis (θ = 0) hyperfine lines.
pub fn parallel_features(spectrum: &Spectrum, system: &SpinSystem, mw: f64) -> Result<Vec<Option<f64>>> {
    let Some(nuc) = system.nuclei.first() else {
        return Ok(Vec::new());
    };
    let axis = Orientation::new(0.0, 0.0);
    let mut lines = Vec::new();
    for m in nuc.spin.projections() {
        let mut m_i = vec![0.0; system.nuclei.len()];
        m_i[0] = m.value();
        // remaining nuclei at their lowest |m| keep the estimate centred
        for (k, other) in system.nuclei.iter().enumerate().skip(1) {
            m_i[k] = if other.spin.twice() % 2 == 1 { 0.5 } else { 0.0 };
        }
        let label = StateLabel::new(-0.5, &m_i)?;
        if let Some(b) = first_order_field(system, mw, &axis, &label) {
            lines.push(b);
        }
    }
    lines.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let extrema = derivative_extrema(spectrum, EDGE_MIN_HEIGHT);
    Ok(lines
        .iter()
        .map(|&b| {
            extrema
                .iter()
                .map(|&(f, _)| f)
                .filter(|f| (f - b).abs() <= PARALLEL_MATCH_TOL)
                .min_by(|x, y| (x - b).abs().partial_cmp(&(y - b).abs()).unwrap())
        })
        .collect())
}

pub fn fsed_experiment(
    system: &SpinSystem,
    mw: f64,
    range: &FieldRange,
    grid: &PowderGrid,
    broadening: &Broadening,
    bandwidth: Option<f64>,
) -> Result<FsedReport> {
    let spectrum = simulate_fsed(system, mw, range, grid, broadening)?;
    let (excitation, ratio) = match bandwidth {
        Some(bw) => {
            let observe = spectrum
                .field_of_max()
                .ok_or_else(|| Error::invalid("spectrum is empty"))?;
            (
                Some(excitation_fraction(&spectrum, mw, bw, Some(observe))?),
                Some(bandwidth_ratio(&spectrum, mw, bw, observe, SUPPORT_FRACTION)?),
            )
        }
        None => (None, None),
    };
    Ok(FsedReport {
        parallel_features: parallel_features(&spectrum, system, mw)?,
        support_width: spectrum.support_width(SUPPORT_FRACTION),
        edges: rising_edges(&spectrum, EDGE_MIN_HEIGHT),
        excitation_fraction: excitation,
        bandwidth_ratio: ratio,
        spectrum,
    })
}

#[derive(Debug, Clone)]
pub struct RabiStudy {
    pub nutation: Vec<f64>,
    /// Nutation pulse lengths, µs.
    pub tau_p: Vec<f64>,
    /// Shot-averaged echo per nutation frequency.
    pub signals: Vec<Vec<f64>>,
    pub peaks: Vec<Option<FftPeak>>,
}

impl RabiStudy {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["nu1_MHz", "peak_MHz", "fwhm_MHz"]);
        for (nu, p) in self.nutation.iter().zip(&self.peaks) {
            let (f, w) = p.map(|p| (p.frequency, p.fwhm)).unwrap_or((f64::NAN, f64::NAN));
            t.push(vec![*nu, f, w]);
        }
        t
    }

    pub fn traces_table(&self) -> Table {
        let mut cols = vec!["tau_p_us".to_string()];
        cols.extend(self.nutation.iter().map(|nu| format!("signal_{nu}MHz")));
        let mut t = Table {
            columns: cols,
            rows: Vec::new(),
            metadata: Vec::new(),
        };
        for (k, tp) in self.tau_p.iter().enumerate() {
            let mut row = vec![*tp];
            row.extend(self.signals.iter().map(|s| s[k]));
            t.push(row);
        }
        t
    }
}

/// Nutation sweeps with an ideal detection π pulse; each shot draws its
/// own static ω1 scale from `amplifier`.
pub fn rabi_study(
    nutation: &[f64],
    tau0: f64,
    dt: f64,
    samples: usize,
    amplifier: &AmplifierModel,
    shots: usize,
    seed: u64,
) -> Result<RabiStudy> {
    amplifier.validate()?;
    if nutation.iter().any(|nu| !(*nu > 0.0)) {
        return Err(Error::invalid("nutation frequencies must be > 0"));
    }
    if shots == 0 || samples < 32 || !(dt > 0.0) {
        return Err(Error::invalid("rabi sweep needs shots >= 1, samples >= 32, dt > 0"));
    }
    let tau_p: Vec<f64> = (0..samples).map(|k| k as f64 * dt).collect();
    let mut signals = Vec::with_capacity(nutation.len());
    let mut peaks = Vec::with_capacity(nutation.len());
    for &nu in nutation {
        let sig = tau_p
            .par_iter()
            .map(|&tp| -> Result<f64> {
                let seq = build_rabi(tp, tau0, nu, Pulse::ideal(PI))?;
                let mut acc = 0.0;
                for shot in 0..shots {
                    let s = apply_imperfections_shot(&seq, amplifier, seed, shot as u64);
                    acc += propagate(&DensityState::thermal(), &s, &PropagateOptions::default())?.signal;
                }
                Ok(acc / shots as f64)
            })
            .collect::<Result<Vec<f64>>>()?;
        peaks.push(fft_peaks(&sig, dt, 1)?.into_iter().next());
        signals.push(sig);
    }
    Ok(RabiStudy {
        nutation: nutation.to_vec(),
        tau_p,
        signals,
        peaks,
    })
}

#[derive(Debug, Clone)]
pub struct T1Study {
    /// Columns T_K, T1_ms.
    pub table: Table,
    pub fit: FitResult,
    pub inversion_recovery: Option<DecayTrace>,
}

/// Raman T1 law calibrated at one temperature, sampled at `temperatures`
/// with optional multiplicative noise, then refitted.
pub fn t1_study(
    calibration: (f64, f64),
    temperatures: &[f64],
    noise_rel: f64,
    ir_temperature: Option<f64>,
    seed: u64,
) -> Result<T1Study> {
    let raman = RamanRelaxation::calibrate(calibration.0, calibration.1)?;
    let mut rng = realization_rng(seed, "t1-noise", 0);
    let mut table =
        Table::new(&["T_K", "T1_ms"]).with_meta("calibration", format!("{}K:{}ms", calibration.0, calibration.1));
    let mut pts = Vec::new();
    for &temp in temperatures {
        let z: f64 = StandardNormal.sample(&mut rng);
        let t1 = raman.t1(temp)? * (1.0 + noise_rel * z);
        table.push(vec![temp, t1]);
        pts.push((temp, t1));
    }
    let fit = fit_t1_power(&pts)?;
    let inversion_recovery = match ir_temperature {
        Some(temp) => {
            let t1_us = raman.t1(temp)? * 1000.0;
            let rel = Relaxation {
                t1: t1_us,
                t2: t1_us.min(6.8),
            };
            let taus: Vec<f64> = (0..64).map(|k| t1_us * 5.0 * k as f64 / 63.0).collect();
            let echo = taus
                .iter()
                .map(|&tau| {
                    let seq = build_inversion_recovery(tau, crate::pulse::DEFAULT_TAU0)?;
                    let opts = PropagateOptions {
                        relaxation: Some(rel),
                        ..Default::default()
                    };
                    Ok(propagate(&DensityState::thermal(), &seq, &opts)?.signal)
                })
                .collect::<Result<Vec<f64>>>()?;
            Some(
                DecayTrace::without_errors(taus, echo)?
                    .with_meta("sequence", "ir")
                    .with_meta("temperature_K", temp)
                    .with_meta("T1_us", t1_us),
            )
        }
        None => None,
    };
    Ok(T1Study {
        table,
        fit,
        inversion_recovery,
    })
}

/// Shots used for the decay-time pilot of a classical model.
pub const PILOT_REALIZATIONS: usize = 200;

/// Rough 1/e time of the CPMG-n coherence from a geometric sweep.
pub fn pilot_decay_time(model: &NoiseModel, n: usize, seed: u64) -> Result<f64> {
    let ts: Vec<f64> = (0..=90).map(|k| 1e-3 * 10f64.powf(k as f64 / 10.0)).collect();
    let taus: Vec<f64> = ts.iter().map(|t| t / n as f64).collect();
    let tr = cpmg_coherence(model, n, &taus, PILOT_REALIZATIONS, substream_seed(seed, "pilot"))?;
    let target = 1.0 / E;
    for k in 1..tr.len() {
        let (c0, c1) = (tr.coherence[k - 1], tr.coherence[k]);
        if c1 < target && c0 >= target {
            let f = (c0 - target) / (c0 - c1);
            return Ok((ts[k - 1].ln() + f * (ts[k].ln() - ts[k - 1].ln())).exp());
        }
    }
    Err(Error::NonConvergence {
        message: format!("CPMG-{n} coherence does not fall below 1/e between 1 ns and 1 s"),
        best: None,
    })
}

#[derive(Debug, Clone)]
pub struct ScalingStudy {
    pub ns: Vec<usize>,
    pub traces: Vec<DecayTrace>,
    pub fits: Vec<FitResult>,
    pub scaling: FitResult,
}

impl ScalingStudy {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["n", "T_coh_us", "T_coh_sigma_us", "beta", "beta_sigma"]);
        for (n, f) in self.ns.iter().zip(&self.fits) {
            t.push(vec![
                *n as f64,
                f.value("T_coh"),
                f.sigma("T_coh"),
                f.value("beta"),
                f.sigma("beta"),
            ]);
        }
        t
    }
}

/// Sampling window of each trace relative to the pilot 1/e time.
pub const WINDOW: (f64, f64) = (0.1, 2.5);

/// Decay traces for every n on a grid placed by a pilot run, stretched
/// fits per n, and the `T_coh = T2·n^α` fit across n.
pub fn cpmg_scaling_study(
    model: &NoiseModel,
    ns: &[usize],
    points: usize,
    realizations: usize,
    seed: u64,
) -> Result<ScalingStudy> {
    if ns.is_empty() || points < 8 {
        return Err(Error::invalid("scaling study needs at least one n and 8 points"));
    }
    let mut traces = Vec::new();
    let mut fits = Vec::new();
    for &n in ns {
        let stream = substream_seed(seed, &format!("cpmg-n{n}"));
        let t_e = pilot_decay_time(model, n, stream)?;
        let taus: Vec<f64> = (0..points)
            .map(|k| t_e * (WINDOW.0 + (WINDOW.1 - WINDOW.0) * k as f64 / (points - 1) as f64) / n as f64)
            .collect();
        let trace = cpmg_coherence(model, n, &taus, realizations, stream)?.with_meta("seed", stream);
        let fit = match model {
            NoiseModel::AcField(ac) => fit_stretched_envelope(&trace, n, ac.larmor)?,
            _ => fit_stretched(&trace)?,
        };
        traces.push(trace);
        fits.push(fit);
    }
    let pts: Vec<(f64, f64)> = ns
        .iter()
        .zip(&fits)
        .map(|(&n, f)| (n as f64, f.value("T_coh")))
        .collect();
    let scaling = fit_scaling(&pts)?;
    Ok(ScalingStudy {
        ns: ns.to_vec(),
        traces,
        fits,
        scaling,
    })
}

/// Times of local coherence minima deeper than `min_depth` times the
/// deepest point's depth below 1, ascending. Each position is refined by a
/// parabola through the grid minimum and its two neighbours.
pub fn coherence_minima(trace: &DecayTrace, min_depth: f64) -> Vec<f64> {
    let (t, c) = (&trace.t, &trace.coherence);
    let deepest = c.iter().map(|v| 1.0 - v).fold(0.0, f64::max);
    if deepest <= 0.0 {
        return Vec::new();
    }
    (1..c.len().saturating_sub(1))
        .filter(|&i| c[i] < c[i - 1] && c[i] <= c[i + 1] && 1.0 - c[i] >= min_depth * deepest)
        .map(|i| {
            let (h0, h1) = (t[i] - t[i - 1], t[i + 1] - t[i]);
            let (d0, d1) = ((c[i] - c[i - 1]) / h0, (c[i + 1] - c[i]) / h1);
            let curvature = (d1 - d0) / (0.5 * (h0 + h1));
            if curvature > 0.0 {
                // vertex of the parabola, kept inside the bracketing interval
                let slope = (d0 * h1 + d1 * h0) / (h0 + h1);
                (t[i] - slope / curvature).clamp(t[i - 1], t[i + 1])
            } else {
                t[i]
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct DipStudy {
    pub ns: Vec<usize>,
    pub traces: Vec<DecayTrace>,
    pub minima: Vec<Vec<f64>>,
}

/// Coherence on a common τ grid for each n (so the time axis `nτ` scales
/// with n), with detected minima.
pub fn dip_study(model: &NoiseModel, ns: &[usize], taus: &[f64], realizations: usize, seed: u64) -> Result<DipStudy> {
    let mut traces = Vec::new();
    let mut minima = Vec::new();
    for &n in ns {
        if n == 0 {
            return Err(Error::invalid("n must be >= 1"));
        }
        let trace = cpmg_coherence(
            model,
            n,
            taus,
            realizations,
            substream_seed(seed, &format!("dips-n{n}")),
        )?;
        minima.push(coherence_minima(&trace, 0.5));
        traces.push(trace);
    }
    Ok(DipStudy {
        ns: ns.to_vec(),
        traces,
        minima,
    })
}

/// Overlap of the final Bloch vector with the starting one after the
/// refocusing train alone (no excitation pulse).
fn preserved(seq: &PulseSequence, start: [f64; 3]) -> Result<f64> {
    let mut train = seq.clone();
    train.elements.remove(0);
    let out = propagate(&DensityState::from_bloch(start), &train, &PropagateOptions::default())?;
    let r = out.final_state.bloch();
    Ok(r[0] * start[0] + r[1] * start[1] + r[2] * start[2])
}

/// CPMG versus XY-8 preservation of both transverse components with a
/// relative rotation error on every π pulse. Columns: pulses, cpmg_y,
/// cpmg_x, xy8_y, xy8_x.
pub fn pulse_error_comparison(rabi: f64, amplitude_error: f64, tau: f64, blocks: &[usize]) -> Result<Table> {
    let pi = Pulse::rect(0.5 / rabi, rabi * (1.0 + amplitude_error));
    let pi2 = Pulse::half_pi(rabi);
    let mut t = Table::new(&["pulses", "cpmg_y", "cpmg_x", "xy8_y", "xy8_x"])
        .with_meta("amplitude_error", amplitude_error)
        .with_meta("rabi_MHz", rabi);
    let along_y = [0.0, -1.0, 0.0];
    let along_x = [1.0, 0.0, 0.0];
    for &m in blocks {
        let cpmg = build_cpmg(8 * m, tau, pi2, pi)?;
        let xy8 = build_xy8(m, tau, pi2, pi)?;
        t.push(vec![
            (8 * m) as f64,
            preserved(&cpmg, along_y)?,
            preserved(&cpmg, along_x)?,
            preserved(&xy8, along_y)?,
            preserved(&xy8, along_x)?,
        ]);
    }
    Ok(t)
}

/// In-phase and quadrature rms of a CPMG-n echo averaged over static
/// offsets spread across ±`spread` MHz, for each τ.
pub fn channel_leakage_study(
    amplifier: &AmplifierModel,
    n: usize,
    taus: &[f64],
    rabi: f64,
    spread: f64,
    offsets: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    amplifier.validate()?;
    let deltas: Vec<f64> = if offsets <= 1 {
        vec![0.0]
    } else {
        (0..offsets)
            .map(|k| -spread + 2.0 * spread * k as f64 / (offsets - 1) as f64)
            .collect()
    };
    let mut i_ch = Vec::with_capacity(taus.len());
    let mut q_ch = Vec::with_capacity(taus.len());
    for &tau in taus {
        let seq = build_cpmg(n, tau, Pulse::half_pi(rabi), Pulse::pi(rabi))?;
        let seq = apply_imperfections_shot(&seq, amplifier, 0, 0);
        let (mut si, mut sq) = (0.0, 0.0);
        for &d in &deltas {
            let out = propagate(
                &DensityState::thermal(),
                &seq,
                &PropagateOptions {
                    detuning: d,
                    ..Default::default()
                },
            )?;
            si += out.signal;
            sq += out.quadrature;
        }
        i_ch.push(si / deltas.len() as f64);
        q_ch.push(sq / deltas.len() as f64);
    }
    Ok((i_ch, q_ch))
}

/// (π/2) pulse length in µs at Rabi frequency `rabi` MHz.
pub fn half_pi_length(rabi: f64) -> f64 {
    FRAC_PI_2 / (2.0 * PI * rabi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoherence::{dip_times, AcFieldBath, AmplitudeDistribution};
    use crate::spectrum::{powder_grid, GridScheme};
    use crate::spin_core::AxialParameters;

    #[test]
    fn parabolic_refinement_is_exact_for_quadratic_dips() {
        // irregular grid; the interpolating parabola is the data itself
        let t: Vec<f64> = (0..40).map(|k| k as f64 * 0.1 + 0.013 * ((k * 7) % 5) as f64).collect();
        for t0 in [1.234, 2.0501, 3.3333] {
            let c: Vec<f64> = t.iter().map(|&x| 0.3 + 0.5 * (x - t0).powi(2)).collect();
            let tr = DecayTrace::without_errors(t.clone(), c).unwrap();
            let m = coherence_minima(&tr, 0.5);
            assert_eq!(m.len(), 1);
            assert!((m[0] - t0).abs() < 1e-12, "{} vs {t0}", m[0]);
        }
    }

    #[test]
    fn shallow_minima_are_ignored() {
        let t: Vec<f64> = (0..9).map(|k| k as f64).collect();
        let c = vec![1.0, 0.5, 1.0, 0.97, 1.0, 0.2, 1.0, 1.0, 1.0];
        let m = coherence_minima(&DecayTrace::without_errors(t, c).unwrap(), 0.5);
        assert_eq!(m.len(), 2);
        assert!((m[0] - 1.0).abs() < 1e-12 && (m[1] - 5.0).abs() < 1e-12);
        let flat = DecayTrace::without_errors(vec![0.0, 1.0, 2.0], vec![1.0; 3]).unwrap();
        assert!(coherence_minima(&flat, 0.5).is_empty());
    }

    #[test]
    fn parallel_features_follow_first_order_lines() {
        let sys = SpinSystem::cu_mnt();
        let grid = powder_grid(GridScheme::EqualAreaSpiral, 1024).unwrap();
        let range = FieldRange {
            start: 2700.0,
            stop: 3800.0,
            step: 0.5,
        };
        let report = fsed_experiment(&sys, 9500.0, &range, &grid, &Broadening::default(), Some(100.0)).unwrap();
        let feats: Vec<f64> = report
            .parallel_features
            .iter()
            .map(|f| f.expect("feature resolved"))
            .collect();
        assert_eq!(feats.len(), 4);
        // A∥ converted to Gauss at the centre of the parallel manifold
        let b_mid = 9500.0 / (AxialParameters::CU_MNT.g_par * sys.constants.electron_gyromagnetic_prefactor);
        let spacing = 495.4 * b_mid / 9500.0;
        for w in feats.windows(2) {
            assert!(((w[1] - w[0]) - spacing).abs() < 15.0, "{feats:?} vs {spacing}");
        }
        let r = report.bandwidth_ratio.unwrap();
        assert!((r - 100.0 * report.spectrum.field_of_max().unwrap() / 9500.0 / report.support_width).abs() < 1e-12);
        assert!(report.excitation_fraction.unwrap() > 0.0);
    }

    #[test]
    fn dip_study_minima_track_predicted_times() {
        let model = NoiseModel::AcField(AcFieldBath {
            larmor: 14.3,
            coupling_rms: 0.5,
            amplitude: AmplitudeDistribution::Fixed,
        });
        let taus: Vec<f64> = (1..=200).map(|k| k as f64 * 0.0005).collect();
        let study = dip_study(&model, &[16], &taus, 200, 3).unwrap();
        let predicted = dip_times(16, 14.3, 1).unwrap()[0];
        let observed = study.minima[0][0];
        assert!(
            (observed - predicted).abs() < 16.0 * 0.0005,
            "{observed} vs {predicted}"
        );
        assert!(dip_study(&model, &[0], &taus, 10, 3).is_err());
    }

    #[test]
    fn half_pi_length_matches_rotation_angle() {
        for rabi in [5.0, 25.0] {
            assert!((2.0 * PI * rabi * half_pi_length(rabi) - FRAC_PI_2).abs() < 1e-15);
        }
    }
}
