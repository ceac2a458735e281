//! Typed, validated experiment descriptions built from a [`Config`].
//!
//! Everything that can be checked without running the experiment is
//! checked here, so a plan that builds will not fail on its inputs later.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use super::config::{config_error, Config, Origin};
use crate::decoherence::{AcFieldBath, AmplitudeDistribution, BathNucleus, NoiseModel, OuNoise, QuantumBath};
use crate::error::{Error, Result};
use crate::instrument::AmplifierModel;
use crate::pulse::{build_cpmg, build_xy8, Pulse, DEFAULT_TAU0};
use crate::rng::substream_seed;
use crate::spectrum::{
    powder_grid, Broadening, FieldRange, GridScheme, LineShape, PowderGrid, Spectrum, SpectrumFitOptions,
    DEFAULT_GRID_COUNT, DEFAULT_LINE_WIDTH,
};
use crate::spin_core::{AxialParameters, PhysicalConstants, Spin, SpinSystem, CU63_G_FACTOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Fsed,
    Rabi,
    T1,
    Cpmg,
    Xy8,
    Dips,
    Fit,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Fsed,
        ExperimentKind::Rabi,
        ExperimentKind::T1,
        ExperimentKind::Cpmg,
        ExperimentKind::Xy8,
        ExperimentKind::Dips,
        ExperimentKind::Fit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Fsed => "fsed",
            ExperimentKind::Rabi => "rabi",
            ExperimentKind::T1 => "t1",
            ExperimentKind::Cpmg => "cpmg",
            ExperimentKind::Xy8 => "xy8",
            ExperimentKind::Dips => "dips",
            ExperimentKind::Fit => "fit",
        }
    }

    /// Sections an experiment reads besides run, output and constants.
    fn sections(self) -> &'static [&'static str] {
        match self {
            ExperimentKind::Fsed => &["spin_system", "spectrum"],
            ExperimentKind::Fit => &["spin_system", "spectrum", "fit"],
            ExperimentKind::Rabi => &["rabi", "instrument"],
            ExperimentKind::T1 => &["t1"],
            ExperimentKind::Cpmg => &["sequence", "noise", "instrument"],
            ExperimentKind::Xy8 => &["sequence"],
            ExperimentKind::Dips => &["sequence", "noise"],
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| "unknown experiment; expected one of fsed, rabi, t1, cpmg, xy8, dips, fit".to_string())
    }
}

#[derive(Debug, Clone)]
pub struct SpectrumSetup {
    pub system: SpinSystem,
    pub mw: f64,
    pub range: FieldRange,
    pub grid: PowderGrid,
    pub broadening: Broadening,
}

#[derive(Debug, Clone)]
pub struct FsedJob {
    pub setup: SpectrumSetup,
    pub bandwidth: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FitJob {
    pub setup: SpectrumSetup,
    /// `None`: fit a spectrum simulated from the spin system itself.
    pub target: Option<Spectrum>,
    pub start: AxialParameters,
    pub start_width: f64,
    pub options: SpectrumFitOptions,
}

#[derive(Debug, Clone)]
pub struct RabiJob {
    pub nutation: Vec<f64>,
    pub tau0: f64,
    pub dt: f64,
    pub samples: usize,
    pub shots: usize,
    pub amplifier: AmplifierModel,
}

#[derive(Debug, Clone)]
pub struct T1Job {
    pub calibration: (f64, f64),
    pub temperatures: Vec<f64>,
    pub noise_rel: f64,
    pub ir_temperature: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpmgMode {
    /// Pilot-placed traces, stretched fits per n and the power law across n.
    Scaling,
    /// Coherence on an explicit τ grid.
    Sweep,
    /// In-phase and quadrature echoes through an amplifier model.
    Leakage,
}

impl FromStr for CpmgMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "scaling" => Ok(CpmgMode::Scaling),
            "sweep" => Ok(CpmgMode::Sweep),
            "leakage" => Ok(CpmgMode::Leakage),
            _ => Err("expected scaling, sweep or leakage".into()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CpmgJob {
    pub mode: CpmgMode,
    pub ns: Vec<usize>,
    pub model: Option<NoiseModel>,
    pub points: usize,
    pub realizations: usize,
    pub taus: Vec<f64>,
    /// µs; multiplies traces by exp(−t/(2·T1)).
    pub t1: Option<f64>,
    pub amplifier: AmplifierModel,
    pub rabi: f64,
    pub offsets: usize,
    pub spread: f64,
}

#[derive(Debug, Clone)]
pub struct Xy8Job {
    pub rabi: f64,
    pub amplitude_error: f64,
    pub tau: f64,
    pub blocks: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct DipsJob {
    pub ns: Vec<usize>,
    pub model: NoiseModel,
    pub larmor: f64,
    pub taus: Vec<f64>,
    pub realizations: usize,
    pub k_max: usize,
}

#[derive(Debug, Clone)]
pub enum Job {
    Fsed(FsedJob),
    Fit(FitJob),
    Rabi(RabiJob),
    T1(T1Job),
    Cpmg(CpmgJob),
    Xy8(Xy8Job),
    Dips(DipsJob),
}

#[derive(Debug, Clone)]
pub struct Plan {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub prefix: String,
    pub job: Job,
}

/// Re-anchor a module invariant failure at the section it came from.
fn in_section<T>(cfg: &Config, section: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::InvalidArgument(m) | Error::Consistency(m) => {
            config_error(&cfg.section_origin(section), format!("[{section}] {m}"))
        }
        other => other,
    })
}

fn key_error(cfg: &Config, section: &str, key: &str, message: impl Into<String>) -> Error {
    let origin = cfg
        .entry(section, key)
        .map(|e| e.origin.clone())
        .unwrap_or_else(|| cfg.section_origin(section));
    config_error(&origin, format!("[{section}] {key}: {}", message.into()))
}

fn positive(cfg: &Config, section: &str, key: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(key_error(cfg, section, key, format!("must be > 0, got {v}")))
    }
}

fn at_least(cfg: &Config, section: &str, key: &str, v: usize, min: usize) -> Result<usize> {
    if v >= min {
        Ok(v)
    } else {
        Err(key_error(cfg, section, key, format!("must be >= {min}, got {v}")))
    }
}

fn constants(cfg: &Config) -> Result<PhysicalConstants> {
    let d = PhysicalConstants::default();
    let c = PhysicalConstants {
        electron_gyromagnetic_prefactor: cfg.get_or(
            "constants",
            "beta_e_MHz_per_G",
            d.electron_gyromagnetic_prefactor,
        )?,
        nuclear_magneton_prefactor: cfg.get_or("constants", "beta_n_kHz_per_G", d.nuclear_magneton_prefactor)?,
        proton_g_factor: cfg.get_or("constants", "g_proton", d.proton_g_factor)?,
    };
    in_section(cfg, "constants", c.validate())?;
    Ok(c)
}

fn axial_from(cfg: &Config, section: &str, prefix: &str, fallback: Option<AxialParameters>) -> Result<AxialParameters> {
    let get = |key: &str, fb: Option<f64>| -> Result<f64> {
        let full = format!("{prefix}{key}");
        match (cfg.opt::<f64>(section, &full)?, fb) {
            (Some(v), _) => Ok(v),
            (None, Some(v)) => Ok(v),
            (None, None) => cfg.get(section, &full),
        }
    };
    Ok(AxialParameters {
        g_par: get("g_par", fallback.map(|p| p.g_par))?,
        g_perp: get("g_perp", fallback.map(|p| p.g_perp))?,
        a_par: get("A_par_MHz", fallback.map(|p| p.a_par))?,
        a_perp: get("A_perp_MHz", fallback.map(|p| p.a_perp))?,
    })
}

fn spin_system(cfg: &Config) -> Result<(SpinSystem, AxialParameters)> {
    let params = axial_from(cfg, "spin_system", "", None)?;
    let i: f64 = cfg.get_or("spin_system", "I", 1.5)?;
    let spin = in_section(cfg, "spin_system", Spin::new(i))?;
    let g_n = cfg.get_or("spin_system", "g_n", CU63_G_FACTOR)?;
    let mut system = SpinSystem::axial(params, spin, g_n);
    system.constants = constants(cfg)?;
    in_section(cfg, "spin_system", system.validate())?;
    Ok((system, params))
}

fn spectrum_setup(cfg: &Config, system: SpinSystem) -> Result<SpectrumSetup> {
    let s = "spectrum";
    let mw = positive(cfg, s, "mw_MHz", cfg.get(s, "mw_MHz")?)?;
    let range = FieldRange {
        start: cfg.get(s, "field_start_G")?,
        stop: cfg.get(s, "field_stop_G")?,
        step: cfg.get(s, "field_step_G")?,
    };
    in_section(cfg, s, range.axis())?;
    let scheme: GridScheme = in_section(cfg, s, cfg.get_or(s, "grid", "equal-area-spiral".to_string())?.parse())?;
    let count = cfg.get_or(s, "grid_count", DEFAULT_GRID_COUNT)?;
    let grid = in_section(cfg, s, powder_grid(scheme, count))?;
    let shape: LineShape = in_section(cfg, s, cfg.get_or(s, "line_shape", "gaussian".to_string())?.parse())?;
    let width = positive(cfg, s, "width_G", cfg.get_or(s, "width_G", DEFAULT_LINE_WIDTH)?)?;
    Ok(SpectrumSetup {
        system,
        mw,
        range,
        grid,
        broadening: Broadening { shape, width },
    })
}

fn amplifier(cfg: &Config) -> Result<AmplifierModel> {
    let s = "instrument";
    let mut model: AmplifierModel = in_section(cfg, s, cfg.get_or(s, "amplifier", "ideal".to_string())?.parse())?;
    if let Some(v) = cfg.opt(s, "droop_total_deg")? {
        model.droop_total = v;
    }
    if let Some(v) = cfg.opt(s, "droop_span_us")? {
        model.droop_span = v;
    }
    if let Some(v) = cfg.opt(s, "jitter_rel")? {
        model.amplitude_jitter_rel = v;
    }
    in_section(cfg, s, model.validate())?;
    Ok(model)
}

/// `f:A:B` triples separated by `;` or `,`.
fn parse_nuclei(cfg: &Config) -> Result<Vec<BathNucleus>> {
    let text = cfg.string("noise", "nuclei").unwrap_or("");
    let mut out = Vec::new();
    for item in text.split([';', ',']).map(str::trim).filter(|s| !s.is_empty()) {
        let parts: Vec<&str> = item.split(':').map(str::trim).collect();
        let vals: Option<Vec<f64>> = parts.iter().map(|p| p.parse().ok()).collect();
        match vals.as_deref() {
            Some([larmor, a, b]) => out.push(BathNucleus {
                larmor: *larmor,
                a_parallel: *a,
                b_perp: *b,
            }),
            _ => {
                return Err(key_error(
                    cfg,
                    "noise",
                    "nuclei",
                    format!("expected larmor:A:B in MHz, found {item:?}"),
                ));
            }
        }
    }
    if out.is_empty() {
        return Err(key_error(cfg, "noise", "nuclei", "at least one nucleus is required"));
    }
    Ok(out)
}

fn noise_model(cfg: &Config, seed: u64) -> Result<NoiseModel> {
    let s = "noise";
    let model = cfg.get::<String>(s, "model")?;
    let m = match model.as_str() {
        "ou" => {
            let ou = OuNoise {
                sigma: cfg.get(s, "sigma_MHz")?,
                correlation_time: cfg.get(s, "tau_c_us")?,
                seed: substream_seed(seed, "ou-trajectory"),
            };
            in_section(cfg, s, ou.validate())?;
            NoiseModel::Ou(ou)
        }
        "quasi-static" => {
            let sigma: f64 = cfg.get(s, "sigma_MHz")?;
            if !(sigma >= 0.0) {
                return Err(key_error(cfg, s, "sigma_MHz", "must be >= 0"));
            }
            NoiseModel::QuasiStatic { sigma }
        }
        "ac" => {
            let amplitude = match cfg.get_or(s, "amplitude", "fixed".to_string())?.as_str() {
                "fixed" => AmplitudeDistribution::Fixed,
                "rayleigh" => AmplitudeDistribution::Rayleigh,
                other => {
                    return Err(key_error(
                        cfg,
                        s,
                        "amplitude",
                        format!("expected fixed or rayleigh, found {other:?}"),
                    ))
                }
            };
            let ac = AcFieldBath {
                larmor: cfg.get(s, "larmor_MHz")?,
                coupling_rms: cfg.get(s, "coupling_MHz")?,
                amplitude,
            };
            in_section(cfg, s, ac.validate())?;
            NoiseModel::AcField(ac)
        }
        "quantum" => {
            let bath = QuantumBath {
                nuclei: parse_nuclei(cfg)?,
            };
            in_section(cfg, s, bath.validate())?;
            NoiseModel::Quantum(bath)
        }
        other => {
            return Err(key_error(
                cfg,
                s,
                "model",
                format!("expected ou, quasi-static, ac or quantum, found {other:?}"),
            ));
        }
    };
    Ok(m)
}

/// Uniform τ grid from `tau_start_us` to `tau_stop_us` inclusive.
fn tau_grid(cfg: &Config) -> Result<Vec<f64>> {
    let s = "sequence";
    let start: f64 = cfg.get(s, "tau_start_us")?;
    let stop: f64 = cfg.get(s, "tau_stop_us")?;
    let points = at_least(cfg, s, "tau_points", cfg.get(s, "tau_points")?, 2)?;
    if !(start > 0.0) || !(stop > start) {
        return Err(key_error(
            cfg,
            s,
            "tau_start_us",
            format!("need 0 < start < stop, got {start}..{stop}"),
        ));
    }
    Ok((0..points)
        .map(|k| start + (stop - start) * k as f64 / (points - 1) as f64)
        .collect())
}

fn pulse_counts(cfg: &Config) -> Result<Vec<usize>> {
    let ns = cfg
        .list::<usize>("sequence", "n")?
        .ok_or_else(|| key_error(cfg, "sequence", "n", "a list of pulse counts is required"))?;
    if ns.is_empty() || ns.contains(&0) {
        return Err(key_error(cfg, "sequence", "n", "pulse counts must be >= 1"));
    }
    Ok(ns)
}

fn read_target(cfg: &Config, text: &str) -> Result<Spectrum> {
    let path = cfg.base_dir.join(text);
    let origin = cfg
        .entry("fit", "target")
        .map(|e| e.origin.clone())
        .unwrap_or(Origin::Override);
    let body = std::fs::read_to_string(&path)
        .map_err(|e| config_error(&origin, format!("[fit] target {}: {e}", path.display())))?;
    let spec = Spectrum::from_csv(&body)
        .map_err(|e| config_error(&origin, format!("[fit] target {}: {e}", path.display())))?;
    if spec.is_empty() {
        return Err(config_error(&origin, "[fit] target spectrum is empty"));
    }
    Ok(spec)
}

impl Plan {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let kind: ExperimentKind = cfg.get("run", "experiment")?;
        let seed: u64 = cfg.get_or("run", "seed", 0)?;
        for sec in cfg.sections.keys() {
            let common = ["run", "output", "constants"].contains(&sec.as_str());
            if !common && !kind.sections().contains(&sec.as_str()) {
                return Err(config_error(
                    &cfg.section_origin(sec),
                    format!("section [{sec}] is not used by experiment {kind}"),
                ));
            }
        }
        let output_dir = PathBuf::from(cfg.get_or("output", "dir", "out".to_string())?);
        let prefix = cfg.get_or("output", "prefix", kind.name().to_string())?;
        if prefix.is_empty() || prefix.contains(['/', '\\']) {
            return Err(key_error(cfg, "output", "prefix", "must be a non-empty file-name stem"));
        }
        let job = match kind {
            ExperimentKind::Fsed => {
                let (system, _) = spin_system(cfg)?;
                let bandwidth = cfg.opt::<f64>("spectrum", "bandwidth_MHz")?;
                if let Some(bw) = bandwidth {
                    if !(bw >= 0.0) {
                        return Err(key_error(cfg, "spectrum", "bandwidth_MHz", "must be >= 0"));
                    }
                }
                Job::Fsed(FsedJob {
                    setup: spectrum_setup(cfg, system)?,
                    bandwidth,
                })
            }
            ExperimentKind::Fit => {
                let (system, truth) = spin_system(cfg)?;
                let setup = spectrum_setup(cfg, system)?;
                let target = match cfg.string("fit", "target") {
                    Some(t) if !t.is_empty() => Some(read_target(cfg, t)?),
                    _ => None,
                };
                let start = axial_from(cfg, "fit", "start_", Some(truth))?;
                let in_g = |g: f64| (1.5..=3.0).contains(&g);
                let in_a = |a: f64| (0.0..=2000.0).contains(&a);
                if !(in_g(start.g_par) && in_g(start.g_perp) && in_a(start.a_par) && in_a(start.a_perp)) {
                    return Err(config_error(
                        &cfg.section_origin("fit"),
                        "[fit] start values must have g in [1.5, 3] and A in [0, 2000] MHz",
                    ));
                }
                let start_width = positive(
                    cfg,
                    "fit",
                    "start_width_G",
                    cfg.get_or("fit", "start_width_G", setup.broadening.width)?,
                )?;
                let mut options = SpectrumFitOptions {
                    nuclear_spin: setup.system.nuclei[0].spin,
                    g_n: setup.system.nuclei[0].g_n,
                    fit_g: cfg.get_or("fit", "fit_g", true)?,
                    fit_width: cfg.get_or("fit", "fit_width", true)?,
                    ..SpectrumFitOptions::default()
                };
                options.lm.max_iterations = at_least(
                    cfg,
                    "fit",
                    "max_iterations",
                    cfg.get_or("fit", "max_iterations", options.lm.max_iterations)?,
                    1,
                )?;
                Job::Fit(FitJob {
                    setup,
                    target,
                    start,
                    start_width,
                    options,
                })
            }
            ExperimentKind::Rabi => {
                let s = "rabi";
                let nutation = cfg
                    .list::<f64>(s, "nutation_MHz")?
                    .unwrap_or_else(|| vec![5.0, 10.0, 25.0]);
                if nutation.is_empty() || nutation.iter().any(|v| !(*v > 0.0)) {
                    return Err(key_error(cfg, s, "nutation_MHz", "frequencies must be > 0"));
                }
                let tau0 = positive(cfg, s, "tau0_us", cfg.get_or(s, "tau0_us", DEFAULT_TAU0)?)?;
                let dt = positive(cfg, s, "dt_us", cfg.get_or(s, "dt_us", 0.002)?)?;
                let samples = at_least(cfg, s, "samples", cfg.get_or(s, "samples", 512)?, 32)?;
                let shots = at_least(cfg, s, "shots", cfg.get_or(s, "shots", 1)?, 1)?;
                let max_nu = nutation.iter().cloned().fold(0.0, f64::max);
                if dt * max_nu > 0.5 {
                    return Err(key_error(
                        cfg,
                        s,
                        "dt_us",
                        format!("sampling {dt} µs aliases {max_nu} MHz nutation"),
                    ));
                }
                Job::Rabi(RabiJob {
                    nutation,
                    tau0,
                    dt,
                    samples,
                    shots,
                    amplifier: amplifier(cfg)?,
                })
            }
            ExperimentKind::T1 => {
                let s = "t1";
                let cal_t = positive(cfg, s, "calibration_K", cfg.get(s, "calibration_K")?)?;
                let cal_t1 = positive(cfg, s, "calibration_T1_ms", cfg.get(s, "calibration_T1_ms")?)?;
                let temperatures = cfg
                    .list::<f64>(s, "temperatures_K")?
                    .ok_or_else(|| key_error(cfg, s, "temperatures_K", "a list of temperatures is required"))?;
                let mut distinct = temperatures.clone();
                distinct.sort_by(f64::total_cmp);
                distinct.dedup();
                if distinct.len() < 3 || temperatures.iter().any(|t| !(*t > 0.0)) {
                    return Err(key_error(
                        cfg,
                        s,
                        "temperatures_K",
                        "need at least three distinct temperatures > 0 K",
                    ));
                }
                let noise_rel: f64 = cfg.get_or(s, "noise_rel", 0.0)?;
                if !(0.0..0.5).contains(&noise_rel) {
                    return Err(key_error(cfg, s, "noise_rel", "must lie in [0, 0.5)"));
                }
                let ir_temperature = match cfg.opt::<f64>(s, "ir_temperature_K")? {
                    Some(t) => Some(positive(cfg, s, "ir_temperature_K", t)?),
                    None => None,
                };
                Job::T1(T1Job {
                    calibration: (cal_t, cal_t1),
                    temperatures,
                    noise_rel,
                    ir_temperature,
                })
            }
            ExperimentKind::Cpmg => {
                let s = "sequence";
                let mode: CpmgMode = cfg.get_or(s, "mode", CpmgMode::Scaling)?;
                let ns = pulse_counts(cfg)?;
                let model = match mode {
                    CpmgMode::Leakage => {
                        if cfg.sections.contains_key("noise") {
                            return Err(config_error(
                                &cfg.section_origin("noise"),
                                "leakage mode runs without a noise model",
                            ));
                        }
                        None
                    }
                    _ => Some(noise_model(cfg, seed)?),
                };
                let taus = match mode {
                    CpmgMode::Scaling => Vec::new(),
                    _ => tau_grid(cfg)?,
                };
                let realizations = at_least(cfg, s, "realizations", cfg.get_or(s, "realizations", 500)?, 1)?;
                let points = at_least(cfg, s, "points", cfg.get_or(s, "points", 30)?, 8)?;
                if mode == CpmgMode::Scaling && matches!(model, Some(NoiseModel::Quantum(_))) {
                    return Err(key_error(
                        cfg,
                        s,
                        "mode",
                        "scaling needs a classical noise model; use sweep for the quantum bath",
                    ));
                }
                let t1 = match cfg.opt::<f64>("noise", "t1_us")? {
                    Some(v) => Some(positive(cfg, "noise", "t1_us", v)?),
                    None => None,
                };
                let rabi = positive(cfg, s, "rabi_MHz", cfg.get_or(s, "rabi_MHz", 25.0)?)?;
                let offsets = at_least(cfg, s, "offsets", cfg.get_or(s, "offsets", 11)?, 1)?;
                let spread: f64 = cfg.get_or(s, "spread_MHz", 5.0)?;
                if !(spread >= 0.0) {
                    return Err(key_error(cfg, s, "spread_MHz", "must be >= 0"));
                }
                let amp = amplifier(cfg)?;
                if mode == CpmgMode::Leakage {
                    for &n in &ns {
                        in_section(
                            cfg,
                            s,
                            build_cpmg(n, taus[0], Pulse::half_pi(rabi), Pulse::pi(rabi)).map(|_| ()),
                        )?;
                    }
                } else if cfg.sections.contains_key("instrument") {
                    return Err(config_error(
                        &cfg.section_origin("instrument"),
                        "[instrument] applies only to leakage mode",
                    ));
                }
                Job::Cpmg(CpmgJob {
                    mode,
                    ns,
                    model,
                    points,
                    realizations,
                    taus,
                    t1,
                    amplifier: amp,
                    rabi,
                    offsets,
                    spread,
                })
            }
            ExperimentKind::Xy8 => {
                let s = "sequence";
                let rabi = positive(cfg, s, "rabi_MHz", cfg.get_or(s, "rabi_MHz", 25.0)?)?;
                let amplitude_error: f64 = cfg.get_or(s, "amplitude_error", 0.01)?;
                if !(amplitude_error.abs() < 1.0) {
                    return Err(key_error(cfg, s, "amplitude_error", "must lie in (-1, 1)"));
                }
                let tau = positive(cfg, s, "tau_us", cfg.get_or(s, "tau_us", 0.5)?)?;
                let blocks = cfg.list::<usize>(s, "blocks")?.unwrap_or_else(|| vec![1, 2, 4, 8]);
                if blocks.is_empty() || blocks.contains(&0) {
                    return Err(key_error(cfg, s, "blocks", "repetition counts must be >= 1"));
                }
                in_section(
                    cfg,
                    s,
                    build_xy8(1, tau, Pulse::half_pi(rabi), Pulse::pi(rabi)).map(|_| ()),
                )?;
                Job::Xy8(Xy8Job {
                    rabi,
                    amplitude_error,
                    tau,
                    blocks,
                })
            }
            ExperimentKind::Dips => {
                let s = "sequence";
                let ns = pulse_counts(cfg)?;
                let model = noise_model(cfg, seed)?;
                let larmor = match &model {
                    NoiseModel::AcField(ac) => ac.larmor,
                    NoiseModel::Quantum(b) => b.nuclei[0].larmor,
                    _ => return Err(key_error(cfg, "noise", "model", "dips need the ac or quantum model")),
                };
                Job::Dips(DipsJob {
                    ns,
                    model,
                    larmor,
                    taus: tau_grid(cfg)?,
                    realizations: at_least(cfg, s, "realizations", cfg.get_or(s, "realizations", 1000)?, 1)?,
                    k_max: at_least(cfg, s, "k_max", cfg.get_or(s, "k_max", 3)?, 1)?,
                })
            }
        };
        Ok(Plan {
            kind,
            seed,
            output_dir,
            prefix,
            job,
        })
    }
}
