//! Python bindings: spin systems and powder spectra, pulse sequences and
//! propagation, decoherence engines and the fitting routines.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use spindecay::analysis;
use spindecay::decoherence::{
    self, AcFieldBath, AmplitudeDistribution, BathNucleus, OuNoise, QuantumBath, RamanRelaxation,
};
use spindecay::experiments;
use spindecay::instrument;
use spindecay::pulse::{self, DensityState, PropagateOptions, Relaxation};
use spindecay::spectrum::{self, Broadening, FieldRange, GridScheme, LineShape, SpectrumFitOptions};
use spindecay::spin_core::{self, AxialParameters, Spin};
use spindecay::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_) | Error::Config { .. } | Error::Parse(_) | Error::Capacity { .. } => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for spindecay::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Electron spin 1/2 with one axial nucleus.
#[pyclass(module = "spindecay", frozen, skip_from_py_object)]
#[derive(Clone)]
struct SpinSystem {
    inner: spin_core::SpinSystem,
    params: AxialParameters,
}

#[pymethods]
impl SpinSystem {
    #[new]
    #[pyo3(signature = (g_par, g_perp, a_par, a_perp, nuclear_spin = 1.5, g_n = spin_core::CU63_G_FACTOR))]
    fn new(g_par: f64, g_perp: f64, a_par: f64, a_perp: f64, nuclear_spin: f64, g_n: f64) -> PyResult<Self> {
        let params = AxialParameters {
            g_par,
            g_perp,
            a_par,
            a_perp,
        };
        let inner = spin_core::SpinSystem::axial(params, Spin::new(nuclear_spin).py()?, g_n);
        inner.validate().py()?;
        Ok(Self { inner, params })
    }

    /// The Cu(II) I = 3/2 centre.
    #[staticmethod]
    fn cu_mnt() -> Self {
        Self {
            inner: spin_core::SpinSystem::cu_mnt(),
            params: AxialParameters::CU_MNT,
        }
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    /// (g∥, g⊥, A∥ MHz, A⊥ MHz)
    #[getter]
    fn parameters(&self) -> (f64, f64, f64, f64) {
        let p = self.params;
        (p.g_par, p.g_perp, p.a_par, p.a_perp)
    }

    fn __repr__(&self) -> String {
        let p = self.params;
        format!(
            "SpinSystem(g_par={}, g_perp={}, a_par={}, a_perp={})",
            p.g_par, p.g_perp, p.a_par, p.a_perp
        )
    }
}

fn setup(grid: &str, grid_count: usize, shape: &str, width: f64) -> PyResult<(spectrum::PowderGrid, Broadening)> {
    let scheme: GridScheme = grid.parse().py()?;
    let shape: LineShape = shape.parse().py()?;
    Ok((
        spectrum::powder_grid(scheme, grid_count).py()?,
        Broadening { shape, width },
    ))
}

/// Field-swept echo-detected powder spectrum, normalised to unit maximum.
/// Returns (fields_G, intensity).
#[pyfunction]
#[pyo3(signature = (system, mw, start, stop, step, grid = "equal-area-spiral", grid_count = 4096, shape = "gaussian", width = 8.0))]
#[allow(clippy::too_many_arguments)]
fn simulate_fsed(
    py: Python<'_>,
    system: &SpinSystem,
    mw: f64,
    start: f64,
    stop: f64,
    step: f64,
    grid: &str,
    grid_count: usize,
    shape: &str,
    width: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let (g, b) = setup(grid, grid_count, shape, width)?;
    let range = FieldRange { start, stop, step };
    let s = py
        .detach(|| spectrum::simulate_fsed(&system.inner, mw, &range, &g, &b))
        .py()?;
    Ok((s.field_axis, s.intensity))
}

/// Spectrum plus derived features: support width, parallel hyperfine
/// features, rising edges and, with a bandwidth, the excited fraction.
#[pyfunction]
#[pyo3(signature = (system, mw, start, stop, step, grid_count = 4096, width = 8.0, bandwidth = None))]
#[allow(clippy::too_many_arguments)]
fn fsed_report<'py>(
    py: Python<'py>,
    system: &SpinSystem,
    mw: f64,
    start: f64,
    stop: f64,
    step: f64,
    grid_count: usize,
    width: f64,
    bandwidth: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let (g, b) = setup("equal-area-spiral", grid_count, "gaussian", width)?;
    let range = FieldRange { start, stop, step };
    let r = py
        .detach(|| experiments::fsed_experiment(&system.inner, mw, &range, &g, &b, bandwidth))
        .py()?;
    let d = PyDict::new(py);
    d.set_item("fields", r.spectrum.field_axis)?;
    d.set_item("intensity", r.spectrum.intensity)?;
    d.set_item("support_width", r.support_width)?;
    d.set_item("parallel_features", r.parallel_features)?;
    d.set_item("edges", r.edges)?;
    d.set_item("excitation_fraction", r.excitation_fraction)?;
    d.set_item("bandwidth_ratio", r.bandwidth_ratio)?;
    Ok(d)
}

/// Least-squares fit of the axial parameters and line width to a target
/// spectrum on its own field axis.
#[pyfunction]
#[pyo3(signature = (fields, intensity, start, mw, grid_count = 512, width = 8.0, fit_g = true, fit_width = true))]
#[allow(clippy::too_many_arguments)]
fn fit_spectrum(
    py: Python<'_>,
    fields: Vec<f64>,
    intensity: Vec<f64>,
    start: (f64, f64, f64, f64),
    mw: f64,
    grid_count: usize,
    width: f64,
    fit_g: bool,
    fit_width: bool,
) -> PyResult<FitResult> {
    let target = spectrum::Spectrum::new(fields, intensity).py()?;
    let (g, b) = setup("equal-area-spiral", grid_count, "gaussian", width)?;
    let initial = AxialParameters {
        g_par: start.0,
        g_perp: start.1,
        a_par: start.2,
        a_perp: start.3,
    };
    let opts = SpectrumFitOptions {
        fit_g,
        fit_width,
        ..Default::default()
    };
    let fit = py
        .detach(|| spectrum::fit_spectrum(&target, initial, mw, &g, &b, &opts))
        .py()?;
    Ok(FitResult { inner: fit })
}

#[pyclass(module = "spindecay", frozen, skip_from_py_object)]
#[derive(Clone)]
struct FitResult {
    inner: analysis::FitResult,
}

#[pymethods]
impl FitResult {
    #[getter]
    fn values<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for p in &self.inner.params {
            d.set_item(&p.name, p.value)?;
        }
        Ok(d)
    }

    #[getter]
    fn sigmas<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for p in &self.inner.params {
            d.set_item(&p.name, p.sigma)?;
        }
        Ok(d)
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn residual_norm(&self) -> f64 {
        self.inner.residual_norm
    }

    fn __getitem__(&self, name: &str) -> PyResult<f64> {
        self.inner
            .param(name)
            .map(|p| p.value)
            .ok_or_else(|| pyo3::exceptions::PyKeyError::new_err(name.to_string()))
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __repr__(&self) -> String {
        self.inner.to_table()
    }
}

#[pyclass(module = "spindecay", frozen, skip_from_py_object)]
#[derive(Clone)]
struct DecayTrace {
    inner: spindecay::DecayTrace,
}

#[pymethods]
impl DecayTrace {
    #[new]
    #[pyo3(signature = (t, coherence, stderr = None))]
    fn new(t: Vec<f64>, coherence: Vec<f64>, stderr: Option<Vec<f64>>) -> PyResult<Self> {
        let inner = match stderr {
            Some(s) => spindecay::DecayTrace::new(t, coherence, s),
            None => spindecay::DecayTrace::without_errors(t, coherence),
        }
        .py()?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: spindecay::DecayTrace::from_csv(text).py()?,
        })
    }

    #[getter]
    fn t(&self) -> Vec<f64> {
        self.inner.t.clone()
    }

    #[getter]
    fn coherence(&self) -> Vec<f64> {
        self.inner.coherence.clone()
    }

    #[getter]
    fn stderr(&self) -> Vec<f64> {
        self.inner.stderr.clone()
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Dephasing model for CPMG coherence; build with the static methods.
#[pyclass(module = "spindecay", frozen, skip_from_py_object)]
#[derive(Clone)]
struct NoiseModel {
    inner: decoherence::NoiseModel,
}

#[pymethods]
impl NoiseModel {
    /// Ornstein-Uhlenbeck detuning, σ in MHz, τc in µs.
    #[staticmethod]
    #[pyo3(signature = (sigma, tau_c, seed = 0))]
    fn ou(sigma: f64, tau_c: f64, seed: u64) -> PyResult<Self> {
        let ou = OuNoise {
            sigma,
            correlation_time: tau_c,
            seed,
        };
        ou.validate().py()?;
        Ok(Self {
            inner: decoherence::NoiseModel::Ou(ou),
        })
    }

    #[staticmethod]
    fn quasi_static(sigma: f64) -> PyResult<Self> {
        if sigma.is_nan() || sigma < 0.0 {
            return Err(PyValueError::new_err("sigma must be >= 0"));
        }
        Ok(Self {
            inner: decoherence::NoiseModel::QuasiStatic { sigma },
        })
    }

    /// Nuclear a.c. field at `larmor` MHz; amplitude "fixed" or "rayleigh".
    #[staticmethod]
    #[pyo3(signature = (larmor, coupling, amplitude = "fixed"))]
    fn ac_field(larmor: f64, coupling: f64, amplitude: &str) -> PyResult<Self> {
        let amplitude = match amplitude {
            "fixed" => AmplitudeDistribution::Fixed,
            "rayleigh" => AmplitudeDistribution::Rayleigh,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown amplitude distribution {other:?}"
                )))
            }
        };
        let ac = AcFieldBath {
            larmor,
            coupling_rms: coupling,
            amplitude,
        };
        ac.validate().py()?;
        Ok(Self {
            inner: decoherence::NoiseModel::AcField(ac),
        })
    }

    /// Independent nuclei given as (larmor, A, B) in MHz.
    #[staticmethod]
    fn quantum(nuclei: Vec<(f64, f64, f64)>) -> PyResult<Self> {
        let bath = QuantumBath {
            nuclei: nuclei
                .into_iter()
                .map(|(larmor, a_parallel, b_perp)| BathNucleus {
                    larmor,
                    a_parallel,
                    b_perp,
                })
                .collect(),
        };
        bath.validate().py()?;
        Ok(Self {
            inner: decoherence::NoiseModel::Quantum(bath),
        })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name()
    }
}

/// CPMG-n coherence at inter-pulse delays `taus` (µs); time axis t = nτ.
#[pyfunction]
#[pyo3(signature = (model, n, taus, realizations = 500, seed = 0))]
fn cpmg_coherence(
    py: Python<'_>,
    model: &NoiseModel,
    n: usize,
    taus: Vec<f64>,
    realizations: usize,
    seed: u64,
) -> PyResult<DecayTrace> {
    let tr = py
        .detach(|| decoherence::cpmg_coherence(&model.inner, n, &taus, realizations, seed))
        .py()?;
    Ok(DecayTrace { inner: tr })
}

/// Predicted coherence-dip times (µs) for k = 1..=k_max.
#[pyfunction]
#[pyo3(signature = (n, larmor, k_max = 3))]
fn dip_times(n: usize, larmor: f64, k_max: usize) -> PyResult<Vec<f64>> {
    decoherence::dip_times(n, larmor, k_max).py()
}

/// Times of coherence minima deeper than `min_depth` of the deepest.
#[pyfunction]
#[pyo3(signature = (trace, min_depth = 0.5))]
fn coherence_minima(trace: &DecayTrace, min_depth: f64) -> Vec<f64> {
    experiments::coherence_minima(&trace.inner, min_depth)
}

/// Raman T1 in ms calibrated from one (temperature K, T1 ms) point.
#[pyfunction]
fn t1_raman(calibration_k: f64, calibration_ms: f64, temperature: f64) -> PyResult<f64> {
    RamanRelaxation::calibrate(calibration_k, calibration_ms)
        .py()?
        .t1(temperature)
        .py()
}

#[pyfunction]
fn fit_stretched(trace: &DecayTrace) -> PyResult<FitResult> {
    Ok(FitResult {
        inner: analysis::fit_stretched(&trace.inner).py()?,
    })
}

/// `T_coh = T2·n^α` from (n, T_coh) pairs.
#[pyfunction]
fn fit_scaling(points: Vec<(f64, f64)>) -> PyResult<FitResult> {
    Ok(FitResult {
        inner: analysis::fit_scaling(&points).py()?,
    })
}

/// `1/T1 = c·T^p` from (temperature, T1) pairs.
#[pyfunction]
fn fit_t1_power(points: Vec<(f64, f64)>) -> PyResult<FitResult> {
    Ok(FitResult {
        inner: analysis::fit_t1_power(&points).py()?,
    })
}

/// Up to `max_peaks` peaks as (frequency, height, fwhm); MHz for dt in µs.
#[pyfunction]
#[pyo3(signature = (series, dt, max_peaks = 1))]
fn fft_peaks(series: Vec<f64>, dt: f64, max_peaks: usize) -> PyResult<Vec<(f64, f64, f64)>> {
    Ok(analysis::fft_peaks(&series, dt, max_peaks)
        .py()?
        .into_iter()
        .map(|p| (p.frequency, p.height, p.fwhm))
        .collect())
}

#[pyfunction]
fn figure_of_merit(t2: f64, gate_time: f64) -> f64 {
    analysis::figure_of_merit(t2, gate_time)
}

#[pyclass(module = "spindecay", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct Pulse {
    inner: pulse::Pulse,
}

#[pymethods]
impl Pulse {
    /// Rectangular pulse, duration µs, Rabi frequency MHz, phase rad.
    #[new]
    #[pyo3(signature = (duration, rabi_frequency, phase = 0.0))]
    fn new(duration: f64, rabi_frequency: f64, phase: f64) -> Self {
        Self {
            inner: pulse::Pulse::rect(duration, rabi_frequency).with_phase(phase),
        }
    }

    /// Instantaneous rotation by `angle` rad.
    #[staticmethod]
    #[pyo3(signature = (angle, phase = 0.0))]
    fn ideal(angle: f64, phase: f64) -> Self {
        Self {
            inner: pulse::Pulse::ideal(angle).with_phase(phase),
        }
    }

    #[staticmethod]
    fn pi(rabi_frequency: f64) -> Self {
        Self {
            inner: pulse::Pulse::pi(rabi_frequency),
        }
    }

    #[staticmethod]
    fn half_pi(rabi_frequency: f64) -> Self {
        Self {
            inner: pulse::Pulse::half_pi(rabi_frequency),
        }
    }

    #[getter]
    fn flip_angle(&self) -> f64 {
        self.inner.flip_angle()
    }

    #[getter]
    fn length(&self) -> f64 {
        self.inner.length()
    }
}

#[pyclass(module = "spindecay", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PulseSequence {
    inner: pulse::PulseSequence,
}

#[pymethods]
impl PulseSequence {
    #[staticmethod]
    fn cpmg(n: usize, tau: f64, pi2: &Pulse, pi: &Pulse) -> PyResult<Self> {
        Ok(Self {
            inner: pulse::build_cpmg(n, tau, pi2.inner, pi.inner).py()?,
        })
    }

    #[staticmethod]
    fn hahn(tau: f64, pi2: &Pulse, pi: &Pulse) -> PyResult<Self> {
        Ok(Self {
            inner: pulse::build_hahn(tau, pi2.inner, pi.inner).py()?,
        })
    }

    /// `m` XY-8 blocks.
    #[staticmethod]
    fn xy8(m: usize, tau: f64, pi2: &Pulse, pi: &Pulse) -> PyResult<Self> {
        Ok(Self {
            inner: pulse::build_xy8(m, tau, pi2.inner, pi.inner).py()?,
        })
    }

    /// Nutation pulse of length `tau_p` followed by a detection π pulse.
    #[staticmethod]
    #[pyo3(signature = (tau_p, nutation_rabi, pi, tau0 = pulse::DEFAULT_TAU0))]
    fn rabi(tau_p: f64, nutation_rabi: f64, pi: &Pulse, tau0: f64) -> PyResult<Self> {
        Ok(Self {
            inner: pulse::build_rabi(tau_p, tau0, nutation_rabi, pi.inner).py()?,
        })
    }

    #[getter]
    fn total_duration(&self) -> f64 {
        self.inner.total_duration()
    }

    #[getter]
    fn evolution_time(&self) -> f64 {
        self.inner.evolution_time
    }

    /// The sequence as played through an amplifier preset ("twta", "sspa",
    /// "ideal") with optional relative amplitude jitter.
    #[pyo3(signature = (amplifier, seed = 0, jitter = 0.0))]
    fn through(&self, amplifier: &str, seed: u64, jitter: f64) -> PyResult<Self> {
        let model = instrument::AmplifierModel::preset(amplifier).py()?.with_jitter(jitter);
        model.validate().py()?;
        Ok(Self {
            inner: instrument::apply_imperfections(&self.inner, &model, seed),
        })
    }

    fn __eq__(&self, other: &PulseSequence) -> bool {
        self.inner == other.inner
    }
}

/// Propagate thermal equilibrium through `sequence`. Returns a dict with
/// signal, quadrature and the final Bloch vector.
#[pyfunction]
#[pyo3(signature = (sequence, detuning = 0.0, t1 = None, t2 = None))]
fn propagate<'py>(
    py: Python<'py>,
    sequence: &PulseSequence,
    detuning: f64,
    t1: Option<f64>,
    t2: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let relaxation = match (t1, t2) {
        (Some(t1), Some(t2)) => Some(Relaxation { t1, t2 }),
        (None, None) => None,
        _ => return Err(PyValueError::new_err("give both t1 and t2, or neither")),
    };
    let opts = PropagateOptions {
        detuning,
        relaxation,
        ..Default::default()
    };
    let out = pulse::propagate(&DensityState::thermal(), &sequence.inner, &opts).py()?;
    let d = PyDict::new(py);
    d.set_item("signal", out.signal)?;
    d.set_item("quadrature", out.quadrature)?;
    d.set_item("bloch", out.final_state.bloch().to_vec())?;
    Ok(d)
}

/// Accumulated phase droop in degrees after `on_time` µs of pulsing.
#[pyfunction]
fn phase_droop(amplifier: &str, on_time: f64) -> PyResult<f64> {
    let model = instrument::AmplifierModel::preset(amplifier).py()?;
    Ok(instrument::phase_droop(&model, on_time))
}

#[pymodule]
#[pyo3(name = "spindecay")]
fn spindecay_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<SpinSystem>()?;
    m.add_class::<FitResult>()?;
    m.add_class::<DecayTrace>()?;
    m.add_class::<NoiseModel>()?;
    m.add_class::<Pulse>()?;
    m.add_class::<PulseSequence>()?;
    m.add_function(wrap_pyfunction!(simulate_fsed, m)?)?;
    m.add_function(wrap_pyfunction!(fsed_report, m)?)?;
    m.add_function(wrap_pyfunction!(fit_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(cpmg_coherence, m)?)?;
    m.add_function(wrap_pyfunction!(dip_times, m)?)?;
    m.add_function(wrap_pyfunction!(coherence_minima, m)?)?;
    m.add_function(wrap_pyfunction!(t1_raman, m)?)?;
    m.add_function(wrap_pyfunction!(fit_stretched, m)?)?;
    m.add_function(wrap_pyfunction!(fit_scaling, m)?)?;
    m.add_function(wrap_pyfunction!(fit_t1_power, m)?)?;
    m.add_function(wrap_pyfunction!(fft_peaks, m)?)?;
    m.add_function(wrap_pyfunction!(figure_of_merit, m)?)?;
    m.add_function(wrap_pyfunction!(propagate, m)?)?;
    m.add_function(wrap_pyfunction!(phase_droop, m)?)?;
    Ok(())
}
