//! Pulse sequences and rotating-frame propagation of the resonant electron
//! doublet.
//!
//! The two-level Hamiltonian of a segment is
//! `H = (Δ + δ(t) + Δ_pulse)·Sz + ω1·(cos φ·Sx + sin φ·Sy)` in MHz, and each
//! segment propagator is the closed-form SU(2) element `exp(−2πi·H·t)`.
//! The density matrix is stored in the basis (|+1/2>, |−1/2>).
//!
//! Sign convention: starting from thermal equilibrium (+z), a (π/2)x pulse
//! puts the spin along −y, so echo readouts report `−<σy>` and a noiseless
//! Hahn echo with ideal pulses gives +1.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Matrix2;
use num_complex::Complex64;

use crate::decoherence::NoiseSeries;
use crate::error::{Error, Result};

pub type Mat2 = Matrix2<Complex64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pulse {
    /// µs
    pub duration: f64,
    /// ω1/2π in MHz.
    pub rabi_frequency: f64,
    /// Radians; 0 is x, π/2 is y.
    pub phase: f64,
    /// Spin resonance offset from this pulse's carrier, MHz.
    pub frequency_offset: f64,
    /// Instantaneous rotation by this angle instead of a finite pulse.
    pub ideal_angle: Option<f64>,
}

impl Pulse {
    pub fn rect(duration: f64, rabi_frequency: f64) -> Self {
        Self {
            duration,
            rabi_frequency,
            phase: 0.0,
            frequency_offset: 0.0,
            ideal_angle: None,
        }
    }

    pub fn ideal(angle: f64) -> Self {
        Self {
            duration: 0.0,
            rabi_frequency: 0.0,
            phase: 0.0,
            frequency_offset: 0.0,
            ideal_angle: Some(angle),
        }
    }

    /// Finite π pulse at the given Rabi frequency.
    pub fn pi(rabi_frequency: f64) -> Self {
        Self::rect(0.5 / rabi_frequency, rabi_frequency)
    }

    /// Finite π/2 pulse at the given Rabi frequency.
    pub fn half_pi(rabi_frequency: f64) -> Self {
        Self::rect(0.25 / rabi_frequency, rabi_frequency)
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = phase;
        self
    }

    /// Time the pulse occupies; zero for ideal pulses.
    pub fn length(&self) -> f64 {
        if self.ideal_angle.is_some() {
            0.0
        } else {
            self.duration
        }
    }

    /// Nominal rotation angle on resonance, radians.
    pub fn flip_angle(&self) -> f64 {
        self.ideal_angle
            .unwrap_or(2.0 * PI * self.rabi_frequency * self.duration)
    }

    fn validate(&self) -> Result<()> {
        if self.ideal_angle.is_none() && !(self.duration >= 0.0 && self.rabi_frequency >= 0.0) {
            return Err(Error::invalid(format!(
                "pulse needs duration >= 0 and rabi_frequency >= 0, got {} µs / {} MHz",
                self.duration, self.rabi_frequency
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Element {
    Pulse(Pulse),
    /// Free evolution, µs.
    Delay(f64),
}

impl Element {
    pub fn length(&self) -> f64 {
        match self {
            Element::Pulse(p) => p.length(),
            Element::Delay(d) => *d,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readout {
    /// −<σy> at the echo apex (in-phase channel), with <σx> as quadrature.
    EchoIntegrated,
    MagnetizationZ,
    /// |<σx> + i<σy>|
    CoherenceXy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence {
    pub elements: Vec<Element>,
    pub readout: Readout,
    /// Time axis value of the readout (t = nτ for decoupling trains), µs.
    pub evolution_time: f64,
}

impl PulseSequence {
    pub fn explicit(elements: Vec<Element>, readout: Readout) -> Result<Self> {
        let seq = Self {
            evolution_time: elements.iter().map(Element::length).sum(),
            elements,
            readout,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn total_duration(&self) -> f64 {
        self.elements.iter().map(Element::length).sum()
    }

    pub fn pulses(&self) -> impl Iterator<Item = &Pulse> {
        self.elements.iter().filter_map(|e| match e {
            Element::Pulse(p) => Some(p),
            Element::Delay(_) => None,
        })
    }

    /// Pulses after the first, i.e. the refocusing train of a decoupling sequence.
    pub fn refocusing_phases(&self) -> Vec<f64> {
        self.pulses().skip(1).map(|p| p.phase).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.elements {
            match e {
                Element::Pulse(p) => p.validate()?,
                Element::Delay(d) if !(*d >= 0.0) || !d.is_finite() => {
                    return Err(Error::invalid(format!("delay {d} µs must be finite and >= 0")));
                }
                Element::Delay(_) => {}
            }
        }
        Ok(())
    }
}

/// `τp − τ0 − π − τ0 − echo` with the nutation pulse along x.
pub fn build_rabi(tau_p: f64, tau0: f64, nutation_rabi: f64, pi_pulse: Pulse) -> Result<PulseSequence> {
    if !(tau_p >= 0.0) || !(tau0 >= 0.0) {
        return Err(Error::invalid("rabi: tau_p and tau0 must be >= 0"));
    }
    let mut elements = Vec::new();
    if tau_p > 0.0 {
        elements.push(Element::Pulse(Pulse::rect(tau_p, nutation_rabi)));
    }
    let pl = pi_pulse.length();
    elements.push(Element::Delay((tau0 - pl / 2.0).max(0.0)));
    elements.push(Element::Pulse(pi_pulse.with_phase(FRAC_PI_2)));
    elements.push(Element::Delay((tau0 - pl / 2.0).max(0.0)));
    Ok(PulseSequence {
        evolution_time: tau_p,
        elements,
        readout: Readout::EchoIntegrated,
    })
}

pub const DEFAULT_TAU0: f64 = 0.4;

/// `π − τ − π/2 − τ0 − π − τ0 − echo` with ideal pulses.
pub fn build_inversion_recovery(tau: f64, tau0: f64) -> Result<PulseSequence> {
    if !(tau >= 0.0) || !(tau0 >= 0.0) {
        return Err(Error::invalid("inversion recovery: tau and tau0 must be >= 0"));
    }
    Ok(PulseSequence {
        elements: vec![
            Element::Pulse(Pulse::ideal(PI)),
            Element::Delay(tau),
            Element::Pulse(Pulse::ideal(FRAC_PI_2)),
            Element::Delay(tau0),
            Element::Pulse(Pulse::ideal(PI).with_phase(FRAC_PI_2)),
            Element::Delay(tau0),
        ],
        readout: Readout::EchoIntegrated,
        evolution_time: tau,
    })
}

fn decoupling_train(phases: &[f64], tau: f64, pi2: Pulse, pi: Pulse) -> Result<PulseSequence> {
    let n = phases.len();
    if n == 0 {
        return Err(Error::invalid("decoupling train needs at least one refocusing pulse"));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("tau {tau} µs must be > 0")));
    }
    let d = pi.length();
    if tau < d {
        return Err(Error::invalid(format!(
            "tau {tau} µs too short to fit {d} µs refocusing pulses"
        )));
    }
    // Refocusing pulses are centred at τ/2, 3τ/2, ... after the end of the
    // excitation pulse, so the readout falls exactly at nτ.
    let mut elements = Vec::with_capacity(2 * n + 2);
    elements.push(Element::Pulse(pi2.with_phase(0.0)));
    elements.push(Element::Delay(0.5 * (tau - d)));
    for (k, &phase) in phases.iter().enumerate() {
        elements.push(Element::Pulse(pi.with_phase(phase)));
        elements.push(Element::Delay(if k + 1 == n { 0.5 * (tau - d) } else { tau - d }));
    }
    Ok(PulseSequence {
        elements,
        readout: Readout::EchoIntegrated,
        evolution_time: n as f64 * tau,
    })
}

/// `(π/2)x − {τ/2 − (π)y − τ/2}ⁿ − echo`
pub fn build_cpmg(n: usize, tau: f64, pi2: Pulse, pi: Pulse) -> Result<PulseSequence> {
    decoupling_train(&vec![FRAC_PI_2; n], tau, pi2, pi)
}

/// Hahn echo `(π/2)x − τ/2 − (π)y − τ/2 − echo`.
pub fn build_hahn(tau: f64, pi2: Pulse, pi: Pulse) -> Result<PulseSequence> {
    build_cpmg(1, tau, pi2, pi)
}

pub const XY8_PHASES: [f64; 8] = [0.0, FRAC_PI_2, 0.0, FRAC_PI_2, FRAC_PI_2, 0.0, FRAC_PI_2, 0.0];

/// XY-8 block repeated `m` times: 8m refocusing pulses.
pub fn build_xy8(m: usize, tau: f64, pi2: Pulse, pi: Pulse) -> Result<PulseSequence> {
    if m == 0 {
        return Err(Error::invalid("xy8 needs m >= 1"));
    }
    let phases: Vec<f64> = XY8_PHASES.iter().cycle().take(8 * m).cloned().collect();
    decoupling_train(&phases, tau, pi2, pi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityState {
    pub matrix: Mat2,
}

impl DensityState {
    /// Fully polarised along +z; stands for the normalised thermal deviation.
    pub fn thermal() -> Self {
        Self::from_bloch([0.0, 0.0, 1.0])
    }

    pub fn from_bloch(r: [f64; 3]) -> Self {
        let h = 0.5;
        Self {
            matrix: Mat2::new(
                Complex64::new(h * (1.0 + r[2]), 0.0),
                Complex64::new(h * r[0], -h * r[1]),
                Complex64::new(h * r[0], h * r[1]),
                Complex64::new(h * (1.0 - r[2]), 0.0),
            ),
        }
    }

    /// (<σx>, <σy>, <σz>)
    pub fn bloch(&self) -> [f64; 3] {
        let m = &self.matrix;
        [2.0 * m[(1, 0)].re, 2.0 * m[(1, 0)].im, (m[(0, 0)] - m[(1, 1)]).re]
    }

    pub fn trace(&self) -> f64 {
        (self.matrix[(0, 0)] + self.matrix[(1, 1)]).re
    }

    pub fn check(&self, tol: f64) -> Result<()> {
        let tr = self.matrix.trace();
        let herm = max_abs(&(self.matrix - self.matrix.adjoint()));
        let r = self.bloch();
        let len = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        // eigenvalues are (tr ± |r|)/2
        if (tr.re - 1.0).abs() > tol || tr.im.abs() > tol || herm > tol || 0.5 * (tr.re - len) < -tol {
            return Err(Error::Consistency(format!(
                "density matrix left the physical set: trace {tr}, |r| {len}, hermiticity error {herm}"
            )));
        }
        Ok(())
    }

    fn apply(&mut self, u: &Mat2) {
        self.matrix = u * self.matrix * u.adjoint();
    }
}

/// `exp(−2πi·t·(h·σ)/2)` for a field vector `h` in MHz.
pub fn su2_propagator(h: [f64; 3], t: f64) -> Mat2 {
    let norm = (h[0] * h[0] + h[1] * h[1] + h[2] * h[2]).sqrt();
    let theta = PI * norm * t;
    if norm == 0.0 || theta == 0.0 {
        return Mat2::identity();
    }
    let (s, c) = theta.sin_cos();
    let (nx, ny, nz) = (h[0] / norm, h[1] / norm, h[2] / norm);
    Mat2::new(
        Complex64::new(c, -s * nz),
        Complex64::new(-s * ny, -s * nx),
        Complex64::new(s * ny, -s * nx),
        Complex64::new(c, s * nz),
    )
}

/// Instantaneous rotation by `angle` about the in-plane axis at `phase`.
pub fn rotation(angle: f64, phase: f64) -> Mat2 {
    let (s, c) = (0.5 * angle).sin_cos();
    let (sp, cp) = phase.sin_cos();
    Mat2::new(
        Complex64::new(c, 0.0),
        Complex64::new(-s * sp, -s * cp),
        Complex64::new(s * sp, -s * cp),
        Complex64::new(c, 0.0),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Relaxation {
    /// µs
    pub t1: f64,
    /// µs; must not exceed 2·T1.
    pub t2: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PropagateOptions<'a> {
    /// Static resonance offset, MHz.
    pub detuning: f64,
    pub noise: Option<&'a NoiseSeries>,
    /// Bloch relaxation during delays.
    pub relaxation: Option<Relaxation>,
    /// Boxcar echo integration width, µs; `None` samples the apex only.
    pub integration_window: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Propagation {
    pub signal: f64,
    /// Out-of-phase channel for echo readouts, zero otherwise.
    pub quadrature: f64,
    pub final_state: DensityState,
}

fn relax(state: &mut DensityState, rel: &Relaxation, t: f64) {
    let r = state.bloch();
    let e1 = (-t / rel.t1).exp();
    let e2 = (-t / rel.t2).exp();
    *state = DensityState::from_bloch([r[0] * e2, r[1] * e2, 1.0 - (1.0 - r[2]) * e1]);
}

const WINDOW_SAMPLES: usize = 16;

pub fn propagate(initial: &DensityState, sequence: &PulseSequence, opts: &PropagateOptions) -> Result<Propagation> {
    sequence.validate()?;
    if let Some(rel) = &opts.relaxation {
        if !(rel.t1 > 0.0 && rel.t2 > 0.0 && rel.t2 <= 2.0 * rel.t1) {
            return Err(Error::invalid("relaxation needs T1, T2 > 0 and T2 <= 2·T1"));
        }
    }
    if let Some(noise) = opts.noise {
        let shortest = sequence
            .pulses()
            .filter(|p| p.ideal_angle.is_none() && p.duration > 0.0)
            .map(|p| p.duration)
            .fold(f64::INFINITY, f64::min);
        if !(noise.dt > 0.0) || noise.dt > shortest / 4.0 {
            return Err(Error::invalid(format!(
                "noise spacing {} µs exceeds a quarter of the shortest pulse ({shortest} µs)",
                noise.dt
            )));
        }
    }

    let mut state = *initial;
    let mut now = 0.0;
    for element in &sequence.elements {
        match element {
            Element::Pulse(p) if p.ideal_angle.is_some() => {
                state.apply(&rotation(p.flip_angle(), p.phase));
            }
            Element::Pulse(p) => {
                let (sp, cp) = p.phase.sin_cos();
                let drive = [p.rabi_frequency * cp, p.rabi_frequency * sp];
                evolve(&mut state, &mut now, p.duration, opts, drive, p.frequency_offset, false);
            }
            Element::Delay(d) => {
                evolve(&mut state, &mut now, *d, opts, [0.0, 0.0], 0.0, true);
            }
        }
    }
    state.check(1e-10)?;

    let r = state.bloch();
    let (signal, quadrature) = match sequence.readout {
        Readout::EchoIntegrated => match opts.integration_window {
            Some(w) if w > 0.0 => {
                // Free precession about z at the static offset around the apex.
                let (mut i_sum, mut q_sum) = (0.0, 0.0);
                for k in 0..WINDOW_SAMPLES {
                    let s = -0.5 * w + w * (k as f64 + 0.5) / WINDOW_SAMPLES as f64;
                    let a = 2.0 * PI * opts.detuning * s;
                    let (sa, ca) = a.sin_cos();
                    let x = r[0] * ca - r[1] * sa;
                    let y = r[0] * sa + r[1] * ca;
                    i_sum += -y;
                    q_sum += x;
                }
                (i_sum / WINDOW_SAMPLES as f64, q_sum / WINDOW_SAMPLES as f64)
            }
            _ => (-r[1], r[0]),
        },
        Readout::MagnetizationZ => (r[2], 0.0),
        Readout::CoherenceXy => (r[0].hypot(r[1]), 0.0),
    };
    Ok(Propagation {
        signal,
        quadrature,
        final_state: state,
    })
}

fn evolve(
    state: &mut DensityState,
    now: &mut f64,
    duration: f64,
    opts: &PropagateOptions,
    drive: [f64; 2],
    offset: f64,
    free: bool,
) {
    if duration <= 0.0 {
        return;
    }
    let end = *now + duration;
    let static_z = opts.detuning + offset;
    let step = |state: &mut DensityState, dz: f64, t: f64| {
        state.apply(&su2_propagator([drive[0], drive[1], static_z + dz], t));
        if free {
            if let Some(rel) = &opts.relaxation {
                relax(state, rel, t);
            }
        }
    };
    match opts.noise {
        None => step(state, 0.0, duration),
        Some(noise) => {
            let mut t = *now;
            while t < end {
                let idx = ((t / noise.dt) + 1e-9).floor() as usize;
                let boundary = ((idx + 1) as f64 * noise.dt).min(end);
                let seg_end = if boundary <= t { end } else { boundary };
                step(state, noise.sample(idx), seg_end - t);
                t = seg_end;
            }
        }
    }
    *now = end;
}

/// Total unitary of a sequence at a static offset, ignoring noise and relaxation.
pub fn sequence_propagator(sequence: &PulseSequence, detuning: f64) -> Mat2 {
    let mut u = Mat2::identity();
    for element in &sequence.elements {
        let seg = match element {
            Element::Pulse(p) if p.ideal_angle.is_some() => rotation(p.flip_angle(), p.phase),
            Element::Pulse(p) => {
                let (sp, cp) = p.phase.sin_cos();
                su2_propagator(
                    [
                        p.rabi_frequency * cp,
                        p.rabi_frequency * sp,
                        detuning + p.frequency_offset,
                    ],
                    p.duration,
                )
            }
            Element::Delay(d) => su2_propagator([0.0, 0.0, detuning], *d),
        };
        u = seg * u;
    }
    u
}

/// Identity-distance `‖U†U − 1‖` (max entry).
pub fn unitarity_error(u: &Mat2) -> f64 {
    max_abs(&(u.adjoint() * u - Mat2::identity()))
}

fn max_abs(m: &Mat2) -> f64 {
    m.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Dense propagation in an arbitrary-dimension Hilbert space, for
/// electron–nucleus brute-force checks.
pub mod full_space {
    use nalgebra::{DMatrix, SymmetricEigen};
    use num_complex::Complex64;

    pub type CMatrix = DMatrix<Complex64>;

    /// `exp(−2πi·H·t)` via Hermitian eigendecomposition, H in MHz, t in µs.
    pub fn unitary(h: &CMatrix, t: f64) -> CMatrix {
        let eig = SymmetricEigen::new(h.clone());
        let v = &eig.eigenvectors;
        let phases = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            h.nrows(),
            eig.eigenvalues
                .iter()
                .map(|&e| Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * e * t)),
        ));
        v * phases * v.adjoint()
    }

    pub fn conjugate(rho: &CMatrix, u: &CMatrix) -> CMatrix {
        u * rho * u.adjoint()
    }

    pub fn expectation(rho: &CMatrix, op: &CMatrix) -> f64 {
        (rho * op).trace().re
    }
}
