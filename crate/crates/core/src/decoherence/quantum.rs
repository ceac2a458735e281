//! Central-spin bath of independent spin-1/2 nuclei (CCE-1).
//!
//! With the electron in m_s = ±1/2 a nucleus sees
//! `H± = (f_l ± A/2)·Iz ± (B/2)·Ix` (MHz). Each branch of the electron
//! superposition drives the nucleus with alternating H+/H− across the
//! toggling segments, and for an unpolarised nucleus the overlap
//! `<J0|J1>` averaged over the nuclear state is `Tr(U0†U1)/2`, which for
//! SU(2) elements is the real quaternion inner product.

use rayon::prelude::*;

use super::{toggling_segments, validate_taus};
use crate::error::{Error, Result};
use crate::trace::DecayTrace;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BathNucleus {
    /// MHz
    pub larmor: f64,
    /// Secular hyperfine A, MHz.
    pub a_parallel: f64,
    /// Pseudo-secular hyperfine B, MHz.
    pub b_perp: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuantumBath {
    pub nuclei: Vec<BathNucleus>,
}

impl QuantumBath {
    pub fn validate(&self) -> Result<()> {
        for (i, n) in self.nuclei.iter().enumerate() {
            if ![n.larmor, n.a_parallel, n.b_perp].iter().all(|v| v.is_finite()) {
                return Err(Error::invalid(format!("bath nucleus {i} has non-finite parameters")));
            }
        }
        Ok(())
    }
}

/// Unit quaternion `(w, v)` standing for `w·1 − i·v·σ`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Quat {
    w: f64,
    v: [f64; 3],
}

impl Quat {
    const ONE: Quat = Quat { w: 1.0, v: [0.0; 3] };

    /// `exp(−2πi·t·h·I)` with I = σ/2.
    fn evolution(h: [f64; 3], t: f64) -> Quat {
        let norm = (h[0] * h[0] + h[1] * h[1] + h[2] * h[2]).sqrt();
        if norm == 0.0 {
            return Quat::ONE;
        }
        let (s, c) = (std::f64::consts::PI * norm * t).sin_cos();
        Quat {
            w: c,
            v: [s * h[0] / norm, s * h[1] / norm, s * h[2] / norm],
        }
    }

    /// Operator product `self · rhs`.
    fn mul(self, rhs: Quat) -> Quat {
        let (a, b) = (self.v, rhs.v);
        Quat {
            w: self.w * rhs.w - (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]),
            v: [
                self.w * b[0] + rhs.w * a[0] + a[1] * b[2] - a[2] * b[1],
                self.w * b[1] + rhs.w * a[1] + a[2] * b[0] - a[0] * b[2],
                self.w * b[2] + rhs.w * a[2] + a[0] * b[1] - a[1] * b[0],
            ],
        }
    }

    /// `Re Tr(self† · rhs)/2`
    fn overlap(self, rhs: Quat) -> f64 {
        self.w * rhs.w + self.v[0] * rhs.v[0] + self.v[1] * rhs.v[1] + self.v[2] * rhs.v[2]
    }
}

fn nucleus_overlap(nuc: &BathNucleus, n: usize, tau: f64) -> f64 {
    let h_up = [0.5 * nuc.b_perp, 0.0, nuc.larmor + 0.5 * nuc.a_parallel];
    let h_down = [-0.5 * nuc.b_perp, 0.0, nuc.larmor - 0.5 * nuc.a_parallel];
    let (mut u0, mut u1) = (Quat::ONE, Quat::ONE);
    for (len, sign) in toggling_segments(n, tau) {
        let (h0, h1) = if sign > 0.0 { (h_up, h_down) } else { (h_down, h_up) };
        u0 = Quat::evolution(h0, len).mul(u0);
        u1 = Quat::evolution(h1, len).mul(u1);
    }
    u0.overlap(u1).clamp(-1.0, 1.0)
}

/// `L(nτ) = Π_k Tr(U0,k†·U1,k)/2` for each τ.
pub fn cpmg_coherence_quantum(bath: &QuantumBath, n: usize, taus: &[f64]) -> Result<DecayTrace> {
    validate_taus(n, taus)?;
    bath.validate()?;
    let coherence: Vec<f64> = taus
        .par_iter()
        .map(|&tau| bath.nuclei.iter().map(|nuc| nucleus_overlap(nuc, n, tau)).product())
        .collect();
    let t = taus.iter().map(|tau| n as f64 * tau).collect();
    Ok(DecayTrace::without_errors(t, coherence)?
        .with_meta("sequence", "cpmg")
        .with_meta("n", n)
        .with_meta("model", "quantum")
        .with_meta("nuclei", bath.nuclei.len()))
}
