//! Helpers shared by the integration-test targets.
#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;
use spindecay::decoherence::{toggling_segments, BathNucleus, QuantumBath};
use spindecay::pulse::full_space::{conjugate, expectation, unitary, CMatrix};
use spindecay::spin_core::{spin_operators, Spin};

fn eye(d: usize) -> CMatrix {
    DMatrix::identity(d, d)
}

/// Operator `op` acting on site `site` of `sites` spin-1/2 factors.
fn embed(op: &CMatrix, site: usize, sites: usize) -> CMatrix {
    let mut out = if site == 0 { op.clone() } else { eye(2) };
    for k in 1..sites {
        out = out.kronecker(&if k == site { op.clone() } else { eye(2) });
    }
    out
}

/// `(−1)^n ⟨2Sx⟩` after CPMG-n started from |+x⟩ ⊗ 1/d, propagating the
/// full electron ⊗ nuclei density matrix with instantaneous π_y pulses.
pub fn brute_force_cpmg(bath: &QuantumBath, n: usize, tau: f64) -> f64 {
    let [sx, sy, sz] = spin_operators(Spin::HALF);
    let sites = 1 + bath.nuclei.len();
    let dim = 1 << sites;
    let (ex, ey, ez) = (embed(&sx, 0, sites), embed(&sy, 0, sites), embed(&sz, 0, sites));
    let mut h = CMatrix::zeros(dim, dim);
    for (k, nuc) in bath.nuclei.iter().enumerate() {
        let (ix, iz) = (embed(&sx, k + 1, sites), embed(&sz, k + 1, sites));
        h += &iz * Complex64::from(nuc.larmor);
        h += &ez * &iz * Complex64::from(nuc.a_parallel);
        h += &ez * &ix * Complex64::from(nuc.b_perp);
    }
    // exp(−iπ·Sy) on the electron
    let pi_y = unitary(&ey, 0.5);
    let plus_x = (eye(2) + &sx * Complex64::from(2.0)) * Complex64::from(0.5);
    let mut rho = plus_x.kronecker(&eye(dim / 2)) * Complex64::from(2.0 / dim as f64);
    let segments = toggling_segments(n, tau);
    for (k, (len, _)) in segments.iter().enumerate() {
        rho = conjugate(&rho, &unitary(&h, *len));
        if k + 1 < segments.len() {
            rho = conjugate(&rho, &pi_y);
        }
    }
    let sign = if n.is_multiple_of(2) { 1.0 } else { -1.0 };
    sign * 2.0 * expectation(&rho, &ex)
}

pub fn bath(nuclei: &[(f64, f64, f64)]) -> QuantumBath {
    QuantumBath {
        nuclei: nuclei
            .iter()
            .map(|&(larmor, a_parallel, b_perp)| BathNucleus {
                larmor,
                a_parallel,
                b_perp,
            })
            .collect(),
    }
}
