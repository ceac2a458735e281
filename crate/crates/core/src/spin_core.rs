//! Spin system definition, spin operators and the laboratory-frame spin
//! Hamiltonian
//!
//! `H = S·A·I + βe B0·g·S − βn gn B0·I`
//!
//! in linear-frequency units (MHz), with fields in Gauss. Tensors are given
//! in the molecular frame; an [`Orientation`] names the direction of the lab
//! field in that frame and the Hamiltonian is assembled after rotating every
//! tensor into the lab frame, where the static field lies along z.

use std::cmp::Ordering;
use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub const DEFAULT_MAX_DIMENSION: usize = 4096;

/// Eigenvalues closer than this (MHz) are treated as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-9;

/// Transitions weaker than this relative amplitude are not reported.
pub const MIN_TRANSITION_AMPLITUDE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    /// βe/h in MHz per Gauss.
    pub electron_gyromagnetic_prefactor: f64,
    /// βn/h in kHz per Gauss.
    pub nuclear_magneton_prefactor: f64,
    pub proton_g_factor: f64,
}

impl Default for PhysicalConstants {
    /// CODATA 2018.
    fn default() -> Self {
        Self {
            electron_gyromagnetic_prefactor: 1.399_624_493_61,
            nuclear_magneton_prefactor: 0.762_259_321_88,
            proton_g_factor: 5.585_694_689_3,
        }
    }
}

impl PhysicalConstants {
    /// Proton Larmor frequency per unit field, kHz/G.
    pub fn proton_larmor_prefactor(&self) -> f64 {
        self.proton_g_factor * self.nuclear_magneton_prefactor
    }

    /// Proton Larmor frequency in MHz at `field` Gauss.
    pub fn proton_larmor(&self, field: f64) -> f64 {
        self.proton_larmor_prefactor() * field * 1e-3
    }

    pub fn validate(&self) -> Result<()> {
        let be = self.electron_gyromagnetic_prefactor;
        if !(1.39..=1.41).contains(&be) {
            return Err(Error::invalid(format!(
                "electron gyromagnetic prefactor {be} MHz/G outside [1.39, 1.41]"
            )));
        }
        let p = self.proton_larmor_prefactor();
        if !(4.25..=4.26).contains(&p) {
            return Err(Error::invalid(format!(
                "proton Larmor prefactor {p} kHz/G outside [4.25, 4.26]"
            )));
        }
        Ok(())
    }
}

/// A non-negative half-integer spin quantum number, stored as twice its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Spin(u32);

impl Spin {
    pub const HALF: Spin = Spin(1);

    pub fn from_twice(twice: u32) -> Self {
        Spin(twice)
    }

    pub fn new(j: f64) -> Result<Self> {
        let twice = 2.0 * j;
        if !j.is_finite() || j < 0.0 || (twice - twice.round()).abs() > 1e-12 {
            return Err(Error::invalid(format!("{j} is not a non-negative half-integer")));
        }
        Ok(Spin(twice.round() as u32))
    }

    pub fn twice(self) -> u32 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 2.0
    }

    pub fn multiplicity(self) -> usize {
        self.0 as usize + 1
    }

    /// Magnetic quantum numbers (twice their value) in basis order j, j-1, ..., -j.
    pub fn projections(self) -> impl Iterator<Item = HalfInt> {
        let j = self.0 as i32;
        (0..=self.0 as i32).map(move |k| HalfInt(j - 2 * k))
    }
}

/// A signed half-integer, stored as twice its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HalfInt(pub i32);

impl HalfInt {
    pub fn new(value: f64) -> Result<Self> {
        let twice = 2.0 * value;
        if !value.is_finite() || (twice - twice.round()).abs() > 1e-12 {
            return Err(Error::invalid(format!("{value} is not a half-integer")));
        }
        Ok(HalfInt(twice.round() as i32))
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 2.0
    }
}

impl fmt::Display for HalfInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 % 2 == 0 {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StateLabel {
    pub m_s: HalfInt,
    /// One projection per nucleus, in system order.
    pub m_i: Vec<HalfInt>,
}

impl StateLabel {
    pub fn new(m_s: f64, m_i: &[f64]) -> Result<Self> {
        Ok(Self {
            m_s: HalfInt::new(m_s)?,
            m_i: m_i.iter().map(|&m| HalfInt::new(m)).collect::<Result<_>>()?,
        })
    }
}

impl fmt::Display for StateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "|{}", self.m_s)?;
        for m in &self.m_i {
            write!(f, ",{m}")?;
        }
        write!(f, ">")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Nucleus {
    pub spin: Spin,
    pub g_n: f64,
    /// Hyperfine tensor in MHz, molecular frame.
    pub hyperfine: Matrix3<f64>,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpinSystem {
    pub electron_spin: Spin,
    pub g_tensor: Matrix3<f64>,
    pub nuclei: Vec<Nucleus>,
    pub constants: PhysicalConstants,
    pub max_dimension: usize,
}

/// Axially symmetric shorthand: unique axis along molecular z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxialParameters {
    pub g_par: f64,
    pub g_perp: f64,
    pub a_par: f64,
    pub a_perp: f64,
}

impl AxialParameters {
    pub const CU_MNT: AxialParameters = AxialParameters {
        g_par: 2.0898,
        g_perp: 2.0215,
        a_par: 495.4,
        a_perp: 118.0,
    };

    pub fn to_array(self) -> [f64; 4] {
        [self.g_par, self.g_perp, self.a_par, self.a_perp]
    }

    pub fn from_array(p: [f64; 4]) -> Self {
        Self {
            g_par: p[0],
            g_perp: p[1],
            a_par: p[2],
            a_perp: p[3],
        }
    }
}

/// 63Cu nuclear g-factor (μ = 2.2273 μN, I = 3/2).
pub const CU63_G_FACTOR: f64 = 1.4849;

impl SpinSystem {
    /// S = 1/2 with one nucleus and axial g and hyperfine tensors.
    pub fn axial(params: AxialParameters, nuclear_spin: Spin, g_n: f64) -> Self {
        let g = Matrix3::from_diagonal(&nalgebra::Vector3::new(params.g_perp, params.g_perp, params.g_par));
        let a = Matrix3::from_diagonal(&nalgebra::Vector3::new(params.a_perp, params.a_perp, params.a_par));
        Self {
            electron_spin: Spin::HALF,
            g_tensor: g,
            nuclei: vec![Nucleus {
                spin: nuclear_spin,
                g_n,
                hyperfine: a,
                label: "n1".into(),
            }],
            constants: PhysicalConstants::default(),
            max_dimension: DEFAULT_MAX_DIMENSION,
        }
    }

    /// Isotropic electron with no nuclei.
    pub fn bare_electron(g: f64) -> Self {
        Self {
            electron_spin: Spin::HALF,
            g_tensor: Matrix3::identity() * g,
            nuclei: Vec::new(),
            constants: PhysicalConstants::default(),
            max_dimension: DEFAULT_MAX_DIMENSION,
        }
    }

    /// The copper(II) bis-maleonitriledithiolate centre: Cu I=3/2 with the
    /// spectral-fit parameters.
    pub fn cu_mnt() -> Self {
        let mut s = Self::axial(AxialParameters::CU_MNT, Spin::from_twice(3), CU63_G_FACTOR);
        s.nuclei[0].label = "Cu".into();
        s
    }

    pub fn dimension(&self) -> usize {
        self.nuclei.iter().fold(self.electron_spin.multiplicity(), |d, n| {
            d.saturating_mul(n.spin.multiplicity())
        })
    }

    pub fn validate(&self) -> Result<()> {
        let sym = |m: &Matrix3<f64>| (m - m.transpose()).abs().max() <= 1e-12 * m.abs().max().max(1.0);
        if !sym(&self.g_tensor) {
            return Err(Error::invalid("g tensor is not symmetric"));
        }
        for n in &self.nuclei {
            if !sym(&n.hyperfine) {
                return Err(Error::invalid(format!(
                    "hyperfine tensor of nucleus {} is not symmetric",
                    n.label
                )));
            }
        }
        let dim = self.dimension();
        if dim > self.max_dimension {
            return Err(Error::Capacity {
                dimension: dim,
                max: self.max_dimension,
            });
        }
        Ok(())
    }

    /// Label of every product basis state, in basis order.
    pub fn basis_labels(&self) -> Vec<StateLabel> {
        let mut labels: Vec<StateLabel> = self
            .electron_spin
            .projections()
            .map(|m_s| StateLabel { m_s, m_i: Vec::new() })
            .collect();
        for n in &self.nuclei {
            labels = labels
                .into_iter()
                .flat_map(|l| {
                    n.spin.projections().map(move |m| {
                        let mut next = l.clone();
                        next.m_i.push(m);
                        next
                    })
                })
                .collect();
        }
        labels
    }

    /// Allowed EPR transitions (Δm_s = +1, all m_I unchanged), as (lower, upper).
    pub fn allowed_transition_labels(&self) -> Vec<(StateLabel, StateLabel)> {
        let labels = self.basis_labels();
        let mut out = Vec::new();
        for a in &labels {
            for b in &labels {
                if b.m_s.0 - a.m_s.0 == 2 && a.m_i == b.m_i {
                    out.push((a.clone(), b.clone()));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Orientation {
    /// Polar angle of the field in the molecular frame, radians.
    pub theta: f64,
    /// Azimuthal angle, radians.
    pub phi: f64,
    pub weight: f64,
}

impl Orientation {
    pub fn new(theta: f64, phi: f64) -> Self {
        Self {
            theta,
            phi,
            weight: 1.0,
        }
    }

    /// Passive rotation taking molecular-frame coordinates to the lab frame,
    /// whose z axis is the field direction.
    pub fn rotation(&self) -> Matrix3<f64> {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        Matrix3::new(
            ct * cp,
            ct * sp,
            -st, //
            -sp,
            cp,
            0.0, //
            st * cp,
            st * sp,
            ct,
        )
    }
}

pub type CMatrix = DMatrix<Complex64>;

/// Spin matrices (Jx, Jy, Jz) in the basis m = j, j-1, ..., -j.
pub fn spin_operators(spin: Spin) -> [CMatrix; 3] {
    let dim = spin.multiplicity();
    let j = spin.value();
    let mut jp = CMatrix::zeros(dim, dim);
    let mut jz = CMatrix::zeros(dim, dim);
    for i in 0..dim {
        let m = j - i as f64;
        jz[(i, i)] = Complex64::new(m, 0.0);
        if i > 0 {
            // <m+1| J+ |m>
            jp[(i - 1, i)] = Complex64::new((j * (j + 1.0) - m * (m + 1.0)).sqrt(), 0.0);
        }
    }
    let jm = jp.adjoint();
    let jx = (&jp + &jm) * Complex64::new(0.5, 0.0);
    let jy = (&jp - &jm) * Complex64::new(0.0, -0.5);
    [jx, jy, jz]
}

/// Half-integer-checked variant of [`spin_operators`].
pub fn spin_operators_for(j: f64) -> Result<[CMatrix; 3]> {
    Ok(spin_operators(Spin::new(j)?))
}

fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Spin operators embedded in the full product space, built once per system.
#[derive(Debug, Clone)]
pub struct OperatorBasis {
    pub electron: [CMatrix; 3],
    pub nuclei: Vec<[CMatrix; 3]>,
    pub dimension: usize,
}

impl OperatorBasis {
    pub fn new(system: &SpinSystem) -> Result<Self> {
        system.validate()?;
        let factors: Vec<Spin> = std::iter::once(system.electron_spin)
            .chain(system.nuclei.iter().map(|n| n.spin))
            .collect();
        let embed = |slot: usize, op: &CMatrix| -> CMatrix {
            let mut acc: Option<CMatrix> = None;
            for (k, s) in factors.iter().enumerate() {
                let factor = if k == slot {
                    op.clone()
                } else {
                    CMatrix::identity(s.multiplicity(), s.multiplicity())
                };
                acc = Some(match acc {
                    None => factor,
                    Some(m) => kron(&m, &factor),
                });
            }
            acc.expect("at least the electron factor")
        };
        let electron = spin_operators(system.electron_spin).map(|op| embed(0, &op));
        let nuclei = system
            .nuclei
            .iter()
            .enumerate()
            .map(|(i, n)| spin_operators(n.spin).map(|op| embed(i + 1, &op)))
            .collect();
        Ok(Self {
            electron,
            nuclei,
            dimension: system.dimension(),
        })
    }
}

/// Field-independent and field-linear parts of the Hamiltonian at one
/// orientation: `H(B) = fixed + B·per_gauss`.
#[derive(Debug, Clone)]
pub struct SplitHamiltonian {
    pub fixed: CMatrix,
    pub per_gauss: CMatrix,
}

impl SplitHamiltonian {
    pub fn new(system: &SpinSystem, ops: &OperatorBasis, orientation: &Orientation) -> Self {
        let r = orientation.rotation();
        let dim = ops.dimension;
        let mut fixed = CMatrix::zeros(dim, dim);
        let mut per_gauss = CMatrix::zeros(dim, dim);
        let c = &system.constants;

        let g_lab = r * system.g_tensor * r.transpose();
        for j in 0..3 {
            let coef = c.electron_gyromagnetic_prefactor * g_lab[(2, j)];
            if coef != 0.0 {
                per_gauss += &ops.electron[j] * Complex64::new(coef, 0.0);
            }
        }
        for (nuc, iop) in system.nuclei.iter().zip(&ops.nuclei) {
            let a_lab = r * nuc.hyperfine * r.transpose();
            for i in 0..3 {
                for j in 0..3 {
                    let a = a_lab[(i, j)];
                    if a != 0.0 {
                        fixed += (&ops.electron[i] * &iop[j]) * Complex64::new(a, 0.0);
                    }
                }
            }
            let nz = -nuc.g_n * c.nuclear_magneton_prefactor * 1e-3;
            if nz != 0.0 {
                per_gauss += &iop[2] * Complex64::new(nz, 0.0);
            }
        }
        Self { fixed, per_gauss }
    }

    pub fn at(&self, field: f64) -> CMatrix {
        &self.fixed + &self.per_gauss * Complex64::new(field, 0.0)
    }
}

/// Laboratory-frame Hamiltonian in MHz.
pub fn hamiltonian(system: &SpinSystem, field: f64, orientation: &Orientation) -> Result<CMatrix> {
    if !(field >= 0.0) {
        return Err(Error::invalid(format!("field magnitude {field} G must be >= 0")));
    }
    let ops = OperatorBasis::new(system)?;
    Ok(SplitHamiltonian::new(system, &ops, orientation).at(field))
}

/// Eigen-decomposition with eigenvalues ascending and basis labels assigned.
#[derive(Debug, Clone)]
pub struct LabeledEigensystem {
    pub energies: DVector<f64>,
    /// Columns are eigenvectors, in the order of `energies`.
    pub vectors: CMatrix,
    /// `assignment[j]` is the basis index whose label eigenvector j carries.
    pub assignment: Vec<usize>,
}

impl LabeledEigensystem {
    pub fn new(h: &CMatrix) -> Self {
        let dim = h.nrows();
        let eig = SymmetricEigen::new(h.clone());
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[a]
                .partial_cmp(&eig.eigenvalues[b])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        let energies = DVector::from_iterator(dim, order.iter().map(|&k| eig.eigenvalues[k]));
        let mut vectors = CMatrix::zeros(dim, dim);
        for (col, &k) in order.iter().enumerate() {
            vectors.set_column(col, &eig.eigenvectors.column(k));
        }
        align_degenerate(&energies, &mut vectors);
        let assignment = assign_labels(&vectors);
        Self {
            energies,
            vectors,
            assignment,
        }
    }

    /// Eigen index carrying the given basis label.
    pub fn index_of_basis(&self, basis_index: usize) -> Option<usize> {
        self.assignment.iter().position(|&b| b == basis_index)
    }
}

/// Inside each degenerate cluster, replace the solver's arbitrary vectors by
/// the orthonormalised projections of the best-overlapping basis states.
fn align_degenerate(energies: &DVector<f64>, vectors: &mut CMatrix) {
    let dim = energies.len();
    let mut start = 0;
    while start < dim {
        let mut end = start + 1;
        while end < dim && (energies[end] - energies[end - 1]).abs() < DEGENERACY_TOL {
            end += 1;
        }
        if end - start > 1 {
            let sub = vectors.columns(start, end - start).into_owned();
            let proj = &sub * sub.adjoint();
            let mut candidates: Vec<(f64, usize)> = (0..dim).map(|k| (proj[(k, k)].re, k)).collect();
            candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
            let mut chosen: Vec<DVector<Complex64>> = Vec::new();
            for &(_, k) in &candidates {
                if chosen.len() == end - start {
                    break;
                }
                let mut v: DVector<Complex64> = proj.column(k).into_owned();
                for u in &chosen {
                    let c = u.dotc(&v);
                    v -= u * c;
                }
                let norm = v.norm();
                if norm > 1e-6 {
                    chosen.push(v / Complex64::new(norm, 0.0));
                }
            }
            if chosen.len() == end - start {
                for (i, v) in chosen.iter().enumerate() {
                    vectors.set_column(start + i, v);
                }
            }
        }
        start = end;
    }
}

/// Greedy one-to-one assignment by descending |overlap|², ties by basis index.
fn assign_labels(vectors: &CMatrix) -> Vec<usize> {
    let dim = vectors.nrows();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(dim * dim);
    for j in 0..dim {
        for k in 0..dim {
            pairs.push((vectors[(k, j)].norm_sqr(), k, j));
        }
    }
    pairs.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut assignment = vec![usize::MAX; dim];
    let mut basis_used = vec![false; dim];
    let mut remaining = dim;
    for (_, k, j) in pairs {
        if remaining == 0 {
            break;
        }
        if assignment[j] == usize::MAX && !basis_used[k] {
            assignment[j] = k;
            basis_used[k] = true;
            remaining -= 1;
        }
    }
    assignment
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// MHz, non-negative.
    pub frequency: f64,
    /// |<a|Sx|b>|² relative to the strongest pure electron transition.
    pub amplitude: f64,
    pub lower: StateLabel,
    pub upper: StateLabel,
}

fn amplitude_normalization(spin: Spin) -> f64 {
    // max over m of |<m+1|Sx|m>|² = (S(S+1) - m(m+1)) / 4
    let s = spin.value();
    spin.projections()
        .map(|m| {
            let m = m.value();
            (s * (s + 1.0) - m * (m + 1.0)) / 4.0
        })
        .fold(0.0, f64::max)
}

fn transition_amplitude(sx: &CMatrix, eig: &LabeledEigensystem, a: usize, b: usize, norm: f64) -> f64 {
    let va = eig.vectors.column(a);
    let vb = eig.vectors.column(b);
    let m = va.dotc(&(sx * vb));
    m.norm_sqr() / norm
}

/// Every transition with non-negligible Sx amplitude, sorted by frequency.
pub fn transitions(system: &SpinSystem, field: f64, orientation: &Orientation) -> Result<Vec<Transition>> {
    if !(field >= 0.0) {
        return Err(Error::invalid(format!("field magnitude {field} G must be >= 0")));
    }
    let ops = OperatorBasis::new(system)?;
    let h = SplitHamiltonian::new(system, &ops, orientation).at(field);
    let eig = LabeledEigensystem::new(&h);
    let labels = system.basis_labels();
    let norm = amplitude_normalization(system.electron_spin);
    let dim = ops.dimension;
    let mut out = Vec::new();
    for a in 0..dim {
        for b in (a + 1)..dim {
            let amplitude = transition_amplitude(&ops.electron[0], &eig, a, b, norm);
            if amplitude < MIN_TRANSITION_AMPLITUDE {
                continue;
            }
            out.push(Transition {
                frequency: (eig.energies[b] - eig.energies[a]).abs(),
                amplitude,
                lower: labels[eig.assignment[a]].clone(),
                upper: labels[eig.assignment[b]].clone(),
            });
        }
    }
    out.sort_by(|x, y| {
        x.frequency
            .partial_cmp(&y.frequency)
            .unwrap_or(Ordering::Equal)
            .then_with(|| y.amplitude.partial_cmp(&x.amplitude).unwrap_or(Ordering::Equal))
    });
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResonanceSearch {
    /// Upper end of the search bracket, Gauss.
    pub max_field: f64,
    /// Convergence target on the frequency mismatch, MHz.
    pub frequency_tol: f64,
    pub max_iterations: usize,
}

impl Default for ResonanceSearch {
    fn default() -> Self {
        Self {
            max_field: 20_000.0,
            frequency_tol: 1e-8,
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resonance {
    pub field: f64,
    /// Transition amplitude evaluated at the resonance field.
    pub amplitude: f64,
}

/// Reusable per-orientation state for repeated resonance searches.
pub struct ResonanceSolver<'a> {
    ops: &'a OperatorBasis,
    split: SplitHamiltonian,
    labels: Vec<StateLabel>,
    norm: f64,
    pub search: ResonanceSearch,
}

struct Probe {
    mismatch: f64,
    slope: f64,
    amplitude: f64,
}

impl<'a> ResonanceSolver<'a> {
    pub fn new(system: &'a SpinSystem, ops: &'a OperatorBasis, orientation: &Orientation) -> Self {
        Self {
            ops,
            split: SplitHamiltonian::new(system, ops, orientation),
            labels: system.basis_labels(),
            norm: amplitude_normalization(system.electron_spin),
            search: ResonanceSearch::default(),
        }
    }

    fn basis_index(&self, label: &StateLabel) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::invalid(format!("state {label} does not exist in this spin system")))
    }

    fn probe(&self, field: f64, ia: usize, ib: usize, mw: f64) -> Probe {
        let eig = LabeledEigensystem::new(&self.split.at(field));
        let a = eig.index_of_basis(ia).expect("assignment is a permutation");
        let b = eig.index_of_basis(ib).expect("assignment is a permutation");
        let (lo, hi) = if eig.energies[b] >= eig.energies[a] {
            (a, b)
        } else {
            (b, a)
        };
        let z = &self.split.per_gauss;
        let slope_of = |k: usize| {
            let v = eig.vectors.column(k);
            v.dotc(&(z * v)).re
        };
        Probe {
            mismatch: eig.energies[hi] - eig.energies[lo] - mw,
            slope: slope_of(hi) - slope_of(lo),
            amplitude: transition_amplitude(&self.ops.electron[0], &eig, a, b, self.norm),
        }
    }

    /// Field at which the labelled transition matches `mw` MHz.
    pub fn solve(&self, mw: f64, lower: &StateLabel, upper: &StateLabel, guess: Option<f64>) -> Result<Resonance> {
        if !(mw >= 0.0) {
            return Err(Error::invalid(format!("microwave frequency {mw} MHz must be >= 0")));
        }
        let ia = self.basis_index(lower)?;
        let ib = self.basis_index(upper)?;
        let s = self.search;
        let mut lo = 0.0;
        let mut hi = s.max_field;
        let p_lo = self.probe(lo, ia, ib, mw);
        if p_lo.mismatch.abs() <= s.frequency_tol {
            return Ok(Resonance {
                field: lo,
                amplitude: p_lo.amplitude,
            });
        }
        let p_hi = self.probe(hi, ia, ib, mw);
        if p_hi.mismatch.abs() <= s.frequency_tol {
            return Ok(Resonance {
                field: hi,
                amplitude: p_hi.amplitude,
            });
        }
        if p_lo.mismatch.signum() == p_hi.mismatch.signum() {
            return Err(Error::NotFound(format!(
                "no resonance for {lower}->{upper} at {mw} MHz within [0, {}] G",
                s.max_field
            )));
        }
        let rising = p_lo.mismatch < 0.0;
        let mut x = guess.filter(|g| *g > lo && *g < hi).unwrap_or(0.5 * (lo + hi));
        for _ in 0..s.max_iterations {
            let p = self.probe(x, ia, ib, mw);
            if p.mismatch.abs() <= s.frequency_tol {
                return Ok(Resonance {
                    field: x,
                    amplitude: p.amplitude,
                });
            }
            if (p.mismatch < 0.0) == rising {
                lo = x;
            } else {
                hi = x;
            }
            if hi - lo <= 1e-12 * hi.max(1.0) {
                break;
            }
            let newton = if p.slope != 0.0 {
                x - p.mismatch / p.slope
            } else {
                f64::NAN
            };
            x = if newton.is_finite() && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        let p = self.probe(x, ia, ib, mw);
        if p.mismatch.abs() <= 1e-6 {
            Ok(Resonance {
                field: x,
                amplitude: p.amplitude,
            })
        } else {
            Err(Error::NotFound(format!(
                "transition {lower}->{upper} has no continuous crossing of {mw} MHz (residual {} MHz at {x} G)",
                p.mismatch
            )))
        }
    }
}

/// Resonance field (Gauss) of the labelled transition at `mw` MHz.
pub fn resonance_field(
    system: &SpinSystem,
    mw: f64,
    orientation: &Orientation,
    lower: &StateLabel,
    upper: &StateLabel,
) -> Result<f64> {
    let ops = OperatorBasis::new(system)?;
    let solver = ResonanceSolver::new(system, &ops, orientation);
    let guess = first_order_field(system, mw, orientation, lower);
    solver.solve(mw, lower, upper, guess).map(|r| r.field)
}

/// First-order estimate `(mw - Σ m_I·A_zz) / (g_zz·βe)` in the lab frame.
pub fn first_order_field(system: &SpinSystem, mw: f64, orientation: &Orientation, lower: &StateLabel) -> Option<f64> {
    let r = orientation.rotation();
    let g_lab = r * system.g_tensor * r.transpose();
    let g_eff = g_lab.row(2).norm();
    if g_eff <= 0.0 {
        return None;
    }
    let mut hf = 0.0;
    for (nuc, m) in system.nuclei.iter().zip(&lower.m_i) {
        let a_lab = r * nuc.hyperfine * r.transpose();
        // Effective coupling along the electron quantisation axis.
        let n = g_lab.row(2).transpose() / g_eff;
        hf += m.value() * (a_lab * n).norm();
    }
    let b = (mw - hf) / (g_eff * system.constants.electron_gyromagnetic_prefactor);
    (b > 0.0).then_some(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
        a * b - b * a
    }

    #[test]
    fn spin_half_operators() {
        let [_, _, jz] = spin_operators(Spin::HALF);
        assert_eq!(jz[(0, 0)].re, 0.5);
        assert_eq!(jz[(1, 1)].re, -0.5);
    }

    #[test]
    fn spin_three_halves_ladder_entries() {
        let [jx, jy, jz] = spin_operators(Spin::from_twice(3));
        let diag: Vec<f64> = (0..4).map(|i| jz[(i, i)].re).collect();
        assert_eq!(diag, vec![1.5, 0.5, -0.5, -1.5]);
        let jp = &jx + &jy * Complex64::new(0.0, 1.0);
        // sqrt(j(j+1) - m(m+1)) for m = 1/2, -1/2, -3/2
        let oracle: Vec<f64> = [0.5f64, -0.5, -1.5]
            .iter()
            .map(|m| (3.75 - m * (m + 1.0)).sqrt())
            .collect();
        assert_relative_eq!(oracle[0], 3f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(oracle[1], 2.0, epsilon = 1e-15);
        for i in 0..3 {
            assert_relative_eq!(jp[(i, i + 1)].re, oracle[i], epsilon = 1e-14);
            assert!(jp[(i, i + 1)].im.abs() < 1e-15);
        }
    }

    #[test]
    fn commutation_and_trace() {
        for twice in 0..=7 {
            let [jx, jy, jz] = spin_operators(Spin::from_twice(twice));
            let i = Complex64::new(0.0, 1.0);
            assert!((commutator(&jx, &jy) - &jz * i).norm() < 1e-12);
            assert!((commutator(&jy, &jz) - &jx * i).norm() < 1e-12);
            assert!((commutator(&jz, &jx) - &jy * i).norm() < 1e-12);
            for op in [&jx, &jy, &jz] {
                assert!(op.trace().norm() < 1e-12);
                assert!((op - op.adjoint()).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn non_half_integer_spin_rejected() {
        assert!(matches!(spin_operators_for(0.3), Err(Error::InvalidArgument(_))));
        assert!(matches!(spin_operators_for(-0.5), Err(Error::InvalidArgument(_))));
        assert!(spin_operators_for(2.5).is_ok());
    }

    #[test]
    fn constants_in_range() {
        let c = PhysicalConstants::default();
        c.validate().unwrap();
        assert!((c.proton_larmor(3357.0) - 14.3).abs() < 0.01);
    }

    #[test]
    fn dimension_of_copper_system() {
        assert_eq!(SpinSystem::cu_mnt().dimension(), 8);
        assert_eq!(SpinSystem::cu_mnt().basis_labels().len(), 8);
    }

    #[test]
    fn capacity_error() {
        let mut s = SpinSystem::cu_mnt();
        s.max_dimension = 4;
        assert!(matches!(
            hamiltonian(&s, 3000.0, &Orientation::new(0.0, 0.0)),
            Err(Error::Capacity { dimension: 8, max: 4 })
        ));
    }

    #[test]
    fn zero_field_zero_coupling_is_zero() {
        let mut s = SpinSystem::cu_mnt();
        s.nuclei[0].hyperfine = Matrix3::zeros();
        let h = hamiltonian(&s, 0.0, &Orientation::new(0.7, 1.1)).unwrap();
        assert_eq!(h.norm(), 0.0);
    }

    #[test]
    fn electron_zeeman_splitting() {
        let s = SpinSystem::bare_electron(2.0023);
        let h = hamiltonian(&s, 3350.0, &Orientation::new(0.3, 0.2)).unwrap();
        let eig = LabeledEigensystem::new(&h);
        let split = eig.energies[1] - eig.energies[0];
        // 2.0023 * 1.39962449361 * 3350, by hand
        let oracle = 2.0023 * 1.399_624_493_61 * 3350.0;
        assert_relative_eq!(split, oracle, max_relative = 1e-12);
        assert!((split - 9388.0).abs() < 1.0);
    }

    #[test]
    fn transitions_without_hyperfine() {
        let mut s = SpinSystem::cu_mnt();
        s.nuclei[0].hyperfine = Matrix3::zeros();
        s.g_tensor = Matrix3::identity() * 2.0;
        let t = transitions(&s, 3400.0, &Orientation::new(0.4, 0.9)).unwrap();
        assert_eq!(t.len(), 4);
        for tr in &t {
            assert_relative_eq!(tr.frequency, t[0].frequency, epsilon = 1e-9);
            assert_eq!(tr.lower.m_i, tr.upper.m_i);
            assert_relative_eq!(tr.amplitude, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn parallel_axis_hyperfine_spacing() {
        let s = SpinSystem::cu_mnt();
        let o = Orientation::new(0.0, 0.0);
        let mut fields: Vec<f64> = s
            .allowed_transition_labels()
            .iter()
            .map(|(a, b)| resonance_field(&s, 9500.0, &o, a, b).unwrap())
            .collect();
        fields.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(fields.len(), 4);
        // first-order: A∥ / (g∥ βe)
        let oracle = 495.4 / (2.0898 * 1.399_624_493_61);
        for w in fields.windows(2) {
            assert!((w[1] - w[0] - oracle).abs() < 10.0, "spacing {}", w[1] - w[0]);
        }
    }

    #[test]
    fn parallel_axis_frequencies_separated_by_a_par() {
        let s = SpinSystem::cu_mnt();
        let t = transitions(&s, 3357.0, &Orientation::new(0.0, 0.0)).unwrap();
        let mut allowed: Vec<f64> = t
            .iter()
            .filter(|t| t.amplitude > 0.5 && t.lower.m_i == t.upper.m_i)
            .map(|t| t.frequency)
            .collect();
        allowed.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(allowed.len(), 4);
        for w in allowed.windows(2) {
            assert!((w[1] - w[0] - 495.4).abs() / 495.4 < 0.05, "{}", w[1] - w[0]);
        }
    }

    #[test]
    fn bare_resonance_field() {
        let s = SpinSystem::bare_electron(2.0215);
        let up = StateLabel::new(0.5, &[]).unwrap();
        let down = StateLabel::new(-0.5, &[]).unwrap();
        let b = resonance_field(&s, 9500.0, &Orientation::new(0.0, 0.0), &down, &up).unwrap();
        assert_relative_eq!(b, 9500.0 / (2.0215 * 1.399_624_493_61), max_relative = 1e-10);
        assert!((b - 3357.5).abs() < 0.5);

        let s2 = SpinSystem::bare_electron(2.0);
        let b0 = resonance_field(&s2, 0.0, &Orientation::new(0.0, 0.0), &down, &up).unwrap();
        assert_eq!(b0, 0.0);
    }

    #[test]
    fn resonance_out_of_bracket() {
        let s = SpinSystem::bare_electron(2.0);
        let up = StateLabel::new(0.5, &[]).unwrap();
        let down = StateLabel::new(-0.5, &[]).unwrap();
        let r = resonance_field(&s, 1e6, &Orientation::new(0.0, 0.0), &down, &up);
        assert!(matches!(r, Err(Error::NotFound(_))));
    }

    #[test]
    fn labels_display() {
        let l = StateLabel::new(-0.5, &[1.5]).unwrap();
        assert_eq!(l.to_string(), "|-1/2,3/2>");
    }
}
