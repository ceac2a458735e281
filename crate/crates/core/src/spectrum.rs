//! Powder-averaged field-swept echo-detected spectra and spectral fitting.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;

use crate::analysis::FitResult;
use crate::error::{Error, Result};
use crate::fit::{levenberg_marquardt, LmOptions};
use crate::spin_core::{
    first_order_field, AxialParameters, OperatorBasis, Orientation, ResonanceSolver, Spin, SpinSystem,
};
use crate::trace::fmt_f64;

pub const MIN_GRID_COUNT: usize = 16;
pub const DEFAULT_GRID_COUNT: usize = 4096;
/// Gauss, full width at half maximum.
pub const DEFAULT_LINE_WIDTH: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridScheme {
    EqualAreaSpiral,
    GaussianProduct,
}

impl FromStr for GridScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal-area-spiral" | "spiral" => Ok(GridScheme::EqualAreaSpiral),
            "gaussian-product" => Ok(GridScheme::GaussianProduct),
            other => Err(Error::invalid(format!("unknown powder grid scheme {other:?}"))),
        }
    }
}

impl GridScheme {
    pub fn name(self) -> &'static str {
        match self {
            GridScheme::EqualAreaSpiral => "equal-area-spiral",
            GridScheme::GaussianProduct => "gaussian-product",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowderGrid {
    pub orientations: Vec<Orientation>,
    pub scheme: GridScheme,
    pub count: usize,
}

pub fn powder_grid(scheme: GridScheme, count: usize) -> Result<PowderGrid> {
    if count < MIN_GRID_COUNT {
        return Err(Error::invalid(format!(
            "powder grid needs >= {MIN_GRID_COUNT} orientations, got {count}"
        )));
    }
    let orientations = match scheme {
        GridScheme::EqualAreaSpiral => spiral(count),
        GridScheme::GaussianProduct => gaussian_product(count),
    };
    Ok(PowderGrid {
        orientations,
        scheme,
        count,
    })
}

fn spiral(count: usize) -> Vec<Orientation> {
    let golden = PI * (3.0 - 5f64.sqrt());
    let w = 1.0 / count as f64;
    (0..count)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / count as f64;
            let phi = (i as f64 * golden).rem_euclid(2.0 * PI);
            Orientation {
                theta: z.clamp(-1.0, 1.0).acos(),
                phi,
                weight: w,
            }
        })
        .collect()
}

/// Gauss–Legendre nodes and weights on [−1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { z } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * p - pm1) / (z * z - 1.0);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn gaussian_product(count: usize) -> Vec<Orientation> {
    let target = (count as f64 / 2.0).sqrt();
    let n_theta = (1..=count)
        .filter(|d| count.is_multiple_of(*d))
        .min_by(|a, b| {
            ((*a as f64 - target).abs())
                .partial_cmp(&(*b as f64 - target).abs())
                .unwrap()
                .then(a.cmp(b))
        })
        .unwrap_or(1);
    let n_phi = count / n_theta;
    let (nodes, weights) = gauss_legendre(n_theta);
    let mut out = Vec::with_capacity(count);
    for (z, wz) in nodes.iter().zip(&weights) {
        for j in 0..n_phi {
            out.push(Orientation {
                theta: z.clamp(-1.0, 1.0).acos(),
                phi: 2.0 * PI * (j as f64 + 0.5) / n_phi as f64,
                weight: 0.5 * wz / n_phi as f64,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl FieldRange {
    pub fn axis(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0) || !(self.stop > self.start) {
            return Err(Error::invalid(format!(
                "field range needs stop > start and step > 0, got {}..{} step {}",
                self.start, self.stop, self.step
            )));
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|k| self.start + k as f64 * self.step).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineShape {
    Gaussian,
    Lorentzian,
}

impl FromStr for LineShape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(LineShape::Gaussian),
            "lorentzian" => Ok(LineShape::Lorentzian),
            other => Err(Error::invalid(format!("unknown line shape {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Broadening {
    pub shape: LineShape,
    /// FWHM, Gauss.
    pub width: f64,
}

impl Default for Broadening {
    fn default() -> Self {
        Self {
            shape: LineShape::Gaussian,
            width: DEFAULT_LINE_WIDTH,
        }
    }
}

impl Broadening {
    fn kernel(&self, x: f64) -> f64 {
        match self.shape {
            LineShape::Gaussian => {
                let s = self.width / (8.0 * 2f64.ln()).sqrt();
                (-0.5 * (x / s).powi(2)).exp()
            }
            LineShape::Lorentzian => {
                let g = 0.5 * self.width;
                1.0 / (1.0 + (x / g).powi(2))
            }
        }
    }

    /// Half-extent beyond which the kernel is dropped.
    fn reach(&self) -> f64 {
        match self.shape {
            LineShape::Gaussian => 4.0 * self.width,
            LineShape::Lorentzian => 50.0 * self.width,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Gauss
    pub field_axis: Vec<f64>,
    pub intensity: Vec<f64>,
}

impl Spectrum {
    pub fn new(field_axis: Vec<f64>, intensity: Vec<f64>) -> Result<Self> {
        if field_axis.len() != intensity.len() {
            return Err(Error::invalid("spectrum columns have different lengths"));
        }
        if field_axis.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("field axis must be strictly increasing"));
        }
        Ok(Self { field_axis, intensity })
    }

    pub fn len(&self) -> usize {
        self.field_axis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.field_axis.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.intensity.iter().cloned().fold(0.0, f64::max)
    }

    /// Scale to unit maximum; an all-zero spectrum is left unchanged.
    pub fn normalized(mut self) -> Self {
        let m = self.max();
        if m > 0.0 {
            self.intensity.iter_mut().for_each(|v| *v /= m);
        }
        self
    }

    pub fn integral(&self) -> f64 {
        self.intensity.iter().sum()
    }

    pub fn field_of_max(&self) -> Option<f64> {
        self.intensity
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
                Some((_, b)) if b >= v => best,
                _ => Some((i, v)),
            })
            .map(|(i, _)| self.field_axis[i])
    }

    /// Distance between the first and last field whose intensity exceeds
    /// `fraction` of the maximum.
    pub fn support_width(&self, fraction: f64) -> f64 {
        let thr = fraction * self.max();
        let first = self.intensity.iter().position(|&v| v > thr);
        let last = self.intensity.iter().rposition(|&v| v > thr);
        match (first, last) {
            (Some(a), Some(b)) => self.field_axis[b] - self.field_axis[a],
            _ => 0.0,
        }
    }

    /// Central-difference first derivative dI/dB.
    pub fn derivative(&self) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
                if a == b {
                    0.0
                } else {
                    (self.intensity[b] - self.intensity[a]) / (self.field_axis[b] - self.field_axis[a])
                }
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("field_G,intensity\n");
        for (b, i) in self.field_axis.iter().zip(&self.intensity) {
            let _ = writeln!(out, "{},{}", fmt_f64(*b), fmt_f64(*i));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut field = Vec::new();
        let mut inten = Vec::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (a, b) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("line {}: expected two columns", lineno + 1)))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("line {}: bad number {s:?}", lineno + 1)))
            };
            field.push(parse(a)?);
            inten.push(parse(b)?);
        }
        Self::new(field, inten)
    }
}

/// Resonance fields and amplitudes (already weighted) of all allowed
/// transitions for one orientation.
fn orientation_sticks(system: &SpinSystem, ops: &OperatorBasis, mw: f64, o: &Orientation) -> Vec<(f64, f64)> {
    let solver = ResonanceSolver::new(system, ops, o);
    system
        .allowed_transition_labels()
        .iter()
        .filter_map(|(lower, upper)| {
            let guess = first_order_field(system, mw, o, lower);
            solver
                .solve(mw, lower, upper, guess)
                .ok()
                .map(|r| (r.field, r.amplitude * o.weight))
        })
        .collect()
}

/// Every (field, weighted amplitude) stick of the powder pattern, in grid order.
pub fn powder_sticks(system: &SpinSystem, mw: f64, grid: &PowderGrid) -> Result<Vec<(f64, f64)>> {
    system.validate()?;
    if grid.orientations.is_empty() {
        return Err(Error::invalid("powder grid is empty"));
    }
    if !(mw > 0.0) {
        return Err(Error::invalid(format!("microwave frequency must be > 0, got {mw}")));
    }
    let ops = OperatorBasis::new(system)?;
    let per: Vec<Vec<(f64, f64)>> = grid
        .orientations
        .par_iter()
        .map(|o| orientation_sticks(system, &ops, mw, o))
        .collect();
    Ok(per.into_iter().flatten().collect())
}

/// Spread each stick over the axis with its own renormalised kernel, so the
/// summed intensity equals the summed stick amplitude for sticks whose
/// kernel touches the axis.
pub fn broaden(sticks: &[(f64, f64)], axis: &[f64], broadening: &Broadening) -> Result<Vec<f64>> {
    if !(broadening.width > 0.0) {
        return Err(Error::invalid("line broadening width must be > 0"));
    }
    let mut out = vec![0.0; axis.len()];
    if axis.is_empty() {
        return Ok(out);
    }
    let start = axis[0];
    let step = if axis.len() > 1 { axis[1] - axis[0] } else { 1.0 };
    let reach = broadening.reach();
    let mut kern = Vec::new();
    for &(x, w) in sticks {
        let lo = (((x - reach - start) / step).floor().max(0.0)) as usize;
        let hi_f = ((x + reach - start) / step).ceil();
        if hi_f < 0.0 || lo >= axis.len() {
            continue;
        }
        let hi = (hi_f as usize).min(axis.len() - 1);
        kern.clear();
        kern.extend((lo..=hi).map(|j| broadening.kernel(axis[j] - x)));
        let s: f64 = kern.iter().sum();
        if s > 1e-300 {
            for (j, k) in (lo..=hi).zip(&kern) {
                out[j] += w * k / s;
            }
        } else {
            // Kernel narrower than the grid: split linearly between neighbours.
            let f = (x - start) / step;
            let j = f.floor();
            if j >= 0.0 && (j as usize) < axis.len() {
                let j = j as usize;
                let frac = f - j as f64;
                out[j] += w * (1.0 - frac);
                if j + 1 < axis.len() {
                    out[j + 1] += w * frac;
                }
            }
        }
    }
    Ok(out)
}

/// Broadened powder spectrum before normalisation.
pub fn simulate_fsed_raw(
    system: &SpinSystem,
    mw: f64,
    range: &FieldRange,
    grid: &PowderGrid,
    broadening: &Broadening,
) -> Result<Spectrum> {
    let axis = range.axis()?;
    if !(broadening.width > 0.0) {
        return Err(Error::invalid("line broadening width must be > 0"));
    }
    let sticks = powder_sticks(system, mw, grid)?;
    let intensity = broaden(&sticks, &axis, broadening)?;
    Spectrum::new(axis, intensity)
}

pub fn simulate_fsed(
    system: &SpinSystem,
    mw: f64,
    range: &FieldRange,
    grid: &PowderGrid,
    broadening: &Broadening,
) -> Result<Spectrum> {
    Ok(simulate_fsed_raw(system, mw, range, grid, broadening)?.normalized())
}

/// Local maxima of dI/dB above `min_height` of the largest derivative:
/// the low-field edges of powder features.
pub fn rising_edges(spectrum: &Spectrum, min_height: f64) -> Vec<f64> {
    let d = spectrum.derivative();
    let top = d.iter().cloned().fold(0.0, f64::max);
    (1..d.len().saturating_sub(1))
        .filter(|&i| d[i] > d[i - 1] && d[i] >= d[i + 1] && d[i] > min_height * top)
        .map(|i| spectrum.field_axis[i])
        .collect()
}

/// Local extrema of |dI/dB| above `min_height` of the largest, as
/// (field, derivative) pairs. Absorption-like parallel lines show up as
/// either sign depending on which side of the envelope they sit.
pub fn derivative_extrema(spectrum: &Spectrum, min_height: f64) -> Vec<(f64, f64)> {
    let d = spectrum.derivative();
    let a: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let top = a.iter().cloned().fold(0.0, f64::max);
    (1..a.len().saturating_sub(1))
        .filter(|&i| a[i] > a[i - 1] && a[i] >= a[i + 1] && a[i] > min_height * top)
        .map(|i| (spectrum.field_axis[i], d[i]))
        .collect()
}

/// Which parameters a spectral fit varies; the rest stay at the start value.
#[derive(Debug, Clone, Copy)]
pub struct SpectrumFitOptions {
    pub nuclear_spin: Spin,
    pub g_n: f64,
    pub fit_g: bool,
    pub fit_width: bool,
    /// Broadening multiples for the coarse pre-fits run before the final
    /// fit; wide lines keep features overlapping when the start is far off.
    pub continuation: [f64; 2],
    pub lm: LmOptions,
}

impl Default for SpectrumFitOptions {
    fn default() -> Self {
        Self {
            nuclear_spin: Spin::from_twice(3),
            g_n: crate::spin_core::CU63_G_FACTOR,
            fit_g: true,
            fit_width: true,
            continuation: [8.0, 3.0],
            lm: LmOptions {
                max_iterations: 60,
                ..LmOptions::default()
            },
        }
    }
}

pub const G_BOUNDS: (f64, f64) = (1.5, 3.0);
pub const A_BOUNDS: (f64, f64) = (0.0, 2000.0);

/// Least-squares fit of (g∥, g⊥, A∥, A⊥, width) to a normalised target.
/// Coarse stages at `continuation × width` (width held fixed) seed the
/// final fit.
pub fn fit_spectrum(
    target: &Spectrum,
    initial: AxialParameters,
    mw: f64,
    grid: &PowderGrid,
    broadening: &Broadening,
    opts: &SpectrumFitOptions,
) -> Result<FitResult> {
    let mut start = initial;
    for &factor in opts.continuation.iter().filter(|f| **f > 1.0) {
        let wide = Broadening {
            shape: broadening.shape,
            width: broadening.width * factor,
        };
        let stage_opts = SpectrumFitOptions {
            fit_width: false,
            ..*opts
        };
        // Smooth the target by the extra width so both sides carry the same lines.
        let extra = Broadening {
            shape: broadening.shape,
            width: broadening.width * (factor * factor - 1.0).sqrt(),
        };
        let sticks: Vec<(f64, f64)> = target
            .field_axis
            .iter()
            .cloned()
            .zip(target.intensity.iter().cloned())
            .collect();
        let smoothed = Spectrum::new(target.field_axis.clone(), broaden(&sticks, &target.field_axis, &extra)?)?;
        let stage = match fit_spectrum_stage(&smoothed, start, mw, grid, &wide, &stage_opts) {
            Ok(r) => r,
            Err(Error::NonConvergence { best: Some(r), .. }) => *r,
            Err(e) => return Err(e),
        };
        let mut p = start.to_array();
        for (k, name) in ["g_par", "g_perp", "A_par", "A_perp"].iter().enumerate() {
            if let Some(v) = stage.param(name) {
                p[k] = v.value;
            }
        }
        start = AxialParameters::from_array(p);
    }
    fit_spectrum_stage(target, start, mw, grid, broadening, opts)
}

fn fit_spectrum_stage(
    target: &Spectrum,
    initial: AxialParameters,
    mw: f64,
    grid: &PowderGrid,
    broadening: &Broadening,
    opts: &SpectrumFitOptions,
) -> Result<FitResult> {
    if target.is_empty() {
        return Err(Error::invalid("target spectrum is empty"));
    }
    let p0 = initial.to_array();
    let in_g = |g: f64| g >= G_BOUNDS.0 && g <= G_BOUNDS.1;
    let in_a = |a: f64| a >= A_BOUNDS.0 && a <= A_BOUNDS.1;
    if !(in_g(p0[0]) && in_g(p0[1]) && in_a(p0[2]) && in_a(p0[3])) {
        return Err(Error::invalid(format!(
            "initial parameters {p0:?} outside g in [1.5, 3], A in [0, 2000] MHz"
        )));
    }
    if !(target.max() > 0.0) {
        return Err(Error::NonConvergence {
            message: "target spectrum carries no signal".into(),
            best: None,
        });
    }
    let tmax = target.max();
    let tnorm: Vec<f64> = target.intensity.iter().map(|v| v / tmax).collect();
    let axis = target.field_axis.clone();

    // Free-parameter layout: [g∥, g⊥]? [A∥, A⊥] [width]?
    let mut names: Vec<&str> = Vec::new();
    let mut x0 = Vec::new();
    let mut bounds = Vec::new();
    if opts.fit_g {
        names.extend(["g_par", "g_perp"]);
        x0.extend([p0[0], p0[1]]);
        bounds.extend([G_BOUNDS, G_BOUNDS]);
    }
    names.extend(["A_par", "A_perp"]);
    x0.extend([p0[2], p0[3]]);
    bounds.extend([A_BOUNDS, A_BOUNDS]);
    if opts.fit_width {
        names.push("width");
        x0.push(broadening.width);
        bounds.push((1e-3, 1000.0));
    }
    let unpack = |x: &[f64]| {
        let mut k = 0;
        let mut p = p0;
        if opts.fit_g {
            p[0] = x[0];
            p[1] = x[1];
            k = 2;
        }
        p[2] = x[k];
        p[3] = x[k + 1];
        let width = if opts.fit_width { x[k + 2] } else { broadening.width };
        (AxialParameters::from_array(p), width)
    };
    let residuals = |x: &[f64]| -> Vec<f64> {
        let (params, width) = unpack(x);
        let system = SpinSystem::axial(params, opts.nuclear_spin, opts.g_n);
        let b = Broadening {
            shape: broadening.shape,
            width,
        };
        let sim = powder_sticks(&system, mw, grid).and_then(|s| broaden(&s, &axis, &b));
        match sim {
            Ok(v) => {
                let m = v.iter().cloned().fold(0.0, f64::max);
                let scale = if m > 0.0 { 1.0 / m } else { 0.0 };
                v.iter().zip(&tnorm).map(|(s, t)| s * scale - t).collect()
            }
            Err(_) => vec![f64::NAN; tnorm.len()],
        }
    };
    let out = levenberg_marquardt(residuals, &x0, &bounds, opts.lm);
    let result = FitResult::new(
        &names,
        &out.params,
        &out.sigmas,
        out.residual_norm,
        out.converged,
        out.iterations,
    );
    if !out.converged {
        return Err(Error::NonConvergence {
            message: format!("spectral fit stopped after {} iterations", out.iterations),
            best: Some(Box::new(result)),
        });
    }
    Ok(result)
}

/// Fraction of the integrated spectrum whose resonance lies within
/// ±bandwidth/2 of a carrier resonant at `observe_field` (default: the
/// spectral maximum). Spins resonant at B are offset by `mw·(B_obs − B)/B`.
pub fn excitation_fraction(spectrum: &Spectrum, mw: f64, bandwidth: f64, observe_field: Option<f64>) -> Result<f64> {
    if spectrum.is_empty() {
        return Err(Error::invalid("spectrum is empty"));
    }
    if !(bandwidth >= 0.0) {
        return Err(Error::invalid("bandwidth must be >= 0"));
    }
    let total = spectrum.integral();
    if !(total > 0.0) {
        return Ok(0.0);
    }
    let b_obs = match observe_field {
        Some(b) => b,
        None => spectrum.field_of_max().expect("non-empty"),
    };
    // Each sample stands for a bin of one axis step; count the part of the
    // bin whose offset falls inside the window.
    let n = spectrum.len();
    let half_bin = |i: usize| {
        let lo = if i > 0 {
            spectrum.field_axis[i] - spectrum.field_axis[i - 1]
        } else {
            0.0
        };
        let hi = if i + 1 < n {
            spectrum.field_axis[i + 1] - spectrum.field_axis[i]
        } else {
            0.0
        };
        0.5 * if i == 0 {
            hi
        } else if i + 1 == n {
            lo
        } else {
            0.5 * (lo + hi)
        }
    };
    let offset = |b: f64| mw * (b_obs - b) / b;
    let half_bw = 0.5 * bandwidth;
    let mut inside = 0.0;
    for i in 0..n {
        let b = spectrum.field_axis[i];
        let h = half_bin(i);
        if b - h <= 0.0 {
            continue;
        }
        // offset decreases with field
        let (f_lo, f_hi) = (offset(b + h), offset(b - h));
        let frac = if f_hi > f_lo {
            ((f_hi.min(half_bw) - f_lo.max(-half_bw)) / (f_hi - f_lo)).max(0.0)
        } else if offset(b).abs() <= half_bw {
            1.0
        } else {
            0.0
        };
        inside += frac * spectrum.intensity[i];
    }
    Ok((inside / total).clamp(0.0, 1.0))
}

/// Pulse bandwidth converted to Gauss at `observe_field`, over the
/// spectrum's support width at `support_fraction` of the maximum.
pub fn bandwidth_ratio(
    spectrum: &Spectrum,
    mw: f64,
    bandwidth: f64,
    observe_field: f64,
    support_fraction: f64,
) -> Result<f64> {
    if !(mw > 0.0) || !(bandwidth >= 0.0) || !(observe_field > 0.0) {
        return Err(Error::invalid(
            "bandwidth ratio needs mw > 0, bandwidth >= 0, observe field > 0",
        ));
    }
    let width = spectrum.support_width(support_fraction);
    if !(width > 0.0) {
        return Err(Error::invalid("spectrum has no support above the threshold"));
    }
    Ok((bandwidth * observe_field / mw / width).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spiral_weights_uniform() {
        let g = powder_grid(GridScheme::EqualAreaSpiral, 100).unwrap();
        assert_eq!(g.orientations.len(), 100);
        assert!(g.orientations.iter().all(|o| (o.weight - 0.01).abs() < 1e-15));
        assert!(powder_grid(GridScheme::EqualAreaSpiral, 15).is_err());
        assert!("octahedral".parse::<GridScheme>().is_err());
    }

    #[test]
    fn grid_integrates_cos_squared() {
        for scheme in [GridScheme::EqualAreaSpiral, GridScheme::GaussianProduct] {
            let g = powder_grid(scheme, 10_000).unwrap();
            let avg: f64 = g.orientations.iter().map(|o| o.weight * o.theta.cos().powi(2)).sum();
            assert!((avg - 1.0 / 3.0).abs() < 1e-3, "{scheme:?}: {avg}");
            let wsum: f64 = g.orientations.iter().map(|o| o.weight).sum();
            assert!((wsum - 1.0).abs() < 1e-12);
        }
        let g16 = powder_grid(GridScheme::GaussianProduct, 16).unwrap();
        assert!((g16.orientations.iter().map(|o| o.weight).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        let (x, w) = gauss_legendre(5);
        let integ = |f: &dyn Fn(f64) -> f64| x.iter().zip(&w).map(|(x, w)| w * f(*x)).sum::<f64>();
        assert!((integ(&|_| 1.0) - 2.0).abs() < 1e-14);
        assert!((integ(&|x| x.powi(8)) - 2.0 / 9.0).abs() < 1e-14);
        assert!(integ(&|x| x.powi(7)).abs() < 1e-14);
    }

    #[test]
    fn isotropic_line_is_centred() {
        let sys = SpinSystem::bare_electron(2.0023);
        let grid = powder_grid(GridScheme::EqualAreaSpiral, 64).unwrap();
        let range = FieldRange {
            start: 3300.0,
            stop: 3480.0,
            step: 0.5,
        };
        let s = simulate_fsed(&sys, 9500.0, &range, &grid, &Broadening::default()).unwrap();
        let centre = 9500.0 / (2.0023 * sys.constants.electron_gyromagnetic_prefactor);
        let peak = s.field_of_max().unwrap();
        assert!((peak - centre).abs() <= 0.5, "{peak} vs {centre}");
        let k = s.field_axis.iter().position(|&b| b == peak).unwrap();
        for d in 1..20 {
            assert!((s.intensity[k - d] - s.intensity[k + d]).abs() < 0.05);
        }
    }

    #[test]
    fn broadening_conserves_intensity() {
        let sticks = vec![(3200.0, 0.3), (3251.7, 1.2), (3300.2, 0.01)];
        let axis: Vec<f64> = (0..800).map(|k| 3000.0 + k as f64 * 0.5).collect();
        for width in [0.01, 1.0, 8.0, 30.0] {
            for shape in [LineShape::Gaussian, LineShape::Lorentzian] {
                let out = broaden(&sticks, &axis, &Broadening { shape, width }).unwrap();
                assert!(
                    (out.iter().sum::<f64>() - 1.51).abs() < 1e-6 * 1.51,
                    "{shape:?} {width}"
                );
            }
        }
    }

    #[test]
    fn excitation_limits() {
        let s = Spectrum::new(vec![3300.0, 3310.0, 3320.0], vec![0.2, 1.0, 0.5]).unwrap();
        assert_eq!(excitation_fraction(&s, 9500.0, 1e9, None).unwrap(), 1.0);
        assert_eq!(excitation_fraction(&s, 9500.0, 0.0, None).unwrap(), 0.0);
        let a = excitation_fraction(&s, 9500.0, 5.0, None).unwrap();
        let b = excitation_fraction(&s, 9500.0, 20.0, None).unwrap();
        assert!(0.0 < a && a < b && b < 1.0);
    }

    #[test]
    fn spectrum_csv_round_trip() {
        let s = Spectrum::new(vec![1.0, 2.5, 3.25], vec![0.0, 1.0, 0.123456789]).unwrap();
        assert_eq!(Spectrum::from_csv(&s.to_csv()).unwrap(), s);
    }

    #[test]
    fn derivative_extrema_of_gaussian_sit_one_sigma_out() {
        let sigma = 4.0;
        let axis: Vec<f64> = (0..2001).map(|k| 3000.0 + k as f64 * 0.1).collect();
        let g = |x: f64, c: f64| (-0.5 * ((x - c) / sigma).powi(2)).exp();
        let intensity = axis.iter().map(|&x| g(x, 3050.0) + 0.5 * g(x, 3150.0)).collect();
        let s = Spectrum::new(axis, intensity).unwrap();
        let ext = derivative_extrema(&s, 0.02);
        let fields: Vec<f64> = ext.iter().map(|e| e.0).collect();
        let expected = [3046.0, 3054.0, 3146.0, 3154.0];
        assert_eq!(fields.len(), 4, "{fields:?}");
        for (f, e) in fields.iter().zip(expected) {
            assert!((f - e).abs() <= 0.1, "{f} vs {e}");
        }
        assert!(ext[0].1 > 0.0 && ext[1].1 < 0.0);
        // the weaker pair drops out once the threshold exceeds its height
        assert_eq!(derivative_extrema(&s, 0.6).len(), 2);
    }

    #[test]
    fn bandwidth_ratio_is_field_bandwidth_over_support() {
        let axis: Vec<f64> = (0..=100).map(|k| 3000.0 + k as f64).collect();
        let intensity = axis
            .iter()
            .map(|&b| if (3020.0..=3070.0).contains(&b) { 1.0 } else { 0.0 })
            .collect();
        let s = Spectrum::new(axis, intensity).unwrap();
        let width = s.support_width(0.02);
        let r = bandwidth_ratio(&s, 9500.0, 100.0, 3040.0, 0.02).unwrap();
        assert!((r - 100.0 * 3040.0 / 9500.0 / width).abs() < 1e-12);
        assert_eq!(bandwidth_ratio(&s, 9500.0, 1e6, 3040.0, 0.02).unwrap(), 1.0);
        assert!(bandwidth_ratio(&s, 0.0, 100.0, 3040.0, 0.02).is_err());
        let flat = Spectrum::new(vec![1.0, 2.0], vec![0.0, 0.0]).unwrap();
        assert!(bandwidth_ratio(&flat, 9500.0, 100.0, 3040.0, 0.02).is_err());
    }
}
