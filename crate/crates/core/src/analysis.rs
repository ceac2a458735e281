//! Fitting of the decay and scaling laws, FFT peak extraction and the
//! single-qubit figure of merit.

use std::fmt::Write as _;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::fit::{levenberg_marquardt, LmOptions};
use crate::trace::{fmt_f64, DecayTrace};

#[derive(Debug, Clone, PartialEq)]
pub struct FitParam {
    pub name: String,
    pub value: f64,
    /// 1σ, from the fit's residual Jacobian.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: Vec<FitParam>,
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn new(
        names: &[&str],
        values: &[f64],
        sigmas: &[f64],
        residual_norm: f64,
        converged: bool,
        iterations: usize,
    ) -> Self {
        let params = names
            .iter()
            .zip(values)
            .zip(sigmas)
            .map(|((n, &value), &sigma)| FitParam {
                name: n.to_string(),
                value,
                sigma,
            })
            .collect();
        Self {
            params,
            residual_norm,
            converged,
            iterations,
        }
    }

    pub fn param(&self, name: &str) -> Option<&FitParam> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Value of a named parameter. Panics if the fit has no such parameter.
    pub fn value(&self, name: &str) -> f64 {
        self.param(name)
            .unwrap_or_else(|| panic!("no fit parameter {name}"))
            .value
    }

    pub fn sigma(&self, name: &str) -> f64 {
        self.param(name)
            .unwrap_or_else(|| panic!("no fit parameter {name}"))
            .sigma
    }

    /// Flat JSON object: `name`, `name_sigma` per parameter, then fit status.
    /// Non-finite numbers are written as `null`.
    pub fn to_json(&self) -> String {
        let num = |x: f64| {
            serde_json::Number::from_f64(x)
                .map(Value::Number)
                .unwrap_or(Value::Null)
        };
        let mut m = Map::new();
        for p in &self.params {
            m.insert(p.name.clone(), num(p.value));
            m.insert(format!("{}_sigma", p.name), num(p.sigma));
        }
        m.insert("residual_norm".into(), num(self.residual_norm));
        m.insert("converged".into(), Value::Bool(self.converged));
        m.insert("iterations".into(), Value::from(self.iterations));
        let mut s = serde_json::to_string_pretty(&Value::Object(m)).expect("plain JSON");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Parse("fit result must be a JSON object".into()))?;
        let num = |v: &Value| v.as_f64().unwrap_or(f64::INFINITY);
        let mut params = Vec::new();
        for (k, val) in obj {
            if k.ends_with("_sigma") || ["residual_norm", "converged", "iterations"].contains(&k.as_str()) {
                continue;
            }
            let sigma = obj.get(&format!("{k}_sigma")).map(num).unwrap_or(0.0);
            params.push(FitParam {
                name: k.clone(),
                value: val.as_f64().unwrap_or(f64::NAN),
                sigma,
            });
        }
        Ok(Self {
            params,
            residual_norm: obj.get("residual_norm").map(num).unwrap_or(0.0),
            converged: obj.get("converged").and_then(Value::as_bool).unwrap_or(false),
            iterations: obj.get("iterations").and_then(Value::as_u64).unwrap_or(0) as usize,
        })
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<14} {:>16} {:>16}", "param", "value", "sigma(fit)");
        for p in &self.params {
            let _ = writeln!(s, "{:<14} {:>16.6e} {:>16.3e}", p.name, p.value, p.sigma);
        }
        let _ = writeln!(
            s,
            "residual_norm={} converged={} iterations={}",
            fmt_f64(self.residual_norm),
            self.converged,
            self.iterations
        );
        s
    }
}

/// Standard errors below this are raised to it before weighting.
pub const MIN_WEIGHT_SIGMA: f64 = 1e-3;

/// Fit `amplitude·exp[−(t/T_coh)^β]` to every point of the trace.
pub fn fit_stretched(trace: &DecayTrace) -> Result<FitResult> {
    if trace.len() < 8 {
        return Err(Error::invalid(format!(
            "stretched-exponential fit needs >= 8 points, got {}",
            trace.len()
        )));
    }
    let ymax = trace.coherence.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ymin = trace.coherence.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(ymax > 0.0) || ymin > 0.1 * ymax {
        return Err(Error::NonConvergence {
            message: format!("insufficient decay range: trace spans [{ymin}, {ymax}], needs at least one decade"),
            best: None,
        });
    }

    let weights: Vec<f64> = if trace.has_errors() {
        trace.stderr.iter().map(|s| 1.0 / s.max(MIN_WEIGHT_SIGMA)).collect()
    } else {
        vec![1.0; trace.len()]
    };

    let (t0, b0) = stretched_initial_guess(&trace.t, &trace.coherence, ymax);
    let t = &trace.t;
    let y = &trace.coherence;
    let outcome = levenberg_marquardt(
        |p| {
            t.iter()
                .zip(y)
                .zip(&weights)
                .map(|((&t, &y), &w)| w * (p[2] * (-(t / p[0]).powf(p[1])).exp() - y))
                .collect()
        },
        &[t0, b0, ymax],
        &[(1e-12, f64::INFINITY), (0.05, 4.0), (1e-6, 10.0)],
        LmOptions::default(),
    );
    let result = FitResult::new(
        &["T_coh", "beta", "amplitude"],
        &outcome.params,
        &outcome.sigmas,
        outcome.residual_norm,
        outcome.converged,
        outcome.iterations,
    );
    if !outcome.converged {
        return Err(Error::NonConvergence {
            message: "stretched-exponential fit hit the iteration limit".into(),
            best: Some(Box::new(result)),
        });
    }
    Ok(result)
}

fn stretched_initial_guess(t: &[f64], y: &[f64], amp: f64) -> (f64, f64) {
    // Linearise: ln(−ln(y/a)) = β ln t − β ln T
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .filter(|(&t, &y)| t > 0.0 && y / amp > 0.03 && y / amp < 0.97)
        .map(|(&t, &y)| (t.ln(), (-(y / amp).ln()).ln()))
        .collect();
    if pts.len() >= 2 {
        if let Some((slope, intercept)) = linear_regression(&pts).map(|r| (r.slope, r.intercept)) {
            if slope > 0.05 && slope <= 4.0 {
                return ((-intercept / slope).exp(), slope);
            }
        }
    }
    // 1/e crossing, β = 1
    let target = amp / std::f64::consts::E;
    let cross = t
        .iter()
        .zip(y)
        .find(|(_, &y)| y < target)
        .map(|(&t, _)| t)
        .unwrap_or_else(|| t.iter().cloned().fold(0.0, f64::max));
    (cross.max(1e-9), 1.0)
}

/// Keep points that are the maximum within ±window/2 of themselves.
pub fn extract_envelope(trace: &DecayTrace, window: f64) -> DecayTrace {
    let half = 0.5 * window;
    let keep: Vec<usize> = (0..trace.len())
        .filter(|&i| {
            (0..trace.len())
                .filter(|&j| (trace.t[j] - trace.t[i]).abs() <= half)
                .all(|j| trace.coherence[j] <= trace.coherence[i])
        })
        .collect();
    DecayTrace {
        t: keep.iter().map(|&i| trace.t[i]).collect(),
        coherence: keep.iter().map(|&i| trace.coherence[i]).collect(),
        stderr: keep.iter().map(|&i| trace.stderr[i]).collect(),
        metadata: trace.metadata.clone(),
    }
}

/// Envelope fit of a trace modulated at the dip period `n / f_l`.
pub fn fit_stretched_envelope(trace: &DecayTrace, n: usize, larmor: f64) -> Result<FitResult> {
    if larmor <= 0.0 || n == 0 {
        return Err(Error::invalid("envelope window needs n >= 1 and f_l > 0"));
    }
    fit_stretched(&extract_envelope(trace, n as f64 / larmor))
}

#[derive(Debug, Clone, Copy)]
struct Regression {
    slope: f64,
    intercept: f64,
    slope_sigma: f64,
    intercept_sigma: f64,
    rss: f64,
}

fn linear_regression(pts: &[(f64, f64)]) -> Option<Regression> {
    let n = pts.len() as f64;
    let xm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - xm).powi(2)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let rss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let (slope_sigma, intercept_sigma) = if pts.len() > 2 {
        let s2 = rss / (n - 2.0);
        ((s2 / sxx).sqrt(), (s2 * (1.0 / n + xm * xm / sxx)).sqrt())
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    Some(Regression {
        slope,
        intercept,
        slope_sigma,
        intercept_sigma,
        rss,
    })
}

fn log_log(points: &[(f64, f64)], what: &str) -> Result<Vec<(f64, f64)>> {
    points
        .iter()
        .map(|&(x, y)| {
            if x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite() {
                Ok((x.ln(), y.ln()))
            } else {
                Err(Error::invalid(format!("{what}: non-positive input ({x}, {y})")))
            }
        })
        .collect()
}

fn distinct(xs: impl Iterator<Item = f64>) -> usize {
    let mut v: Vec<f64> = xs.collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup();
    v.len()
}

/// `T_coh = T2·n^α` by linear regression of ln T_coh on ln n.
pub fn fit_scaling(points: &[(f64, f64)]) -> Result<FitResult> {
    let ll = log_log(points, "fit_scaling")?;
    if distinct(points.iter().map(|p| p.0)) < 3 {
        return Err(Error::invalid("fit_scaling needs at least 3 distinct n"));
    }
    let r = linear_regression(&ll).expect("distinct abscissae");
    let t2 = r.intercept.exp();
    Ok(FitResult::new(
        &["T2", "alpha"],
        &[t2, r.slope],
        &[t2 * r.intercept_sigma, r.slope_sigma],
        r.rss.sqrt(),
        true,
        1,
    ))
}

/// `1/T1 = c·T^p` by regression of ln(1/T1) on ln T.
pub fn fit_t1_power(points: &[(f64, f64)]) -> Result<FitResult> {
    let ll = log_log(points, "fit_t1_power")?;
    if distinct(points.iter().map(|p| p.0)) < 3 {
        return Err(Error::invalid("fit_t1_power needs at least 3 distinct temperatures"));
    }
    let rates: Vec<(f64, f64)> = ll.iter().map(|&(x, y)| (x, -y)).collect();
    let r = linear_regression(&rates).expect("distinct abscissae");
    let c = r.intercept.exp();
    Ok(FitResult::new(
        &["c", "exponent"],
        &[c, r.slope],
        &[c * r.intercept_sigma, r.slope_sigma],
        r.rss.sqrt(),
        true,
        1,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FftPeak {
    /// MHz when the sample spacing is in µs.
    pub frequency: f64,
    pub height: f64,
    pub fwhm: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct FftOptions {
    /// Peaks below this fraction of the tallest magnitude are ignored.
    pub prominence: f64,
    pub zero_pad: usize,
}

impl Default for FftOptions {
    fn default() -> Self {
        Self {
            prominence: 0.1,
            zero_pad: 4,
        }
    }
}

/// Magnitude spectrum of the mean-subtracted, Hann-windowed, zero-padded
/// series for bins 0..=M/2, with the bin spacing.
pub fn magnitude_spectrum(series: &[f64], dt: f64, zero_pad: usize) -> (Vec<f64>, f64) {
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let m = n * zero_pad.max(1);
    let mut buf: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); m];
    for (k, &x) in series.iter().enumerate() {
        let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / (n - 1) as f64).cos();
        buf[k] = Complex64::new((x - mean) * w, 0.0);
    }
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    let mags = buf[..=m / 2].iter().map(|c| c.norm()).collect();
    (mags, 1.0 / (m as f64 * dt))
}

pub fn fft_peaks(series: &[f64], dt: f64, max_peaks: usize) -> Result<Vec<FftPeak>> {
    fft_peaks_with(series, dt, max_peaks, FftOptions::default())
}

pub fn fft_peaks_with(series: &[f64], dt: f64, max_peaks: usize, opts: FftOptions) -> Result<Vec<FftPeak>> {
    if series.len() < 32 {
        return Err(Error::invalid(format!(
            "fft_peaks needs >= 32 samples, got {}",
            series.len()
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("sample spacing must be > 0"));
    }
    let (mag, df) = magnitude_spectrum(series, dt, opts.zero_pad);
    let top = mag.iter().cloned().fold(0.0, f64::max);
    let scale = series.iter().map(|x| x.abs()).fold(0.0, f64::max);
    if !(top > 1e-12 * scale.max(f64::MIN_POSITIVE)) || top == 0.0 {
        return Ok(Vec::new());
    }
    let mut peaks = Vec::new();
    for k in 1..mag.len() - 1 {
        let (a, b, c) = (mag[k - 1], mag[k], mag[k + 1]);
        if !(b > a && b >= c && b >= opts.prominence * top) {
            continue;
        }
        let denom = a - 2.0 * b + c;
        let delta = if denom != 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
        let height = b - 0.25 * (a - c) * delta;
        let half = 0.5 * height;
        let mut left = 0.0;
        let mut i = k;
        while i > 0 {
            if mag[i - 1] < half {
                left = (i - 1) as f64 + (half - mag[i - 1]) / (mag[i] - mag[i - 1]);
                break;
            }
            i -= 1;
        }
        let mut right = (mag.len() - 1) as f64;
        let mut j = k;
        while j + 1 < mag.len() {
            if mag[j + 1] < half {
                right = j as f64 + (mag[j] - half) / (mag[j] - mag[j + 1]);
                break;
            }
            j += 1;
        }
        peaks.push(FftPeak {
            frequency: (k as f64 + delta) * df,
            height,
            fwhm: (right - left) * df,
        });
    }
    peaks.sort_by(|x, y| {
        y.height
            .partial_cmp(&x.height)
            .unwrap()
            .then(x.frequency.partial_cmp(&y.frequency).unwrap())
    });
    peaks.truncate(max_peaks);
    Ok(peaks)
}

/// Coherence time over gate time.
pub fn figure_of_merit(t2: f64, gate_time: f64) -> f64 {
    t2 / gate_time
}

/// Coefficient of determination of a straight-line fit.
pub fn r_squared(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs.iter().cloned().zip(ys.iter().cloned()).collect();
    let Some(r) = linear_regression(&pts) else {
        return f64::NAN;
    };
    let ym = ys.iter().sum::<f64>() / ys.len() as f64;
    let tss: f64 = ys.iter().map(|y| (y - ym).powi(2)).sum();
    1.0 - r.rss / tss
}
