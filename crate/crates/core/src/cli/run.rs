//! Execute a [`Plan`] into in-memory outputs, then write them atomically.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use super::plan::{CpmgJob, CpmgMode, DipsJob, FitJob, FsedJob, Job, Plan, RabiJob, T1Job, Xy8Job};
use crate::analysis::r_squared;
use crate::decoherence::{apply_t1_factor, cpmg_coherence, dip_times, NoiseModel, RamanRelaxation};
use crate::error::{Error, Result};
use crate::experiments::{
    channel_leakage_study, cpmg_scaling_study, dip_study, fsed_experiment, pulse_error_comparison, rabi_study, t1_study,
};
use crate::instrument::{channel_leakage, iq_demodulate};
use crate::rng::substream_seed;
use crate::spectrum::{fit_spectrum, simulate_fsed, Broadening, Spectrum};
use crate::spin_core::{AxialParameters, SpinSystem};
use crate::trace::{fmt_f64, Table};

/// Files to write (name relative to the output directory, contents) and
/// the one-line summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    pub files: Vec<(String, String)>,
    pub summary: String,
}

fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x)
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num(x)).collect())
}

fn json(map: Map<String, Value>) -> String {
    let mut s = serde_json::to_string_pretty(&Value::Object(map)).expect("plain JSON");
    s.push('\n');
    s
}

fn short(x: f64) -> String {
    format!("{x:.4}")
}

pub fn execute(plan: &Plan) -> Result<Outputs> {
    let p = &plan.prefix;
    let mut files = Vec::new();
    let summary = match &plan.job {
        Job::Fsed(job) => fsed(job, p, &mut files)?,
        Job::Fit(job) => fit(job, p, &mut files)?,
        Job::Rabi(job) => rabi(job, plan.seed, p, &mut files)?,
        Job::T1(job) => t1(job, plan.seed, p, &mut files)?,
        Job::Cpmg(job) => cpmg(job, plan.seed, p, &mut files)?,
        Job::Xy8(job) => xy8(job, p, &mut files)?,
        Job::Dips(job) => dips(job, plan.seed, p, &mut files)?,
    };
    Ok(Outputs {
        files,
        summary: format!("{}: {summary}", plan.kind),
    })
}

fn fsed(job: &FsedJob, p: &str, files: &mut Vec<(String, String)>) -> Result<String> {
    let s = &job.setup;
    let report = fsed_experiment(&s.system, s.mw, &s.range, &s.grid, &s.broadening, job.bandwidth)?;
    let found: Vec<f64> = report.parallel_features.iter().flatten().cloned().collect();
    let spacings: Vec<f64> = if found.len() == report.parallel_features.len() {
        found.windows(2).map(|w| w[1] - w[0]).collect()
    } else {
        Vec::new()
    };
    let mut m = Map::new();
    m.insert("mw_MHz".into(), num(s.mw));
    m.insert("grid".into(), Value::from(s.grid.scheme.name()));
    m.insert("grid_count".into(), Value::from(s.grid.count));
    m.insert("support_width_G".into(), num(report.support_width));
    m.insert(
        "parallel_features_G".into(),
        Value::Array(
            report
                .parallel_features
                .iter()
                .map(|f| f.map(num).unwrap_or(Value::Null))
                .collect(),
        ),
    );
    m.insert("parallel_spacings_G".into(), nums(&spacings));
    m.insert("rising_edges_G".into(), nums(&report.edges));
    if let Some(bw) = job.bandwidth {
        m.insert("bandwidth_MHz".into(), num(bw));
        m.insert(
            "observe_field_G".into(),
            report.spectrum.field_of_max().map(num).unwrap_or(Value::Null),
        );
        m.insert(
            "excitation_fraction".into(),
            report.excitation_fraction.map(num).unwrap_or(Value::Null),
        );
        m.insert(
            "bandwidth_ratio".into(),
            report.bandwidth_ratio.map(num).unwrap_or(Value::Null),
        );
    }
    files.push((format!("{p}_spectrum.csv"), report.spectrum.to_csv()));
    files.push((format!("{p}_summary.json"), json(m)));
    let mut line = format!(
        "support {} G, parallel features [{}] G",
        fmt_f64(report.support_width),
        found.iter().map(|f| fmt_f64(*f)).collect::<Vec<_>>().join(", ")
    );
    if let (Some(x), Some(r)) = (report.excitation_fraction, report.bandwidth_ratio) {
        line.push_str(&format!(
            ", excited fraction {} (bandwidth ratio {})",
            short(x),
            short(r)
        ));
    }
    Ok(line)
}

fn fit(job: &FitJob, p: &str, files: &mut Vec<(String, String)>) -> Result<String> {
    let s = &job.setup;
    let target = match &job.target {
        Some(t) => t.clone(),
        None => simulate_fsed(&s.system, s.mw, &s.range, &s.grid, &s.broadening)?,
    };
    let start = Broadening {
        shape: s.broadening.shape,
        width: job.start_width,
    };
    let result = fit_spectrum(&target, job.start, s.mw, &s.grid, &start, &job.options)?;
    let base = [
        s.system.g_tensor[(2, 2)],
        s.system.g_tensor[(0, 0)],
        s.system.nuclei[0].hyperfine[(2, 2)],
        s.system.nuclei[0].hyperfine[(0, 0)],
    ];
    let fitted = AxialParameters {
        g_par: result.param("g_par").map(|v| v.value).unwrap_or(job.start.g_par),
        g_perp: result.param("g_perp").map(|v| v.value).unwrap_or(job.start.g_perp),
        a_par: result.param("A_par").map(|v| v.value).unwrap_or(job.start.a_par),
        a_perp: result.param("A_perp").map(|v| v.value).unwrap_or(job.start.a_perp),
    };
    let width = result.param("width").map(|v| v.value).unwrap_or(job.start_width);
    let mut system = SpinSystem::axial(fitted, job.options.nuclear_spin, job.options.g_n);
    system.constants = s.system.constants;
    let axis_range = crate::spectrum::FieldRange {
        start: target.field_axis[0],
        stop: *target.field_axis.last().expect("non-empty target"),
        step: if target.len() > 1 {
            target.field_axis[1] - target.field_axis[0]
        } else {
            1.0
        },
    };
    let model = simulate_fsed(
        &system,
        s.mw,
        &axis_range,
        &s.grid,
        &Broadening {
            shape: s.broadening.shape,
            width,
        },
    )?;
    let mut t = Table::new(&["field_G", "target", "model"]);
    let tmax = target.max();
    for (k, &b) in target.field_axis.iter().enumerate() {
        let m = model.intensity.get(k).cloned().unwrap_or(f64::NAN);
        t.push(vec![b, target.intensity[k] / tmax, m]);
    }
    files.push((format!("{p}_fit.json"), result.to_json()));
    files.push((format!("{p}_overlay.csv"), t.to_csv()));
    let rel = |name: &str, k: usize| result.param(name).map(|v| (v.value / base[k] - 1.0).abs());
    let worst = ["g_par", "g_perp", "A_par", "A_perp"]
        .iter()
        .enumerate()
        .filter_map(|(k, n)| rel(n, k))
        .fold(0.0, f64::max);
    let source = if job.target.is_some() {
        "target"
    } else {
        "self-simulated target"
    };
    Ok(format!(
        "{source}, g_par {}, g_perp {}, A_par {} MHz, A_perp {} MHz, width {} G, residual {:.3e}, largest deviation from configured spin system {:.3}%",
        short(fitted.g_par),
        short(fitted.g_perp),
        short(fitted.a_par),
        short(fitted.a_perp),
        short(width),
        result.residual_norm,
        100.0 * worst
    ))
}

fn rabi(job: &RabiJob, seed: u64, p: &str, files: &mut Vec<(String, String)>) -> Result<String> {
    let study = rabi_study(
        &job.nutation,
        job.tau0,
        job.dt,
        job.samples,
        &job.amplifier,
        job.shots,
        substream_seed(seed, "rabi"),
    )?;
    let nu_ref = job.nutation[0];
    let mut t = Table::new(&["nu1_MHz", "sqrtP_rel", "peak_MHz", "fwhm_MHz"])
        .with_meta("jitter_rel", job.amplifier.amplitude_jitter_rel);
    let (mut xs, mut fs, mut ws) = (Vec::new(), Vec::new(), Vec::new());
    for (nu, peak) in job.nutation.iter().zip(&study.peaks) {
        let sqrt_p = nu / nu_ref;
        let (f, w) = peak.map(|pk| (pk.frequency, pk.fwhm)).unwrap_or((f64::NAN, f64::NAN));
        t.push(vec![*nu, sqrt_p, f, w]);
        xs.push(sqrt_p);
        fs.push(f);
        ws.push(w);
    }
    files.push((format!("{p}_traces.csv"), study.traces_table().to_csv()));
    files.push((format!("{p}_peaks.csv"), t.to_csv()));
    let r2 = if xs.len() >= 3 { r_squared(&xs, &fs) } else { f64::NAN };
    let mut m = Map::new();
    m.insert("peak_vs_sqrtP_r2".into(), num(r2));
    m.insert(
        "fwhm_vs_sqrtP_r2".into(),
        num(if xs.len() >= 3 { r_squared(&xs, &ws) } else { f64::NAN }),
    );
    m.insert("fwhm_monotone".into(), Value::Bool(ws.windows(2).all(|w| w[1] > w[0])));
    files.push((format!("{p}_summary.json"), json(m)));
    Ok(format!(
        "peaks [{}] MHz, fwhm [{}] MHz, R² of peak vs √P {}",
        fs.iter().map(|v| short(*v)).collect::<Vec<_>>().join(", "),
        ws.iter().map(|v| short(*v)).collect::<Vec<_>>().join(", "),
        short(r2)
    ))
}

fn t1(job: &T1Job, seed: u64, p: &str, files: &mut Vec<(String, String)>) -> Result<String> {
    let study = t1_study(
        job.calibration,
        &job.temperatures,
        job.noise_rel,
        job.ir_temperature,
        substream_seed(seed, "t1"),
    )?;
    files.push((format!("{p}_points.csv"), study.table.to_csv()));
    files.push((format!("{p}_fit.json"), study.fit.to_json()));
    let raman = RamanRelaxation::calibrate(job.calibration.0, job.calibration.1)?;
    let mut line = format!(
        "exponent {} ± {}, model T1(8 K) = {} ms",
        short(study.fit.value("exponent")),
        short(study.fit.sigma("exponent")),
        short(raman.t1(8.0)?)
    );
    if let Some(ir) = &study.inversion_recovery {
        files.push((format!("{p}_ir.csv"), ir.to_csv()));
        let zero =
            ir.t.windows(2)
                .zip(ir.coherence.windows(2))
                .find(|(_, c)| c[0] < 0.0 && c[1] >= 0.0)
                .map(|(t, c)| t[0] + (t[1] - t[0]) * (-c[0]) / (c[1] - c[0]));
        if let Some(z) = zero {
            line.push_str(&format!(", IR zero crossing {} ms", short(z / 1000.0)));
        }
    }
    Ok(line)
}

fn model_of(job: &CpmgJob) -> &NoiseModel {
    job.model.as_ref().expect("noise model present outside leakage mode")
}

fn cpmg(job: &CpmgJob, seed: u64, p: &str, files: &mut Vec<(String, String)>) -> Result<String> {
    match job.mode {
        CpmgMode::Scaling => {
            let model = model_of(job);
            let mut study = cpmg_scaling_study(
                model,
                &job.ns,
                job.points,
                job.realizations,
                substream_seed(seed, "cpmg"),
            )?;
            for (n, tr) in job.ns.iter().zip(study.traces.iter_mut()) {
                if let Some(t1) = job.t1 {
                    apply_t1_factor(tr, t1);
                }
                files.push((format!("{p}_n{n}.csv"), tr.to_csv()));
            }
            files.push((format!("{p}_fits.csv"), study.table().to_csv()));
            files.push((format!("{p}_scaling.json"), study.scaling.to_json()));
            Ok(format!(
                "{} model, T2 = {} µs, alpha = {} ± {}",
                model.name(),
                short(study.scaling.value("T2")),
                short(study.scaling.value("alpha")),
                short(study.scaling.sigma("alpha"))
            ))
        }
        CpmgMode::Sweep => {
            let model = model_of(job);
            let mut mins = Vec::new();
            let mut m = Map::new();
            for &n in &job.ns {
                let mut tr = cpmg_coherence(
                    model,
                    n,
                    &job.taus,
                    job.realizations,
                    substream_seed(seed, &format!("cpmg-n{n}")),
                )?;
                if let Some(t1) = job.t1 {
                    apply_t1_factor(&mut tr, t1);
                }
                let (k, lo) = tr
                    .coherence
                    .iter()
                    .enumerate()
                    .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
                let mut entry = Map::new();
                entry.insert("min_coherence".into(), num(lo));
                entry.insert("t_at_min_us".into(), num(tr.t[k]));
                m.insert(format!("n{n}"), Value::Object(entry));
                mins.push(format!("n={n}: {} at {} µs", short(lo), short(tr.t[k])));
                files.push((format!("{p}_n{n}.csv"), tr.to_csv()));
            }
            files.push((format!("{p}_summary.json"), json(m)));
            Ok(format!("{} model, minimum coherence {}", model.name(), mins.join("; ")))
        }
        CpmgMode::Leakage => {
            let mut m = Map::new();
            let mut parts = Vec::new();
            for &n in &job.ns {
                let (i, q) = channel_leakage_study(&job.amplifier, n, &job.taus, job.rabi, job.spread, job.offsets)?;
                let phase = iq_demodulate(&i, &q)?;
                let mut t = Table::new(&["tau_us", "t_us", "I", "Q", "phase_deg"])
                    .with_meta("droop_total_deg", job.amplifier.droop_total)
                    .with_meta("droop_span_us", job.amplifier.droop_span)
                    .with_meta("droop_model", "linear");
                for k in 0..i.len() {
                    t.push(vec![
                        job.taus[k],
                        n as f64 * job.taus[k],
                        i[k],
                        q[k],
                        phase[k].unwrap_or(f64::NAN),
                    ]);
                }
                let ratio = channel_leakage(&i, &q);
                m.insert(format!("n{n}_leakage"), num(ratio));
                parts.push(format!("n={n}: Q/I rms {}", short(ratio)));
                files.push((format!("{p}_n{n}.csv"), t.to_csv()));
            }
            files.push((format!("{p}_summary.json"), json(m)));
            Ok(format!(
                "droop {}° over {} µs, {}",
                fmt_f64(job.amplifier.droop_total),
                fmt_f64(job.amplifier.droop_span),
                parts.join("; ")
            ))
        }
    }
}

fn xy8(job: &Xy8Job, p: &str, files: &mut Vec<(String, String)>) -> Result<String> {
    let t = pulse_error_comparison(job.rabi, job.amplitude_error, job.tau, &job.blocks)?;
    let last = t.rows.last().cloned().unwrap_or_default();
    files.push((format!("{p}.csv"), t.to_csv()));
    Ok(format!(
        "after {} pulses: CPMG y {} x {}, XY-8 y {} x {}",
        last[0],
        short(last[1]),
        short(last[2]),
        short(last[3]),
        short(last[4])
    ))
}

fn dips(job: &DipsJob, seed: u64, p: &str, files: &mut Vec<(String, String)>) -> Result<String> {
    let study = dip_study(
        &job.model,
        &job.ns,
        &job.taus,
        job.realizations,
        substream_seed(seed, "dips"),
    )?;
    let step = if job.taus.len() > 1 {
        job.taus[1] - job.taus[0]
    } else {
        0.0
    };
    let mut t =
        Table::new(&["n", "k", "predicted_us", "observed_us", "offset_tau_steps"]).with_meta("larmor_MHz", job.larmor);
    let mut parts = Vec::new();
    for ((n, tr), minima) in job.ns.iter().zip(&study.traces).zip(&study.minima) {
        files.push((format!("{p}_n{n}.csv"), tr.to_csv()));
        let predicted = dip_times(*n, job.larmor, job.k_max)?;
        let t_max = tr.t.last().cloned().unwrap_or(0.0);
        for (k, &pt) in predicted.iter().enumerate() {
            if pt > t_max {
                break;
            }
            let obs = minima
                .iter()
                .cloned()
                .min_by(|a, b| (a - pt).abs().partial_cmp(&(b - pt).abs()).unwrap())
                .unwrap_or(f64::NAN);
            let offset = (obs - pt) / (*n as f64 * step);
            t.push(vec![*n as f64, (k + 1) as f64, pt, obs, offset]);
            if k == 0 {
                parts.push(format!("n={n}: k=1 at {} µs (predicted {})", short(obs), short(pt)));
            }
        }
    }
    files.push((format!("{p}.csv"), t.to_csv()));
    Ok(parts.join("; "))
}

/// Write `contents` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// Write every output under `dir`, creating it if needed. Returns the paths.
pub fn write_outputs(outputs: &Outputs, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (name, contents) in &outputs.files {
        let path = dir.join(name);
        write_atomic(&path, contents)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Exit status for an error: 2 configuration, 3 non-convergence, 1 other.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::InvalidArgument(_) => 2,
        Error::NonConvergence { .. } => 3,
        _ => 1,
    }
}

/// Re-read every CSV output with the matching reader and compare, so an
/// output that would not round-trip is caught before it is written.
pub fn check_round_trip(outputs: &Outputs) -> Result<()> {
    for (name, text) in &outputs.files {
        if !name.ends_with(".csv") {
            continue;
        }
        let same = if text.starts_with("field_G,intensity\n") {
            Spectrum::from_csv(text)?.to_csv() == *text
        } else if text.lines().find(|l| !l.starts_with('#')) == Some("t_us,coherence,stderr") {
            crate::trace::DecayTrace::from_csv(text)?.to_csv() == *text
        } else {
            Table::from_csv(text)?.to_csv() == *text
        };
        if !same {
            return Err(Error::Consistency(format!(
                "{name} does not round-trip through its reader"
            )));
        }
    }
    Ok(())
}
