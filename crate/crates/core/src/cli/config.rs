//! Sectioned `key = value` configuration text.
//!
//! ```text
//! # comment
//! include preset:cu_mnt
//! [spectrum]
//! mw_MHz = 9500
//! ```
//!
//! `include PATH` splices another file (relative to the including file) or an
//! embedded preset (`preset:NAME`). Later definitions override earlier ones
//! across files; repeating a key inside one file is an error. Every section
//! and key must appear in [`SCHEMA`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::presets;
use crate::error::{Error, Result};

/// Allowed keys per section.
pub const SCHEMA: &[(&str, &[&str])] = &[
    ("run", &["experiment", "seed"]),
    ("output", &["dir", "prefix"]),
    ("constants", &["beta_e_MHz_per_G", "beta_n_kHz_per_G", "g_proton"]),
    (
        "spin_system",
        &["g_par", "g_perp", "A_par_MHz", "A_perp_MHz", "I", "g_n"],
    ),
    (
        "spectrum",
        &[
            "mw_MHz",
            "field_start_G",
            "field_stop_G",
            "field_step_G",
            "grid",
            "grid_count",
            "line_shape",
            "width_G",
            "bandwidth_MHz",
        ],
    ),
    (
        "fit",
        &[
            "target",
            "start_g_par",
            "start_g_perp",
            "start_A_par_MHz",
            "start_A_perp_MHz",
            "start_width_G",
            "fit_g",
            "fit_width",
            "max_iterations",
        ],
    ),
    ("rabi", &["nutation_MHz", "tau0_us", "dt_us", "samples", "shots"]),
    (
        "instrument",
        &["amplifier", "droop_total_deg", "droop_span_us", "jitter_rel"],
    ),
    (
        "t1",
        &[
            "calibration_K",
            "calibration_T1_ms",
            "temperatures_K",
            "noise_rel",
            "ir_temperature_K",
        ],
    ),
    (
        "sequence",
        &[
            "mode",
            "n",
            "points",
            "realizations",
            "tau_start_us",
            "tau_stop_us",
            "tau_points",
            "rabi_MHz",
            "amplitude_error",
            "tau_us",
            "blocks",
            "offsets",
            "spread_MHz",
            "k_max",
        ],
    ),
    (
        "noise",
        &[
            "model",
            "sigma_MHz",
            "tau_c_us",
            "larmor_MHz",
            "coupling_MHz",
            "amplitude",
            "nuclei",
            "t1_us",
        ],
    ),
];

/// Where a value came from, for error messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    File { path: String, line: usize },
    Override,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::File { path, line } => write!(f, "{path}:{line}"),
            Origin::Override => write!(f, "--set"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub value: String,
    pub origin: Origin,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    pub sections: BTreeMap<String, BTreeMap<String, Entry>>,
    /// Directory of the top-level file; relative data paths resolve here.
    pub base_dir: PathBuf,
    /// Display name of the top-level source.
    pub source: String,
}

const MAX_INCLUDE_DEPTH: usize = 16;

pub fn config_error(origin: &Origin, message: impl Into<String>) -> Error {
    match origin {
        Origin::File { path, line } => Error::Config {
            path: path.clone(),
            line: *line,
            message: message.into(),
        },
        Origin::Override => Error::Config {
            path: "--set".into(),
            line: 0,
            message: message.into(),
        },
    }
}

fn known_key(section: &str, key: &str) -> std::result::Result<(), String> {
    match SCHEMA.iter().find(|(s, _)| *s == section) {
        None => Err(format!("unknown section [{section}]")),
        Some((_, keys)) if !keys.contains(&key) => Err(format!(
            "unknown key {key:?} in [{section}]; expected one of {}",
            keys.join(", ")
        )),
        Some(_) => Ok(()),
    }
}

enum Source {
    File(PathBuf),
    Preset(&'static str, &'static str),
}

impl Source {
    fn resolve(spec: &str, relative_to: Option<&Path>) -> std::result::Result<Source, String> {
        if let Some(name) = spec.strip_prefix("preset:") {
            return presets::get(name)
                .map(|p| Source::Preset(p.name, p.text))
                .ok_or_else(|| format!("unknown preset {name:?}; available: {}", presets::names().join(", ")));
        }
        let p = Path::new(spec);
        Ok(Source::File(match relative_to {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }))
    }

    fn display(&self) -> String {
        match self {
            Source::File(p) => p.display().to_string(),
            Source::Preset(name, _) => format!("preset:{name}"),
        }
    }

    fn dir(&self) -> Option<PathBuf> {
        match self {
            Source::File(p) => Some(p.parent().map(Path::to_path_buf).unwrap_or_default()),
            Source::Preset(..) => None,
        }
    }

    fn read(&self) -> Result<String> {
        match self {
            Source::File(p) => std::fs::read_to_string(p).map_err(|e| Error::Config {
                path: p.display().to_string(),
                line: 0,
                message: format!("cannot read config: {e}"),
            }),
            Source::Preset(_, text) => Ok(text.to_string()),
        }
    }
}

impl Config {
    /// Load a file path or `preset:NAME`.
    pub fn load(spec: &str) -> Result<Self> {
        let src = Source::resolve(spec, None).map_err(|m| Error::Config {
            path: spec.into(),
            line: 0,
            message: m,
        })?;
        let mut cfg = Config {
            base_dir: src.dir().unwrap_or_else(|| PathBuf::from(".")),
            source: src.display(),
            ..Default::default()
        };
        let mut stack = Vec::new();
        cfg.merge_source(&src, &mut stack)?;
        Ok(cfg)
    }

    pub fn parse_str(text: &str, name: &str) -> Result<Self> {
        let mut cfg = Config {
            base_dir: PathBuf::from("."),
            source: name.into(),
            ..Default::default()
        };
        let mut stack = vec![name.to_string()];
        cfg.merge_text(text, name, None, &mut stack)?;
        Ok(cfg)
    }

    fn merge_source(&mut self, src: &Source, stack: &mut Vec<String>) -> Result<()> {
        let name = src.display();
        let text = src.read()?;
        stack.push(name.clone());
        self.merge_text(&text, &name, src.dir().as_deref(), stack)?;
        stack.pop();
        Ok(())
    }

    fn merge_text(&mut self, text: &str, name: &str, dir: Option<&Path>, stack: &mut Vec<String>) -> Result<()> {
        let mut section: Option<String> = None;
        let mut seen: BTreeMap<(String, String), usize> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let err = |m: String| Error::Config {
                path: name.to_string(),
                line: lineno,
                message: m,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let Some(sec) = rest.strip_suffix(']') else {
                    return Err(err(format!("malformed section header {line:?}")));
                };
                let sec = sec.trim();
                if !SCHEMA.iter().any(|(s, _)| *s == sec) {
                    return Err(err(format!("unknown section [{sec}]")));
                }
                section = Some(sec.to_string());
                continue;
            }
            if let Some(target) = line.strip_prefix("include") {
                if target.starts_with(char::is_whitespace) && !target.contains('=') {
                    let src = Source::resolve(target.trim(), dir).map_err(err)?;
                    let included = src.display();
                    if stack.contains(&included) {
                        return Err(err(format!("include cycle: {} -> {included}", stack.join(" -> "))));
                    }
                    if stack.len() >= MAX_INCLUDE_DEPTH {
                        return Err(err(format!("includes nested deeper than {MAX_INCLUDE_DEPTH}")));
                    }
                    self.merge_source(&src, stack)?;
                    continue;
                }
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(err(format!("expected `key = value`, found {line:?}")));
            };
            let (key, value) = (key.trim(), value.trim());
            let Some(sec) = section.as_deref() else {
                return Err(err(format!("key {key:?} appears before any [section]")));
            };
            known_key(sec, key).map_err(err)?;
            if let Some(prev) = seen.insert((sec.to_string(), key.to_string()), lineno) {
                return Err(err(format!("[{sec}] {key} already set on line {prev}")));
            }
            self.sections.entry(sec.to_string()).or_default().insert(
                key.to_string(),
                Entry {
                    value: value.to_string(),
                    origin: Origin::File {
                        path: name.to_string(),
                        line: lineno,
                    },
                },
            );
        }
        Ok(())
    }

    /// Apply a `section.key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let bad = |m: String| Error::Config {
            path: "--set".into(),
            line: 0,
            message: m,
        };
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| bad(format!("expected section.key=value, found {assignment:?}")))?;
        let (sec, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| bad(format!("expected section.key, found {path:?}")))?;
        known_key(sec, key).map_err(bad)?;
        self.sections.entry(sec.to_string()).or_default().insert(
            key.to_string(),
            Entry {
                value: value.trim().to_string(),
                origin: Origin::Override,
            },
        );
        Ok(())
    }

    pub fn entry(&self, section: &str, key: &str) -> Option<&Entry> {
        self.sections.get(section).and_then(|s| s.get(key))
    }

    pub fn has(&self, section: &str, key: &str) -> bool {
        self.entry(section, key).is_some()
    }

    /// Origin of the first key of a section, for invariant errors that span
    /// several keys.
    pub fn section_origin(&self, section: &str) -> Origin {
        self.sections
            .get(section)
            .and_then(|s| {
                s.values().map(|e| e.origin.clone()).min_by_key(|o| match o {
                    Origin::File { line, .. } => *line,
                    Origin::Override => usize::MAX,
                })
            })
            .unwrap_or(Origin::File {
                path: self.source.clone(),
                line: 0,
            })
    }

    fn missing(&self, section: &str, key: &str) -> Error {
        Error::Config {
            path: self.source.clone(),
            line: 0,
            message: format!("missing required key [{section}] {key}"),
        }
    }

    pub fn opt<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.entry(section, key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse::<T>()
                .map(Some)
                .map_err(|err| config_error(&e.origin, format!("[{section}] {key} = {:?}: {err}", e.value))),
        }
    }

    pub fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        self.opt(section, key)?.ok_or_else(|| self.missing(section, key))
    }

    pub fn get_or<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        Ok(self.opt(section, key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: fmt::Display,
    {
        let Some(e) = self.entry(section, key) else {
            return Ok(None);
        };
        e.value
            .split(',')
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<T>()
                    .map_err(|err| config_error(&e.origin, format!("[{section}] {key}: element {s:?}: {err}")))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    pub fn string(&self, section: &str, key: &str) -> Option<&str> {
        self.entry(section, key).map(|e| e.value.as_str())
    }

    /// Render the merged configuration back to text.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (sec, keys) in &self.sections {
            out.push_str(&format!("[{sec}]\n"));
            for (k, e) in keys {
                out.push_str(&format!("{k} = {}\n", e.value));
            }
            out.push('\n');
        }
        out
    }
}
