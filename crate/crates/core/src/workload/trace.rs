//! Synthetic key/value traces and their two-column text format.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Pareto;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("invalid trace spec: {0}")]
    InvalidSpec(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceSpec {
    pub unique_keys: u64,
    pub min_value: u64,
    pub max_value: u64,
    pub size_alpha: f64,
    pub request_alpha: f64,
    pub length: u64,
    pub seed: u64,
}

impl Default for TraceSpec {
    fn default() -> Self {
        TraceSpec {
            unique_keys: 2000,
            min_value: 50_000,
            max_value: 100_000,
            size_alpha: 1.5,
            request_alpha: 0.1,
            length: 10_000,
            seed: 42,
        }
    }
}

impl TraceSpec {
    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |m: &str| Err(TraceError::InvalidSpec(m.to_string()));
        if self.unique_keys == 0 {
            return bad("unique_keys must be positive");
        }
        if self.min_value == 0 || self.min_value >= self.max_value {
            return bad("need 0 < min_value < max_value");
        }
        if !(self.size_alpha > 0.0 && self.size_alpha.is_finite()) {
            return bad("size_alpha must be positive");
        }
        if !(self.request_alpha > 0.0 && self.request_alpha.is_finite()) {
            return bad("request_alpha must be positive");
        }
        if self.length == 0 {
            return bad("length must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TraceEvent {
    pub key: String,
    pub bytes: u64,
}

pub fn key_name(rank: u64) -> String {
    format!("key_{rank}")
}

/// Value sizes for every key rank, Pareto distributed and clipped to
/// `[min_value, max_value]`.
pub fn sample_sizes(spec: &TraceSpec, rng: &mut impl Rng) -> Vec<u64> {
    let dist = Pareto::new(spec.min_value as f64, spec.size_alpha).expect("validated spec");
    (0..spec.unique_keys)
        .map(|_| (rng.sample(dist) as u64).clamp(spec.min_value, spec.max_value))
        .collect()
}

/// One key rank: a Pareto(1, alpha) sample floored and shifted to zero,
/// rejected while out of range.
pub fn sample_rank(spec: &TraceSpec, dist: &Pareto<f64>, rng: &mut impl Rng) -> u64 {
    loop {
        let x = rng.sample(dist).floor();
        if x.is_finite() && x >= 1.0 && x - 1.0 < spec.unique_keys as f64 {
            return x as u64 - 1;
        }
    }
}

pub fn generate_trace(spec: &TraceSpec) -> Result<Vec<TraceEvent>, TraceError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sizes = sample_sizes(spec, &mut rng);
    let req = Pareto::new(1.0, spec.request_alpha).expect("validated spec");
    Ok((0..spec.length)
        .map(|_| {
            let r = sample_rank(spec, &req, &mut rng);
            TraceEvent {
                key: key_name(r),
                bytes: sizes[r as usize],
            }
        })
        .collect())
}

pub fn format_trace(trace: &[TraceEvent]) -> String {
    let mut s = String::new();
    for e in trace {
        writeln!(s, "{:<12} {}", e.key, e.bytes).unwrap();
    }
    s
}

pub fn write_trace(path: &Path, trace: &[TraceEvent]) -> Result<(), TraceError> {
    fs::write(path, format_trace(trace))?;
    Ok(())
}

/// Parses one event per line; blank lines are skipped.
pub fn parse_trace_str(text: &str) -> Result<Vec<TraceEvent>, TraceError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let err = |msg: String| TraceError::Parse { line: i + 1, msg };
        let mut toks = line.split_whitespace();
        let Some(key) = toks.next() else {
            continue;
        };
        let bytes = toks
            .next()
            .ok_or_else(|| err("missing byte count".into()))?
            .parse::<u64>()
            .map_err(|e| err(format!("bad byte count: {e}")))?;
        if toks.next().is_some() {
            return Err(err("trailing tokens".into()));
        }
        out.push(TraceEvent {
            key: key.to_string(),
            bytes,
        });
    }
    Ok(out)
}

pub fn parse_trace(path: &Path) -> Result<Vec<TraceEvent>, TraceError> {
    parse_trace_str(&fs::read_to_string(path)?)
}
