//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heap::HeapConfig;
use crate::refs::{BoundSpec, EvictionMode};
use crate::sache::{Weigher, DEFAULT_GD_SCALE};
use crate::workload::build::DEFAULT_NODE_BYTES;
use crate::workload::{CostModel, PressureSpec, TraceSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    #[default]
    Trace,
    MultiFrequency,
    Pressure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CacheKind {
    #[default]
    Sache,
    Baseline,
    /// Every cache shares one space ordered by global last access.
    Softref,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyName {
    #[default]
    Lru,
    GreedyDual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CacheConfig {
    pub kind: CacheKind,
    pub policy: PolicyName,
    /// Space bound for `sache`; for `softref` only `fraction-of-free` applies.
    pub bound: BoundSpec,
    pub eviction_mode: EvictionMode,
    pub gd_scale: f64,
    /// Baseline capacity; exactly one of these is used.
    pub max_entries: Option<u64>,
    pub max_weight: Option<u64>,
    pub weigher: Weigher,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            kind: CacheKind::Sache,
            policy: PolicyName::Lru,
            bound: BoundSpec::FractionOfHeap(0.2),
            eviction_mode: EvictionMode::Strict,
            gd_scale: DEFAULT_GD_SCALE,
            max_entries: None,
            max_weight: None,
            weigher: Weigher::Nodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadConfig {
    /// Trace file; relative paths resolve against the config's directory.
    /// When absent the trace is generated from `generate`.
    pub trace: Option<PathBuf>,
    pub generate: TraceSpec,
    pub node_bytes: u64,
    /// Also collect after this many allocated bytes.
    pub gc_interval_bytes: Option<u64>,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            trace: None,
            generate: TraceSpec::default(),
            node_bytes: DEFAULT_NODE_BYTES,
            gc_interval_bytes: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultiFrequencyConfig {
    /// Requests to the first cache per request to the second.
    pub ratio: u64,
    /// Total requests across both caches.
    pub length: u64,
}

impl Default for MultiFrequencyConfig {
    fn default() -> Self {
        MultiFrequencyConfig {
            ratio: 10,
            length: 15_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub config_id: String,
    pub experiment: ExperimentKind,
    /// Overrides the trace generator's seed.
    pub seed: Option<u64>,
    pub heap: HeapConfig,
    pub workload: WorkloadConfig,
    pub cache: CacheConfig,
    pub costs: CostModel,
    pub multi_frequency: MultiFrequencyConfig,
    pub pressure: PressureSpec,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            config_id: "default".into(),
            experiment: ExperimentKind::Trace,
            seed: None,
            heap: HeapConfig::default(),
            workload: WorkloadConfig::default(),
            cache: CacheConfig::default(),
            costs: CostModel::default(),
            multi_frequency: MultiFrequencyConfig::default(),
            pressure: PressureSpec::default(),
            base_dir: PathBuf::new(),
        }
    }
}

/// Parameters a sweep can vary.
pub const SWEEP_PARAMS: &[&str] = &[
    "max-entries",
    "max-weight",
    "heap-fraction",
    "free-fraction",
    "fixed-bytes",
    "reserve-bytes",
];

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn defaults_toml() -> String {
        toml::to_string(&RunConfig::default()).expect("defaults serialize")
    }

    pub fn trace_spec(&self) -> TraceSpec {
        let mut spec = self.workload.generate.clone();
        if let Some(s) = self.seed {
            spec.seed = s;
        }
        spec
    }

    pub fn trace_path(&self) -> Option<PathBuf> {
        self.workload.trace.as_ref().map(|p| self.base_dir.join(p))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.heap
            .size_classes
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.heap.capacity_bytes == 0 {
            return invalid("heap capacity must be positive");
        }
        if self.workload.node_bytes == 0 {
            return invalid("node_bytes must be positive");
        }
        if self.workload.trace.is_none() {
            self.trace_spec()
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        self.cache
            .bound
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        match self.cache.kind {
            CacheKind::Baseline => match (self.cache.max_entries, self.cache.max_weight) {
                (Some(0), _) | (_, Some(0)) => return invalid("baseline capacity must be positive"),
                (Some(_), None) | (None, Some(_)) => {}
                _ => return invalid("baseline cache needs exactly one of max_entries, max_weight"),
            },
            CacheKind::Softref => {
                if !matches!(self.cache.bound, BoundSpec::FractionOfFree(_)) {
                    return invalid("softref cache needs a fraction-of-free bound");
                }
                if self.cache.policy != PolicyName::Lru {
                    return invalid("softref cache orders by access time; policy must be lru");
                }
            }
            CacheKind::Sache => {}
        }
        if !(self.cache.gd_scale > 0.0 && self.cache.gd_scale.is_finite()) {
            return invalid("gd_scale must be positive");
        }
        if self.costs.bandwidth_bytes_per_sec == 0 {
            return invalid("bandwidth must be positive");
        }
        if self.experiment == ExperimentKind::MultiFrequency
            && (self.multi_frequency.ratio == 0 || self.multi_frequency.length == 0)
        {
            return invalid("multi_frequency ratio and length must be positive");
        }
        Ok(())
    }

    /// Applies one sweep value. Fractions are parsed as floats, everything
    /// else as byte or entry counts.
    pub fn apply_param(&mut self, param: &str, value: &str) -> Result<(), ConfigError> {
        let int = || {
            value
                .parse::<u64>()
                .map_err(|_| ConfigError::Invalid(format!("{param}: bad value {value:?}")))
        };
        let frac = || {
            value
                .parse::<f64>()
                .map_err(|_| ConfigError::Invalid(format!("{param}: bad value {value:?}")))
        };
        match param {
            "max-entries" => {
                self.cache.max_entries = Some(int()?);
                self.cache.max_weight = None;
            }
            "max-weight" => {
                self.cache.max_weight = Some(int()?);
                self.cache.max_entries = None;
            }
            "heap-fraction" => self.cache.bound = BoundSpec::FractionOfHeap(frac()?),
            "free-fraction" => self.cache.bound = BoundSpec::FractionOfFree(frac()?),
            "fixed-bytes" => self.cache.bound = BoundSpec::Fixed(int()?),
            "reserve-bytes" => self.cache.bound = BoundSpec::AdaptiveReserve(int()?),
            _ => {
                return invalid(format!(
                    "unknown sweep parameter {param:?}; expected one of {}",
                    SWEEP_PARAMS.join(", ")
                ))
            }
        }
        self.validate()
    }
}
