//! Runs one configured experiment end to end.

use thiserror::Error;

use crate::collector::CollectionStats;
use crate::config::{CacheKind, ConfigError, ExperimentKind, PolicyName, RunConfig};
use crate::heap::HeapError;
use crate::report::ReportRow;
use crate::sache::{BaselineCache, CacheError, Capacity, KvCache, Policy, Sache, SoftRefPool};
use crate::vm::Vm;
use crate::workload::{
    generate_trace, parse_trace, run_multi_frequency, run_pressure, run_trace, DriverConfig,
    GcSample, RunReport, TraceError, TraceEvent,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Heap(#[from] HeapError),
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub rows: Vec<ReportRow>,
    /// Full reports, parallel to `rows`.
    pub reports: Vec<RunReport>,
    pub gc_series: Option<Vec<GcSample>>,
    pub collections: Vec<CollectionStats>,
}

impl Outcome {
    pub fn crashed(&self) -> bool {
        self.rows.iter().any(|r| r.crashed)
    }
}

/// The trace for one client; the second client of a multi-frequency run
/// gets the generator seed plus one.
pub fn load_trace(cfg: &RunConfig, client: u64) -> Result<Vec<TraceEvent>, ExperimentError> {
    match cfg.trace_path() {
        Some(p) => Ok(parse_trace(&p)?),
        None => {
            let mut spec = cfg.trace_spec();
            spec.seed = spec.seed.wrapping_add(client);
            Ok(generate_trace(&spec)?)
        }
    }
}

pub fn bound_label(cfg: &RunConfig) -> String {
    match cfg.cache.kind {
        CacheKind::Baseline => match (cfg.cache.max_entries, cfg.cache.max_weight) {
            (Some(n), _) => format!("entries:{n}"),
            (_, Some(w)) => format!("weight:{w}"),
            _ => String::new(),
        },
        _ => cfg.cache.bound.to_string(),
    }
}

pub fn policy_label(cfg: &RunConfig) -> String {
    match cfg.cache.kind {
        CacheKind::Baseline => "baseline-lru".into(),
        CacheKind::Softref => "softref-lru".into(),
        CacheKind::Sache => match cfg.cache.policy {
            PolicyName::Lru => "sache-lru".into(),
            PolicyName::GreedyDual => "sache-greedy-dual".into(),
        },
    }
}

fn make_cache(
    vm: &mut Vm,
    cfg: &RunConfig,
    pool: Option<&SoftRefPool>,
) -> Result<Box<dyn KvCache>, ExperimentError> {
    let c = &cfg.cache;
    Ok(match c.kind {
        CacheKind::Sache => {
            let policy = match c.policy {
                PolicyName::Lru => Policy::Lru,
                PolicyName::GreedyDual => Policy::GreedyDual { scale: c.gd_scale },
            };
            Box::new(Sache::<String>::new(vm, c.bound, policy, c.eviction_mode)?)
        }
        CacheKind::Baseline => {
            let cap = match (c.max_entries, c.max_weight) {
                (Some(n), _) => Capacity::Entries(n),
                (None, Some(max)) => Capacity::Weight {
                    max,
                    weigher: c.weigher,
                },
                (None, None) => return Err(CacheError::ZeroCapacity.into()),
            };
            Box::new(BaselineCache::<String>::new(cap)?)
        }
        CacheKind::Softref => {
            let pool = pool.expect("softref caches are built from a pool");
            Box::new(pool.cache::<String>(vm))
        }
    })
}

fn pool_for(vm: &mut Vm, cfg: &RunConfig) -> Result<Option<SoftRefPool>, ExperimentError> {
    if cfg.cache.kind != CacheKind::Softref {
        return Ok(None);
    }
    let f = match cfg.cache.bound {
        crate::refs::BoundSpec::FractionOfFree(f) => f,
        _ => return Err(ConfigError::Invalid("softref needs a fraction-of-free bound".into()).into()),
    };
    Ok(Some(SoftRefPool::new(vm, f, cfg.cache.eviction_mode)?))
}

pub fn run(cfg: &RunConfig) -> Result<Outcome, ExperimentError> {
    cfg.validate()?;
    let mut vm = Vm::new(cfg.heap.clone())?;
    vm.set_gc_interval(cfg.workload.gc_interval_bytes);
    let driver = DriverConfig {
        costs: cfg.costs,
        node_bytes: cfg.workload.node_bytes,
    };
    let bound = bound_label(cfg);
    let policy = policy_label(cfg);
    let pool = pool_for(&mut vm, cfg)?;
    let mut gc_series = None;
    let mut reports = Vec::new();
    let rows = match cfg.experiment {
        ExperimentKind::Trace => {
            let trace = load_trace(cfg, 0)?;
            let mut cache = make_cache(&mut vm, cfg, pool.as_ref())?;
            let r = run_trace(&mut vm, cache.as_mut(), &trace, driver);
            let row = ReportRow::new(&cfg.config_id, &bound, &policy, &r);
            reports.push(r);
            vec![row]
        }
        ExperimentKind::Pressure => {
            let trace = load_trace(cfg, 0)?;
            let mut cache = make_cache(&mut vm, cfg, pool.as_ref())?;
            let (r, series) = run_pressure(&mut vm, cache.as_mut(), &trace, cfg.pressure, driver);
            gc_series = Some(series);
            let row = ReportRow::new(&cfg.config_id, &bound, &policy, &r);
            reports.push(r);
            vec![row]
        }
        ExperimentKind::MultiFrequency => {
            let ta = load_trace(cfg, 0)?;
            let tb = load_trace(cfg, 1)?;
            let mut a = make_cache(&mut vm, cfg, pool.as_ref())?;
            let mut b = make_cache(&mut vm, cfg, pool.as_ref())?;
            let mf = cfg.multi_frequency;
            let (ra, rb) = run_multi_frequency(
                &mut vm,
                a.as_mut(),
                b.as_mut(),
                &ta,
                &tb,
                mf.ratio,
                mf.length,
                driver,
            );
            let rows = vec![
                ReportRow::new(&format!("{}/a", cfg.config_id), &bound, &policy, &ra),
                ReportRow::new(&format!("{}/b", cfg.config_id), &bound, &policy, &rb),
            ];
            reports.extend([ra, rb]);
            rows
        }
    };
    Ok(Outcome {
        rows,
        reports,
        gc_series,
        collections: vm.collections().to_vec(),
    })
}

/// Runs `cfg` once per distinct value of `param`, in first-seen order.
pub fn sweep(cfg: &RunConfig, param: &str, values: &[String]) -> Result<Vec<Outcome>, ExperimentError> {
    let mut seen = Vec::new();
    for v in values {
        if !seen.contains(v) {
            seen.push(v.clone());
        }
    }
    let configs = seen
        .iter()
        .map(|v| {
            let mut c = cfg.clone();
            c.apply_param(param, v)?;
            Ok(c)
        })
        .collect::<Result<Vec<_>, ConfigError>>()?;
    configs.iter().map(run).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::TraceSpec;

    fn small() -> RunConfig {
        let mut c = RunConfig::default();
        c.heap.capacity_bytes = 4_000_000;
        c.workload.generate = TraceSpec {
            unique_keys: 200,
            min_value: 5_000,
            max_value: 20_000,
            length: 600,
            ..Default::default()
        };
        c.workload.node_bytes = 256;
        c
    }

    #[test]
    fn trace_run_one_row() {
        let out = run(&small()).unwrap();
        assert_eq!(out.rows.len(), 1);
        let r = &out.rows[0];
        assert_eq!(r.hits + r.misses, 600);
        assert_eq!(r.total_time, r.mutator_time + r.gc_time);
        assert_eq!(r.policy, "sache-lru");
        assert_eq!(r.bound, "heap:0.2");
    }

    #[test]
    fn deterministic() {
        let a = run(&small()).unwrap();
        let b = run(&small()).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.collections, b.collections);
    }

    #[test]
    fn multi_frequency_two_rows() {
        let mut c = small();
        c.experiment = ExperimentKind::MultiFrequency;
        c.multi_frequency.length = 400;
        c.multi_frequency.ratio = 3;
        c.cache.kind = CacheKind::Softref;
        c.cache.bound = crate::refs::BoundSpec::FractionOfFree(0.5);
        let out = run(&c).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert_eq!(out.rows[0].hits + out.rows[0].misses, 300);
        assert_eq!(out.rows[1].policy, "softref-lru");
    }

    #[test]
    fn pressure_has_series() {
        let mut c = small();
        c.experiment = ExperimentKind::Pressure;
        c.pressure.grow_bytes_per_event = 4096;
        let out = run(&c).unwrap();
        let series = out.gc_series.unwrap();
        assert_eq!(series.len() as u64, out.rows[0].gc_count);
    }

    #[test]
    fn sweep_dedupes() {
        let mut c = small();
        c.cache.kind = CacheKind::Baseline;
        c.cache.max_entries = Some(10);
        let vals: Vec<String> = ["10", "20", "10"].iter().map(|s| s.to_string()).collect();
        let outs = sweep(&c, "max-entries", &vals).unwrap();
        assert_eq!(outs.len(), 2);
        assert_eq!(outs[1].rows[0].bound, "entries:20");
    }
}
