//! The benchmark driver: replays traces against a cache on a simulated
//! clock and accounts mutator, miss and collection time.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::collector::CollectionStats;
use crate::heap::{HeapError, ObjectId};
use crate::sache::{CacheError, KvCache};
use crate::vm::Vm;
use crate::workload::build::{build_value, visit_all, DEFAULT_NODE_BYTES};
use crate::workload::trace::TraceEvent;

/// Simulated-time coefficients. All times are nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModel {
    pub hit_ns_per_node: u64,
    pub gc_ns_per_marked_byte: u64,
    pub gc_fixed_ns: u64,
    pub bandwidth_bytes_per_sec: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            hit_ns_per_node: 10,
            gc_ns_per_marked_byte: 5,
            gc_fixed_ns: 1_000_000,
            bandwidth_bytes_per_sec: 10_000_000,
        }
    }
}

impl CostModel {
    pub fn miss_ns(&self, bytes: u64) -> u64 {
        (bytes as u128 * 1_000_000_000 / self.bandwidth_bytes_per_sec.max(1) as u128) as u64
    }

    pub fn gc_ns(&self, st: &CollectionStats) -> u64 {
        self.gc_ns_per_marked_byte * st.marked_bytes + self.gc_fixed_ns
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DriverConfig {
    pub costs: CostModel,
    pub node_bytes: u64,
}

impl Default for DriverConfig {
    fn default() -> Self {
        DriverConfig {
            costs: CostModel::default(),
            node_bytes: DEFAULT_NODE_BYTES,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunReport {
    pub total_time: u64,
    pub mutator_time: u64,
    pub gc_time: u64,
    pub hits: u64,
    pub misses: u64,
    pub miss_service_time: u64,
    pub gc_count: u64,
    pub total_allocation: u64,
    /// Sum of marked bytes over the collections charged to this run.
    pub gc_marked_bytes: u64,
    pub distinct_keys: u64,
    pub crashed: bool,
}

impl RunReport {
    pub fn requests(&self) -> u64 {
        self.hits + self.misses
    }

    pub fn hit_rate(&self) -> f64 {
        if self.requests() == 0 {
            0.0
        } else {
            self.hits as f64 / self.requests() as f64
        }
    }

    /// Hit rate relative to an unbounded cache, which misses exactly once
    /// per distinct key.
    pub fn normalized_hit_rate(&self) -> f64 {
        let best = self.requests().saturating_sub(self.distinct_keys);
        if best == 0 {
            1.0
        } else {
            self.hits as f64 / best as f64
        }
    }
}

/// State of one client: its report and the keys it has requested.
#[derive(Debug, Default)]
struct Client {
    report: RunReport,
    seen: HashSet<String>,
}

struct Driver<'a> {
    vm: &'a mut Vm,
    cfg: DriverConfig,
    gcs_seen: usize,
}

impl<'a> Driver<'a> {
    fn new(vm: &'a mut Vm, cfg: DriverConfig) -> Self {
        let gcs_seen = vm.collections().len();
        Driver { vm, cfg, gcs_seen }
    }

    /// Collections since the last call, charged to `rep`.
    fn charge_gcs(&mut self, rep: &mut RunReport) -> Vec<CollectionStats> {
        let new: Vec<CollectionStats> = self.vm.collections()[self.gcs_seen..].to_vec();
        self.gcs_seen = self.vm.collections().len();
        for st in &new {
            let t = self.cfg.costs.gc_ns(st);
            rep.gc_time += t;
            rep.total_time += t;
            rep.gc_count += 1;
            rep.gc_marked_bytes += st.marked_bytes;
        }
        new
    }

    /// Serves one request. Returns false if the heap ran out of memory.
    fn serve(&mut self, cache: &mut dyn KvCache, ev: &TraceEvent, c: &mut Client) -> bool {
        let alloc_before = self.vm.heap().total_allocated_bytes();
        if !c.seen.contains(&ev.key) {
            c.seen.insert(ev.key.clone());
            c.report.distinct_keys += 1;
        }
        let ok = match cache.lookup(self.vm, &ev.key) {
            Some(root) => {
                let t = self.cfg.costs.hit_ns_per_node * visit_all(self.vm.heap(), root);
                c.report.hits += 1;
                c.report.mutator_time += t;
                c.report.total_time += t;
                true
            }
            None => {
                let t = self.cfg.costs.miss_ns(ev.bytes);
                c.report.misses += 1;
                c.report.miss_service_time += t;
                c.report.mutator_time += t;
                c.report.total_time += t;
                self.fetch(cache, ev, t).is_ok()
            }
        };
        c.report.total_allocation += self.vm.heap().total_allocated_bytes() - alloc_before;
        ok
    }

    fn fetch(&mut self, cache: &mut dyn KvCache, ev: &TraceEvent, cost: u64) -> Result<(), CacheError> {
        let root: ObjectId = build_value(self.vm, ev.bytes, self.cfg.node_bytes)?;
        self.vm.heap_mut().remove_root(root)?;
        cache.insert(self.vm, &ev.key, root, cost)
    }
}

/// Replays `trace` against `cache`. Stops at the first out-of-memory,
/// marking the report crashed.
pub fn run_trace(vm: &mut Vm, cache: &mut dyn KvCache, trace: &[TraceEvent], cfg: DriverConfig) -> RunReport {
    let mut d = Driver::new(vm, cfg);
    let mut c = Client::default();
    for ev in trace {
        let ok = d.serve(cache, ev, &mut c);
        d.charge_gcs(&mut c.report);
        if !ok {
            c.report.crashed = true;
            break;
        }
    }
    c.report
}

/// Interleaves `ratio` requests to `a` per request to `b`, `length`
/// requests in all, each cache reading its own trace in order.
#[allow(clippy::too_many_arguments)]
pub fn run_multi_frequency(
    vm: &mut Vm,
    a: &mut dyn KvCache,
    b: &mut dyn KvCache,
    trace_a: &[TraceEvent],
    trace_b: &[TraceEvent],
    ratio: u64,
    length: u64,
    cfg: DriverConfig,
) -> (RunReport, RunReport) {
    assert!(ratio >= 1, "ratio must be at least 1");
    assert!(!trace_a.is_empty() && !trace_b.is_empty());
    let mut d = Driver::new(vm, cfg);
    let (mut ca, mut cb) = (Client::default(), Client::default());
    let (mut ia, mut ib) = (0usize, 0usize);
    for i in 0..length {
        let to_a = i % (ratio + 1) < ratio;
        let (ok, client) = if to_a {
            ia += 1;
            let ev = &trace_a[(ia - 1) % trace_a.len()];
            (d.serve(a, ev, &mut ca), &mut ca)
        } else {
            ib += 1;
            let ev = &trace_b[(ib - 1) % trace_b.len()];
            (d.serve(b, ev, &mut cb), &mut cb)
        };
        d.charge_gcs(&mut client.report);
        if !ok {
            client.report.crashed = true;
            break;
        }
    }
    (ca.report, cb.report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PressureSpec {
    /// Rooted non-cache bytes added per request in the middle third.
    pub grow_bytes_per_event: u64,
}

impl Default for PressureSpec {
    fn default() -> Self {
        PressureSpec {
            grow_bytes_per_event: 32 * 1024,
        }
    }
}

/// One collection observed during a pressure run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GcSample {
    pub gc_index: u64,
    pub event: u64,
    pub gc_time: u64,
    pub live_after: u64,
    pub free_after: u64,
    pub non_cache_live: u64,
    pub bound: u64,
    pub pressure_bytes: u64,
}

/// Replays `trace` in thirds: no pressure, then a rooted non-cache
/// structure growing by one chunk per request, then shrinking by one chunk
/// per request.
pub fn run_pressure(
    vm: &mut Vm,
    cache: &mut dyn KvCache,
    trace: &[TraceEvent],
    pressure: PressureSpec,
    cfg: DriverConfig,
) -> (RunReport, Vec<GcSample>) {
    let third = trace.len() / 3;
    let capacity = vm.heap().capacity();
    let mut d = Driver::new(vm, cfg);
    let mut c = Client::default();
    let mut chunks: Vec<ObjectId> = Vec::new();
    let mut pressure_bytes = 0u64;
    let mut series = Vec::new();
    for (i, ev) in trace.iter().enumerate() {
        let mut ok = true;
        if i >= third && i < 2 * third && pressure.grow_bytes_per_event > 0 {
            let before = d.vm.heap().total_allocated_bytes();
            match d.vm.alloc(pressure.grow_bytes_per_event, 0) {
                Ok(o) => {
                    d.vm.heap_mut().add_root(o).expect("fresh chunk is alive");
                    pressure_bytes += d.vm.heap().allocated_size(o).expect("alive");
                    chunks.push(o);
                }
                Err(HeapError::OutOfMemory { .. }) => ok = false,
                Err(e) => panic!("pressure allocation failed: {e}"),
            }
            c.report.total_allocation += d.vm.heap().total_allocated_bytes() - before;
        } else if i >= 2 * third {
            if let Some(o) = chunks.pop() {
                pressure_bytes -= d.vm.heap().allocated_size(o).expect("rooted chunk alive");
                d.vm.heap_mut().remove_root(o).expect("chunk is a root");
            }
        }
        ok = ok && d.serve(cache, ev, &mut c);
        for st in d.charge_gcs(&mut c.report) {
            series.push(GcSample {
                gc_index: st.gc_index,
                event: i as u64,
                gc_time: cfg.costs.gc_ns(&st),
                live_after: st.marked_bytes,
                free_after: capacity - st.marked_bytes,
                non_cache_live: st.non_space_live_bytes,
                bound: st.spaces.first().map_or(0, |s| s.bound_bytes),
                pressure_bytes,
            });
        }
        if !ok {
            c.report.crashed = true;
            break;
        }
    }
    (c.report, series)
}
