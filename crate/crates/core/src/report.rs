//! CSV output: one row per run, plus per-collection series.

use std::fs::OpenOptions;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::collector::CollectionStats;
use crate::workload::{GcSample, RunReport};

pub const REPORT_COLUMNS: [&str; 12] = [
    "config_id",
    "bound",
    "policy",
    "total_time",
    "mutator_time",
    "gc_time",
    "hits",
    "misses",
    "miss_service_time",
    "gc_count",
    "total_allocation",
    "crashed",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRow {
    pub config_id: String,
    pub bound: String,
    pub policy: String,
    pub total_time: u64,
    pub mutator_time: u64,
    pub gc_time: u64,
    pub hits: u64,
    pub misses: u64,
    pub miss_service_time: u64,
    pub gc_count: u64,
    pub total_allocation: u64,
    pub crashed: bool,
}

impl ReportRow {
    pub fn new(config_id: &str, bound: &str, policy: &str, r: &RunReport) -> Self {
        ReportRow {
            config_id: config_id.to_string(),
            bound: bound.to_string(),
            policy: policy.to_string(),
            total_time: r.total_time,
            mutator_time: r.mutator_time,
            gc_time: r.gc_time,
            hits: r.hits,
            misses: r.misses,
            miss_service_time: r.miss_service_time,
            gc_count: r.gc_count,
            total_allocation: r.total_allocation,
            crashed: r.crashed,
        }
    }
}

fn append<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), csv::Error> {
    let is_new = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(is_new).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Appends rows, writing the header only if the file is new or empty.
pub fn append_rows(path: &Path, rows: &[ReportRow]) -> Result<(), csv::Error> {
    append(path, rows)
}

pub fn read_rows(path: &Path) -> Result<Vec<ReportRow>, csv::Error> {
    csv::Reader::from_path(path)?.deserialize().collect()
}

pub fn write_gc_series(path: &Path, series: &[GcSample]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    if series.is_empty() {
        w.write_record([
            "gc_index",
            "event",
            "gc_time",
            "live_after",
            "free_after",
            "non_cache_live",
            "bound",
            "pressure_bytes",
        ])?;
    }
    for s in series {
        w.serialize(s)?;
    }
    w.flush().map_err(csv::Error::from)
}

/// Per-collection rows; multi-space values are joined with ';'.
pub fn collections_csv(history: &[CollectionStats]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "gc_index",
        "marked_bytes",
        "freed_bytes",
        "non_space_live",
        "retained_bytes",
        "evicted_bytes",
        "retained_entries",
        "evicted_entries",
        "abandoned",
    ])?;
    let join = |f: &dyn Fn(&crate::collector::SpaceStats) -> String, st: &CollectionStats| {
        st.spaces.iter().map(f).collect::<Vec<_>>().join(";")
    };
    for st in history {
        w.write_record([
            st.gc_index.to_string(),
            st.marked_bytes.to_string(),
            st.freed_bytes.to_string(),
            st.non_space_live_bytes.to_string(),
            join(&|s| s.retained_bytes.to_string(), st),
            join(&|s| s.evicted_bytes.to_string(), st),
            join(&|s| s.retained_entries.to_string(), st),
            join(&|s| s.evicted_entries.to_string(), st),
            join(&|s| s.abandoned.map_or(String::new(), |r| r.to_string()), st),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}
