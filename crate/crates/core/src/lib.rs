//! A deterministic managed-heap simulator whose collector enforces
//! per-space byte bounds on priority references and answers size queries.

pub mod collector;
pub mod config;
pub mod experiment;
pub mod heap;
pub mod refs;
pub mod report;
pub mod sache;
pub mod vm;
pub mod workload;

pub use collector::{CollectionStats, FutureId, QueueId, SpaceStats};
pub use heap::{Heap, HeapConfig, HeapError, ObjectId, SizeClassTable};
pub use refs::{BoundSpec, EvictionMode, RefId, SpaceId, Spaces};
pub use vm::Vm;
