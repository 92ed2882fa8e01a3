//! Traces, value construction and the benchmark driver.

pub mod build;
pub mod driver;
pub mod trace;

pub use build::{build_value, visit_all};
pub use driver::{
    run_multi_frequency, run_pressure, run_trace, CostModel, DriverConfig, GcSample, PressureSpec,
    RunReport,
};
pub use trace::{generate_trace, parse_trace, write_trace, TraceError, TraceEvent, TraceSpec};
