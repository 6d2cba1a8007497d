//! Desk-scale measurements: synthetic registration workloads, latency across leakage
//! levels and bandwidths against full download, anonymity tables and cloud cost.

mod anonymity;
mod config;
mod cost;
mod error;
mod latency;
mod workload;

pub use anonymity::{anonymity_table, AnonymityRow};
pub use config::BenchConfig;
pub use cost::{cost_report, read_csv, write_csv, CostModel, CostRow};
pub use error::{BenchError, Result};
pub use latency::{
    default_scenarios, naive_rows, rows_for, run_latency_suite, threads, BandwidthScenario, BenchDb, LatencyRow, Measurement,
    SuiteConfig, KEYWORD,
};
pub use workload::{epoch, estimate_icf_size, generate_events, registration, sized_registration, write_jsonl, WorkloadModel};
