//! Experiment records, record sinks and the wall-time profiler.

mod profiler;
mod records;
mod sinks;

pub use profiler::{
    ProfileReport, Profiler, ProfilerError, Scope, ThreadProfiler, TOTAL_RUN_LABEL,
};
pub use records::{
    parse_jsonl, read_csv_dir, read_jsonl, AgentRecord, ProfileEntry, Record, RoundReport,
    RssSample,
};
pub use sinks::{
    log_agent, log_profile, log_round, CsvSink, JsonlSink, MemorySink, NullSink, RecordSink,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("telemetry i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("sink poisoned by a panicking writer")]
    Poisoned,
}

/// Resident set size of this process in KiB, where the platform exposes it.
pub fn process_rss_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find_map(|l| l.strip_prefix("VmRSS:"))
        .and_then(|rest| rest.trim().trim_end_matches("kB").trim().parse().ok())
}
