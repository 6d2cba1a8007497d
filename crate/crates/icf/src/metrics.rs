use std::fs::File;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Counters published by a server; summed across peers by a distributing front end.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub queries: u64,
    pub query_errors: u64,
    pub context_mismatches: u64,
    pub answer_ms_total: f64,
    pub re_encodes: u64,
    pub ingested: u64,
    /// Distinct events within their retention window.
    pub live_events: u64,
    /// Records held across all indexes.
    pub stored_records: u64,
    pub resizes: u64,
    pub max_cell_load: u64,
    pub profiles: u64,
    pub profile_hits: u64,
}

impl Stats {
    pub fn mean_answer_ms(&self) -> f64 {
        if self.queries == 0 {
            0.0
        } else {
            self.answer_ms_total / self.queries as f64
        }
    }

    pub fn merge(&mut self, o: &Stats) {
        self.queries += o.queries;
        self.query_errors += o.query_errors;
        self.context_mismatches += o.context_mismatches;
        self.answer_ms_total += o.answer_ms_total;
        self.re_encodes += o.re_encodes;
        self.ingested += o.ingested;
        // Every peer receives the full feed.
        self.live_events = self.live_events.max(o.live_events);
        self.stored_records += o.stored_records;
        self.resizes += o.resizes;
        self.max_cell_load = self.max_cell_load.max(o.max_cell_load);
        self.profiles += o.profiles;
        self.profile_hits += o.profile_hits;
    }
}

#[derive(Debug, Default)]
pub(crate) struct Counters {
    pub queries: AtomicU64,
    pub query_errors: AtomicU64,
    pub context_mismatches: AtomicU64,
    pub answer_us: AtomicU64,
    pub re_encodes: AtomicU64,
    pub ingested: AtomicU64,
}

impl Counters {
    pub fn bump(c: &AtomicU64) {
        c.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(c: &AtomicU64) -> u64 {
        c.load(Ordering::Relaxed)
    }
}

/// Appends periodic stats rows to a CSV file.
pub struct MetricsLog {
    writer: csv::Writer<File>,
}

impl MetricsLog {
    pub fn create(path: &Path) -> Result<Self> {
        let writer = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_io)?;
        let mut log = MetricsLog { writer };
        log.writer
            .write_record([
                "unix_ms",
                "queries",
                "query_errors",
                "context_mismatches",
                "answer_ms_total",
                "re_encodes",
                "ingested",
                "live_events",
                "stored_records",
                "resizes",
                "max_cell_load",
                "profiles",
                "profile_hits",
                "mean_answer_ms",
            ])
            .map_err(csv_io)?;
        Ok(log)
    }

    pub fn append(&mut self, stats: &Stats) -> Result<()> {
        let s = stats;
        let row = [
            chrono::Utc::now().timestamp_millis().to_string(),
            s.queries.to_string(),
            s.query_errors.to_string(),
            s.context_mismatches.to_string(),
            format!("{:.3}", s.answer_ms_total),
            s.re_encodes.to_string(),
            s.ingested.to_string(),
            s.live_events.to_string(),
            s.stored_records.to_string(),
            s.resizes.to_string(),
            s.max_cell_load.to_string(),
            s.profiles.to_string(),
            s.profile_hits.to_string(),
            format!("{:.3}", s.mean_answer_ms()),
        ];
        self.writer.write_record(&row).map_err(csv_io)?;
        self.writer.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}
