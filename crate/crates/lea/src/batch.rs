use std::io::Write;

use serde::Serialize;
use sparsewpir_core::{KeywordType, LeakageReport};

use crate::capture::Capture;
use crate::client::LeaClient;
use crate::error::{LeaError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Resolved,
    NotFound,
    Error,
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchRow {
    pub index: usize,
    pub keyword_type: KeywordType,
    pub epsilon: usize,
    pub status: Status,
    pub events: usize,
    /// Permanent identifiers found, `;`-separated.
    pub supis: String,
    pub latency_ms: f64,
    pub query_bytes: usize,
    pub answer_bytes: usize,
    pub attempts: usize,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct BatchReport {
    pub rows: Vec<BatchRow>,
    pub leakage: Option<LeakageReport>,
}

impl BatchReport {
    pub fn count(&self, s: Status) -> usize {
        self.rows.iter().filter(|r| r.status == s).count()
    }

    pub fn resolved(&self) -> usize {
        self.count(Status::Resolved)
    }

    pub fn errors(&self) -> usize {
        self.count(Status::Error)
    }

    pub fn write_rows<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r).map_err(|e| LeaError::Io(std::io::Error::other(e)))?;
        }
        out.flush()?;
        Ok(())
    }

    /// One header line and one value line: counts followed by the leakage fields.
    pub fn summary_csv(&self) -> String {
        let mut head = "queries,resolved,not_found,errors".to_owned();
        let mut row = format!("{},{},{},{}", self.rows.len(), self.resolved(), self.count(Status::NotFound), self.errors());
        if let Some(l) = &self.leakage {
            head.push(',');
            head.push_str(LeakageReport::csv_header());
            row.push(',');
            row.push_str(&l.csv_row());
        }
        format!("{head}\n{row}\n")
    }
}

/// Resolves captures one at a time. Failures are recorded per row and do not stop the batch.
pub fn batch_resolve(client: &mut LeaClient, captures: &[Capture], eps: usize, kind: KeywordType) -> BatchReport {
    let mut rows = Vec::with_capacity(captures.len());
    for (index, c) in captures.iter().enumerate() {
        let mut row = BatchRow {
            index,
            keyword_type: kind,
            epsilon: eps,
            status: Status::Error,
            events: 0,
            supis: String::new(),
            latency_ms: 0.0,
            query_bytes: 0,
            answer_bytes: 0,
            attempts: 0,
            error: String::new(),
        };
        match client.resolve(c, eps, kind) {
            Ok(r) => {
                row.status = if r.events.is_empty() { Status::NotFound } else { Status::Resolved };
                row.events = r.events.len();
                let mut supis: Vec<&str> = r.events.iter().map(|e| e.supi.as_str()).collect();
                supis.dedup();
                row.supis = supis.join(";");
                row.latency_ms = r.elapsed.as_secs_f64() * 1e3;
                row.query_bytes = r.query_bytes;
                row.answer_bytes = r.answer_bytes;
                row.attempts = r.attempts;
            }
            Err(e) => {
                log::warn!("capture {index}: {e}");
                row.error = e.to_string();
            }
        }
        rows.push(row);
    }
    let leakage = if captures.is_empty() {
        None
    } else {
        client.leakage(kind, eps).map_err(|e| log::warn!("no leakage report: {e}")).ok()
    };
    BatchReport { rows, leakage }
}
