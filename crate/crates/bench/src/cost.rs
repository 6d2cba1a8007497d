use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::latency::LatencyRow;

/// Cloud list prices; defaults approximate a 64-vCPU general-purpose ARM instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub price_per_cpu_hour: f64,
    pub price_per_gb_egress: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { price_per_cpu_hour: 3.20, price_per_gb_egress: 0.09 }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if self.price_per_cpu_hour >= 0.0 && self.price_per_gb_egress >= 0.0 {
            Ok(())
        } else {
            Err(BenchError::Config("prices must be non-negative".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub db_size: u64,
    pub method: String,
    pub epsilon: Option<usize>,
    pub scenario: String,
    pub compute_hours: f64,
    pub egress_gb: f64,
    pub cost: f64,
}

/// Server-side cost of each row: answer CPU time across its threads plus answer egress.
pub fn cost_report(rows: &[LatencyRow], m: &CostModel) -> Result<Vec<CostRow>> {
    m.validate()?;
    Ok(rows
        .iter()
        .map(|r| {
            let compute_hours = r.answer_ms * r.threads as f64 / 3.6e6;
            let egress_gb = r.answer_bytes as f64 / 1e9;
            CostRow {
                db_size: r.db_size,
                method: r.method.clone(),
                epsilon: r.epsilon,
                scenario: r.scenario.clone(),
                compute_hours,
                egress_gb,
                cost: compute_hours * m.price_per_cpu_hour + egress_gb * m.price_per_gb_egress,
            }
        })
        .collect())
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned, R: Read>(r: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(r).deserialize().map(|r| r.map_err(BenchError::from)).collect()
}
