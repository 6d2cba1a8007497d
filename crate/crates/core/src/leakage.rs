//! Min-entropy accounting for hinted queries under a uniform prior over records.

use serde::Serialize;

use crate::db::{Geometry, HyperDb};
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeakageReport {
    pub epsilon: usize,
    pub records: u64,
    /// Partitions distinguishable by the hint, `∏_{i<ε} K_i`.
    pub eta: u64,
    /// Records per partition, `N/η`.
    pub partition_size: f64,
    /// `H∞(X|Q) = log2(N/η)`.
    pub min_entropy_bits: f64,
    /// `ρ = log2 η`.
    pub max_leakage_bits: f64,
    /// Anonymity set size `k = N/η`.
    pub anonymity_k: f64,
}

impl LeakageReport {
    pub fn prior_entropy_bits(&self) -> f64 {
        (self.records as f64).log2()
    }

    pub fn csv_header() -> &'static str {
        "epsilon,records,eta,partition_size,min_entropy_bits,max_leakage_bits,anonymity_k"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epsilon,
            self.records,
            self.eta,
            self.partition_size,
            self.min_entropy_bits,
            self.max_leakage_bits,
            self.anonymity_k
        )
    }
}

pub fn leakage_report(records: u64, geom: &Geometry, epsilon: usize) -> Result<LeakageReport> {
    if epsilon > geom.d() {
        return Err(CoreError::InvalidParams(format!("ε = {epsilon} exceeds d = {}", geom.d())));
    }
    if records == 0 {
        return Err(CoreError::InvalidParams("leakage of an empty database is undefined".into()));
    }
    let eta = geom.dims[..epsilon].iter().map(|&k| k as u64).product::<u64>();
    let k = records as f64 / eta as f64;
    Ok(LeakageReport {
        epsilon,
        records,
        eta,
        partition_size: k,
        min_entropy_bits: k.log2(),
        max_leakage_bits: (eta as f64).log2(),
        anonymity_k: k,
    })
}

/// Live records in the partition a query with `hint` touches, the operational anonymity set.
pub fn empirical_anonymity(db: &HyperDb, hint: &[u32]) -> Result<usize> {
    db.records_in_partition(hint)
}
