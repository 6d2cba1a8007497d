use serde::{Deserialize, Serialize};
use sparsewpir_core::{context_generation, leakage_report};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnonymityRow {
    pub records: u64,
    pub record_bytes: usize,
    pub dims: String,
    pub epsilon: usize,
    pub eta: u64,
    pub anonymity_k: f64,
    pub min_entropy_bits: f64,
    pub max_leakage_bits: f64,
}

/// Anonymity set per ε for every database size and record size whose context is accepted.
pub fn anonymity_table(sizes: &[u64], record_bytes: &[usize], d: usize, ring_degree: usize, theta: usize) -> Result<Vec<AnonymityRow>> {
    let mut rows = Vec::new();
    for &n in sizes {
        for &b in record_bytes {
            let ctx = match context_generation(n, b, d, ring_degree, theta, false) {
                Ok(c) => c,
                Err(e) => {
                    log::warn!("no context for N = {n}, B = {b}: {e}");
                    continue;
                }
            };
            let geom = ctx.geometry()?;
            let dims = ctx.dims.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
            for eps in 0..=d {
                let r = leakage_report(n, &geom, eps)?;
                rows.push(AnonymityRow {
                    records: n,
                    record_bytes: b,
                    dims: dims.clone(),
                    epsilon: eps,
                    eta: r.eta,
                    anonymity_k: r.anonymity_k,
                    min_entropy_bits: r.min_entropy_bits,
                    max_leakage_bits: r.max_leakage_bits,
                });
            }
        }
    }
    Ok(rows)
}
