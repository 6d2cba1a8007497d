//! End-to-end latency: measured compute plus analytically simulated transfer.

use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sparsewpir_core::{
    answer, context_generation, extract, profile_generation, query, AnswerOptions, Context, CoreError, HyperDb, KeywordType,
    ProfileCache, ResizePolicy, Retention,
};

use crate::error::{BenchError, Result};
use crate::workload::{epoch, sized_registration};

pub const KEYWORD: KeywordType = KeywordType::Tmsi;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthScenario {
    pub name: String,
    pub mbps: f64,
}

impl BandwidthScenario {
    pub fn new(name: &str, mbps: f64) -> Self {
        BandwidthScenario { name: name.into(), mbps }
    }

    pub fn transfer_ms(&self, bytes: f64) -> f64 {
        bytes * 8.0 / (self.mbps * 1e3)
    }
}

pub fn default_scenarios() -> Vec<BandwidthScenario> {
    vec![
        BandwidthScenario::new("congested", 10.0),
        BandwidthScenario::new("degraded", 25.0),
        BandwidthScenario::new("typical", 50.0),
        BandwidthScenario::new("fast", 300.0),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub db_sizes: Vec<u64>,
    pub record_bytes: usize,
    pub d: usize,
    pub ring_degree: usize,
    pub theta: usize,
    pub epsilons: Vec<usize>,
    pub scenarios: Vec<BandwidthScenario>,
    pub repetitions: usize,
    /// Untimed queries per ε before measuring.
    pub warmup: usize,
    /// Queries one profile upload is spread over.
    pub amortize_queries: u64,
    pub parallel: bool,
    pub toy: bool,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            db_sizes: vec![1 << 14, 1 << 16, 1 << 18],
            record_bytes: 250,
            d: 3,
            ring_degree: 8192,
            theta: 2,
            epsilons: vec![0, 1, 2, 3],
            scenarios: default_scenarios(),
            repetitions: 3,
            warmup: 1,
            amortize_queries: 100,
            parallel: true,
            toy: false,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub db_size: u64,
    pub db_bytes: u64,
    /// `sparsewpir` or `naive`.
    pub method: String,
    pub epsilon: Option<usize>,
    pub scenario: String,
    pub mbps: f64,
    pub query_bytes: u64,
    pub answer_bytes: u64,
    pub profile_bytes: u64,
    pub homomorphic_ops: u64,
    pub answer_ms: f64,
    pub compute_ms: f64,
    pub transfer_ms: f64,
    pub total_ms: f64,
    pub threads: usize,
}

/// Per-ε medians over the timed repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub epsilon: usize,
    pub query_bytes: u64,
    pub answer_bytes: u64,
    pub profile_bytes: u64,
    pub homomorphic_ops: u64,
    /// Server time.
    pub answer_ms: f64,
    /// Query generation, answer and extraction.
    pub compute_ms: f64,
}

/// A filled, static database of synthetic registrations indexed by 5G-TMSI.
pub struct BenchDb {
    pub db: HyperDb,
    pub records: u64,
    pub record_bytes: usize,
    /// Keywords queries are drawn from.
    pub sample: Vec<String>,
    pub skipped: u64,
}

impl BenchDb {
    pub fn build(n: u64, record_bytes: usize, d: usize, ring_degree: usize, theta: usize, toy: bool) -> Result<Self> {
        let ctx = context_generation(n, record_bytes, d, ring_degree, theta, toy)?;
        Self::with_context(ctx, n)
    }

    pub fn with_context(ctx: Context, n: u64) -> Result<Self> {
        let record_bytes = ctx.record_bytes;
        let target = ctx.codec()?.max_record_len() - 1;
        let policy = ResizePolicy { auto_grow: false, shrink_below: 0.0, shrink_floor: ctx.provisioned };
        let mut db = HyperDb::new(KEYWORD, ctx, Retention::default(), policy)?;
        let every = (n / 256).max(1);
        let mut sample = Vec::new();
        let mut skipped = 0;
        for i in 0..n {
            let ev = sized_registration(i, i, epoch(), target);
            match db.insert(&ev) {
                Ok(_) => {
                    if i % every == 0 {
                        sample.push(ev.tmsi_5g.unwrap());
                    }
                }
                Err(CoreError::CellOverflow { .. }) => skipped += 1,
                Err(e) => return Err(e.into()),
            }
        }
        if skipped > 0 {
            log::warn!("{skipped} of {n} records overflowed their cell");
        }
        Ok(BenchDb { db, records: n - skipped, record_bytes, sample, skipped })
    }

    pub fn context(&self) -> &Context {
        self.db.context()
    }

    pub fn db_bytes(&self) -> u64 {
        self.records * self.record_bytes as u64
    }

    /// Times `reps` full query round trips at `eps` after `warmup` untimed ones.
    pub fn measure(&mut self, eps: usize, reps: usize, warmup: usize, parallel: bool, seed: u64) -> Result<Measurement> {
        let ctx = self.db.context().clone();
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ (eps as u64) << 32);
        let (sk, profile, bfv) = profile_generation(&ctx, eps, &mut rng)?;
        let profile_bytes = profile.to_bytes();
        let cache = ProfileCache::new();
        let (id, _) = cache.put(&profile_bytes)?;
        let loaded = cache.get(&id)?;
        let snap = self.db.snapshot()?;
        let opts = AnswerOptions { parallel };
        let mut answer_ms = Vec::new();
        let mut compute_ms = Vec::new();
        let mut sizes = (0, 0, 0);
        for round in 0..warmup + reps.max(1) {
            let w = self.sample.choose(&mut rng).ok_or_else(|| BenchError::Config("empty database".into()))?.clone();
            let t0 = Instant::now();
            let (q, _) = query(&ctx, &profile, &bfv, &sk, KEYWORD, &w, &mut rng)?;
            let qb = q.to_bytes();
            let t1 = Instant::now();
            let (a, stats) = answer(&snap, &q, &loaded, opts)?;
            let t2 = Instant::now();
            let ab = a.to_bytes();
            let found = extract(&a, &bfv, &sk, &ctx, KEYWORD, &w)?;
            let t3 = Instant::now();
            if found.is_empty() {
                return Err(BenchError::Config(format!("stored keyword {w} was not retrieved at ε = {eps}")));
            }
            if round >= warmup {
                answer_ms.push(ms(t2 - t1));
                compute_ms.push(ms(t1 - t0) + ms(t2 - t1) + ms(t3 - t2));
            }
            sizes = (qb.len() as u64, ab.len() as u64, stats.homomorphic_ops());
        }
        Ok(Measurement {
            epsilon: eps,
            query_bytes: sizes.0,
            answer_bytes: sizes.1,
            profile_bytes: profile_bytes.len() as u64,
            homomorphic_ops: sizes.2,
            answer_ms: median(&mut answer_ms),
            compute_ms: median(&mut compute_ms),
        })
    }
}

fn ms(d: std::time::Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn threads(parallel: bool) -> usize {
    if parallel {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        1
    }
}

/// Rows for one measurement under every scenario.
pub fn rows_for(db: &BenchDb, m: &Measurement, scenarios: &[BandwidthScenario], amortize: u64, parallel: bool) -> Vec<LatencyRow> {
    scenarios
        .iter()
        .map(|s| {
            let wire = m.query_bytes as f64 + m.answer_bytes as f64 + m.profile_bytes as f64 / amortize.max(1) as f64;
            let transfer_ms = s.transfer_ms(wire);
            LatencyRow {
                db_size: db.records,
                db_bytes: db.db_bytes(),
                method: "sparsewpir".into(),
                epsilon: Some(m.epsilon),
                scenario: s.name.clone(),
                mbps: s.mbps,
                query_bytes: m.query_bytes,
                answer_bytes: m.answer_bytes,
                profile_bytes: m.profile_bytes,
                homomorphic_ops: m.homomorphic_ops,
                answer_ms: m.answer_ms,
                compute_ms: m.compute_ms,
                transfer_ms,
                total_ms: m.compute_ms + transfer_ms,
                threads: threads(parallel),
            }
        })
        .collect()
}

/// Downloading the whole database: transfer only.
pub fn naive_rows(db_size: u64, db_bytes: u64, scenarios: &[BandwidthScenario]) -> Vec<LatencyRow> {
    scenarios
        .iter()
        .map(|s| {
            let transfer_ms = s.transfer_ms(db_bytes as f64);
            LatencyRow {
                db_size,
                db_bytes,
                method: "naive".into(),
                epsilon: None,
                scenario: s.name.clone(),
                mbps: s.mbps,
                query_bytes: 0,
                answer_bytes: db_bytes,
                profile_bytes: 0,
                homomorphic_ops: 0,
                answer_ms: 0.0,
                compute_ms: 0.0,
                transfer_ms,
                total_ms: transfer_ms,
                threads: 1,
            }
        })
        .collect()
}

pub fn run_latency_suite(cfg: &SuiteConfig) -> Result<Vec<LatencyRow>> {
    if cfg.scenarios.iter().any(|s| !(s.mbps > 0.0)) {
        return Err(BenchError::Config("bandwidth must be positive".into()));
    }
    let mut rows = Vec::new();
    for &n in &cfg.db_sizes {
        let start = Instant::now();
        let mut db = BenchDb::build(n, cfg.record_bytes, cfg.d, cfg.ring_degree, cfg.theta, cfg.toy)?;
        log::info!("built {n}-record database {:?} in {:.1?}", db.context().dims, start.elapsed());
        for &eps in &cfg.epsilons {
            let m = db.measure(eps, cfg.repetitions, cfg.warmup, cfg.parallel, cfg.seed)?;
            log::info!("N = {n}, ε = {eps}: answer {:.1} ms, {} ops", m.answer_ms, m.homomorphic_ops);
            rows.extend(rows_for(&db, &m, &cfg.scenarios, cfg.amortize_queries, cfg.parallel));
        }
        rows.extend(naive_rows(db.records, db.db_bytes(), &cfg.scenarios));
    }
    Ok(rows)
}
