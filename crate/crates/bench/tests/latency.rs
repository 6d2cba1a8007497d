use p3li5_bench::{
    anonymity_table, cost_report, naive_rows, read_csv, rows_for, run_latency_suite, write_csv, BandwidthScenario, BenchConfig,
    BenchDb, CostModel, LatencyRow, SuiteConfig,
};

fn toy_suite() -> SuiteConfig {
    SuiteConfig {
        db_sizes: vec![300],
        record_bytes: 128,
        d: 2,
        ring_degree: 256,
        theta: 6,
        epsilons: vec![0, 1, 2],
        repetitions: 2,
        warmup: 0,
        toy: true,
        ..SuiteConfig::default()
    }
}

#[test]
fn total_is_compute_plus_transfer() {
    let cfg = toy_suite();
    let rows = run_latency_suite(&cfg).unwrap();
    assert_eq!(rows.len(), (cfg.epsilons.len() + 1) * cfg.scenarios.len());
    for r in &rows {
        assert!((r.total_ms - r.compute_ms - r.transfer_ms).abs() < 1e-9);
        if r.method == "sparsewpir" {
            let wire = (r.query_bytes + r.answer_bytes) as f64 + r.profile_bytes as f64 / 100.0;
            assert!((r.transfer_ms - wire * 8.0 / (r.mbps * 1e3)).abs() < 1e-9);
            assert!(r.compute_ms >= r.answer_ms);
        }
    }
    // Faster links only shrink transfer.
    let at = |eps: usize, mbps: f64| rows.iter().find(|r| r.epsilon == Some(eps) && r.mbps == mbps).unwrap().transfer_ms;
    assert!(at(0, 300.0) < at(0, 10.0));
}

#[test]
fn naive_download_is_database_over_bandwidth() {
    let rows = naive_rows(1_100_000, 275_000_000, &[BandwidthScenario::new("x", 50.0)]);
    assert_eq!(rows[0].compute_ms, 0.0);
    assert!((rows[0].total_ms - 44_000.0).abs() < 1e-6);
}

#[test]
fn hint_shrinks_server_work() {
    let mut db = BenchDb::build(300, 128, 2, 256, 6, true).unwrap();
    let dims = db.context().dims.clone();
    let full = db.measure(0, 1, 0, false, 1).unwrap();
    let one = db.measure(1, 1, 0, false, 1).unwrap();
    assert_eq!(full.homomorphic_ops, one.homomorphic_ops * dims[0] as u64);
    assert!(full.profile_bytes > one.profile_bytes);
    let two = db.measure(2, 1, 0, false, 1).unwrap();
    assert!(one.homomorphic_ops > two.homomorphic_ops);
}

#[test]
fn rows_survive_csv() {
    let mut db = BenchDb::build(200, 128, 2, 256, 6, true).unwrap();
    let m = db.measure(1, 1, 0, false, 2).unwrap();
    let mut rows = rows_for(&db, &m, &[BandwidthScenario::new("a", 25.0)], 100, false);
    rows.extend(naive_rows(200, db.db_bytes(), &[BandwidthScenario::new("a", 25.0)]));
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf).unwrap();
    let back: Vec<LatencyRow> = read_csv(&buf[..]).unwrap();
    assert_eq!(back, rows);
}

fn row(answer_ms: f64, answer_bytes: u64, threads: usize) -> LatencyRow {
    LatencyRow {
        db_size: 1,
        db_bytes: 1,
        method: "sparsewpir".into(),
        epsilon: Some(1),
        scenario: "s".into(),
        mbps: 10.0,
        query_bytes: 0,
        answer_bytes,
        profile_bytes: 0,
        homomorphic_ops: 0,
        answer_ms,
        compute_ms: answer_ms,
        transfer_ms: 0.0,
        total_ms: answer_ms,
        threads,
    }
}

#[test]
fn cost_is_linear_in_time_and_bytes() {
    let m = CostModel { price_per_cpu_hour: 2.0, price_per_gb_egress: 0.1 };
    let c = cost_report(&[row(0.0, 0, 1), row(3.6e6, 0, 1), row(3.6e6, 0, 4), row(0.0, 2_000_000_000, 1)], &m).unwrap();
    assert_eq!(c[0].cost, 0.0);
    assert!((c[1].cost - 2.0).abs() < 1e-12);
    assert!((c[2].cost - 8.0).abs() < 1e-12);
    assert!((c[3].cost - 0.2).abs() < 1e-12);
    let free = CostModel { price_per_cpu_hour: 0.0, price_per_gb_egress: 0.0 };
    assert!(cost_report(&[row(1e9, 1 << 40, 8)], &free).unwrap()[0].cost == 0.0);
    let rows = [row(1234.5, 777_000, 2), row(10.0, 5, 1)];
    let doubled = CostModel { price_per_cpu_hour: 4.0, price_per_gb_egress: 0.2 };
    for (a, b) in cost_report(&rows, &m).unwrap().iter().zip(cost_report(&rows, &doubled).unwrap()) {
        assert!((2.0 * a.cost - b.cost).abs() <= 1e-15 * b.cost.max(1.0));
    }
    assert!(cost_report(&[], &CostModel { price_per_cpu_hour: -1.0, price_per_gb_egress: 0.0 }).is_err());
}

#[test]
fn anonymity_rows_cover_every_level() {
    let rows = anonymity_table(&[100_000, 1_000_000], &[64, 250, 1024], 3, 8192, 3).unwrap();
    assert!(!rows.is_empty());
    for r in &rows {
        assert!((r.anonymity_k * r.eta as f64 - r.records as f64).abs() < 1e-6 * r.records as f64);
        assert!((r.min_entropy_bits + r.max_leakage_bits - (r.records as f64).log2()).abs() < 1e-9);
    }
    assert!(rows.iter().any(|r| r.epsilon == 0 && r.eta == 1));
}

#[test]
fn config_defaults_and_overrides() {
    let cfg: BenchConfig = toml::from_str("[cost]\nprice_per_cpu_hour = 1.5\nprice_per_gb_egress = 0.05\n[suite]\ndb_sizes = [10]\n").unwrap();
    assert_eq!(cfg.cost.price_per_cpu_hour, 1.5);
    assert_eq!(cfg.suite.db_sizes, vec![10]);
    assert_eq!(cfg.suite.amortize_queries, 100);
    assert_eq!(cfg.workload, Default::default());
    assert!(toml::from_str::<BenchConfig>("[suite]\nbogus = 1\n").is_err());
}
