mod common;

use common::*;
use proptest::prelude::*;
use sparsewpir_core::*;

fn geometry(dims: &[usize]) -> Geometry {
    Geometry { dims: dims.to_vec(), theta: 1, records_per_plaintext: 32 }
}

#[test]
fn full_privacy_leaks_nothing() {
    let r = leakage_report(4096, &geometry(&[16, 16, 16]), 0).unwrap();
    assert_eq!(r.eta, 1);
    assert_eq!(r.max_leakage_bits, 0.0);
    assert_eq!(r.anonymity_k, 4096.0);
    assert_eq!(r.min_entropy_bits, 12.0);
}

#[test]
fn one_hinted_dimension_of_sixteen() {
    let r = leakage_report(4096, &geometry(&[16, 16, 16]), 1).unwrap();
    assert_eq!(r.eta, 16);
    assert_eq!(r.partition_size, 256.0);
    assert_eq!(r.min_entropy_bits, 8.0);
    assert_eq!(r.max_leakage_bits, 4.0);
}

#[test]
fn full_hint_leaves_cell_occupancy() {
    let r = leakage_report(8192, &geometry(&[16, 16, 16]), 3).unwrap();
    assert_eq!(r.anonymity_k, 2.0);
    assert!(leakage_report(8192, &geometry(&[16, 16, 16]), 4).is_err());
    assert!(leakage_report(0, &geometry(&[16, 16, 16]), 1).is_err());
}

#[test]
fn csv_row_matches_header() {
    let r = leakage_report(1000, &geometry(&[10, 10]), 1).unwrap();
    assert_eq!(r.csv_row().split(',').count(), LeakageReport::csv_header().split(',').count());
    assert!(r.csv_row().starts_with("1,1000,10,100,"));
}

#[test]
fn empirical_partition_counts() {
    let ctx = toy_context(&[16, 4, 4], 256, 128, 8, 4096);
    let mut db = static_db(KeywordType::Supi, ctx.clone());
    assert_eq!(empirical_anonymity(&db, &[5]).unwrap(), 0);
    let n = 1000usize;
    fill(&mut db, n);
    assert_eq!(empirical_anonymity(&db, &[]).unwrap(), n);
    let p = 1.0 / 16.0;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    let mut total = 0;
    for h in 0..16 {
        let c = empirical_anonymity(&db, &[h]).unwrap();
        assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sigma, "partition {h} holds {c}");
        total += c;
    }
    assert_eq!(total, n);
    assert!(empirical_anonymity(&db, &[16]).is_err());
}

proptest! {
    #[test]
    fn entropy_and_leakage_partition_the_prior(
        dims in prop::collection::vec(1usize..64, 2..5),
        records in 1u64..10_000_000,
        eps_frac in 0.0f64..=1.0,
    ) {
        let eps = ((dims.len() as f64) * eps_frac).floor() as usize;
        let r = leakage_report(records, &geometry(&dims), eps).unwrap();
        let eta: u64 = dims[..eps].iter().map(|&k| k as u64).product();
        prop_assert_eq!(r.eta, eta);
        prop_assert!((r.min_entropy_bits + r.max_leakage_bits - (records as f64).log2()).abs() < 1e-9);
        prop_assert!((r.anonymity_k - records as f64 / eta as f64).abs() < 1e-9 * r.anonymity_k.max(1.0));
        prop_assert!((r.max_leakage_bits - (eta as f64).log2()).abs() < 1e-12);
    }

    #[test]
    fn leakage_grows_with_epsilon(dims in prop::collection::vec(2usize..64, 2..5), records in 1u64..1_000_000) {
        let g = geometry(&dims);
        let rhos: Vec<f64> = (0..=dims.len()).map(|e| leakage_report(records, &g, e).unwrap().max_leakage_bits).collect();
        prop_assert!(rhos.windows(2).all(|w| w[0] < w[1]));
    }
}
