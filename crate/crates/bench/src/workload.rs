use std::io::Write;

use chrono::{DateTime, Duration, SubsecRound, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use sparsewpir_core::{EventKind, IcfEvent};

use crate::error::{BenchError, Result};

/// Registration traffic of a subscriber population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadModel {
    pub n_subscribers: u64,
    /// Registrations per second per subscriber.
    pub lambda_poisson: f64,
    pub t_max_s: u64,
    pub t_short_s: u64,
    pub record_bytes: u64,
}

impl Default for WorkloadModel {
    fn default() -> Self {
        WorkloadModel { n_subscribers: 143_000_000, lambda_poisson: 0.0006, t_max_s: 3240, t_short_s: 1620, record_bytes: 250 }
    }
}

impl WorkloadModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda_poisson.is_finite() && self.lambda_poisson >= 0.0 && self.t_short_s <= self.t_max_s;
        if ok {
            Ok(())
        } else {
            Err(BenchError::Config(format!("invalid workload {self:?}")))
        }
    }

    /// Registrations per second across the population.
    pub fn aggregate_rate(&self) -> f64 {
        self.n_subscribers as f64 * self.lambda_poisson
    }

    pub fn expected_live_events(&self) -> f64 {
        exact_product(self.n_subscribers, self.t_short_s, 1) * self.lambda_poisson
    }
}

/// `a·b·c` as an f64, rounded once.
fn exact_product(a: u64, b: u64, c: u64) -> f64 {
    (a as u128 * b as u128 * c as u128) as f64
}

/// Bytes the cache holds at steady state, `N_sub · λ · t_short · b`.
pub fn estimate_icf_size(m: &WorkloadModel) -> f64 {
    // The integer part is exact below 2^53, leaving the rate multiplication as the only rounding.
    exact_product(m.n_subscribers, m.t_short_s, m.record_bytes) * m.lambda_poisson
}

/// Bijective 64-bit mixer; distinct inputs give distinct identifiers.
fn mix64(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn mix32(mut x: u32) -> u32 {
    x ^= x >> 16;
    x = x.wrapping_mul(0x7feb_352d);
    x ^= x >> 15;
    x = x.wrapping_mul(0x846c_a68b);
    x ^ (x >> 16)
}

/// The `seq`-th registration of `subscriber`: fresh concealed and temporary identifiers.
pub fn registration(subscriber: u64, seq: u64, at: DateTime<Utc>) -> IcfEvent {
    let tmsi = mix32(seq as u32);
    IcfEvent {
        supi: format!("imsi-{:015}", 1_010_000_000_000 + subscriber),
        suci: Some(format!("suci-0-001-01-0-0-0-{:016x}", mix64(seq))),
        guti_5g: Some(format!("5g-guti-00101-{:04x}-{tmsi:08x}", (seq >> 32) & 0xffff)),
        tmsi_5g: Some(format!("{tmsi:08x}")),
        assoc_start: at,
        assoc_end: None,
        cell_id: Some(format!("cell-{}", subscriber % 4096)),
        event_kind: EventKind::Association,
    }
}

/// A registration whose binary form is `target` bytes long where the identifiers allow:
/// only SUPI and 5G-TMSI, padded through the cell identifier.
pub fn sized_registration(subscriber: u64, seq: u64, at: DateTime<Utc>, target: usize) -> IcfEvent {
    let mut ev = registration(subscriber, seq, at);
    ev.suci = None;
    ev.guti_5g = None;
    ev.cell_id = None;
    let base = ev.to_bytes().expect("short identifiers").len();
    if target > base + 1 {
        ev.cell_id = Some("c".repeat((target - base - 1).min(255)));
    }
    ev
}

pub fn epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

/// Poisson registrations over `duration_s` seconds from `start`, reproducible from `seed`.
pub fn generate_events(m: &WorkloadModel, duration_s: f64, seed: u64, start: DateTime<Utc>) -> Result<Vec<IcfEvent>> {
    m.validate()?;
    let rate = m.aggregate_rate();
    if duration_s <= 0.0 || rate <= 0.0 || m.n_subscribers == 0 {
        return Ok(Vec::new());
    }
    let exp = Exp::new(rate).map_err(|e| BenchError::Config(e.to_string()))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    // Stored events keep microseconds.
    let start = start.trunc_subsecs(6);
    let mut t = 0.0;
    let mut out = Vec::new();
    loop {
        t += exp.sample(&mut rng);
        if t >= duration_s {
            break;
        }
        let sub = rng.random_range(0..m.n_subscribers);
        let at = start + Duration::microseconds((t * 1e6) as i64);
        out.push(registration(sub, out.len() as u64, at));
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(events: &[IcfEvent], mut w: W) -> Result<()> {
    for ev in events {
        writeln!(w, "{}", ev.to_json())?;
    }
    w.flush()?;
    Ok(())
}
