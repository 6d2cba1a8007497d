#![allow(dead_code)]

use chrono::{DateTime, Duration, TimeZone, Utc};
use sparsewpir_core::*;

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 5, 1, 12, 0, 0).unwrap()
}

/// Deterministic synthetic subscriber `i` associated at `t0 + offset`.
pub fn event(i: u64, offset: Duration) -> IcfEvent {
    IcfEvent {
        supi: format!("imsi-00101{i:010}"),
        suci: Some(format!("suci-0-001-01-0-0-0-{:012x}", i.wrapping_mul(0x9e37_79b9_7f4a_7c15) >> 16)),
        guti_5g: Some(format!("5g-guti-00101-cafe-{i:08x}")),
        tmsi_5g: Some(format!("{:08x}", (i as u32).wrapping_mul(2_654_435_761))),
        assoc_start: t0() + offset,
        assoc_end: None,
        cell_id: Some(format!("cell-{}", i % 17)),
        event_kind: EventKind::Association,
    }
}

pub fn toy_context(dims: &[usize], n: usize, record_bytes: usize, theta: usize, provisioned: u64) -> Context {
    Context { dims: dims.to_vec(), ring_degree: n, version: 0, record_bytes, theta, provisioned, toy: true }
}

pub fn static_db(kind: KeywordType, ctx: Context) -> HyperDb {
    let policy = ResizePolicy { auto_grow: false, shrink_below: 0.0, shrink_floor: ctx.provisioned };
    HyperDb::new(kind, ctx, Retention::default(), policy).unwrap()
}

/// Inserts events `0..` until `count` fit, skipping any that would overflow a cell.
pub fn fill(db: &mut HyperDb, count: usize) -> Vec<IcfEvent> {
    let mut stored = Vec::new();
    let mut i = 0u64;
    while stored.len() < count {
        let ev = event(i, Duration::seconds(i as i64 % 600));
        match db.insert(&ev) {
            Ok(_) => stored.push(ev),
            Err(CoreError::CellOverflow { .. }) => {}
            Err(e) => panic!("insert failed: {e}"),
        }
        i += 1;
        assert!(i < 100 * count as u64 + 1000, "geometry too small for {count} records");
    }
    stored
}
