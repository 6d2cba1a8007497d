use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Subscriber identifier families that can address the cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeywordType {
    Supi,
    Suci,
    Guti,
    Tmsi,
}

impl KeywordType {
    pub const ALL: [KeywordType; 4] = [KeywordType::Supi, KeywordType::Suci, KeywordType::Guti, KeywordType::Tmsi];

    /// Stable one-byte tag used for hash domain separation and in serialized records.
    pub fn tag(self) -> u8 {
        match self {
            KeywordType::Supi => 1,
            KeywordType::Suci => 2,
            KeywordType::Guti => 3,
            KeywordType::Tmsi => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            KeywordType::Supi => "supi",
            KeywordType::Suci => "suci",
            KeywordType::Guti => "guti",
            KeywordType::Tmsi => "tmsi",
        }
    }
}

impl fmt::Display for KeywordType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KeywordType {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "supi" => Ok(KeywordType::Supi),
            "suci" => Ok(KeywordType::Suci),
            "guti" | "guti_5g" | "5g-guti" => Ok(KeywordType::Guti),
            "tmsi" | "tmsi_5g" | "5g-tmsi" => Ok(KeywordType::Tmsi),
            other => Err(CoreError::Malformed(format!("unknown keyword type {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Association,
    Disassociation,
}

/// An association between a permanent identifier and the temporary identifiers the
/// network handed out for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IcfEvent {
    #[serde(default)]
    pub supi: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suci: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guti_5g: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tmsi_5g: Option<String>,
    pub assoc_start: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assoc_end: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_id: Option<String>,
    pub event_kind: EventKind,
}

const HAS_SUCI: u8 = 1;
const HAS_GUTI: u8 = 1 << 1;
const HAS_TMSI: u8 = 1 << 2;
const HAS_CELL: u8 = 1 << 3;
const HAS_END: u8 = 1 << 4;
const DISASSOC: u8 = 1 << 5;

impl IcfEvent {
    /// The identifier of the given family, if present and non-empty.
    pub fn keyword(&self, kind: KeywordType) -> Option<&str> {
        let v = match kind {
            KeywordType::Supi => Some(self.supi.as_str()),
            KeywordType::Suci => self.suci.as_deref(),
            KeywordType::Guti => self.guti_5g.as_deref(),
            KeywordType::Tmsi => self.tmsi_5g.as_deref(),
        };
        v.filter(|s| !s.is_empty())
    }

    pub fn validate(&self) -> Result<()> {
        if KeywordType::ALL.iter().all(|&k| self.keyword(k).is_none()) {
            return Err(CoreError::Malformed("event carries no identifier".into()));
        }
        if let Some(end) = self.assoc_end {
            if end < self.assoc_start {
                return Err(CoreError::Malformed("association ends before it starts".into()));
            }
        }
        Ok(())
    }

    pub fn from_json(line: &str) -> Result<Self> {
        let ev: IcfEvent = serde_json::from_str(line).map_err(|e| CoreError::Malformed(e.to_string()))?;
        ev.validate()?;
        Ok(ev)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }

    /// Compact binary form: `[flags][supi][suci?][guti?][tmsi?][cell?][start µs][end µs?]`,
    /// strings prefixed by a one-byte length.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut flags = 0u8;
        let opt = [
            (&self.suci, HAS_SUCI),
            (&self.guti_5g, HAS_GUTI),
            (&self.tmsi_5g, HAS_TMSI),
            (&self.cell_id, HAS_CELL),
        ];
        for (v, bit) in opt {
            if v.is_some() {
                flags |= bit;
            }
        }
        if self.assoc_end.is_some() {
            flags |= HAS_END;
        }
        if self.event_kind == EventKind::Disassociation {
            flags |= DISASSOC;
        }
        let mut out = Vec::with_capacity(96);
        out.push(flags);
        put_str(&mut out, &self.supi)?;
        for (v, _) in opt {
            if let Some(s) = v {
                put_str(&mut out, s)?;
            }
        }
        out.extend_from_slice(&self.assoc_start.timestamp_micros().to_le_bytes());
        if let Some(end) = self.assoc_end {
            out.extend_from_slice(&end.timestamp_micros().to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { buf: bytes, pos: 0 };
        let flags = r.u8()?;
        let supi = r.string()?;
        let take = |bit: u8, r: &mut Cursor<'_>| -> Result<Option<String>> {
            if flags & bit != 0 {
                r.string().map(Some)
            } else {
                Ok(None)
            }
        };
        let suci = take(HAS_SUCI, &mut r)?;
        let guti_5g = take(HAS_GUTI, &mut r)?;
        let tmsi_5g = take(HAS_TMSI, &mut r)?;
        let cell_id = take(HAS_CELL, &mut r)?;
        let assoc_start = r.time()?;
        let assoc_end = if flags & HAS_END != 0 { Some(r.time()?) } else { None };
        if r.pos != bytes.len() {
            return Err(CoreError::Malformed("trailing bytes after event".into()));
        }
        let event_kind = if flags & DISASSOC != 0 { EventKind::Disassociation } else { EventKind::Association };
        Ok(IcfEvent { supi, suci, guti_5g, tmsi_5g, assoc_start, assoc_end, cell_id, event_kind })
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u8::try_from(s.len()).map_err(|_| CoreError::Malformed(format!("identifier longer than 255 bytes: {s:.16}…")))?;
    out.push(len);
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        let s = self.buf.get(self.pos..end).ok_or_else(|| CoreError::Malformed("truncated event".into()))?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u8()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CoreError::Malformed("identifier is not UTF-8".into()))
    }

    fn time(&mut self) -> Result<DateTime<Utc>> {
        let us = i64::from_le_bytes(self.take(8)?.try_into().unwrap());
        Utc.timestamp_micros(us).single().ok_or_else(|| CoreError::Malformed("timestamp out of range".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> IcfEvent {
        IcfEvent {
            supi: "imsi-001010000000001".into(),
            suci: Some("suci-0-001-01-0-0-0-a1b2c3".into()),
            guti_5g: None,
            tmsi_5g: Some("0x0badcafe".into()),
            assoc_start: Utc.timestamp_micros(1_700_000_000_123_456).unwrap(),
            assoc_end: None,
            cell_id: Some("cell-7".into()),
            event_kind: EventKind::Association,
        }
    }

    #[test]
    fn binary_roundtrip() {
        let ev = sample();
        let bytes = ev.to_bytes().unwrap();
        assert!(bytes.len() < 100);
        assert_eq!(IcfEvent::from_bytes(&bytes).unwrap(), ev);
        assert!(IcfEvent::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn json_uses_rfc3339_and_field_names() {
        let ev = sample();
        let line = ev.to_json();
        assert!(line.contains("\"assoc_start\":\"2023-11-14T22:13:20.123456Z\""));
        assert!(line.contains("\"tmsi_5g\""));
        assert_eq!(IcfEvent::from_json(&line).unwrap(), ev);
    }

    #[test]
    fn event_without_identifiers_is_rejected() {
        let mut ev = sample();
        ev.supi.clear();
        ev.suci = None;
        ev.tmsi_5g = None;
        assert!(ev.validate().is_err());
        ev.guti_5g = Some("g".into());
        assert!(ev.validate().is_ok());
    }

    #[test]
    fn keyword_type_parsing() {
        assert_eq!("TMSI".parse::<KeywordType>().unwrap(), KeywordType::Tmsi);
        assert_eq!("5g-guti".parse::<KeywordType>().unwrap(), KeywordType::Guti);
        assert!("imei".parse::<KeywordType>().is_err());
        for k in KeywordType::ALL {
            assert_eq!(KeywordType::from_tag(k.tag()), Some(k));
        }
    }
}
