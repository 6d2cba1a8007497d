use std::io::BufRead;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sparsewpir_core::KeywordType;

use crate::error::{LeaError, Result};

/// A partial observation of an association, as seen on the radio side.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capture {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supi: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suci: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guti_5g: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tmsi_5g: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_id: Option<String>,
}

impl Capture {
    pub fn keyword(&self, kind: KeywordType) -> Option<&str> {
        let v = match kind {
            KeywordType::Supi => &self.supi,
            KeywordType::Suci => &self.suci,
            KeywordType::Guti => &self.guti_5g,
            KeywordType::Tmsi => &self.tmsi_5g,
        };
        v.as_deref().filter(|s| !s.is_empty())
    }

    pub fn validate(&self) -> Result<()> {
        if KeywordType::ALL.iter().any(|&k| self.keyword(k).is_some()) {
            Ok(())
        } else {
            Err(LeaError::InvalidCapture("capture holds no identifier".into()))
        }
    }

    pub fn from_json(line: &str) -> Result<Self> {
        let c: Capture = serde_json::from_str(line).map_err(|e| LeaError::InvalidCapture(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

/// Parses a JSONL capture file, skipping blank lines.
pub fn read_captures<R: BufRead>(r: R) -> Result<Vec<Capture>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(Capture::from_json(&line).map_err(|e| LeaError::InvalidCapture(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}
