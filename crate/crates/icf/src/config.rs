use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sparsewpir_core::{KeywordType, ResizePolicy, Retention};

use crate::error::{IcfError, Result};

/// How the server serves queries on several keyword types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// One index; a query on another type re-indexes everything first.
    SingleHash,
    /// One index per keyword type.
    MultiHash,
    /// Forwards each keyword type to a single-hash peer.
    #[serde(alias = "distributed_single_hash")]
    Distributed,
}

impl std::str::FromStr for Strategy {
    type Err = IcfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "single_hash" => Ok(Strategy::SingleHash),
            "multi_hash" => Ok(Strategy::MultiHash),
            "distributed" | "distributed_single_hash" => Ok(Strategy::Distributed),
            other => Err(IcfError::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub listen: String,
    /// Events the geometry is sized for.
    pub provisioned: u64,
    pub record_bytes: usize,
    pub d: usize,
    pub ring_degree: usize,
    pub theta: usize,
    pub t_max_secs: i64,
    pub t_short_secs: i64,
    pub strategy: Strategy,
    /// Queryable types; the first is the initial index under single hashing.
    pub keyword_types: Vec<KeywordType>,
    /// Distributed strategy only: one address per entry of `keyword_types`.
    pub peers: Vec<String>,
    pub toy: bool,
    pub auto_grow: bool,
    pub shrink_below: f64,
    /// Eviction period; 0 disables the background ticker.
    pub tick_interval_ms: u64,
    pub metrics_csv: Option<PathBuf>,
    pub metrics_interval_ms: u64,
    pub parallel_answer: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            listen: "127.0.0.1:7878".into(),
            provisioned: 1 << 16,
            record_bytes: 128,
            d: 2,
            ring_degree: 4096,
            theta: 2,
            t_max_secs: 54 * 60,
            t_short_secs: 27 * 60,
            strategy: Strategy::SingleHash,
            keyword_types: vec![KeywordType::Suci],
            peers: Vec::new(),
            toy: false,
            auto_grow: true,
            shrink_below: 0.25,
            tick_interval_ms: 1000,
            metrics_csv: None,
            metrics_interval_ms: 5000,
            parallel_answer: true,
        }
    }
}

impl ServerConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| IcfError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(IcfError::Config(m));
        if self.keyword_types.is_empty() {
            return fail("at least one keyword type is required".into());
        }
        let mut kinds = self.keyword_types.clone();
        kinds.sort();
        kinds.dedup();
        if kinds.len() != self.keyword_types.len() {
            return fail("keyword types repeat".into());
        }
        if self.strategy == Strategy::MultiHash && kinds.len() < 2 {
            return fail("multi_hash needs at least two keyword types".into());
        }
        if self.strategy == Strategy::Distributed && self.peers.len() != self.keyword_types.len() {
            return fail(format!("{} peers for {} keyword types", self.peers.len(), self.keyword_types.len()));
        }
        if self.strategy != Strategy::Distributed && !self.peers.is_empty() {
            return fail("peers are only used by the distributed strategy".into());
        }
        if self.t_max_secs <= 0 || self.t_short_secs <= 0 {
            return fail("retention windows must be positive".into());
        }
        if !(0.0..1.0).contains(&self.shrink_below) {
            return fail("shrink_below must lie in [0, 1)".into());
        }
        Ok(())
    }

    pub fn retention(&self) -> Retention {
        Retention { t_max: chrono::Duration::seconds(self.t_max_secs), t_short: chrono::Duration::seconds(self.t_short_secs) }
    }

    /// Never shrinks below the configured provisioning.
    pub fn resize_policy(&self) -> ResizePolicy {
        ResizePolicy { auto_grow: self.auto_grow, shrink_below: self.shrink_below, shrink_floor: self.provisioned }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_with_defaults() {
        let cfg: ServerConfig = toml::from_str(
            r#"
            strategy = "multi_hash"
            keyword_types = ["suci", "tmsi", "supi"]
            toy = true
            "#,
        )
        .unwrap();
        assert_eq!(cfg.strategy, Strategy::MultiHash);
        assert_eq!(cfg.d, 2);
        cfg.validate().unwrap();
    }

    #[test]
    fn strategy_constraints() {
        let mut cfg = ServerConfig { strategy: Strategy::MultiHash, ..Default::default() };
        assert!(cfg.validate().is_err());
        cfg.strategy = Strategy::Distributed;
        cfg.keyword_types = vec![KeywordType::Suci, KeywordType::Tmsi];
        cfg.peers = vec!["127.0.0.1:1".into()];
        assert!(cfg.validate().is_err());
        cfg.peers.push("127.0.0.1:2".into());
        cfg.validate().unwrap();
        let legacy: ServerConfig = toml::from_str("strategy = \"distributed_single_hash\"").unwrap();
        assert_eq!(legacy.strategy, Strategy::Distributed);
        assert!(toml::from_str::<ServerConfig>("stratgy = \"x\"").is_err());
    }
}
