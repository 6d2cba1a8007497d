use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::error::{BenchError, Result};
use crate::latency::SuiteConfig;
use crate::workload::WorkloadModel;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub workload: WorkloadModel,
    pub cost: CostModel,
    pub suite: SuiteConfig,
}

impl BenchConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        toml::from_str(&std::fs::read_to_string(path)?).map_err(|e| BenchError::Config(e.to_string()))
    }
}
