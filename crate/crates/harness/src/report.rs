//! Machine-readable experiment reports.
//!
//! The JSON has two top-level parts: `deterministic`, which is a pure
//! function of the configuration (identical configs produce byte-identical
//! sections), and timing fields outside it. Reports are versioned.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use monge_core::duality::DualityReport;
use monge_core::solver::HistoryRecord;
use monge_core::{Error, Result};

use crate::config::ResolvedConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learned_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pushforward_w2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_w2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map_l2_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duality: Option<DualityReport>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub extra: BTreeMap<String, f64>,
}

impl Metrics {
    /// Every declared metric must be finite.
    pub fn validate(&self) -> Result<()> {
        let scalars = [
            self.learned_cost,
            self.oracle_cost,
            self.pushforward_w2,
            self.baseline_w2,
            self.map_l2_error,
            self.class_accuracy,
        ];
        for v in scalars.into_iter().flatten() {
            if !v.is_finite() {
                return Err(Error::NonFinite("report metric"));
            }
        }
        for v in self.extra.values() {
            if !v.is_finite() {
                return Err(Error::NonFinite("report extra metric"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeterministicSection {
    pub status: String,
    pub config: ResolvedConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_history: Option<HistoryRecord>,
    pub metrics: Metrics,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub deterministic: DeterministicSection,
    pub wall_time_s: f64,
}

impl ExperimentReport {
    pub fn new(section: DeterministicSection, wall_time_s: f64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            deterministic: section,
            wall_time_s,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// The repeatable part of the report, serialized on its own.
    pub fn deterministic_json(&self) -> String {
        serde_json::to_string_pretty(&self.deterministic).expect("section serializes")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Decode(format!("report parse: {e}")))
    }
}
