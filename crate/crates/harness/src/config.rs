//! Flat key-value experiment configuration.
//!
//! Config files are TOML restricted to top-level scalar keys. Every key is
//! optional except `experiment`; anything unset falls back to the
//! experiment family's defaults. Unknown keys are rejected.
//!
//! Key reference (see README for the full table):
//!
//! - run: `experiment`, `seed`, `output_dir`, `n_test`, `oracle`
//!   (`discrete` | `gaussian` | `monotone1d` | `none`), `duality`
//! - training: `outer_steps`, `map_steps`, `potential_steps`,
//!   `batch_size`, `lr_map`, `lr_potential`, `beta1`, `beta2`, `adam_eps`,
//!   `weight_decay`, `ema_decay` (0 disables), `eval_every`, `eval_batch`,
//!   `resample_inner`, `divergence_ceiling`, `checkpoint_every`
//! - cost: `cost` (kind string), `scale`, `alpha`, `lambda`, `radius`,
//!   `mask_file`
//! - experiment-specific: `land_csv`, `population_csv`, `anchor_count`,
//!   `steps_total`, `ellipse_a`, `ellipse_b`, `ellipse_gap`

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use monge_core::costs::CostSpec;
use monge_core::solver::TrainConfig;
use monge_core::{Error, Result};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub experiment: String,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub n_test: Option<usize>,
    pub oracle: Option<String>,
    pub duality: Option<bool>,

    pub outer_steps: Option<usize>,
    pub map_steps: Option<usize>,
    pub potential_steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr_map: Option<f64>,
    pub lr_potential: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub adam_eps: Option<f64>,
    pub weight_decay: Option<f64>,
    /// Zero disables parameter averaging.
    pub ema_decay: Option<f64>,
    pub eval_every: Option<usize>,
    pub eval_batch: Option<usize>,
    pub resample_inner: Option<bool>,
    pub divergence_ceiling: Option<f64>,
    pub checkpoint_every: Option<usize>,

    pub cost: Option<String>,
    pub scale: Option<f64>,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub radius: Option<f64>,
    pub mask_file: Option<PathBuf>,

    pub land_csv: Option<PathBuf>,
    pub population_csv: Option<PathBuf>,
    pub anchor_count: Option<usize>,
    /// Total gradient steps for the population run; overrides the
    /// K/K1/K2 split while keeping their ratios.
    pub steps_total: Option<usize>,
    pub ellipse_a: Option<f64>,
    pub ellipse_b: Option<f64>,
    pub ellipse_gap: Option<f64>,
}

impl RawConfig {
    pub fn for_experiment(name: &str) -> Self {
        Self {
            experiment: name.to_string(),
            ..Self::default()
        }
    }

    /// Applies the set training overrides onto experiment defaults.
    pub fn apply_train_overrides(&self, base: &mut TrainConfig) {
        macro_rules! put {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    base.$field = v;
                }
            };
        }
        put!(outer_steps);
        put!(map_steps);
        put!(potential_steps);
        put!(batch_size);
        put!(lr_map);
        put!(lr_potential);
        put!(beta1);
        put!(beta2);
        put!(adam_eps);
        put!(weight_decay);
        put!(eval_every);
        put!(eval_batch);
        put!(resample_inner);
        put!(divergence_ceiling);
        if let Some(d) = self.ema_decay {
            base.ema_decay = if d == 0.0 { None } else { Some(d) };
        }
        if let Some(ce) = self.checkpoint_every {
            base.checkpoint_every = if ce == 0 { None } else { Some(ce) };
        }
        if let Some(s) = self.seed {
            base.seed = s;
        }
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RawConfig> {
    let text = std::fs::read_to_string(&path)?;
    toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("config parse error: {e}")))
}

/// Which ground-truth solver scores the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    Discrete,
    Gaussian,
    Monotone1d,
    None,
}

impl std::str::FromStr for OracleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "discrete" => Ok(Self::Discrete),
            "gaussian" => Ok(Self::Gaussian),
            "monotone1d" => Ok(Self::Monotone1d),
            "none" => Ok(Self::None),
            other => Err(Error::InvalidConfig(format!("unknown oracle `{other}`"))),
        }
    }
}

impl OracleKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Discrete => "discrete",
            Self::Gaussian => "gaussian",
            Self::Monotone1d => "monotone1d",
            Self::None => "none",
        }
    }
}

/// Fully-resolved configuration echoed into the report; identical configs
/// serialize identically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub experiment: String,
    pub seed: u64,
    pub n_test: usize,
    pub oracle: String,
    pub duality: bool,
    pub train: TrainConfig,
    pub cost: CostSpec,
    /// Experiment-specific resolved values (paths, axis lengths, counts).
    pub extras: BTreeMap<String, String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_toml() {
        let text = r#"
experiment = "gaussian2d"
seed = 9
outer_steps = 100
lr_map = 1e-4
duality = true
"#;
        let raw: RawConfig = toml::from_str(text).unwrap();
        assert_eq!(raw.experiment, "gaussian2d");
        assert_eq!(raw.seed, Some(9));
        assert_eq!(raw.outer_steps, Some(100));
        assert_eq!(raw.duality, Some(true));

        let mut train = TrainConfig::new(0);
        raw.apply_train_overrides(&mut train);
        assert_eq!(train.outer_steps, 100);
        assert_eq!(train.lr_map, 1e-4);
        assert_eq!(train.seed, 9);
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = "experiment = \"line1d\"\nnot_a_key = 3\n";
        assert!(toml::from_str::<RawConfig>(text).is_err());
    }

    #[test]
    fn ema_zero_disables() {
        let raw: RawConfig = toml::from_str("experiment = \"line1d\"\nema_decay = 0.0\n").unwrap();
        let mut train = TrainConfig::new(0);
        assert!(train.ema_decay.is_some());
        raw.apply_train_overrides(&mut train);
        assert!(train.ema_decay.is_none());
    }
}
