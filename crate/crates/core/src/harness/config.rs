use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::OutcomeTransform;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::predictor::{FinetuneConfig, WeightScheme};
use crate::sim::{DomainSpec, PriorConfig};
use crate::ssl::SSLConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Train on the source domain, evaluate on the target test split.
    ZeroShot,
    /// Zero-shot model further fine-tuned on a small target budget.
    DataEfficient,
    /// Train and evaluate within the source domain.
    Supervised,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::ZeroShot => "zero_shot",
            Setting::DataEfficient => "data_efficient",
            Setting::Supervised => "supervised",
        })
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "zero_shot" => Ok(Setting::ZeroShot),
            "data_efficient" => Ok(Setting::DataEfficient),
            "supervised" => Ok(Setting::Supervised),
            other => Err(Error::InvalidArgument(format!(
                "unknown setting `{other}` (expected zero_shot, data_efficient or supervised)"
            ))),
        }
    }
}

/// Which counterfactual queries are scored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Score only the first `n` test trajectories.
    pub max_trajectories: Option<usize>,
    /// Use every `anchor_stride`-th anchor `t = 1, 1 + stride, ...`.
    pub anchor_stride: usize,
    /// Probability of each treatment being on in a sampled plan.
    pub plan_probability: f64,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            max_trajectories: None,
            anchor_stride: 1,
            plan_probability: 0.5,
            batch_size: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub setting: Setting,
    pub source: DomainSpec,
    pub target: DomainSpec,
    pub priors: PriorConfig,
    pub tau: usize,
    pub scheme: WeightScheme,
    /// Map applied to outcomes before z-scoring (statistics from source train).
    pub outcome_transform: OutcomeTransform,
    pub seeds: Vec<u64>,
    /// Pretrain the encoder with the contrastive objective before fitting.
    pub pretrain: bool,
    /// Also train a variant from a randomly initialized encoder.
    pub ssl_ablation: bool,
    /// Target training sequences used in the data-efficient setting.
    pub finetune_budget: usize,
    pub encoder: EncoderConfig,
    pub ssl: SSLConfig,
    /// Source-domain training of encoder and decoder.
    pub finetune: FinetuneConfig,
    /// Epochs of the extra target fine-tuning (data-efficient setting).
    pub target_epochs: usize,
    pub eval: EvalConfig,
    pub plots: bool,
    /// Output directory; excluded from the config hash.
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            setting: Setting::ZeroShot,
            source: DomainSpec::desk_source(0),
            target: DomainSpec::desk_target(1),
            priors: PriorConfig::default(),
            tau: 6,
            scheme: WeightScheme::Inv,
            outcome_transform: OutcomeTransform::Log,
            seeds: vec![0, 1, 2],
            pretrain: true,
            ssl_ablation: true,
            finetune_budget: 100,
            encoder: EncoderConfig::tumor(),
            ssl: SSLConfig::default(),
            finetune: FinetuneConfig::default(),
            target_epochs: 20,
            eval: EvalConfig::default(),
            plots: true,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("at least one seed is required".into()));
        }
        if self.tau == 0 {
            return Err(Error::InvalidArgument("tau must be at least 1".into()));
        }
        for spec in [&self.source, &self.target] {
            spec.validate()?;
            if spec.horizon <= self.tau {
                return Err(Error::InvalidArgument(format!(
                    "trajectory length {} leaves no anchors for tau = {}",
                    spec.horizon, self.tau
                )));
            }
        }
        if self.setting == Setting::DataEfficient && self.finetune_budget == 0 {
            return Err(Error::InvalidArgument("data_efficient needs a positive fine-tune budget".into()));
        }
        if self.eval.anchor_stride == 0 || self.eval.batch_size == 0 {
            return Err(Error::InvalidArgument("anchor stride and eval batch size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.eval.plan_probability) {
            return Err(Error::InvalidArgument("plan probability must lie in [0, 1]".into()));
        }
        self.encoder.validate()?;
        self.ssl.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding (sorted keys, output directory
    /// removed).
    pub fn hash(&self) -> Result<String> {
        let mut value = serde_json::to_value(self)?;
        if let Some(map) = value.as_object_mut() {
            map.remove("out");
        }
        let canonical = serde_json::to_string(&value)?;
        Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
    }

    /// Domain spec with its seed offset for run `seed`, so every run draws
    /// fresh patients.
    pub fn domain_for_run(spec: &DomainSpec, seed: u64) -> DomainSpec {
        DomainSpec {
            seed: spec.seed.wrapping_add(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            ..spec.clone()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidArgument(format!("config: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_desk_scale_zero_shot() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.source.gamma, 10.0);
        assert_eq!(cfg.target.gamma, 0.0);
        assert_eq!((cfg.source.n_train, cfg.source.n_val, cfg.source.n_test), (1000, 200, 200));
        assert_eq!((cfg.target.n_train, cfg.target.n_val, cfg.target.n_test), (100, 200, 500));
        assert_eq!(cfg.finetune_budget, 100);
    }

    #[test]
    fn hash_survives_reserialization() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
        let json: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(json.hash().unwrap(), cfg.hash().unwrap());
    }

    #[test]
    fn hash_ignores_output_directory_only() {
        let cfg = ExperimentConfig::default();
        let moved = ExperimentConfig {
            out: Some("/tmp/elsewhere".into()),
            ..cfg.clone()
        };
        assert_eq!(moved.hash().unwrap(), cfg.hash().unwrap());
        let other = ExperimentConfig { tau: 5, ..cfg.clone() };
        assert_ne!(other.hash().unwrap(), cfg.hash().unwrap());
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg = ExperimentConfig::from_toml("setting = \"supervised\"\nseeds = [4]\n[ssl]\nepochs = 2\n").unwrap();
        assert_eq!(cfg.setting, Setting::Supervised);
        assert_eq!(cfg.seeds, vec![4]);
        assert_eq!(cfg.ssl.epochs, 2);
        assert_eq!(cfg.ssl.batch_size, 64);
        assert_eq!(cfg.tau, 6);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(ExperimentConfig { seeds: vec![], ..Default::default() }.validate().is_err());
        assert!(ExperimentConfig { tau: 0, ..Default::default() }.validate().is_err());
        assert!("few_shot".parse::<Setting>().is_err());
        assert_eq!("data-efficient".parse::<Setting>().unwrap(), Setting::DataEfficient);
    }
}
