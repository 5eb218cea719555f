use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::cil::CilConfig;
use crate::data::DEFAULT_FRACTIONS;
use crate::model::ModelConfig;

pub const SEED_ENV: &str = "HMFNET_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_molecules: usize,
    pub n_labels: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// `smiles,labels` CSV.
    pub csv: Option<PathBuf>,
    pub synthetic: Option<SyntheticConfig>,
}

/// Everything a training run reads. Unknown keys are rejected; missing keys
/// take the defaults shown by `RunConfig::default()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub cil: CilConfig,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub data: DataConfig,
    pub split: [f64; 3],
    pub threshold: f64,
    /// With CIL off: class-weighted BCE when true, plain BCE when false.
    pub bce_weighted: bool,
    /// Stop once training macro-F1 reaches this value.
    pub target_train_f1: Option<f64>,
    /// Score the training split after every epoch.
    pub eval_train: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            cil: CilConfig::default(),
            optimizer: AdamConfig::default(),
            batch_size: 32,
            epochs: 100,
            seed: 0,
            data: DataConfig::default(),
            split: DEFAULT_FRACTIONS,
            threshold: 0.5,
            bce_weighted: true,
            target_train_f1: None,
            eval_train: true,
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside resolve against its
    /// directory, and `HMFNET_SEED` overrides the seed.
    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.data.csv.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.output_dir.as_mut() {
            resolve(p);
        }
        cfg.apply_seed_env()?;
        Ok(cfg)
    }

    pub fn apply_seed_env(&mut self) -> Result<(), TrainError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| TrainError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.cil.validate()?;
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return bad("optimizer needs lr > 0, betas in [0, 1) and eps > 0");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold must lie in [0, 1]");
        }
        if self.split.iter().any(|&f| !(f >= 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("split fractions must be non-negative and sum to 1");
        }
        if self.data.csv.is_some() && self.data.synthetic.is_some() {
            return bad("data takes either csv or synthetic, not both");
        }
        if let Some(t) = self.target_train_f1 {
            if !(0.0..=1.0).contains(&t) {
                return bad("target_train_f1 must lie in [0, 1]");
            }
        }
        if !self.model.switches.node {
            return bad("the node branch cannot be disabled");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_from_empty_document() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c.cil.c, 0.2);
        assert_eq!(c.cil.lambda.as_array(), [1.0, 0.2, 0.1, 0.2]);
        assert_eq!(c.batch_size, 32);
        assert_eq!(c.optimizer.lr, 1e-3);
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(RunConfig::from_json(r#"{"epochz": 3}"#).is_err());
        assert!(RunConfig::from_json(r#"{"cil": {"sample": {"e1": 0.7, "e2": 0.7}}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"cil": {"lambda": {"basis": -1, "class": 0, "sample": 0, "col": 0}}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"cil": {"mode": "sideways"}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"split": [0.5, 0.5, 0.5]}"#).is_err());
        assert!(RunConfig::from_json(r#"{"model": {"switches": {"node": false}}}"#).is_err());
    }
}
