//! Run configuration: TOML file plus command-line overrides (flags win).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uniadc_core::discriminator::{TrainConfig, DEFAULT_EMBED_DIM, DEFAULT_LAMBDA, DEFAULT_THRESHOLD};
use uniadc_core::NoiseFactor;

use crate::error::{AppError, AppResult};

/// Dataset value that selects the built-in toy benchmark.
pub const TOY_DATASET: &str = "toy";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Priors only.
    ZeroShot,
    /// `k_anomaly` real anomalies per category.
    FewShot,
    /// Every normal training image plus `k_anomaly` anomalies per category.
    FullShot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    /// Embedding scoring without anomaly samples, SSIM with them.
    Auto,
    /// Softmax over region/text embedding similarities.
    Embedding,
    /// Structural similarity to the source image.
    Ssim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ForegroundPolicy {
    /// Masks may cover the whole image.
    None,
    /// Keep masks inside an automatically estimated foreground.
    Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset root, or `toy` for the built-in benchmark.
    pub dataset: String,
    pub priors: Option<PathBuf>,
    /// Image classes to process; empty means all.
    pub classes: Vec<String>,
    pub mode: Mode,
    pub k_normal: usize,
    pub k_anomaly: usize,
    pub gamma_min: f64,
    pub gamma_max: f64,
    /// Candidates per category consistency selection mini-batch.
    pub batch_select: usize,
    pub n_per_category: usize,
    pub tau: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub lr: f64,
    pub train_batch: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub backend: String,
    pub scorer: ScorerKind,
    pub foreground: ForegroundPolicy,
    /// Adds a trainable "Other" embedding fitted to class-agnostic
    /// synthetic anomalies.
    pub open_set: bool,
    /// Writes score and label overlays during evaluation.
    pub overlays: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            dataset: TOY_DATASET.into(),
            priors: None,
            classes: Vec::new(),
            mode: Mode::ZeroShot,
            k_normal: 2,
            k_anomaly: 0,
            gamma_min: NoiseFactor::DEFAULT_RANGE.0,
            gamma_max: NoiseFactor::DEFAULT_RANGE.1,
            batch_select: 32,
            n_per_category: 16,
            tau: DEFAULT_THRESHOLD,
            lambda: DEFAULT_LAMBDA,
            epochs: train.epochs,
            lr: train.lr,
            train_batch: train.batch_size,
            hidden: train.hidden,
            embed_dim: DEFAULT_EMBED_DIM,
            seed: 0,
            out: PathBuf::from("uniadc-out"),
            backend: "reference".into(),
            scorer: ScorerKind::Auto,
            foreground: ForegroundPolicy::None,
            open_set: false,
            overlays: false,
        }
    }
}

pub const BACKENDS: [&str; 1] = ["reference"];

impl RunConfig {
    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        toml::from_str(&text).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn is_toy(&self) -> bool {
        self.dataset == TOY_DATASET
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> AppResult<()> {
        let mut problems = Vec::new();
        if !(self.gamma_min >= 0.0 && self.gamma_min < self.gamma_max && self.gamma_max <= 1.0) {
            problems.push(format!(
                "gamma range ({}, {}] must satisfy 0 <= min < max <= 1",
                self.gamma_min, self.gamma_max
            ));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            problems.push(format!("tau {} must lie in [0, 1]", self.tau));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            problems.push(format!("lambda {} must be a non-negative number", self.lambda));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            problems.push(format!("lr {} must be positive", self.lr));
        }
        for (name, v) in [
            ("batch_select", self.batch_select),
            ("n_per_category", self.n_per_category),
            ("train_batch", self.train_batch),
            ("hidden", self.hidden),
            ("embed_dim", self.embed_dim),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be at least 1"));
            }
        }
        match self.mode {
            Mode::ZeroShot if self.k_anomaly > 0 => {
                problems.push("zero_shot mode takes no anomaly samples (k_anomaly must be 0)".into())
            }
            Mode::FewShot | Mode::FullShot if self.k_anomaly == 0 => {
                problems.push("few_shot and full_shot modes need k_anomaly >= 1".into())
            }
            _ => {}
        }
        if self.mode != Mode::FullShot && self.k_normal == 0 {
            problems.push("k_normal must be at least 1".into());
        }
        if self.scorer == ScorerKind::Ssim && self.mode == Mode::ZeroShot {
            problems.push("SSIM selection needs anomaly samples; use the embedding scorer in zero_shot mode".into());
        }
        if !BACKENDS.contains(&self.backend.as_str()) {
            problems.push(format!(
                "backend {:?} is not available (available: {})",
                self.backend,
                BACKENDS.join(", ")
            ));
        }
        if !self.is_toy() && self.priors.is_none() {
            problems.push("a priors file is required for datasets other than the toy benchmark".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(AppError::Config(problems.join("; ")))
        }
    }

    /// The scorer actually used for the configured mode.
    pub fn effective_scorer(&self) -> ScorerKind {
        match (self.scorer, self.mode) {
            (ScorerKind::Auto, Mode::ZeroShot) => ScorerKind::Embedding,
            (ScorerKind::Auto, _) => ScorerKind::Ssim,
            (s, _) => s,
        }
    }

    /// Normal support size; `None` takes every training normal.
    pub fn normal_count(&self) -> Option<usize> {
        (self.mode != Mode::FullShot).then_some(self.k_normal)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.train_batch,
            lambda: self.lambda,
            hidden: self.hidden,
            seed,
            ..TrainConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!((c.batch_select, c.n_per_category, c.tau, c.lambda), (32, 16, 0.5, 0.5));
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn problems_are_reported_together() {
        let c = RunConfig {
            gamma_min: 0.7,
            gamma_max: 0.6,
            tau: 2.0,
            backend: "sdxl".into(),
            ..RunConfig::default()
        };
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("gamma") && msg.contains("tau") && msg.contains("sdxl"), "{msg}");
    }

    #[test]
    fn mode_and_anomaly_count_must_agree() {
        let c = RunConfig {
            mode: Mode::FewShot,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        let c = RunConfig {
            mode: Mode::FewShot,
            k_anomaly: 1,
            ..RunConfig::default()
        };
        c.validate().unwrap();
    }
}
