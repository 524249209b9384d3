//! The SR-I / SR-PT / SR-FT stages, classifier training and the full protocol.

mod classify;
mod log;
mod protocol;
mod sr;

pub use classify::{cross_entropy_with_grad, predict, train_classifier, ClassifierRun, CE_LOSS};
pub use log::{EpochRecord, StepRecord, TrainLog};
pub use protocol::{
    run_full_protocol, steps_for, Baselines, CellResult, ProtocolOptions, ProtocolOutcome,
    StageResult, TrainingSchedule, BASELINE_BICUBIC, BASELINE_HR, BASELINE_LR, BASELINE_SRHR,
    DESK_SCALE_LOOKS, DESK_SCALE_PER_CLASS, SR_I_DEVIATION,
};
pub use sr::{run_sr_finetune, run_sr_inference, run_sr_pretrain, SrRun};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::models::{ClassifierConfig, SrModelConfig, StageTag};
use crate::nn::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Stage {
    SrI,
    SrPt,
    SrFt,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::SrI, Stage::SrPt, Stage::SrFt];

    pub fn tag(self) -> StageTag {
        match self {
            Stage::SrI => StageTag::SrI,
            Stage::SrPt => StageTag::SrPt,
            Stage::SrFt => StageTag::SrFt,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag().as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "SR_I" => Ok(Stage::SrI),
            "SR_PT" => Ok(Stage::SrPt),
            "SR_FT" => Ok(Stage::SrFt),
            _ => Err(Error::Config(format!("unknown stage {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageConfig {
    pub stage: Stage,
    pub loss: LossSpec,
    pub sr_model: SrModelConfig,
    pub classifier: ClassifierConfig,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init_checkpoint: Option<PathBuf>,
    /// Also update the guide classifier during merged-loss steps.
    pub joint_update: bool,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            stage: Stage::SrPt,
            loss: LossSpec::default(),
            sr_model: SrModelConfig::default(),
            classifier: ClassifierConfig::default(),
            learning_rate: 1e-4,
            epochs: 10,
            batch_size: 64,
            seed: 0,
            init_checkpoint: None,
            joint_update: false,
        }
    }
}

impl StageConfig {
    /// Every violated constraint, prefixed with its field name.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            v.push(format!(
                "learning_rate: must be > 0, got {}",
                self.learning_rate
            ));
        }
        if self.epochs < 1 {
            v.push("epochs: must be at least 1".into());
        }
        if self.batch_size < 1 {
            v.push("batch_size: must be at least 1".into());
        }
        if self.stage == Stage::SrFt && self.init_checkpoint.is_none() {
            v.push("init_checkpoint: required for SR_FT (an SR-PT checkpoint)".into());
        }
        v.extend(self.loss.violations());
        v.extend(self.sr_model.violations());
        v.extend(self.classifier.violations());
        v
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations() {
            v if v.is_empty() => Ok(()),
            v => Err(Error::Validation(v)),
        }
    }

    pub(crate) fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    /// Optimizer steps for `n_train` samples.
    pub fn total_steps(&self, n_train: usize) -> usize {
        steps_for(self.epochs, n_train, self.batch_size)
    }
}

/// Index batches of one epoch, shuffled by `rng`.
pub(crate) fn epoch_batches(
    n: usize,
    batch_size: usize,
    rng: &mut impl rand::Rng,
) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_training_settings() {
        let c = StageConfig::default();
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!(c.epochs, 10);
        assert_eq!(c.batch_size, 64);
        assert_eq!(c.total_steps(128), 20);
        assert_eq!(c.total_steps(600), 100);
        assert_eq!(c.total_steps(65), 20);
    }

    #[test]
    fn validation_names_every_field() {
        let c = StageConfig {
            stage: Stage::SrFt,
            learning_rate: 0.0,
            epochs: 0,
            batch_size: 0,
            ..Default::default()
        };
        let v = c.violations();
        for field in ["learning_rate", "epochs", "batch_size", "init_checkpoint"] {
            assert!(
                v.iter().any(|m| m.starts_with(field)),
                "{field} missing from {v:?}"
            );
        }
        assert!(matches!(c.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn stage_names() {
        assert_eq!("sr-pt".parse::<Stage>().unwrap(), Stage::SrPt);
        assert_eq!(Stage::SrFt.to_string(), "SR-FT");
        assert!("SR_X".parse::<Stage>().is_err());
    }
}
