use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossValue;
use crate::metrics::MetricReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based epoch.
    pub epoch: usize,
    /// 1-based global optimizer step.
    pub step: usize,
    pub loss: LossValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Batches were drawn from stream `epoch` of this seed.
    pub shuffle_seed: u64,
    pub train_loss_mean: f64,
    pub val_loss: f64,
    pub val: MetricReport,
    pub seconds: f64,
}

/// Everything a training run emits, in order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub stage: String,
    pub seeds: BTreeMap<String, u64>,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept, when selection applies.
    pub best_epoch: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
enum Line {
    Header {
        stage: String,
        seeds: BTreeMap<String, u64>,
    },
    Step(StepRecord),
    Epoch(EpochRecord),
    Summary {
        best_epoch: Option<usize>,
    },
}

impl TrainLog {
    pub fn new(stage: impl Into<String>, seeds: BTreeMap<String, u64>) -> Self {
        Self {
            stage: stage.into(),
            seeds,
            ..Self::default()
        }
    }

    /// Mean of step totals within `epoch`.
    pub fn epoch_mean(&self, epoch: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .steps
            .iter()
            .filter(|s| s.epoch == epoch)
            .map(|s| s.loss.total)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Per-epoch means of every loss component, keyed by component name.
    pub fn component_means(&self) -> BTreeMap<String, Vec<f64>> {
        let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for e in self.epochs.iter().map(|e| e.epoch) {
            let steps: Vec<&StepRecord> = self.steps.iter().filter(|s| s.epoch == e).collect();
            let names = steps.iter().flat_map(|s| s.loss.components.keys());
            for name in names.cloned().collect::<std::collections::BTreeSet<_>>() {
                let v: Vec<f64> = steps
                    .iter()
                    .filter_map(|s| s.loss.component(&name))
                    .collect();
                out.entry(name)
                    .or_default()
                    .push(v.iter().sum::<f64>() / v.len() as f64);
            }
        }
        out
    }

    /// Checks one record per step with increasing `(epoch, step)`.
    pub fn check_ordering(&self) -> Result<()> {
        for (i, w) in self.steps.windows(2).enumerate() {
            if w[1].step != w[0].step + 1 || w[1].epoch < w[0].epoch {
                return Err(Error::Training(format!(
                    "log out of order at record {}",
                    i + 1
                )));
            }
        }
        match self.steps.first() {
            Some(s) if s.step != 1 => Err(Error::Training("log does not start at step 1".into())),
            _ => Ok(()),
        }
    }

    /// Writes line-delimited JSON: header, steps and epochs interleaved in
    /// training order, then a summary.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        let mut put = |line: &Line| -> Result<()> {
            serde_json::to_writer(&mut out, line)?;
            out.write_all(b"\n")?;
            Ok(())
        };
        put(&Line::Header {
            stage: self.stage.clone(),
            seeds: self.seeds.clone(),
        })?;
        let mut epochs = self.epochs.iter().peekable();
        for s in &self.steps {
            while let Some(e) = epochs.next_if(|e| e.epoch < s.epoch) {
                put(&Line::Epoch(e.clone()))?;
            }
            put(&Line::Step(s.clone()))?;
        }
        for e in epochs {
            put(&Line::Epoch(e.clone()))?;
        }
        put(&Line::Summary {
            best_epoch: self.best_epoch,
        })?;
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::File {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut log = TrainLog::default();
        for line in BufReader::new(f).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Line>(&line)? {
                Line::Header { stage, seeds } => {
                    log.stage = stage;
                    log.seeds = seeds;
                }
                Line::Step(s) => log.steps.push(s),
                Line::Epoch(e) => log.epochs.push(e),
                Line::Summary { best_epoch } => log.best_epoch = best_epoch,
            }
        }
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TrainLog {
        let mut log = TrainLog::new("SR-PT", BTreeMap::from([("shuffle".into(), 3)]));
        for step in 1..=4usize {
            log.steps.push(StepRecord {
                epoch: step.div_ceil(2),
                step,
                loss: LossValue::weighted(&[("l1", 1.0, 0.1 * step as f64)]),
            });
        }
        for epoch in 1..=2 {
            log.epochs.push(EpochRecord {
                epoch,
                shuffle_seed: epoch as u64,
                train_loss_mean: log.epoch_mean(epoch).unwrap(),
                val_loss: 0.5,
                val: MetricReport::default(),
                seconds: 0.0,
            });
        }
        log.best_epoch = Some(2);
        log
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let log = sample();
        log.write_jsonl(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1 + 4 + 2 + 1);
        assert_eq!(TrainLog::read_jsonl(&path).unwrap(), log);
    }

    #[test]
    fn epoch_means_and_ordering() {
        let mut log = sample();
        assert!((log.epoch_mean(1).unwrap() - 0.15).abs() < 1e-12);
        assert_eq!(log.epoch_mean(3), None);
        log.check_ordering().unwrap();
        log.steps.swap(1, 2);
        assert!(log.check_ordering().is_err());
    }
}
