use std::collections::BTreeMap;
use std::time::Instant;

use super::log::{EpochRecord, StepRecord, TrainLog};
use super::{epoch_batches, StageConfig};
use crate::data::{label_histogram, LabeledSample, ShipClass};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::LossValue;
use crate::metrics::{ClassificationMetrics, MetricReport};
use crate::models::{
    build_classifier, classifier_forward, images_to_tensor, Checkpoint, Classifier, Mode, Model,
};
use crate::nn::{Adam, Graph, Tensor};
use crate::seed::{indexed_rng, sub_seed};
use crate::NUM_CLASSES;

pub const CE_LOSS: &str = "ce_loss";

#[derive(Debug, Clone)]
pub struct ClassifierRun {
    pub checkpoint: Checkpoint,
    /// Validation report of the final epoch.
    pub report: MetricReport,
    pub log: TrainLog,
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy_with_grad(
    logits: &[[f64; NUM_CLASSES]],
    labels: &[usize],
) -> Result<(f64, Vec<[f64; NUM_CLASSES]>)> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logit rows for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let n = logits.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (row, &y) in logits.iter().zip(labels) {
        if y >= NUM_CLASSES {
            return Err(Error::Domain(format!("label {y} outside 0..{NUM_CLASSES}")));
        }
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        total += z.ln() + m - row[y];
        let mut g = [0.0; NUM_CLASSES];
        for (k, e) in exps.iter().enumerate() {
            g[k] = (e / z - f64::from(u8::from(k == y))) / n;
        }
        grads.push(g);
    }
    Ok((total / n, grads))
}

/// Arg-max class per image in eval mode.
pub fn predict(model: &Classifier, images: &[Image]) -> Result<Vec<usize>> {
    Ok(classifier_forward(model, images, Mode::Eval)?
        .iter()
        .map(|row| {
            (0..NUM_CLASSES)
                .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
                .expect("six classes")
        })
        .collect())
}

fn evaluate(model: &Classifier, val: &[LabeledSample]) -> Result<(f64, ClassificationMetrics)> {
    let images: Vec<Image> = val.iter().map(|s| s.image.clone()).collect();
    let labels: Vec<usize> = val.iter().map(|s| s.label).collect();
    let logits = classifier_forward(model, &images, Mode::Eval)?;
    let (loss, _) = cross_entropy_with_grad(&logits, &labels)?;
    let preds = predict(model, &images)?;
    Ok((loss, ClassificationMetrics::from_labels(&preds, &labels)?))
}

/// Trains every classifier layer with cross-entropy and reports macro-F1 on
/// `val` after the final epoch. Train and val must come from a single lineage.
pub fn train_classifier(
    config: &StageConfig,
    train: &[LabeledSample],
    val: &[LabeledSample],
) -> Result<ClassifierRun> {
    config.loss.validate()?;
    config.classifier.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Training(
            "classifier training needs non-empty train and val sets".into(),
        ));
    }
    let absent: Vec<&str> = label_histogram(train)
        .iter()
        .zip(ShipClass::ALL)
        .filter(|(n, _)| **n == 0)
        .map(|(_, c)| c.name())
        .collect();
    if !absent.is_empty() {
        return Err(Error::Training(format!(
            "classes absent from training data: {}",
            absent.join(", ")
        )));
    }
    let lineage = train[0].lineage;
    if let Some(s) = train.iter().chain(val).find(|s| s.lineage != lineage) {
        return Err(Error::Training(format!(
            "mixed data lineage: expected {lineage}, found {}",
            s.lineage
        )));
    }

    let init_seed = sub_seed(config.seed, "classifier_init");
    let shuffle_seed = sub_seed(config.seed, "classifier_shuffle");
    let dropout_seed = sub_seed(config.seed, "classifier_dropout");
    let mut model = build_classifier(&config.classifier, init_seed)?;
    let mut log = TrainLog::new(
        format!("classifier[{lineage}]"),
        BTreeMap::from([
            ("master".into(), config.seed),
            ("init".into(), init_seed),
            ("shuffle".into(), shuffle_seed),
            ("dropout".into(), dropout_seed),
        ]),
    );
    let mut adam = Adam::new(config.adam(), model.params().tensors());
    let mut report = MetricReport::default();
    let mut step = 0;
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut rng = indexed_rng(shuffle_seed, epoch as u64);
        for idx in epoch_batches(train.len(), config.batch_size, &mut rng) {
            step += 1;
            let images: Vec<Image> = idx.iter().map(|&i| train[i].image.clone()).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| train[i].label).collect();
            let mut g = Graph::new();
            let p = model.params().bind(&mut g, true);
            let x = g.leaf(images_to_tensor(&images)?, false);
            let mode = Mode::Train {
                seed: dropout_seed.wrapping_add(step as u64),
            };
            let y = model.forward_graph(&mut g, &p, x, mode)?;
            let logits: Vec<[f64; NUM_CLASSES]> = g
                .value(y)
                .data()
                .chunks(NUM_CLASSES)
                .map(|r| std::array::from_fn(|k| f64::from(r[k])))
                .collect();
            let (loss, grad) = cross_entropy_with_grad(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, step {step}"
                )));
            }
            let seed = Tensor::new(
                vec![labels.len(), NUM_CLASSES],
                grad.iter().flatten().map(|&v| v as f32).collect(),
            )?;
            let mut grads = g.backward(vec![(y, seed)])?;
            let pg: Vec<Tensor> = p
                .iter()
                .zip(model.params().tensors())
                .map(|(&id, t)| grads.take(id).unwrap_or_else(|| Tensor::zeros(t.shape())))
                .collect();
            adam.step(model.params_mut().tensors_mut(), &pg)?;
            log.steps.push(StepRecord {
                epoch,
                step,
                loss: LossValue::weighted(&[(CE_LOSS, 1.0, loss)]),
            });
        }
        let (val_loss, metrics) = evaluate(&model, val)?;
        log::info!(
            "classifier epoch {epoch}/{}: val ce {val_loss:.4} macro-F1 {:.4}",
            config.epochs,
            metrics.macro_f1
        );
        report = MetricReport {
            classification: Some(metrics),
            ..Default::default()
        };
        log.epochs.push(EpochRecord {
            epoch,
            shuffle_seed,
            train_loss_mean: log.epoch_mean(epoch).unwrap_or(f64::NAN),
            val_loss,
            val: report.clone(),
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(ClassifierRun {
        checkpoint: Checkpoint::from_classifier(&model),
        report,
        log,
    })
}
