use std::collections::BTreeMap;
use std::time::Instant;

use super::log::{EpochRecord, StepRecord, TrainLog};
use super::{epoch_batches, Stage, StageConfig};
use crate::data::PairedSample;
use crate::error::{Error, Result};
use crate::image::{Grid, Image};
use crate::losses::{classification_loss_with_grad, merged_loss, LossValue};
use crate::metrics::MetricReport;
use crate::models::{
    build_sr_model, classifier_forward, images_to_tensor, sr_forward, tensor_to_images, Checkpoint,
    Classifier, Mode, Model, SrModel, StageTag,
};
use crate::nn::{Adam, Graph, Tensor};
use crate::seed::{indexed_rng, sub_seed};

/// Result of an SR stage: weights, per-step log, and validation outputs of
/// the kept weights.
#[derive(Debug, Clone)]
pub struct SrRun {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

fn lr_batch(pairs: &[PairedSample]) -> Vec<Image> {
    pairs.iter().map(|p| p.lr.clone()).collect()
}

fn hr_batch(pairs: &[PairedSample]) -> Vec<Image> {
    pairs.iter().map(|p| p.hr.clone()).collect()
}

fn grids_to_tensor(grads: &[Grid], peak: f64) -> Result<Tensor> {
    let (h, w) = grads[0].dims();
    let data = grads
        .iter()
        .flat_map(|g| g.as_slice().iter().map(move |v| (v * peak) as f32))
        .collect();
    Tensor::new(vec![grads.len(), 1, h, w], data)
}

fn logit_rows(t: &Tensor) -> Vec<Vec<f64>> {
    t.data()
        .chunks(crate::NUM_CLASSES)
        .map(|r| r.iter().map(|&v| f64::from(v)).collect())
        .collect()
}

/// Super-resolves every LR input with the given model and scores it against
/// HR. Parameters are never touched.
pub fn run_sr_inference(
    model: &SrModel,
    pairs: &[PairedSample],
    epsilon: f64,
) -> Result<(Vec<Image>, MetricReport)> {
    let sr = sr_forward(model, &lr_batch(pairs))?;
    let report = MetricReport::image_quality(&sr, &hr_batch(pairs), epsilon)?;
    Ok((sr, report))
}

/// Loss of `model` on `pairs`, with the classification term when a guide is given.
fn validation_loss(
    cfg: &StageConfig,
    model: &SrModel,
    guide: Option<&Classifier>,
    pairs: &[PairedSample],
) -> Result<(LossValue, MetricReport)> {
    let sr = sr_forward(model, &lr_batch(pairs))?;
    let hr = hr_batch(pairs);
    let sr_loss = cfg.loss.evaluate(&sr, &hr)?;
    let report = MetricReport::image_quality(&sr, &hr, cfg.loss.epsilon)?;
    let loss = match guide {
        Some(g) => {
            let to_vec = |v: Vec<[f64; 6]>| v.into_iter().map(|r| r.to_vec()).collect::<Vec<_>>();
            let out_sr = to_vec(classifier_forward(g, &sr, Mode::Eval)?);
            let out_hr = to_vec(classifier_forward(g, &hr, Mode::Eval)?);
            let cls = classification_loss_with_grad(&out_sr, &out_hr)?.0;
            merged_loss(&sr_loss, &cls)?
        }
        None => sr_loss,
    };
    Ok((loss, report))
}

/// Shared SR optimisation loop. With a guide classifier each step minimises
/// `sr_loss + cls_loss`; otherwise the configured SR criterion alone.
fn train_sr(
    cfg: &StageConfig,
    mut model: SrModel,
    mut guide: Option<Classifier>,
    train: &[PairedSample],
    val: &[PairedSample],
    tag: StageTag,
) -> Result<SrRun> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Training(
            "SR training needs non-empty train and val sets".into(),
        ));
    }
    let shuffle_seed = sub_seed(cfg.seed, "shuffle");
    let seeds = BTreeMap::from([
        ("master".to_string(), cfg.seed),
        ("init".to_string(), model.seed()),
        ("shuffle".to_string(), shuffle_seed),
    ]);
    let mut log = TrainLog::new(tag.as_str(), seeds);
    let mut adam = Adam::new(cfg.adam(), model.params().tensors());
    let joint = cfg.joint_update && guide.is_some();
    let mut guide_adam = match (&guide, joint) {
        (Some(g), true) => Some(Adam::new(cfg.adam(), g.params().tensors())),
        _ => None,
    };
    let mut best: Option<(f64, usize, SrModel)> = None;
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut rng = indexed_rng(shuffle_seed, epoch as u64);
        for idx in epoch_batches(train.len(), cfg.batch_size, &mut rng) {
            step += 1;
            let batch: Vec<PairedSample> = idx.iter().map(|&i| train[i].clone()).collect();
            let hr = hr_batch(&batch);
            let peak = hr[0].peak();
            let x = images_to_tensor(&lr_batch(&batch))?;
            let skip = crate::models::bicubic_skip(&x, model.scale())?;

            let mut g = Graph::new();
            let p = model.params().bind(&mut g, true);
            let xn = g.leaf(x, false);
            let sn = g.leaf(skip, false);
            let y = model.forward_graph(&mut g, &p, xn, sn)?;
            let sr = tensor_to_images(g.value(y), peak)?;
            let (sr_loss, sr_grads) = cfg.loss.evaluate_with_grad(&sr, &hr)?;
            let mut seeds = vec![(y, grids_to_tensor(&sr_grads, peak)?)];

            let mut guide_nodes = Vec::new();
            let loss = match &guide {
                Some(cls) => {
                    let out_hr: Vec<Vec<f64>> = classifier_forward(cls, &hr, Mode::Eval)?
                        .into_iter()
                        .map(|r| r.to_vec())
                        .collect();
                    guide_nodes = cls.params().bind(&mut g, joint);
                    let logits = cls.forward_graph(&mut g, &guide_nodes, y, Mode::Eval)?;
                    let out_sr = logit_rows(g.value(logits));
                    let (cls_loss, cls_grads) = classification_loss_with_grad(&out_sr, &out_hr)?;
                    let flat: Vec<f32> = cls_grads.iter().flatten().map(|&v| v as f32).collect();
                    seeds.push((
                        logits,
                        Tensor::new(vec![out_sr.len(), crate::NUM_CLASSES], flat)?,
                    ));
                    merged_loss(&sr_loss, &cls_loss)?
                }
                None => sr_loss,
            };
            if loss.ensure_finite().is_err() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, step {step}: {:?}",
                    loss.components
                )));
            }

            let mut grads = g.backward(seeds)?;
            let sr_grads: Vec<Tensor> = p
                .iter()
                .zip(model.params().tensors())
                .map(|(&id, t)| grads.take(id).unwrap_or_else(|| Tensor::zeros(t.shape())))
                .collect();
            adam.step(model.params_mut().tensors_mut(), &sr_grads)?;
            if let (Some(opt), Some(cls)) = (guide_adam.as_mut(), guide.as_mut()) {
                let cg: Vec<Tensor> = guide_nodes
                    .iter()
                    .zip(cls.params().tensors())
                    .map(|(&id, t)| grads.take(id).unwrap_or_else(|| Tensor::zeros(t.shape())))
                    .collect();
                opt.step(cls.params_mut().tensors_mut(), &cg)?;
            }
            log.steps.push(StepRecord { epoch, step, loss });
        }

        let (val_loss, val) = validation_loss(cfg, &model, guide.as_ref(), val)?;
        let train_loss_mean = log.epoch_mean(epoch).unwrap_or(f64::NAN);
        log::info!(
            "{tag} epoch {epoch}/{}: train {train_loss_mean:.5} val {:.5} psnr {:.3}",
            cfg.epochs,
            val_loss.total,
            val.psnr_db.unwrap_or(f64::NAN)
        );
        log.epochs.push(EpochRecord {
            epoch,
            shuffle_seed,
            train_loss_mean,
            val_loss: val_loss.total,
            val,
            seconds: started.elapsed().as_secs_f64(),
        });
        if best.as_ref().is_none_or(|(b, _, _)| val_loss.total < *b) {
            best = Some((val_loss.total, epoch, model.clone()));
        }
    }
    let (_, best_epoch, kept) = best.expect("at least one epoch");
    log.best_epoch = Some(best_epoch);
    Ok(SrRun {
        checkpoint: Checkpoint::from_sr(&kept, tag),
        log,
    })
}

/// Image-quality pretraining from a fresh model (or `config.init_checkpoint`
/// loaded by the caller into `init`).
pub fn run_sr_pretrain(
    config: &StageConfig,
    init: Option<&Checkpoint>,
    train: &[PairedSample],
    val: &[PairedSample],
) -> Result<SrRun> {
    config.validate()?;
    if config.stage != Stage::SrPt {
        return Err(Error::Config(format!(
            "expected stage SR_PT, got {}",
            config.stage
        )));
    }
    let model = match init {
        Some(ck) => ck.to_sr()?,
        None => build_sr_model(&config.sr_model, sub_seed(config.seed, "init"))?,
    };
    if model.config() != &config.sr_model {
        return Err(Error::Checkpoint(
            "init checkpoint topology differs from sr_model".into(),
        ));
    }
    train_sr(config, model, None, train, val, StageTag::SrPt)
}

/// Merged-loss fine-tuning from an SR-PT checkpoint, guided by a classifier
/// trained on HR images. The guide passed in is never modified.
pub fn run_sr_finetune(
    config: &StageConfig,
    init: &Checkpoint,
    train: &[PairedSample],
    val: &[PairedSample],
    guide: &Classifier,
) -> Result<SrRun> {
    let mut cfg = config.clone();
    // the checkpoint is supplied directly, so the path requirement is moot here
    if cfg.init_checkpoint.is_none() {
        cfg.init_checkpoint = Some("<in-memory>".into());
    }
    cfg.validate()?;
    if cfg.stage != Stage::SrFt {
        return Err(Error::Config(format!(
            "expected stage SR_FT, got {}",
            cfg.stage
        )));
    }
    if init.stage != StageTag::SrPt {
        return Err(Error::Checkpoint(format!(
            "fine-tuning needs an SR-PT checkpoint, got {}",
            init.stage
        )));
    }
    let model = init.to_sr()?;
    train_sr(&cfg, model, Some(guide.clone()), train, val, StageTag::SrFt)
}
