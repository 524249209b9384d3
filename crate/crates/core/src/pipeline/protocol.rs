//! The full SR-I → SR-PT → SR-FT sweep over a (family × loss) grid, with
//! LR / HR / bicubic baselines and per-cell persistence.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::classify::train_classifier;
use super::sr::{run_sr_finetune, run_sr_inference, run_sr_pretrain};
use super::{Stage, StageConfig};
use crate::data::{make_pairs, LabeledSample, Lineage, PairedSample, SCALE};
use crate::error::{Error, Result};
use crate::evaluation::{error_map, CellFailure, ProtocolReport, ReportMetadata, ReportRow};
use crate::image::Image;
use crate::losses::{LossKind, LossSpec};
use crate::metrics::mean_psnr;
use crate::models::{
    build_sr_model, sr_forward, Checkpoint, Classifier, ClassifierConfig, SrFamily, SrModel,
    SrModelConfig, StageTag,
};
use crate::resample::{upsample, upsample_nearest};
use crate::seed::sub_seed;

pub const BASELINE_LR: &str = "LR";
pub const BASELINE_HR: &str = "HR";
pub const BASELINE_SRHR: &str = "SRHR";
pub const BASELINE_BICUBIC: &str = "BICUBIC";

/// Speckle looks of the desk-scale synthetic data. At 4 looks the per-pixel
/// speckle leaves almost no headroom over bicubic for any 2x model.
pub const DESK_SCALE_LOOKS: u32 = 64;
/// Samples per class of the desk-scale data (600 train / 150 test after an 80/20 split).
pub const DESK_SCALE_PER_CLASS: usize = 125;

pub const SR_I_DEVIATION: &str =
    "SR-I uses freshly initialised lite SR weights (no externally pretrained \
    SR model); the SRHR column reports these SR-I outputs computed from the LR member of each pair";

const DEVIATIONS: [&str; 4] = [
    SR_I_DEVIATION,
    "SR best-epoch selection uses the held-out test split as validation split",
    "classifier macro-F1 is taken from the final epoch",
    "the LR baseline classifier sees LR images replicated to 64x64 by nearest neighbour",
];

/// Optimizer schedule shared by every classifier the protocol trains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSchedule {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 10,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolOptions {
    /// SR training settings. `stage`, `loss.kind` and `sr_model.family` are
    /// replaced per grid cell.
    pub base: StageConfig,
    pub families: Vec<SrFamily>,
    pub losses: Vec<LossKind>,
    pub classifier_schedule: TrainingSchedule,
    pub workers: usize,
    /// Test images per stage that get an error map on disk.
    pub error_maps: usize,
    /// Recompute cells even when their results are already on disk.
    #[serde(skip)]
    pub force: bool,
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        Self {
            base: StageConfig::default(),
            families: vec![SrFamily::CarnLite],
            losses: vec![LossKind::Combo],
            classifier_schedule: TrainingSchedule::default(),
            workers: 1,
            error_maps: 4,
            force: false,
            out_dir: None,
        }
    }
}

impl ProtocolOptions {
    /// The reduced-size configuration of the desk-scale synthetic experiment:
    /// 16-channel CARN-lite and RCAN-lite, Combo loss, a 512-unit classifier
    /// head, paper optimizer settings.
    pub fn desk_scale(seed: u64) -> Self {
        Self {
            base: StageConfig {
                sr_model: SrModelConfig {
                    channels: 16,
                    ..Default::default()
                },
                classifier: ClassifierConfig {
                    head_hidden: 512,
                    ..Default::default()
                },
                seed,
                ..Default::default()
            },
            families: vec![SrFamily::CarnLite, SrFamily::RcanLite],
            losses: vec![LossKind::Combo],
            ..Default::default()
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.families.is_empty() {
            v.push("families: grid needs at least one SR family".into());
        }
        if self.losses.is_empty() {
            v.push("losses: grid needs at least one loss".into());
        }
        if self.workers < 1 {
            v.push("workers: must be at least 1".into());
        }
        let s = &self.classifier_schedule;
        if !(s.learning_rate.is_finite() && s.learning_rate > 0.0) {
            v.push(format!(
                "classifier_schedule.learning_rate: must be > 0, got {}",
                s.learning_rate
            ));
        }
        if s.epochs < 1 {
            v.push("classifier_schedule.epochs: must be at least 1".into());
        }
        if s.batch_size < 1 {
            v.push("classifier_schedule.batch_size: must be at least 1".into());
        }
        let mut base = self.base.clone();
        base.stage = Stage::SrPt;
        v.extend(base.violations());
        v
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations() {
            v if v.is_empty() => Ok(()),
            v => Err(Error::Validation(v)),
        }
    }

    /// Total optimizer steps of one full run on `n_train` samples.
    pub fn total_steps(&self, n_train: usize) -> usize {
        let sr = steps_for(self.base.epochs, n_train, self.base.batch_size);
        let s = &self.classifier_schedule;
        let cls = steps_for(s.epochs, n_train, s.batch_size);
        let cells = self.families.len() * self.losses.len();
        // HR + LR baselines, one SR-I classifier per family, then PT and FT per cell
        cls * (2 + self.families.len()) + cells * 2 * (sr + cls)
    }

    fn sr_config(&self, family: SrFamily, loss: LossKind, stage: Stage) -> StageConfig {
        StageConfig {
            stage,
            loss: LossSpec {
                kind: loss,
                ..self.base.loss
            },
            sr_model: SrModelConfig {
                family,
                ..self.base.sr_model.clone()
            },
            ..self.base.clone()
        }
    }

    fn classifier_config(&self) -> StageConfig {
        let s = self.classifier_schedule;
        StageConfig {
            learning_rate: s.learning_rate,
            epochs: s.epochs,
            batch_size: s.batch_size,
            init_checkpoint: None,
            ..self.base.clone()
        }
    }
}

/// Optimizer steps of `epochs` passes over `n` samples in batches of `batch`.
pub fn steps_for(epochs: usize, n: usize, batch: usize) -> usize {
    if batch == 0 {
        return 0;
    }
    epochs * n.div_ceil(batch)
}

/// Metrics of one stage, plus enough provenance to trace them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: Stage,
    pub psnr: f64,
    pub ssim: f64,
    pub macro_f1: f64,
    pub sr_digest: String,
    pub classifier_digest: String,
    /// Per-epoch mean training loss of the SR stage (empty for SR-I).
    pub train_loss_means: Vec<f64>,
    /// Per-epoch means of each named loss component, e.g. `sr` and `cls` for SR-FT.
    #[serde(default)]
    pub component_means: BTreeMap<String, Vec<f64>>,
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub family: SrFamily,
    pub loss: LossKind,
    /// SR-I, SR-PT, SR-FT in that order.
    pub stages: Vec<StageResult>,
}

impl CellResult {
    pub fn stage(&self, stage: Stage) -> Option<&StageResult> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    /// `F1(SR-FT) − F1(SR-PT)`.
    pub fn f1_improvement(&self) -> Option<f64> {
        Some(self.stage(Stage::SrFt)?.macro_f1 - self.stage(Stage::SrPt)?.macro_f1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub hr_f1: f64,
    pub lr_f1: f64,
    pub bicubic_psnr: f64,
    pub bicubic_ssim: f64,
    pub guide_digest: String,
    pub lr_classifier_digest: String,
}

#[derive(Debug, Clone)]
pub struct ProtocolOutcome {
    pub report: ProtocolReport,
    pub baselines: Baselines,
    pub sr_i: BTreeMap<SrFamily, StageResult>,
    pub cells: Vec<CellResult>,
}

impl ProtocolOutcome {
    pub fn cell(&self, family: SrFamily, loss: LossKind) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.family == family && c.loss == loss)
    }

    pub fn has_failures(&self) -> bool {
        !self.report.failures.is_empty()
    }
}

struct Data {
    train: Vec<PairedSample>,
    test: Vec<PairedSample>,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Option<T> {
    let text = fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    // write-then-rename so an interrupted run never leaves a half file that looks finished
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_string_pretty(value)?)?;
    fs::rename(tmp, path)?;
    Ok(())
}

fn labeled(
    images: Vec<Image>,
    pairs: &[PairedSample],
    lineage: Lineage,
) -> Result<Vec<LabeledSample>> {
    images
        .into_iter()
        .zip(pairs)
        .map(|(img, p)| LabeledSample::new(img, p.label, lineage))
        .collect()
}

fn save_error_maps(dir: &Path, sr: &[Image], pairs: &[PairedSample], n: usize) -> Result<()> {
    for (i, (s, p)) in sr.iter().zip(pairs).take(n).enumerate() {
        let m = error_map(&p.hr, s)?;
        m.save_png(&dir.join(format!("{i:03}.png")))?;
        m.save_json(&dir.join(format!("{i:03}.json")))?;
    }
    Ok(())
}

/// SR outputs of `model` for both splits, scored on test, then a fresh
/// classifier trained on the SR training outputs only.
fn evaluate_stage(
    opts: &ProtocolOptions,
    model: &SrModel,
    stage: Stage,
    data: &Data,
    dir: Option<&Path>,
) -> Result<(StageResult, Checkpoint)> {
    let lineage = Lineage::SuperResolved(stage.tag());
    let train_lr: Vec<Image> = data.train.iter().map(|p| p.lr.clone()).collect();
    let sr_train = sr_forward(model, &train_lr)?;
    let (sr_test, quality) = run_sr_inference(model, &data.test, opts.base.loss.epsilon)?;
    if let Some(dir) = dir {
        save_error_maps(
            &dir.join("error_maps").join(stage.tag().as_str()),
            &sr_test,
            &data.test,
            opts.error_maps,
        )?;
    }
    let train = labeled(sr_train, &data.train, lineage)?;
    let test = labeled(sr_test, &data.test, lineage)?;
    let run = train_classifier(&opts.classifier_config(), &train, &test)?;
    if let Some(dir) = dir {
        run.log
            .write_jsonl(&dir.join(format!("classifier_{}.jsonl", stage.tag())))?;
    }
    let result = StageResult {
        stage,
        psnr: quality.psnr_db.unwrap_or(f64::NAN),
        ssim: quality.ssim.unwrap_or(f64::NAN),
        macro_f1: run.report.macro_f1().unwrap_or(f64::NAN),
        sr_digest: crate::models::parameters(model).digest(),
        classifier_digest: run.checkpoint.params.digest(),
        train_loss_means: Vec::new(),
        component_means: BTreeMap::new(),
        best_epoch: None,
    };
    Ok((result, run.checkpoint))
}

fn run_baselines(
    opts: &ProtocolOptions,
    data: &Data,
    hr_train: &[LabeledSample],
    hr_test: &[LabeledSample],
) -> Result<(Baselines, Classifier)> {
    let dir = opts.out_dir.as_ref().map(|d| d.join("baselines"));
    if let (Some(dir), false) = (&dir, opts.force) {
        let cached = read_json::<Baselines>(&dir.join("baselines.json"));
        if let (Some(b), Ok(ck)) = (cached, Checkpoint::load(&dir.join("guide.ckpt"))) {
            let guide = ck.to_classifier()?;
            if ck.params.digest() == b.guide_digest {
                log::info!("baselines already on disk, skipping");
                return Ok((b, guide));
            }
        }
    }
    let cfg = opts.classifier_config();
    log::info!("training HR classifier (guide)");
    let hr = train_classifier(&cfg, hr_train, hr_test)?;

    log::info!("training LR classifier");
    let replicate = |pairs: &[PairedSample]| -> Result<Vec<LabeledSample>> {
        let imgs = pairs
            .iter()
            .map(|p| upsample_nearest(&p.lr, SCALE))
            .collect::<Result<Vec<_>>>()?;
        labeled(imgs, pairs, Lineage::LrReplicated)
    };
    let lr = train_classifier(&cfg, &replicate(&data.train)?, &replicate(&data.test)?)?;

    let bicubic = data
        .test
        .iter()
        .map(|p| upsample(&p.lr, SCALE))
        .collect::<Result<Vec<_>>>()?;
    let hr_imgs: Vec<Image> = data.test.iter().map(|p| p.hr.clone()).collect();
    let baselines = Baselines {
        hr_f1: hr.report.macro_f1().unwrap_or(f64::NAN),
        lr_f1: lr.report.macro_f1().unwrap_or(f64::NAN),
        bicubic_psnr: mean_psnr(&bicubic, &hr_imgs, opts.base.loss.epsilon)?,
        bicubic_ssim: crate::metrics::mean_ssim(&bicubic, &hr_imgs)?,
        guide_digest: hr.checkpoint.params.digest(),
        lr_classifier_digest: lr.checkpoint.params.digest(),
    };
    if let Some(dir) = dir {
        hr.checkpoint.save(&dir.join("guide.ckpt"))?;
        lr.checkpoint.save(&dir.join("lr_classifier.ckpt"))?;
        hr.log.write_jsonl(&dir.join("classifier_HR.jsonl"))?;
        lr.log.write_jsonl(&dir.join("classifier_LR.jsonl"))?;
        save_error_maps(
            &dir.join("error_maps").join(BASELINE_BICUBIC),
            &bicubic,
            &data.test,
            opts.error_maps,
        )?;
        write_json(&dir.join("baselines.json"), &baselines)?;
    }
    Ok((baselines, hr.checkpoint.to_classifier()?))
}

fn run_sr_i(opts: &ProtocolOptions, family: SrFamily, data: &Data) -> Result<StageResult> {
    let dir = opts
        .out_dir
        .as_ref()
        .map(|d| d.join("sr_i").join(family.as_str()));
    if let (Some(dir), false) = (&dir, opts.force) {
        if let Some(r) = read_json::<StageResult>(&dir.join("result.json")) {
            log::info!("{family} SR-I already on disk, skipping");
            return Ok(r);
        }
    }
    let cfg = opts.sr_config(family, opts.base.loss.kind, Stage::SrI);
    // the same initial weights SR-PT starts from
    let model = build_sr_model(&cfg.sr_model, sub_seed(cfg.seed, "init"))?;
    log::info!("{family} SR-I");
    let (result, _) = evaluate_stage(opts, &model, Stage::SrI, data, dir.as_deref())?;
    if let Some(dir) = dir {
        Checkpoint::from_sr(&model, StageTag::SrI).save(&dir.join("sr_i.ckpt"))?;
        write_json(&dir.join("result.json"), &result)?;
    }
    Ok(result)
}

fn cell_dir(opts: &ProtocolOptions, family: SrFamily, loss: LossKind) -> Option<PathBuf> {
    opts.out_dir
        .as_ref()
        .map(|d| d.join("cells").join(format!("{family}__{loss}")))
}

fn run_cell(
    opts: &ProtocolOptions,
    family: SrFamily,
    loss: LossKind,
    sr_i: &StageResult,
    guide: &Classifier,
    data: &Data,
) -> Result<CellResult> {
    let dir = cell_dir(opts, family, loss);
    if let (Some(dir), false) = (&dir, opts.force) {
        if let Some(c) = read_json::<CellResult>(&dir.join("cell.json")) {
            log::info!("{family}/{loss} already on disk, skipping");
            return Ok(c);
        }
    }
    log::info!("{family}/{loss} SR-PT");
    let pt_cfg = opts.sr_config(family, loss, Stage::SrPt);
    let pt = run_sr_pretrain(&pt_cfg, None, &data.train, &data.test)?;
    let pt_model = pt.checkpoint.to_sr()?;
    let (mut pt_result, _) = evaluate_stage(opts, &pt_model, Stage::SrPt, data, dir.as_deref())?;
    pt_result.train_loss_means = pt.log.epochs.iter().map(|e| e.train_loss_mean).collect();
    pt_result.component_means = pt.log.component_means();
    pt_result.best_epoch = pt.log.best_epoch;

    log::info!("{family}/{loss} SR-FT");
    let mut ft_cfg = opts.sr_config(family, loss, Stage::SrFt);
    ft_cfg.init_checkpoint = Some(
        dir.as_ref()
            .map_or_else(|| PathBuf::from("<in-memory>"), |d| d.join("sr_pt.ckpt")),
    );
    if let Some(dir) = &dir {
        pt.checkpoint.save(&dir.join("sr_pt.ckpt"))?;
        pt.log.write_jsonl(&dir.join("sr_pt.jsonl"))?;
    }
    let ft = run_sr_finetune(&ft_cfg, &pt.checkpoint, &data.train, &data.test, guide)?;
    let ft_model = ft.checkpoint.to_sr()?;
    let (mut ft_result, _) = evaluate_stage(opts, &ft_model, Stage::SrFt, data, dir.as_deref())?;
    ft_result.train_loss_means = ft.log.epochs.iter().map(|e| e.train_loss_mean).collect();
    ft_result.component_means = ft.log.component_means();
    ft_result.best_epoch = ft.log.best_epoch;

    let cell = CellResult {
        family,
        loss,
        stages: vec![sr_i.clone(), pt_result, ft_result],
    };
    if let Some(dir) = &dir {
        ft.checkpoint.save(&dir.join("sr_ft.ckpt"))?;
        ft.log.write_jsonl(&dir.join("sr_ft.jsonl"))?;
        write_json(&dir.join("stage_config_pt.json"), &pt_cfg)?;
        write_json(&dir.join("stage_config_ft.json"), &ft_cfg)?;
        write_json(&dir.join("cell.json"), &cell)?;
    }
    Ok(cell)
}

/// Runs `f` over `jobs` on up to `workers` threads; results keep job order.
fn run_pool<T: Send, R: Send>(workers: usize, jobs: Vec<T>, f: impl Fn(T) -> R + Sync) -> Vec<R> {
    let n = jobs.len();
    let queue = Mutex::new(jobs.into_iter().enumerate().collect::<VecDeque<_>>());
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let Some((i, job)) = queue.lock().expect("queue lock").pop_front() else {
                    break;
                };
                let r = f(job);
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

fn stage_row(family: SrFamily, loss: Option<LossKind>, stage: &str, r: &StageResult) -> ReportRow {
    ReportRow {
        family: Some(family.to_string()),
        loss: loss.map(|l| l.to_string()),
        stage: stage.into(),
        psnr: Some(r.psnr),
        ssim: Some(r.ssim),
        macro_f1: Some(r.macro_f1),
    }
}

/// Runs baselines, SR-I per family and SR-PT/SR-FT per grid cell on HR
/// `train`/`test` samples. Cell failures are recorded in the report rather
/// than aborting the sweep; baseline and SR-I failures abort.
pub fn run_full_protocol(
    opts: &ProtocolOptions,
    train: &[LabeledSample],
    test: &[LabeledSample],
) -> Result<ProtocolOutcome> {
    opts.validate()?;
    if let Some(s) = train.iter().chain(test).find(|s| s.lineage != Lineage::Hr) {
        return Err(Error::Training(format!(
            "protocol expects HR samples, found {}",
            s.lineage
        )));
    }
    let data = Data {
        train: make_pairs(train)?,
        test: make_pairs(test)?,
    };
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("protocol_options.json"), opts)?;
    }

    let (baselines, guide) = run_baselines(opts, &data, train, test)?;

    let mut families = opts.families.clone();
    families.sort();
    families.dedup();
    let sr_i: BTreeMap<SrFamily, StageResult> = run_pool(opts.workers, families.clone(), |f| {
        run_sr_i(opts, f, &data).map(|r| (f, r))
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let mut losses = opts.losses.clone();
    losses.sort();
    losses.dedup();
    let jobs: Vec<(SrFamily, LossKind)> = families
        .iter()
        .flat_map(|&f| losses.iter().map(move |&l| (f, l)))
        .collect();
    let outcomes = run_pool(opts.workers, jobs.clone(), |(f, l)| {
        run_cell(opts, f, l, &sr_i[&f], &guide, &data)
    });

    let mut rows = vec![
        ReportRow {
            family: None,
            loss: None,
            stage: BASELINE_LR.into(),
            psnr: None,
            ssim: None,
            macro_f1: Some(baselines.lr_f1),
        },
        ReportRow {
            family: None,
            loss: None,
            stage: BASELINE_HR.into(),
            psnr: None,
            ssim: None,
            macro_f1: Some(baselines.hr_f1),
        },
        ReportRow {
            family: None,
            loss: None,
            stage: BASELINE_BICUBIC.into(),
            psnr: Some(baselines.bicubic_psnr),
            ssim: Some(baselines.bicubic_ssim),
            macro_f1: None,
        },
    ];
    let mut provenance = BTreeMap::from([
        ("HR classifier".to_string(), baselines.guide_digest.clone()),
        (
            "LR classifier".to_string(),
            baselines.lr_classifier_digest.clone(),
        ),
    ]);
    for (f, r) in &sr_i {
        rows.push(stage_row(*f, None, BASELINE_SRHR, r));
        provenance.insert(format!("{f}/SR-I"), r.sr_digest.clone());
    }
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for ((f, l), outcome) in jobs.into_iter().zip(outcomes) {
        match outcome {
            Ok(cell) => {
                for s in &cell.stages {
                    let tag = s.stage.tag();
                    rows.push(stage_row(f, Some(l), tag.as_str(), s));
                    provenance.insert(format!("{f}/{l}/{tag}"), s.sr_digest.clone());
                    provenance.insert(
                        format!("{f}/{l}/{tag}/classifier"),
                        s.classifier_digest.clone(),
                    );
                }
                cells.push(cell);
            }
            Err(e) => {
                log::error!("cell {f}/{l} failed: {e}");
                failures.push(CellFailure {
                    family: f.to_string(),
                    loss: l.to_string(),
                    error: e.to_string(),
                });
            }
        }
    }

    let seed = opts.base.seed;
    let seeds = [
        "init",
        "shuffle",
        "classifier_init",
        "classifier_shuffle",
        "classifier_dropout",
    ]
    .into_iter()
    .map(|n| (n.to_string(), sub_seed(seed, n)))
    .chain([("master".to_string(), seed)])
    .collect();
    let report = ProtocolReport {
        rows,
        failures,
        metadata: ReportMetadata {
            seeds,
            config: serde_json::to_value(opts)?,
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            deviations: DEVIATIONS.iter().map(|s| s.to_string()).collect(),
            provenance,
        },
    };
    if let Some(dir) = &opts.out_dir {
        report.write_json(&dir.join("report.json"))?;
        report.write_csv(&dir.join("report.csv"))?;
    }
    Ok(ProtocolOutcome {
        report,
        baselines,
        sr_i,
        cells,
    })
}
