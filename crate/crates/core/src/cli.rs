//! Command-line front end: config resolution, run directories and the six
//! subcommands. Settings resolve as flags > environment > config file > defaults.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    export_dataset, generate_synthetic, label_histogram, load_dataset, make_pairs, split,
    LabeledSample, Lineage, PairedSample, SplitSpec, GENERATOR_VERSION, SCALE,
};
use crate::error::{Error, Result};
use crate::evaluation::{error_map, improvement_table, summarize, write_summary_csv, Grouping};
use crate::losses::LossKind;
use crate::models::{build_sr_model, sr_forward, Checkpoint, ModelSpec, StageTag};
use crate::pipeline::{
    run_full_protocol, run_sr_finetune, run_sr_inference, run_sr_pretrain, train_classifier,
    ProtocolOptions, Stage, StageConfig, TrainingSchedule,
};
use crate::seed::sub_seed;

/// Overrides `output_root` when `--output-root` is not given.
pub const OUTPUT_ROOT_ENV: &str = "SARSR_OUTPUT_ROOT";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Synthetic,
    Folder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataKind,
    /// Class-folder root when `source = "folder"`.
    pub path: Option<PathBuf>,
    pub n_per_class: usize,
    pub speckle_looks: u32,
    /// Generator seed; a sub-seed of `training.seed` when absent.
    pub seed: Option<u64>,
    pub train_fraction: f64,
    pub image_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataKind::Synthetic,
            path: None,
            n_per_class: crate::pipeline::DESK_SCALE_PER_CLASS,
            speckle_looks: crate::pipeline::DESK_SCALE_LOOKS,
            seed: None,
            train_fraction: 0.8,
            image_size: crate::data::HR_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub families: Vec<crate::models::SrFamily>,
    pub losses: Vec<LossKind>,
    pub workers: usize,
    pub error_maps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        let p = ProtocolOptions::default();
        Self {
            families: p.families,
            losses: p.losses,
            workers: p.workers,
            error_maps: p.error_maps,
        }
    }
}

/// Everything a run needs, as read from a TOML file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub output_root: Option<PathBuf>,
    /// HR-trained classifier for fine-tuning; trained on the fly when absent.
    pub guide_checkpoint: Option<PathBuf>,
    pub data: DataConfig,
    /// SR stage settings; `training.seed` is the master seed.
    pub training: StageConfig,
    /// Optimizer schedule of every classifier.
    pub classifier_schedule: TrainingSchedule,
    pub grid: GridConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::File {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn output_root(&self) -> PathBuf {
        self.output_root
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs"))
    }

    /// Short hash of the settings that affect results (output location excluded).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_root = None;
        c.grid.workers = 1;
        let json = serde_json::to_vec(&c).expect("config serializes");
        let digest = Sha256::digest(json);
        digest[..6].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn protocol_options(&self, out_dir: Option<PathBuf>, force: bool) -> ProtocolOptions {
        ProtocolOptions {
            base: StageConfig {
                init_checkpoint: None,
                ..self.training.clone()
            },
            families: self.grid.families.clone(),
            losses: self.grid.losses.clone(),
            classifier_schedule: self.classifier_schedule,
            workers: self.grid.workers,
            error_maps: self.grid.error_maps,
            force,
            out_dir,
        }
    }

    /// Every violated constraint for `command`, each naming its field.
    pub fn violations(&self, command: CommandKind) -> Vec<String> {
        let mut v = Vec::new();
        let d = &self.data;
        match d.source {
            DataKind::Synthetic => {
                if d.n_per_class < 2 {
                    v.push(format!(
                        "data.n_per_class: must be at least 2, got {}",
                        d.n_per_class
                    ));
                }
                if d.speckle_looks < 1 {
                    v.push("data.speckle_looks: must be at least 1".into());
                }
                if d.image_size != crate::data::HR_SIZE {
                    v.push(format!(
                        "data.image_size: the synthetic generator renders {0}x{0}, got {1}",
                        crate::data::HR_SIZE,
                        d.image_size
                    ));
                }
            }
            DataKind::Folder => match &d.path {
                None => v.push("data.path: required when data.source = \"folder\"".into()),
                Some(p) if !p.is_dir() => {
                    v.push(format!("data.path: {} is not a directory", p.display()))
                }
                _ => {}
            },
        }
        if command == CommandKind::Generate && d.source != DataKind::Synthetic {
            v.push("data.source: generate needs synthetic parameters".into());
        }
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            v.push(format!(
                "data.train_fraction: must lie in (0, 1), got {}",
                d.train_fraction
            ));
        }
        if !d.image_size.is_multiple_of(SCALE) {
            v.push(format!("data.image_size: must be divisible by {SCALE}"));
        }
        if d.image_size != self.training.classifier.input_size {
            v.push(format!(
                "data.image_size: must equal training.classifier.input_size ({})",
                self.training.classifier.input_size
            ));
        }
        v.extend(
            self.protocol_options(None, false)
                .violations()
                .into_iter()
                .filter(|m| {
                    !m.starts_with("families")
                        && !m.starts_with("losses")
                        && !m.starts_with("workers")
                })
                .map(|m| prefixed(&m)),
        );
        if self.training.stage == Stage::SrFt && self.training.init_checkpoint.is_none() {
            v.push("training.init_checkpoint: required for SR_FT (an SR-PT checkpoint)".into());
        }
        for (field, path) in [
            ("training.init_checkpoint", &self.training.init_checkpoint),
            ("guide_checkpoint", &self.guide_checkpoint),
        ] {
            if let Some(p) = path {
                if !p.is_file() {
                    v.push(format!("{field}: {} does not exist", p.display()));
                }
            }
        }
        if command == CommandKind::Protocol {
            let g = &self.grid;
            if g.families.is_empty() {
                v.push("grid.families: grid needs at least one SR family".into());
            }
            if g.losses.is_empty() {
                v.push("grid.losses: grid needs at least one loss".into());
            }
        }
        if self.grid.workers < 1 {
            v.push("grid.workers: must be at least 1".into());
        }
        if self.training.seed > i64::MAX as u64 {
            v.push("training.seed: must fit in a signed 64-bit integer".into());
        }
        v
    }
}

/// Maps `ProtocolOptions` messages onto `RunConfig` field paths.
fn prefixed(msg: &str) -> String {
    if msg.starts_with("classifier_schedule") {
        msg.to_string()
    } else {
        format!("training.{msg}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Generate,
    Pretrain,
    Finetune,
    Infer,
    TrainClassifier,
    Protocol,
}

impl CommandKind {
    fn name(self) -> &'static str {
        match self {
            CommandKind::Generate => "generate",
            CommandKind::Pretrain => "pretrain",
            CommandKind::Finetune => "finetune",
            CommandKind::Infer => "infer",
            CommandKind::TrainClassifier => "train-classifier",
            CommandKind::Protocol => "protocol",
        }
    }

    fn stage(self) -> Stage {
        match self {
            CommandKind::Infer => Stage::SrI,
            CommandKind::Finetune => Stage::SrFt,
            _ => Stage::SrPt,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "sarsr",
    version,
    about = "Classification-aware super-resolution for SAR ship chips"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic class-folder dataset with a manifest.
    Generate {
        /// Target directory [default: <output_root>/dataset-<hash>]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Image-quality pretraining (SR-PT).
    Pretrain,
    /// Merged-loss fine-tuning from an SR-PT checkpoint (SR-FT).
    Finetune,
    /// Inference with untrained or given SR weights (SR-I).
    Infer,
    /// Train a classifier on HR images, or on the SR outputs of --init-checkpoint.
    TrainClassifier,
    /// Full SR-I / SR-PT / SR-FT sweep over the configured grid.
    Protocol,
}

impl Command {
    pub fn kind(&self) -> CommandKind {
        match self {
            Command::Generate { .. } => CommandKind::Generate,
            Command::Pretrain => CommandKind::Pretrain,
            Command::Finetune => CommandKind::Finetune,
            Command::Infer => CommandKind::Infer,
            Command::TrainClassifier => CommandKind::TrainClassifier,
            Command::Protocol => CommandKind::Protocol,
        }
    }
}

#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root for run directories [default: runs]
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV)]
    pub output_root: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    /// SR family for single-stage commands, e.g. CARN_LITE.
    #[arg(long, global = true)]
    pub family: Option<crate::models::SrFamily>,
    /// SR criterion for single-stage commands: L1, Combo or Hybrid.
    #[arg(long, global = true)]
    pub loss: Option<LossKind>,
    #[arg(long, global = true)]
    pub init_checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    pub guide_checkpoint: Option<PathBuf>,
    /// Parallel grid cells for `protocol` [default: 1]
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Validate and print the step count without training.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Overwrite existing outputs instead of skipping finished work.
    #[arg(long, global = true)]
    pub force: bool,
}

impl Overrides {
    /// Loads the config file (or defaults) and applies flag overrides.
    pub fn resolve(&self, command: CommandKind) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.output_root {
            c.output_root = Some(v.clone());
        }
        if let Some(v) = self.seed {
            c.training.seed = v;
        }
        if let Some(v) = self.epochs {
            c.training.epochs = v;
        }
        if let Some(v) = self.learning_rate {
            c.training.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            c.training.batch_size = v;
        }
        if let Some(v) = self.family {
            c.training.sr_model.family = v;
        }
        if let Some(v) = self.loss {
            c.training.loss.kind = v;
        }
        if let Some(v) = &self.init_checkpoint {
            c.training.init_checkpoint = Some(v.clone());
        }
        if let Some(v) = &self.guide_checkpoint {
            c.guide_checkpoint = Some(v.clone());
        }
        if let Some(v) = self.workers {
            c.grid.workers = v;
        }
        c.training.stage = command.stage();
        Ok(c)
    }
}

/// Result of a command that ran to completion.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub run_dir: Option<PathBuf>,
    /// False when some requested work failed (e.g. a protocol cell).
    pub success: bool,
}

fn data_seed(cfg: &RunConfig) -> u64 {
    cfg.data
        .seed
        .unwrap_or_else(|| sub_seed(cfg.training.seed, "data"))
}

fn synthetic_samples(cfg: &RunConfig) -> Result<Vec<LabeledSample>> {
    generate_synthetic(cfg.data.n_per_class, data_seed(cfg), cfg.data.speckle_looks)
}

/// HR train/test split of the configured data source.
pub fn load_split(cfg: &RunConfig) -> Result<(Vec<LabeledSample>, Vec<LabeledSample>)> {
    let samples = match cfg.data.source {
        DataKind::Synthetic => synthetic_samples(cfg)?,
        DataKind::Folder => {
            let path = cfg
                .data
                .path
                .as_ref()
                .ok_or_else(|| Error::Config("data.path missing".into()))?;
            load_dataset(path, cfg.data.image_size)?.samples
        }
    };
    split(
        &samples,
        &SplitSpec {
            train_fraction: cfg.data.train_fraction,
            seed: sub_seed(cfg.training.seed, "split"),
            stratified: true,
        },
    )
}

fn prepare_run_dir(cfg: &RunConfig, command: CommandKind) -> Result<PathBuf> {
    let dir = cfg
        .output_root()
        .join(format!("{}-{}", command.name(), cfg.hash()));
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(RESOLVED_CONFIG_FILE), cfg.to_toml()?)?;
    Ok(dir)
}

fn is_nonempty_dir(p: &Path) -> bool {
    fs::read_dir(p).is_ok_and(|mut d| d.next().is_some())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn save_error_maps(
    dir: &Path,
    sr: &[crate::Image],
    pairs: &[PairedSample],
    n: usize,
) -> Result<()> {
    for (i, (s, p)) in sr.iter().zip(pairs).take(n).enumerate() {
        let m = error_map(&p.hr, s)?;
        m.save_png(&dir.join(format!("{i:03}.png")))?;
        m.save_json(&dir.join(format!("{i:03}.json")))?;
    }
    Ok(())
}

fn classifier_stage(cfg: &RunConfig) -> StageConfig {
    let s = cfg.classifier_schedule;
    StageConfig {
        learning_rate: s.learning_rate,
        epochs: s.epochs,
        batch_size: s.batch_size,
        init_checkpoint: None,
        stage: Stage::SrPt,
        ..cfg.training.clone()
    }
}

fn load_sr_init(cfg: &RunConfig) -> Result<Option<Checkpoint>> {
    cfg.training
        .init_checkpoint
        .as_deref()
        .map(Checkpoint::load)
        .transpose()
}

fn done(run_dir: &Path, marker: &str, force: bool) -> bool {
    let finished = !force && run_dir.join(marker).exists();
    if finished {
        println!(
            "{} already complete (use --force to redo)",
            run_dir.display()
        );
    }
    finished
}

fn cmd_generate(cfg: &RunConfig, out: Option<PathBuf>, o: &Overrides) -> Result<Outcome> {
    let dir = out.unwrap_or_else(|| cfg.output_root().join(format!("dataset-{}", cfg.hash())));
    let total = cfg.data.n_per_class * crate::NUM_CLASSES;
    if o.dry_run {
        println!("would write {total} images to {}", dir.display());
        return Ok(Outcome {
            run_dir: None,
            success: true,
        });
    }
    if is_nonempty_dir(&dir) {
        if !o.force {
            return Err(Error::Config(format!(
                "{} exists and is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
        fs::remove_dir_all(&dir)?;
    }
    let samples = synthetic_samples(cfg)?;
    let manifest = export_dataset(
        &samples,
        &dir,
        Some(data_seed(cfg)),
        Some(cfg.data.speckle_looks),
        GENERATOR_VERSION,
    )?;
    fs::write(dir.join(RESOLVED_CONFIG_FILE), cfg.to_toml()?)?;
    println!("wrote {} images to {}", manifest.total, dir.display());
    Ok(Outcome {
        run_dir: Some(dir),
        success: true,
    })
}

fn cmd_pretrain(cfg: &RunConfig, o: &Overrides) -> Result<Outcome> {
    let (train, test) = load_split(cfg)?;
    if o.dry_run {
        println!("{} optimizer steps", cfg.training.total_steps(train.len()));
        return Ok(Outcome {
            run_dir: None,
            success: true,
        });
    }
    let dir = prepare_run_dir(cfg, CommandKind::Pretrain)?;
    if done(&dir, "sr_pt.ckpt", o.force) {
        return Ok(Outcome {
            run_dir: Some(dir),
            success: true,
        });
    }
    let (train, test) = (make_pairs(&train)?, make_pairs(&test)?);
    let init = load_sr_init(cfg)?;
    let run = run_sr_pretrain(&cfg.training, init.as_ref(), &train, &test)?;
    let (_, report) = run_sr_inference(&run.checkpoint.to_sr()?, &test, cfg.training.loss.epsilon)?;
    run.log.write_jsonl(&dir.join("sr_pt.jsonl"))?;
    write_json(&dir.join("metrics.json"), &report)?;
    run.checkpoint.save(&dir.join("sr_pt.ckpt"))?;
    println!(
        "SR-PT: PSNR {:.3} dB, SSIM {:.4} (best epoch {:?}) -> {}",
        report.psnr_db.unwrap_or(f64::NAN),
        report.ssim.unwrap_or(f64::NAN),
        run.log.best_epoch,
        dir.display()
    );
    Ok(Outcome {
        run_dir: Some(dir),
        success: true,
    })
}

fn cmd_finetune(cfg: &RunConfig, o: &Overrides) -> Result<Outcome> {
    let (train, test) = load_split(cfg)?;
    if o.dry_run {
        let mut steps = cfg.training.total_steps(train.len());
        if cfg.guide_checkpoint.is_none() {
            let s = cfg.classifier_schedule;
            steps += crate::pipeline::steps_for(s.epochs, train.len(), s.batch_size);
        }
        println!("{steps} optimizer steps");
        return Ok(Outcome {
            run_dir: None,
            success: true,
        });
    }
    let dir = prepare_run_dir(cfg, CommandKind::Finetune)?;
    if done(&dir, "sr_ft.ckpt", o.force) {
        return Ok(Outcome {
            run_dir: Some(dir),
            success: true,
        });
    }
    let init = load_sr_init(cfg)?
        .ok_or_else(|| Error::Validation(vec!["training.init_checkpoint: required".into()]))?;
    let guide = match &cfg.guide_checkpoint {
        Some(p) => Checkpoint::load(p)?.to_classifier()?,
        None => {
            log::info!("no guide_checkpoint given; training the HR guide classifier");
            let run = train_classifier(&classifier_stage(cfg), &train, &test)?;
            run.checkpoint.save(&dir.join("guide.ckpt"))?;
            run.log.write_jsonl(&dir.join("guide.jsonl"))?;
            run.checkpoint.to_classifier()?
        }
    };
    let (train, test) = (make_pairs(&train)?, make_pairs(&test)?);
    let run = run_sr_finetune(&cfg.training, &init, &train, &test, &guide)?;
    let (_, report) = run_sr_inference(&run.checkpoint.to_sr()?, &test, cfg.training.loss.epsilon)?;
    run.log.write_jsonl(&dir.join("sr_ft.jsonl"))?;
    write_json(&dir.join("metrics.json"), &report)?;
    run.checkpoint.save(&dir.join("sr_ft.ckpt"))?;
    println!(
        "SR-FT: PSNR {:.3} dB, SSIM {:.4} -> {}",
        report.psnr_db.unwrap_or(f64::NAN),
        report.ssim.unwrap_or(f64::NAN),
        dir.display()
    );
    Ok(Outcome {
        run_dir: Some(dir),
        success: true,
    })
}

fn cmd_infer(cfg: &RunConfig, o: &Overrides) -> Result<Outcome> {
    let (_, test) = load_split(cfg)?;
    if o.dry_run {
        println!("0 optimizer steps ({} images to super-resolve)", test.len());
        return Ok(Outcome {
            run_dir: None,
            success: true,
        });
    }
    let dir = prepare_run_dir(cfg, CommandKind::Infer)?;
    if done(&dir, "metrics.json", o.force) {
        return Ok(Outcome {
            run_dir: Some(dir),
            success: true,
        });
    }
    let model = match load_sr_init(cfg)? {
        Some(ck) => ck.to_sr()?,
        None => {
            let m = build_sr_model(&cfg.training.sr_model, sub_seed(cfg.training.seed, "init"))?;
            Checkpoint::from_sr(&m, StageTag::SrI).save(&dir.join("sr_i.ckpt"))?;
            m
        }
    };
    let test = make_pairs(&test)?;
    let (sr, report) = run_sr_inference(&model, &test, cfg.training.loss.epsilon)?;
    save_error_maps(&dir.join("error_maps"), &sr, &test, cfg.grid.error_maps)?;
    write_json(&dir.join("metrics.json"), &report)?;
    println!(
        "inference: PSNR {:.3} dB, SSIM {:.4} -> {}",
        report.psnr_db.unwrap_or(f64::NAN),
        report.ssim.unwrap_or(f64::NAN),
        dir.display()
    );
    Ok(Outcome {
        run_dir: Some(dir),
        success: true,
    })
}

fn cmd_train_classifier(cfg: &RunConfig, o: &Overrides) -> Result<Outcome> {
    let (train, test) = load_split(cfg)?;
    let s = cfg.classifier_schedule;
    if o.dry_run {
        println!(
            "{} optimizer steps",
            crate::pipeline::steps_for(s.epochs, train.len(), s.batch_size)
        );
        return Ok(Outcome {
            run_dir: None,
            success: true,
        });
    }
    let dir = prepare_run_dir(cfg, CommandKind::TrainClassifier)?;
    if done(&dir, "classifier.ckpt", o.force) {
        return Ok(Outcome {
            run_dir: Some(dir),
            success: true,
        });
    }
    let (train, test) = match load_sr_init(cfg)? {
        Some(ck) if matches!(ck.model, ModelSpec::Sr(_)) => {
            let model = ck.to_sr()?;
            let lineage = Lineage::SuperResolved(ck.stage);
            let through = |set: &[LabeledSample]| -> Result<Vec<LabeledSample>> {
                let pairs = make_pairs(set)?;
                let lr: Vec<_> = pairs.iter().map(|p| p.lr.clone()).collect();
                sr_forward(&model, &lr)?
                    .into_iter()
                    .zip(&pairs)
                    .map(|(img, p)| LabeledSample::new(img, p.label, lineage))
                    .collect()
            };
            (through(&train)?, through(&test)?)
        }
        Some(_) => {
            return Err(Error::Checkpoint(
                "train-classifier expects an SR checkpoint in training.init_checkpoint".into(),
            ))
        }
        None => (train, test),
    };
    let run = train_classifier(&classifier_stage(cfg), &train, &test)?;
    run.log.write_jsonl(&dir.join("classifier.jsonl"))?;
    write_json(&dir.join("metrics.json"), &run.report)?;
    run.checkpoint.save(&dir.join("classifier.ckpt"))?;
    println!(
        "classifier on {} ({} train / per-class {:?}): macro-F1 {:.4} -> {}",
        train[0].lineage,
        train.len(),
        label_histogram(&train),
        run.report.macro_f1().unwrap_or(f64::NAN),
        dir.display()
    );
    Ok(Outcome {
        run_dir: Some(dir),
        success: true,
    })
}

fn cmd_protocol(cfg: &RunConfig, o: &Overrides) -> Result<Outcome> {
    let (train, test) = load_split(cfg)?;
    if o.dry_run {
        println!(
            "{} optimizer steps",
            cfg.protocol_options(None, false).total_steps(train.len())
        );
        return Ok(Outcome {
            run_dir: None,
            success: true,
        });
    }
    let dir = prepare_run_dir(cfg, CommandKind::Protocol)?;
    let opts = cfg.protocol_options(Some(dir.clone()), o.force);
    let out = run_full_protocol(&opts, &train, &test)?;

    let cell_rows: Vec<_> = out
        .report
        .rows
        .iter()
        .filter(|r| r.loss.is_some())
        .cloned()
        .collect();
    if !cell_rows.is_empty() {
        write_summary_csv(
            &dir.join("summary_by_family.csv"),
            &summarize(&cell_rows, Grouping::FamilyStage)?,
        )?;
        write_summary_csv(
            &dir.join("summary_by_loss.csv"),
            &summarize(&cell_rows, Grouping::LossStage)?,
        )?;
        let f1 = |stage: Stage| -> Vec<(String, f64)> {
            out.cells
                .iter()
                .filter_map(|c| {
                    Some((format!("{}-{}", c.family, c.loss), c.stage(stage)?.macro_f1))
                })
                .collect()
        };
        let table = improvement_table(&f1(Stage::SrPt), &f1(Stage::SrFt))?;
        let mut w =
            csv::Writer::from_path(dir.join("improvement.csv")).map_err(|e| Error::File {
                path: dir.join("improvement.csv"),
                reason: e.to_string(),
            })?;
        for row in &table {
            w.serialize(row).map_err(|e| Error::Config(e.to_string()))?;
        }
        w.flush()?;
    }
    println!(
        "{:<10} {:<7} {:<8} {:>8} {:>7} {:>7}",
        "family", "loss", "stage", "PSNR", "SSIM", "F1"
    );
    for r in &out.report.rows {
        let f = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |x| format!("{x:.p$}"));
        println!(
            "{:<10} {:<7} {:<8} {:>8} {:>7} {:>7}",
            r.family.as_deref().unwrap_or("-"),
            r.loss.as_deref().unwrap_or("-"),
            r.stage,
            f(r.psnr, 2),
            f(r.ssim, 4),
            f(r.macro_f1, 4)
        );
    }
    for fail in &out.report.failures {
        eprintln!("FAILED {}/{}: {}", fail.family, fail.loss, fail.error);
    }
    println!("report: {}", dir.join("report.json").display());
    Ok(Outcome {
        run_dir: Some(dir),
        success: !out.has_failures(),
    })
}

/// Validates the resolved config, then dispatches. Nothing is computed on an
/// invalid config.
pub fn run(cli: &Cli) -> Result<Outcome> {
    let kind = cli.command.kind();
    let cfg = cli.overrides.resolve(kind)?;
    let v = cfg.violations(kind);
    if !v.is_empty() {
        return Err(Error::Validation(v));
    }
    let o = &cli.overrides;
    match &cli.command {
        Command::Generate { out } => cmd_generate(&cfg, out.clone(), o),
        Command::Pretrain => cmd_pretrain(&cfg, o),
        Command::Finetune => cmd_finetune(&cfg, o),
        Command::Infer => cmd_infer(&cfg, o),
        Command::TrainClassifier => cmd_train_classifier(&cfg, o),
        Command::Protocol => cmd_protocol(&cfg, o),
    }
}

/// Entry point of the `sarsr` binary.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(o) if o.success => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("sarsr").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn defaults_reproduce_training_settings() {
        let c = RunConfig::default();
        assert_eq!(c.training.learning_rate, 1e-4);
        assert_eq!(c.training.epochs, 10);
        assert_eq!(c.training.batch_size, 64);
        assert_eq!(c.classifier_schedule, TrainingSchedule::default());
        assert!(c.violations(CommandKind::Pretrain).is_empty());
        assert_eq!(RunConfig::from_toml("").unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            RunConfig::from_toml("epochs = 3"),
            Err(Error::Config(_))
        ));
        assert!(RunConfig::from_toml("[training]\nepoch = 3").is_err());
        assert!(RunConfig::from_toml("[training.sr_model]\nwidth = 3").is_err());
        assert!(RunConfig::from_toml("[data]\nlooks = 3").is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut c = RunConfig::default();
        c.training.init_checkpoint = Some("a/b.ckpt".into());
        c.grid.losses = LossKind::ALL.to_vec();
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn finetune_without_init_names_the_field() {
        let cfg = parse(&["finetune"])
            .overrides
            .resolve(CommandKind::Finetune)
            .unwrap();
        let v = cfg.violations(CommandKind::Finetune);
        assert!(
            v.iter().any(|m| m.starts_with("training.init_checkpoint")),
            "{v:?}"
        );
        let err = run(&parse(&["finetune", "--dry-run"])).unwrap_err();
        assert!(err.to_string().contains("init_checkpoint"));
    }

    #[test]
    fn validation_is_total() {
        let text = r#"
            [data]
            train_fraction = 1.5
            n_per_class = 1
            [training]
            learning_rate = 0.0
            epochs = 0
            [classifier_schedule]
            batch_size = 0
        "#;
        let c = RunConfig::from_toml(text).unwrap();
        let v = c.violations(CommandKind::Pretrain);
        for f in [
            "data.train_fraction",
            "data.n_per_class",
            "training.learning_rate",
            "training.epochs",
            "classifier_schedule.batch_size",
        ] {
            assert!(v.iter().any(|m| m.starts_with(f)), "{f} missing from {v:?}");
        }
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[training]\nepochs = 3\nbatch_size = 16\n").unwrap();
        let p = path.to_str().unwrap();
        let c = parse(&["pretrain", "--config", p, "--epochs", "5"])
            .overrides
            .resolve(CommandKind::Pretrain)
            .unwrap();
        assert_eq!(c.training.epochs, 5);
        assert_eq!(c.training.batch_size, 16);
        assert_eq!(c.training.learning_rate, 1e-4);
        assert_eq!(c.training.stage, Stage::SrPt);
        let c = parse(&["infer", "--family", "rcan", "--loss", "hybrid"])
            .overrides
            .resolve(CommandKind::Infer)
            .unwrap();
        assert_eq!(
            c.training.sr_model.family,
            crate::models::SrFamily::RcanLite
        );
        assert_eq!(c.training.loss.kind, LossKind::Hybrid);
        assert_eq!(c.training.stage, Stage::SrI);
    }

    #[test]
    fn dry_run_touches_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_str().unwrap();
        let out = run(&parse(&["pretrain", "--dry-run", "--output-root", root])).unwrap();
        assert!(out.success && out.run_dir.is_none());
        assert!(!is_nonempty_dir(dir.path()));
    }

    #[test]
    fn hash_ignores_location_and_workers() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.output_root = Some("/elsewhere".into());
        b.grid.workers = 4;
        assert_eq!(a.hash(), b.hash());
        b.training.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
