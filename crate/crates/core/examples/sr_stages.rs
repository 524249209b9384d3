//! The three SR stages on a small synthetic set: untrained inference,
//! image-quality pretraining, then fine-tuning against a frozen HR classifier.
//!
//! ```text
//! cargo run --release --example sr_stages -- [family] [loss]
//! ```

use sarsr::data::{generate_synthetic, make_pairs, split, SplitSpec};
use sarsr::losses::{LossKind, LossSpec, CLS_LOSS, SR_LOSS};
use sarsr::metrics::DEFAULT_EPSILON;
use sarsr::models::{build_sr_model, ClassifierConfig, SrFamily, SrModelConfig};
use sarsr::pipeline::{
    run_sr_finetune, run_sr_inference, run_sr_pretrain, train_classifier, Stage, StageConfig,
};

fn main() -> sarsr::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let family: SrFamily = args.next().unwrap_or_else(|| "CARN_LITE".into()).parse()?;
    let loss: LossKind = args.next().unwrap_or_else(|| "Combo".into()).parse()?;

    let samples = generate_synthetic(20, 0, 16)?;
    let (train, test) = split(&samples, &SplitSpec::default())?;
    let (train_pairs, test_pairs) = (make_pairs(&train)?, make_pairs(&test)?);

    let base = StageConfig {
        sr_model: SrModelConfig {
            family,
            channels: 16,
            ..Default::default()
        },
        classifier: ClassifierConfig {
            head_hidden: 64,
            ..Default::default()
        },
        loss: LossSpec::new(loss),
        learning_rate: 1e-3,
        epochs: 4,
        batch_size: 16,
        ..Default::default()
    };

    let fresh = build_sr_model(&base.sr_model, 0)?;
    let (_, sr_i) = run_sr_inference(&fresh, &test_pairs, DEFAULT_EPSILON)?;
    println!("SR-I  PSNR {:.2}", sr_i.psnr_db.unwrap());

    let pt = run_sr_pretrain(
        &StageConfig {
            stage: Stage::SrPt,
            ..base.clone()
        },
        None,
        &train_pairs,
        &test_pairs,
    )?;
    let (_, m) = run_sr_inference(&pt.checkpoint.to_sr()?, &test_pairs, DEFAULT_EPSILON)?;
    println!(
        "SR-PT PSNR {:.2}, kept epoch {:?}",
        m.psnr_db.unwrap(),
        pt.log.best_epoch
    );

    let guide = train_classifier(
        &StageConfig {
            epochs: 3,
            ..base.clone()
        },
        &train,
        &test,
    )?;
    println!(
        "guide macro-F1 on HR {:.3}",
        guide.report.macro_f1().unwrap()
    );

    let ft_cfg = StageConfig {
        stage: Stage::SrFt,
        learning_rate: 1e-4,
        ..base
    };
    let ft = run_sr_finetune(
        &ft_cfg,
        &pt.checkpoint,
        &train_pairs,
        &test_pairs,
        &guide.checkpoint.to_classifier()?,
    )?;
    let (_, m) = run_sr_inference(&ft.checkpoint.to_sr()?, &test_pairs, DEFAULT_EPSILON)?;
    println!("SR-FT PSNR {:.2}", m.psnr_db.unwrap());
    for s in ft.log.steps.iter().step_by(4) {
        println!(
            "  step {:>3}: merged {:.5} = sr {:.5} + cls {:.5}",
            s.step,
            s.loss.total,
            s.loss.component(SR_LOSS).unwrap(),
            s.loss.component(CLS_LOSS).unwrap()
        );
    }
    Ok(())
}
