//! Trains the ship classifier on HR chips and on their replicated LR
//! counterparts, and compares per-class F1.
//!
//! ```text
//! cargo run --release --example classifier -- [epochs]
//! ```

use sarsr::data::{generate_synthetic, split, LabeledSample, Lineage, ShipClass, SplitSpec};
use sarsr::models::ClassifierConfig;
use sarsr::pipeline::{predict, train_classifier, StageConfig};
use sarsr::resample::{downsample, upsample_nearest};

fn to_lr(samples: &[LabeledSample]) -> sarsr::Result<Vec<LabeledSample>> {
    samples
        .iter()
        .map(|s| {
            let img = upsample_nearest(&downsample(&s.image, 2)?, 2)?;
            LabeledSample::new(img, s.label, Lineage::LrReplicated)
        })
        .collect()
}

fn main() -> sarsr::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let epochs: usize = std::env::args()
        .nth(1)
        .map_or(5, |s| s.parse().expect("epochs"));
    let samples = generate_synthetic(40, 3, 16)?;
    let (train, test) = split(
        &samples,
        &SplitSpec {
            seed: 3,
            ..Default::default()
        },
    )?;
    let cfg = StageConfig {
        classifier: ClassifierConfig {
            head_hidden: 128,
            ..Default::default()
        },
        learning_rate: 1e-3,
        epochs,
        batch_size: 32,
        ..Default::default()
    };

    for (name, tr, te) in [
        ("HR", train.clone(), test.clone()),
        ("LR", to_lr(&train)?, to_lr(&test)?),
    ] {
        let run = train_classifier(&cfg, &tr, &te)?;
        let report = run.report.classification.as_ref().unwrap();
        println!("{name}: macro-F1 {:.3}", report.macro_f1);
        for (class, f1) in ShipClass::ALL.iter().zip(report.per_class_f1) {
            println!("  {:<10} {f1:.3}", class.name());
        }
        let model = run.checkpoint.to_classifier()?;
        let images: Vec<_> = te.iter().take(6).map(|s| s.image.clone()).collect();
        println!("  first predictions {:?}", predict(&model, &images)?);
    }
    Ok(())
}
