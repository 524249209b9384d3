//! Desk-scale protocol on synthetic chips: baselines, SR-I, SR-PT and SR-FT
//! for each requested family with Combo loss, at the desk-scale preset.
//!
//! ```text
//! cargo run --release --example full_protocol -- [out_dir|-] [seed] [families]
//! ```

use std::path::PathBuf;
use std::time::Instant;

use sarsr::data::{generate_synthetic, split, SplitSpec};
use sarsr::evaluation::{summarize, Grouping};
use sarsr::pipeline::{run_full_protocol, ProtocolOptions, DESK_SCALE_LOOKS, DESK_SCALE_PER_CLASS};

fn main() -> sarsr::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let out_dir = args.next().filter(|a| a != "-").map(PathBuf::from);
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let families = args
        .next()
        .unwrap_or_else(|| "CARN_LITE,RCAN_LITE".into())
        .split(',')
        .map(str::parse)
        .collect::<sarsr::Result<Vec<_>>>()?;

    let samples = generate_synthetic(DESK_SCALE_PER_CLASS, seed, DESK_SCALE_LOOKS)?;
    let (train, test) = split(
        &samples,
        &SplitSpec {
            train_fraction: 0.8,
            seed,
            stratified: true,
        },
    )?;
    let opts = ProtocolOptions {
        families,
        out_dir,
        ..ProtocolOptions::desk_scale(seed)
    };
    println!(
        "{} train / {} test, {} optimizer steps",
        train.len(),
        test.len(),
        opts.total_steps(train.len())
    );

    let started = Instant::now();
    let out = run_full_protocol(&opts, &train, &test)?;
    println!("finished in {:.0} s", started.elapsed().as_secs_f64());
    println!(
        "{:<10} {:<8} {:<8} {:>8} {:>7} {:>7}",
        "family", "loss", "stage", "PSNR", "SSIM", "F1"
    );
    for r in &out.report.rows {
        let f = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |x| format!("{x:.p$}"));
        println!(
            "{:<10} {:<8} {:<8} {:>8} {:>7} {:>7}",
            r.family.as_deref().unwrap_or("-"),
            r.loss.as_deref().unwrap_or("-"),
            r.stage,
            f(r.psnr, 2),
            f(r.ssim, 4),
            f(r.macro_f1, 4)
        );
    }
    for cell in &out.cells {
        let ft = &cell.stages[2].train_loss_means;
        println!(
            "{}/{}: F1 delta {:+.4}, SR-FT train loss {:.4} -> {:.4}",
            cell.family,
            cell.loss,
            cell.f1_improvement().unwrap_or(f64::NAN),
            ft.first().unwrap_or(&f64::NAN),
            ft.last().unwrap_or(&f64::NAN)
        );
    }
    let cell_rows: Vec<_> = out
        .report
        .rows
        .iter()
        .filter(|r| r.loss.is_some())
        .cloned()
        .collect();
    for s in summarize(&cell_rows, Grouping::FamilyStage)? {
        println!(
            "mean {:?} {}: F1 {:.4}",
            s.family,
            s.stage,
            s.macro_f1.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
