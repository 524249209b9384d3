//! Error maps between HR and reconstructed chips, and the report helpers
//! that aggregate protocol rows into summary and improvement tables.
//!
//! ```text
//! cargo run --example error_maps_and_report -- [out_dir]
//! ```

use std::path::PathBuf;

use sarsr::data::generate_synthetic;
use sarsr::evaluation::{
    error_map, improvement_table, summarize, write_summary_csv, Grouping, ReportRow,
};
use sarsr::metrics::{psnr, ssim, DEFAULT_EPSILON};
use sarsr::resample::{downsample, upsample, upsample_nearest};

fn row(family: &str, loss: &str, stage: &str, psnr: f64, ssim: f64, f1: f64) -> ReportRow {
    ReportRow {
        family: Some(family.into()),
        loss: Some(loss.into()),
        stage: stage.into(),
        psnr: Some(psnr),
        ssim: Some(ssim),
        macro_f1: Some(f1),
    }
}

fn main() -> sarsr::Result<()> {
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "error_maps".into()),
    );
    let hr = generate_synthetic(1, 11, 16)?.remove(0).image;
    let lr = downsample(&hr, 2)?;
    for (name, sr) in [
        ("bicubic", upsample(&lr, 2)?),
        ("nearest", upsample_nearest(&lr, 2)?),
    ] {
        let map = error_map(&hr, &sr)?;
        map.save_png(&out.join(format!("{name}.png")))?;
        map.save_json(&out.join(format!("{name}.json")))?;
        println!(
            "{name:<8} mean |HR-SR| {:.4}  PSNR {:.2}  SSIM {:.4}",
            map.score,
            psnr(&sr, &hr, DEFAULT_EPSILON)?,
            ssim(&sr, &hr)?
        );
    }

    let rows = vec![
        row("CARN_LITE", "Combo", "SR-PT", 36.7, 0.93, 0.90),
        row("CARN_LITE", "Combo", "SR-FT", 36.9, 0.94, 0.91),
        row("CARN_LITE", "L1", "SR-PT", 36.5, 0.92, 0.89),
        row("CARN_LITE", "L1", "SR-FT", 36.6, 0.93, 0.90),
        row("RCAN_LITE", "Combo", "SR-PT", 36.4, 0.92, 0.90),
        row("RCAN_LITE", "Combo", "SR-FT", 36.8, 0.93, 0.90),
    ];
    let by_family = summarize(&rows, Grouping::FamilyStage)?;
    for s in &by_family {
        println!(
            "{:<10} {} n={} PSNR {:.2} F1 {:.3}{}",
            s.family.as_deref().unwrap_or("-"),
            s.stage,
            s.n,
            s.psnr.unwrap(),
            s.macro_f1.unwrap(),
            if s.best_f1 { " (best F1)" } else { "" }
        );
    }
    write_summary_csv(&out.join("summary_by_family.csv"), &by_family)?;

    let config = |r: &ReportRow| {
        format!(
            "{}-{}",
            r.family.as_deref().unwrap(),
            r.loss.as_deref().unwrap()
        )
    };
    let at = |stage: &str| -> Vec<(String, f64)> {
        rows.iter()
            .filter(|r| r.stage == stage)
            .map(|r| (config(r), r.macro_f1.unwrap()))
            .collect()
    };
    for imp in improvement_table(&at("SR-PT"), &at("SR-FT"))? {
        println!(
            "{:<16} {:.3} -> {:.3} ({:+.3})",
            imp.configuration, imp.f1_pt, imp.f1_ft, imp.delta
        );
    }
    Ok(())
}
