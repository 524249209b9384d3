//! Image-quality metrics and SR losses on a synthetic chip and its bicubic
//! reconstruction, plus gradients and classification F1.
//!
//! ```text
//! cargo run --example metrics_and_losses
//! ```

use sarsr::data::generate_synthetic;
use sarsr::losses::{
    classification_loss, merged_loss, psnr_loss_with_grad, ssim_loss_with_grad, LossKind, LossSpec,
};
use sarsr::metrics::{confusion_matrix, f1_scores, psnr, psnr_max, ssim, DEFAULT_EPSILON};
use sarsr::resample::{downsample, upsample};

fn main() -> sarsr::Result<()> {
    let hr = generate_synthetic(1, 7, 4)?.remove(0).image;
    let sr = upsample(&downsample(&hr, 2)?, 2)?;

    println!("PSNR ceiling {:.1} dB", psnr_max(1.0, DEFAULT_EPSILON)?);
    println!(
        "bicubic 2x: PSNR {:.2} dB, SSIM {:.4}",
        psnr(&sr, &hr, DEFAULT_EPSILON)?,
        ssim(&sr, &hr)?
    );

    let (sr, hr) = (vec![sr], vec![hr]);
    let mut results = vec![
        (
            "PSNR".to_string(),
            psnr_loss_with_grad(&sr, &hr, DEFAULT_EPSILON)?,
        ),
        ("SSIM".to_string(), ssim_loss_with_grad(&sr, &hr)?),
    ];
    for kind in [LossKind::L1, LossKind::Combo, LossKind::Hybrid] {
        results.push((
            kind.to_string(),
            LossSpec::new(kind).evaluate_with_grad(&sr, &hr)?,
        ));
    }
    for (name, (value, grads)) in results {
        let norm = grads[0]
            .as_slice()
            .iter()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        println!(
            "{name:>6}: {:.5}  |grad| {norm:.3e}  {:?}",
            value.total, value.components
        );
    }

    let logits_sr = vec![vec![0.2, 1.1, -0.3, 0.0, 0.4, -1.0]];
    let logits_hr = vec![vec![0.1, 1.4, -0.2, 0.0, 0.3, -0.9]];
    let cls = classification_loss(&logits_sr, &logits_hr)?;
    let sr_loss = LossSpec::new(LossKind::Combo).evaluate(&sr, &hr)?;
    println!(
        "merged {:.5} = sr {:.5} + cls {:.5}",
        merged_loss(&sr_loss, &cls)?.total,
        sr_loss.total,
        cls.total
    );

    let truth = [0, 0, 1, 2, 3, 4, 5, 5];
    let pred = [0, 1, 1, 2, 3, 4, 5, 0];
    let (per_class, macro_f1) = f1_scores(&confusion_matrix(&pred, &truth)?);
    println!("per-class F1 {per_class:.3?}, macro {macro_f1:.4}");
    Ok(())
}
