//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sarsr::data::{generate_synthetic, make_pairs, split, SplitSpec};
use sarsr::evaluation::improvement_table;
use sarsr::image::Grid;
use sarsr::losses::{
    classification_loss, classification_loss_with_grad, combo_loss, combo_loss_with_grad,
    hybrid_loss, hybrid_loss_with_grad, l1_loss, l1_loss_with_grad, merged_loss, psnr_loss,
    psnr_loss_with_grad, ssim_loss, ssim_loss_with_grad, LossKind, LossSpec, LossValue, CLS_LOSS,
    SR_LOSS,
};
use sarsr::metrics::{confusion_matrix, f1_scores, psnr, ssim, DEFAULT_EPSILON};
use sarsr::models::{
    build_classifier, classifier_forward, ClassifierConfig, Mode, SrFamily, SrModelConfig,
};
use sarsr::pipeline::{
    run_full_protocol, run_sr_finetune, run_sr_pretrain, ProtocolOptions, ProtocolOutcome, Stage,
    StageConfig, DESK_SCALE_LOOKS, DESK_SCALE_PER_CLASS,
};
use sarsr::Image;

const SEEDS: [u64; 3] = [0, 1, 2];
/// The seed-fixed run that (a), (b) and (c) are gated on; every seed is printed.
const GATED_SEED: u64 = 0;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, lo: f64, hi: f64) -> Image {
    Image::unit(h, w, (0..h * w).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-12 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn oracle_psnr(a: &Image, b: &Image) -> f64 {
    let n = a.as_slice().len() as f64;
    let mse = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / n;
    10.0 * (1.0 / mse.max(DEFAULT_EPSILON)).log10()
}

/// Direct per-window SSIM: for each pixel, weighted statistics over the
/// 11×11 Gaussian neighbourhood clipped to the image and renormalized.
fn oracle_ssim(a: &Image, b: &Image) -> f64 {
    let (h, w) = a.dims();
    let (c1, c2) = (1e-4, 9e-4);
    let g = |d: isize| (-((d * d) as f64) / (2.0 * 1.5 * 1.5)).exp();
    let mut total = 0.0;
    for r in 0..h as isize {
        for c in 0..w as isize {
            let mut wsum = 0.0;
            let mut cells = Vec::new();
            for rr in (r - 5).max(0)..=(r + 5).min(h as isize - 1) {
                for cc in (c - 5).max(0)..=(c + 5).min(w as isize - 1) {
                    let k = g(rr - r) * g(cc - c);
                    wsum += k;
                    cells.push((
                        k,
                        a.get(rr as usize, cc as usize),
                        b.get(rr as usize, cc as usize),
                    ));
                }
            }
            let mx: f64 = cells.iter().map(|(k, x, _)| k * x).sum::<f64>() / wsum;
            let my: f64 = cells.iter().map(|(k, _, y)| k * y).sum::<f64>() / wsum;
            let vx: f64 = cells
                .iter()
                .map(|(k, x, _)| k * (x - mx).powi(2))
                .sum::<f64>()
                / wsum;
            let vy: f64 = cells
                .iter()
                .map(|(k, _, y)| k * (y - my).powi(2))
                .sum::<f64>()
                / wsum;
            let cv: f64 = cells
                .iter()
                .map(|(k, x, y)| k * (x - mx) * (y - my))
                .sum::<f64>()
                / wsum;
            let s = (2.0 * mx * my + c1) * (2.0 * cv + c2)
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            total += s.max(0.0);
        }
    }
    (total / (h * w) as f64).min(1.0)
}

fn criterion_1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_p, mut worst_s) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let a = random_image(&mut rng, 16, 16, 0.0, 1.0);
        // mix in correlated pairs so SSIM is not always near zero
        let noise = random_image(&mut rng, 16, 16, 0.0, 1.0);
        let t = rng.random_range(0.0..1.0);
        let b = Image::unit(
            16,
            16,
            a.as_slice()
                .iter()
                .zip(noise.as_slice())
                .map(|(x, n)| (1.0 - t) * x + t * n)
                .collect(),
        )
        .unwrap();
        worst_p = worst_p.max(rel_err(
            psnr(&a, &b, DEFAULT_EPSILON).unwrap(),
            oracle_psnr(&a, &b),
        ));
        worst_s = worst_s.max(rel_err(ssim(&a, &b).unwrap(), oracle_ssim(&a, &b)));
    }
    verdict(
        worst_p < 1e-6 && worst_s < 1e-6,
        format!("max rel err psnr {worst_p:.2e}, ssim {worst_s:.2e} over 50 pairs"),
    )
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_image(&mut rng, 16, 16, 0.0, 1.0);
    let p = psnr(&x, &x, DEFAULT_EPSILON).unwrap();
    verdict((p - 80.0).abs() < 1e-9, format!("psnr(x, x) = {p}"))
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, side: usize) -> (Vec<Image>, Vec<Image>) {
    let sr = (0..n)
        .map(|_| random_image(rng, side, side, 0.05, 0.95))
        .collect();
    let hr = (0..n)
        .map(|_| random_image(rng, side, side, 0.05, 0.95))
        .collect();
    (sr, hr)
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let combo = LossSpec::new(LossKind::Combo);
    let hybrid = LossSpec::new(LossKind::Hybrid);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=4);
        let (sr, hr) = random_batch(&mut rng, n, 16);
        let lp = psnr_loss(&sr, &hr, DEFAULT_EPSILON).unwrap().total;
        let ls = ssim_loss(&sr, &hr).unwrap().total;
        let l1 = l1_loss(&sr, &hr).unwrap().total;
        let c = combo_loss(&sr, &hr, &combo).unwrap().total;
        let y = hybrid_loss(&sr, &hr, &hybrid).unwrap().total;
        worst = worst.max((c - (0.5 * lp + 0.5 * ls)).abs());
        worst = worst.max((y - (0.7 * l1 + 0.2 * ls + 0.1 * lp)).abs());
    }
    let (x, _) = random_batch(&mut rng, 3, 16);
    let logits: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..6).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let at_identity = [
        l1_loss(&x, &x).unwrap().total,
        psnr_loss(&x, &x, DEFAULT_EPSILON).unwrap().total,
        ssim_loss(&x, &x).unwrap().total,
        combo_loss(&x, &x, &combo).unwrap().total,
        hybrid_loss(&x, &x, &hybrid).unwrap().total,
        classification_loss(&logits, &logits).unwrap().total,
    ];
    let vanish = at_identity.iter().all(|v| v.abs() < 1e-9);
    verdict(
        worst < 1e-9 && vanish,
        format!(
            "max identity gap {worst:.2e} over 100 batches; losses at identity {at_identity:?}"
        ),
    )
}

type Check = fn() -> Verdict;

type ImageLoss<'a> = Box<dyn Fn(&[Image], &[Image]) -> (LossValue, Vec<Grid>) + 'a>;

/// Coordinates within tolerance, and coordinates checked.
fn check_image_grad(loss: &ImageLoss, rng: &mut ChaCha8Rng, skip_kinks: bool) -> (usize, usize) {
    const H: f64 = 1e-4;
    let (mut ok, mut checked) = (0, 0);
    for _ in 0..10 {
        let (sr, hr) = random_batch(rng, 2, 8);
        let (_, grads) = loss(&sr, &hr);
        for b in 0..sr.len() {
            for i in 0..64 {
                let v = sr[b].as_slice()[i];
                if skip_kinks && (v - hr[b].as_slice()[i]).abs() < 10.0 * H {
                    continue;
                }
                let eval = |d: f64| {
                    let mut moved = sr.clone();
                    let mut data = moved[b].as_slice().to_vec();
                    data[i] = v + d;
                    moved[b] = Image::unit(8, 8, data).unwrap();
                    loss(&moved, &hr).0.total
                };
                let fd = (eval(H) - eval(-H)) / (2.0 * H);
                checked += 1;
                if rel_err(grads[b].as_slice()[i], fd) < 1e-3 {
                    ok += 1;
                }
            }
        }
    }
    (ok, checked)
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let combo = LossSpec::new(LossKind::Combo);
    let hybrid = LossSpec::new(LossKind::Hybrid);
    let cases: Vec<(&str, ImageLoss, bool)> = vec![
        (
            "L1",
            Box::new(|s, h| l1_loss_with_grad(s, h).unwrap()),
            true,
        ),
        (
            "PSNR",
            Box::new(|s, h| psnr_loss_with_grad(s, h, DEFAULT_EPSILON).unwrap()),
            false,
        ),
        (
            "SSIM",
            Box::new(|s, h| ssim_loss_with_grad(s, h).unwrap()),
            false,
        ),
        (
            "Combo",
            Box::new(|s, h| combo_loss_with_grad(s, h, &combo).unwrap()),
            false,
        ),
        (
            "Hybrid",
            Box::new(|s, h| hybrid_loss_with_grad(s, h, &hybrid).unwrap()),
            true,
        ),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, f, kinks) in &cases {
        let (ok, n) = check_image_grad(f, &mut rng, *kinks);
        let frac = ok as f64 / n as f64;
        pass &= n > 0 && frac >= 0.99;
        parts.push(format!("{name} {ok}/{n}"));
    }

    const H: f64 = 1e-4;
    let (mut ok, mut n) = (0, 0);
    for _ in 0..10 {
        let mut row = || {
            (0..6)
                .map(|_| rng.random_range(-3.0..3.0))
                .collect::<Vec<f64>>()
        };
        let sr: Vec<Vec<f64>> = (0..4).map(|_| row()).collect();
        let hr: Vec<Vec<f64>> = (0..4).map(|_| row()).collect();
        let (_, g) = classification_loss_with_grad(&sr, &hr).unwrap();
        for r in 0..4 {
            for c in 0..6 {
                let eval = |d: f64| {
                    let mut m = sr.clone();
                    m[r][c] += d;
                    classification_loss(&m, &hr).unwrap().total
                };
                let fd = (eval(H) - eval(-H)) / (2.0 * H);
                n += 1;
                if rel_err(g[r][c], fd) < 1e-3 {
                    ok += 1;
                }
            }
        }
    }
    pass &= ok as f64 / n as f64 >= 0.99;
    parts.push(format!("CLS {ok}/{n}"));
    verdict(
        pass,
        format!("coordinates within 1e-3: {}", parts.join(", ")),
    )
}

fn tiny_stage(stage: Stage) -> StageConfig {
    StageConfig {
        stage,
        sr_model: SrModelConfig {
            family: SrFamily::CarnLite,
            channels: 8,
            blocks: 1,
            ..Default::default()
        },
        classifier: ClassifierConfig {
            head_hidden: 16,
            ..Default::default()
        },
        epochs: 2,
        batch_size: 4,
        ..Default::default()
    }
}

fn criterion_5() -> Verdict {
    let samples = generate_synthetic(2, 5, 4).unwrap();
    let hr: Vec<Image> = samples.iter().map(|s| s.image.clone()).collect();
    let guide = build_classifier(&tiny_stage(Stage::SrFt).classifier, 5).unwrap();
    let sr = hr.clone();
    let rows = |imgs: &[Image]| -> Vec<Vec<f64>> {
        classifier_forward(&guide, imgs, Mode::Eval)
            .unwrap()
            .into_iter()
            .map(|r| r.to_vec())
            .collect()
    };
    let sr_loss = LossSpec::new(LossKind::Combo).evaluate(&sr, &hr).unwrap();
    let cls = classification_loss(&rows(&sr), &rows(&hr)).unwrap();
    let merged = merged_loss(&sr_loss, &cls).unwrap();
    let fabricated = cls.total == 0.0 && merged.total == sr_loss.total;

    let pairs = make_pairs(&samples).unwrap();
    let pt = run_sr_pretrain(&tiny_stage(Stage::SrPt), None, &pairs, &pairs).unwrap();
    let ft = run_sr_finetune(
        &tiny_stage(Stage::SrFt),
        &pt.checkpoint,
        &pairs,
        &pairs,
        &guide,
    )
    .unwrap();
    let mut worst = 0.0f64;
    let mut complete = !ft.log.steps.is_empty();
    for s in &ft.log.steps {
        match (s.loss.component(SR_LOSS), s.loss.component(CLS_LOSS)) {
            (Some(a), Some(b)) => worst = worst.max((s.loss.total - (a + b)).abs()),
            _ => complete = false,
        }
    }
    verdict(
        fabricated && complete && worst < 1e-9,
        format!(
            "fabricated step cls {} merged {} sr {}; {} logged steps, max |merged - sr - cls| {worst:.2e}",
            cls.total,
            merged.total,
            sr_loss.total,
            ft.log.steps.len()
        ),
    )
}

fn desk_scale_run(seed: u64) -> ProtocolOutcome {
    let samples = generate_synthetic(DESK_SCALE_PER_CLASS, seed, DESK_SCALE_LOOKS).unwrap();
    let (train, test) = split(
        &samples,
        &SplitSpec {
            train_fraction: 0.8,
            seed,
            stratified: true,
        },
    )
    .unwrap();
    assert_eq!((train.len(), test.len()), (600, 150));
    let started = Instant::now();
    let out = run_full_protocol(&ProtocolOptions::desk_scale(seed), &train, &test).unwrap();
    println!(
        "  seed {seed}: protocol finished in {:.0} s",
        started.elapsed().as_secs_f64()
    );
    out
}

fn criterion_6(runs: &[ProtocolOutcome]) -> Vec<(String, Verdict)> {
    let families = [SrFamily::CarnLite, SrFamily::RcanLite];
    let failures: usize = runs.iter().map(|r| r.report.failures.len()).sum();

    let mut a_pass = failures == 0;
    let mut a_info = Vec::new();
    let mut b_pass = true;
    let mut b_info = Vec::new();
    let mut c_pass = true;
    let mut c_info = Vec::new();
    let mut cls_info = Vec::new();
    for (&seed, run) in SEEDS.iter().zip(runs) {
        let gated = seed == GATED_SEED;
        let bic = run.baselines.bicubic_psnr;
        for fam in families {
            let Some(cell) = run.cell(fam, LossKind::Combo) else {
                a_pass &= !gated;
                c_pass &= !gated;
                continue;
            };
            let gain = cell.stage(Stage::SrPt).map_or(f64::NAN, |s| s.psnr) - bic;
            if gated && fam == SrFamily::CarnLite {
                a_pass &= gain >= 0.5;
            }
            a_info.push(format!("s{seed} {fam} {gain:+.2}"));

            let means = &cell.stage(Stage::SrFt).unwrap().train_loss_means;
            let (first, last) = (means[0], means[means.len() - 1]);
            let drop = (first - last) / first;
            if gated {
                c_pass &= means.len() == 10 && drop >= 0.20;
            }
            c_info.push(format!("s{seed} {fam} {:.1}%", 100.0 * drop));
        }
        if gated {
            b_pass &= run.baselines.hr_f1 >= 0.80;
        }
        b_info.push(format!("s{seed} {:.3}", run.baselines.hr_f1));
        cls_info.push(cls_component_note(seed, run));
    }

    let mut d_pass = failures == 0;
    let mut d_info = Vec::new();
    for fam in families {
        let deltas: Vec<f64> = runs
            .iter()
            .filter_map(|r| r.cell(fam, LossKind::Combo)?.f1_improvement())
            .collect();
        let mean = deltas.iter().sum::<f64>() / deltas.len().max(1) as f64;
        d_pass &= deltas.len() == SEEDS.len() && mean >= -0.01;
        d_info.push(format!("{fam} mean {mean:+.4} from {deltas:.4?}"));
    }

    vec![
        ("6a".into(), verdict(a_pass, format!("SR-PT dB over bicubic (gate: CARN, seed {GATED_SEED}): {}", a_info.join(", ")))),
        ("6b".into(), verdict(b_pass, format!("HR classifier macro-F1 (gate: seed {GATED_SEED}): {}", b_info.join(", ")))),
        (
            "6c".into(),
            verdict(
                c_pass,
                format!(
                    "SR-FT merged train loss drop, epoch 1 to 10 (gate: seed {GATED_SEED}): {}; classification term alone: {}",
                    c_info.join(", "),
                    cls_info.join(", ")
                ),
            ),
        ),
        ("6d".into(), verdict(d_pass, format!("F1(SR-FT) - F1(SR-PT): {}", d_info.join("; ")))),
    ]
}

/// First and last SR-FT epoch mean of the classification term.
fn cls_component_note(seed: u64, run: &ProtocolOutcome) -> String {
    let mut parts = Vec::new();
    for cell in &run.cells {
        let cls = &cell.stage(Stage::SrFt).unwrap().component_means[CLS_LOSS];
        let (first, last) = (cls[0], cls[cls.len() - 1]);
        parts.push(format!(
            "s{seed} {} {first:.4}->{last:.4} ({:.0}%)",
            cell.family,
            100.0 * (first - last) / first
        ));
    }
    parts.join(", ")
}

fn criterion_7(first: &[ProtocolOutcome], second: &[ProtocolOutcome]) -> Verdict {
    let mut worst = 0.0f64;
    let mut compared = 0;
    let mut same_shape = first.len() == second.len();
    for (a, b) in first.iter().zip(second) {
        same_shape &= a.report.rows.len() == b.report.rows.len();
        for (x, y) in a.report.rows.iter().zip(&b.report.rows) {
            same_shape &= x.key() == y.key();
            for (u, v) in [(x.psnr, y.psnr), (x.ssim, y.ssim), (x.macro_f1, y.macro_f1)] {
                match (u, v) {
                    (Some(u), Some(v)) => {
                        worst = worst.max((u - v).abs());
                        compared += 1;
                    }
                    (None, None) => {}
                    _ => same_shape = false,
                }
            }
        }
        for (x, y) in a.cells.iter().zip(&b.cells) {
            for (s, t) in x.stages.iter().zip(&y.stages) {
                for (u, v) in s.train_loss_means.iter().zip(&t.train_loss_means) {
                    worst = worst.max((u - v).abs());
                    compared += 1;
                }
            }
        }
    }
    verdict(
        same_shape && worst <= 1e-6,
        format!("{compared} numbers compared, max abs difference {worst:.2e}"),
    )
}

fn brute_f1(pred: &[usize], truth: &[usize]) -> ([f64; 6], f64) {
    let mut per = [0.0; 6];
    for (k, slot) in per.iter_mut().enumerate() {
        let tp = pred
            .iter()
            .zip(truth)
            .filter(|(p, t)| **p == k && **t == k)
            .count() as f64;
        let fp = pred
            .iter()
            .zip(truth)
            .filter(|(p, t)| **p == k && **t != k)
            .count() as f64;
        let fneg = pred
            .iter()
            .zip(truth)
            .filter(|(p, t)| **p != k && **t == k)
            .count() as f64;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fneg > 0.0 {
            tp / (tp + fneg)
        } else {
            0.0
        };
        *slot = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
    }
    (per, per.iter().sum::<f64>() / 6.0)
}

fn criterion_8() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..60);
        // skew towards a few classes so empty classes occur
        let k = rng.random_range(1..=6);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..6)).collect();
        let (per, mac) = f1_scores(&confusion_matrix(&pred, &truth).unwrap());
        let (bper, bmac) = brute_f1(&pred, &truth);
        worst = worst.max((mac - bmac).abs());
        for (x, y) in per.iter().zip(&bper) {
            worst = worst.max((x - y).abs());
        }
    }
    let rows = [
        ("VGG16 (CARN-Combo)", 63.12, 65.40, 2.28),
        ("MobileNetv2 (RCAN-Combo)", 60.84, 62.40, 1.56),
        ("MobileNetv2 (RCAN-L1)", 60.56, 61.35, 0.79),
        ("ResNet50 (EDSR-Combo)", 62.34, 62.85, 0.51),
    ];
    let pt: Vec<(String, f64)> = rows.iter().map(|r| (r.0.to_string(), r.1)).collect();
    let ft: Vec<(String, f64)> = rows.iter().map(|r| (r.0.to_string(), r.2)).collect();
    let table = improvement_table(&pt, &ft).unwrap();
    let deltas: Vec<String> = table.iter().map(|i| format!("{:+.2}", i.delta)).collect();
    let table_ok = table.len() == 4
        && table
            .iter()
            .zip(&rows)
            .all(|(i, r)| (i.delta - r.3).abs() < 1e-9);
    verdict(
        worst <= 1e-12 && table_ok,
        format!(
            "max f1 diff {worst:.2e} over 1000 sequences; deltas {}",
            deltas.join(" ")
        ),
    )
}

fn report(id: &str, v: &Verdict, started: Instant) -> bool {
    println!(
        "criterion {id}: {} ({:.1} s) {}",
        if v.pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64(),
        v.detail
    );
    v.pass
}

fn main() -> ExitCode {
    // libtest flags such as --list are not meaningful here
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut all = true;
    let quick: [(&str, Check); 5] = [
        ("1", criterion_1),
        ("2", criterion_2),
        ("3", criterion_3),
        ("4", criterion_4),
        ("5", criterion_5),
    ];
    for (id, f) in quick {
        let t = Instant::now();
        all &= report(id, &f(), t);
    }

    let t = Instant::now();
    let first: Vec<ProtocolOutcome> = SEEDS.iter().map(|&s| desk_scale_run(s)).collect();
    for (id, v) in criterion_6(&first) {
        all &= report(&id, &v, t);
    }

    let t = Instant::now();
    let second: Vec<ProtocolOutcome> = SEEDS.iter().map(|&s| desk_scale_run(s)).collect();
    all &= report("7", &criterion_7(&first, &second), t);

    let t = Instant::now();
    all &= report("8", &criterion_8(), t);

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
