//! Image-quality losses (L1, PSNR-loss, SSIM-loss, Combo, Hybrid), the
//! classifier-consistency loss and the merged fine-tuning loss.
//!
//! Every SR loss has a `*_with_grad` form returning the gradient with respect to
//! the SR batch; training feeds that gradient into the network's backward pass.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::image::{check_batches, Grid, Image};
use crate::metrics::{psnr_max, psnr_with_grad, ssim_with_grad, DEFAULT_EPSILON};
use crate::NUM_CLASSES;

pub const L1: &str = "l1";
pub const PSNR_LOSS: &str = "psnr_loss";
pub const SSIM_LOSS: &str = "ssim_loss";
pub const SR_LOSS: &str = "sr_loss";
pub const CLS_LOSS: &str = "cls_loss";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LossKind {
    L1,
    Combo,
    Hybrid,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::L1, LossKind::Combo, LossKind::Hybrid];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::L1 => "L1",
            LossKind::Combo => "Combo",
            LossKind::Hybrid => "Hybrid",
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(LossKind::L1),
            "combo" => Ok(LossKind::Combo),
            "hybrid" => Ok(LossKind::Hybrid),
            other => Err(Error::Config(format!("unknown loss kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridWeights {
    pub l1: f64,
    pub ssim: f64,
    pub psnr: f64,
}

impl Default for HybridWeights {
    fn default() -> Self {
        Self {
            l1: 0.7,
            ssim: 0.2,
            psnr: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Weight of the PSNR term in Combo.
    pub alpha: f64,
    /// Weight of the SSIM term in Combo.
    pub beta: f64,
    pub hybrid_weights: HybridWeights,
    pub epsilon: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            kind: LossKind::Combo,
            alpha: 0.5,
            beta: 0.5,
            hybrid_weights: HybridWeights::default(),
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    /// Returns every violated constraint (empty when valid).
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let hw = self.hybrid_weights;
        for (name, v) in [
            ("loss.alpha", self.alpha),
            ("loss.beta", self.beta),
            ("loss.hybrid_weights.l1", hw.l1),
            ("loss.hybrid_weights.ssim", hw.ssim),
            ("loss.hybrid_weights.psnr", hw.psnr),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                out.push(format!("{name}: weight must be finite and >= 0, got {v}"));
            }
        }
        if ((hw.l1 + hw.ssim + hw.psnr) - 1.0).abs() > 1e-12 {
            out.push(format!(
                "loss.hybrid_weights: must sum to 1, got {}",
                hw.l1 + hw.ssim + hw.psnr
            ));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            out.push(format!("loss.epsilon: must be > 0, got {}", self.epsilon));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    /// Evaluates the configured SR criterion.
    pub fn evaluate(&self, sr: &[Image], hr: &[Image]) -> Result<LossValue> {
        Ok(self.evaluate_with_grad(sr, hr)?.0)
    }

    pub fn evaluate_with_grad(&self, sr: &[Image], hr: &[Image]) -> Result<(LossValue, Vec<Grid>)> {
        match self.kind {
            LossKind::L1 => l1_loss_with_grad(sr, hr),
            LossKind::Combo => combo_loss_with_grad(sr, hr, self),
            LossKind::Hybrid => hybrid_loss_with_grad(sr, hr, self),
        }
    }
}

/// A scalar loss together with the named sub-losses it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub components: BTreeMap<String, f64>,
}

impl LossValue {
    fn single(name: &str, value: f64) -> Self {
        Self {
            total: value,
            components: BTreeMap::from([(name.to_string(), value)]),
        }
    }

    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.get(name).copied()
    }

    /// Builds a loss from raw component values and weights; `total` is the
    /// weighted sum in the order given.
    pub fn weighted(parts: &[(&str, f64, f64)]) -> Self {
        let total = parts.iter().map(|(_, w, v)| w * v).sum();
        Self {
            total,
            components: parts.iter().map(|(n, _, v)| (n.to_string(), *v)).collect(),
        }
    }

    pub fn ensure_finite(&self) -> Result<()> {
        if !self.total.is_finite() || self.components.values().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite loss: {self:?}")));
        }
        Ok(())
    }
}

fn zero_grads(sr: &[Image]) -> Vec<Grid> {
    sr.iter()
        .map(|i| Grid::zeros(i.height(), i.width()))
        .collect()
}

fn axpy(dst: &mut [Grid], w: f64, src: &[Grid]) {
    for (d, s) in dst.iter_mut().zip(src) {
        for (a, b) in d.as_mut_slice().iter_mut().zip(s.as_slice()) {
            *a += w * b;
        }
    }
}

pub fn l1_loss(sr: &[Image], hr: &[Image]) -> Result<LossValue> {
    Ok(l1_loss_with_grad(sr, hr)?.0)
}

/// Mean absolute difference over every pixel of every image. The subgradient
/// at zero difference is taken as 0.
pub fn l1_loss_with_grad(sr: &[Image], hr: &[Image]) -> Result<(LossValue, Vec<Grid>)> {
    check_batches(sr, hr)?;
    let count: usize = sr.iter().map(|i| i.as_slice().len()).sum();
    let n = count as f64;
    let mut sum = 0.0;
    let mut grads = zero_grads(sr);
    for ((a, b), g) in sr.iter().zip(hr).zip(&mut grads) {
        for ((x, y), d) in a.as_slice().iter().zip(b.as_slice()).zip(g.as_mut_slice()) {
            let diff = x - y;
            sum += diff.abs();
            *d = if diff > 0.0 {
                1.0 / n
            } else if diff < 0.0 {
                -1.0 / n
            } else {
                0.0
            };
        }
    }
    Ok((LossValue::single(L1, sum / n), grads))
}

pub fn psnr_loss(sr: &[Image], hr: &[Image], epsilon: f64) -> Result<LossValue> {
    Ok(psnr_loss_with_grad(sr, hr, epsilon)?.0)
}

/// `(PSNR_max − PSNR) / PSNR_max`, with PSNR averaged over pairs.
pub fn psnr_loss_with_grad(
    sr: &[Image],
    hr: &[Image],
    epsilon: f64,
) -> Result<(LossValue, Vec<Grid>)> {
    check_batches(sr, hr)?;
    let pmax = psnr_max(sr[0].peak(), epsilon)?;
    let n = sr.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(sr.len());
    for (a, b) in sr.iter().zip(hr) {
        let (p, mut g) = psnr_with_grad(a, b, epsilon)?;
        total += (pmax - p) / pmax;
        let k = -1.0 / (pmax * n);
        g.as_mut_slice().iter_mut().for_each(|v| *v *= k);
        grads.push(g);
    }
    Ok((LossValue::single(PSNR_LOSS, total / n), grads))
}

pub fn ssim_loss(sr: &[Image], hr: &[Image]) -> Result<LossValue> {
    Ok(ssim_loss_with_grad(sr, hr)?.0)
}

/// `(1/N) Σ (1 − SSIM(sr, hr))`.
pub fn ssim_loss_with_grad(sr: &[Image], hr: &[Image]) -> Result<(LossValue, Vec<Grid>)> {
    check_batches(sr, hr)?;
    let n = sr.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(sr.len());
    for (a, b) in sr.iter().zip(hr) {
        let (s, mut g) = ssim_with_grad(a, b)?;
        total += 1.0 - s;
        g.as_mut_slice().iter_mut().for_each(|v| *v *= -1.0 / n);
        grads.push(g);
    }
    Ok((LossValue::single(SSIM_LOSS, total / n), grads))
}

pub fn combo_loss(sr: &[Image], hr: &[Image], spec: &LossSpec) -> Result<LossValue> {
    Ok(combo_loss_with_grad(sr, hr, spec)?.0)
}

/// `α·L_PSNR + β·L_SSIM`.
pub fn combo_loss_with_grad(
    sr: &[Image],
    hr: &[Image],
    spec: &LossSpec,
) -> Result<(LossValue, Vec<Grid>)> {
    let (lp, gp) = psnr_loss_with_grad(sr, hr, spec.epsilon)?;
    let (ls, gs) = ssim_loss_with_grad(sr, hr)?;
    let value = LossValue::weighted(&[
        (PSNR_LOSS, spec.alpha, lp.total),
        (SSIM_LOSS, spec.beta, ls.total),
    ]);
    let mut grads = zero_grads(sr);
    axpy(&mut grads, spec.alpha, &gp);
    axpy(&mut grads, spec.beta, &gs);
    Ok((value, grads))
}

pub fn hybrid_loss(sr: &[Image], hr: &[Image], spec: &LossSpec) -> Result<LossValue> {
    Ok(hybrid_loss_with_grad(sr, hr, spec)?.0)
}

/// `w_l1·L1 + w_ssim·L_SSIM + w_psnr·L_PSNR` (0.7 / 0.2 / 0.1 by default).
pub fn hybrid_loss_with_grad(
    sr: &[Image],
    hr: &[Image],
    spec: &LossSpec,
) -> Result<(LossValue, Vec<Grid>)> {
    let w = spec.hybrid_weights;
    let (l1, g1) = l1_loss_with_grad(sr, hr)?;
    let (ls, gs) = ssim_loss_with_grad(sr, hr)?;
    let (lp, gp) = psnr_loss_with_grad(sr, hr, spec.epsilon)?;
    let value = LossValue::weighted(&[
        (L1, w.l1, l1.total),
        (SSIM_LOSS, w.ssim, ls.total),
        (PSNR_LOSS, w.psnr, lp.total),
    ]);
    let mut grads = zero_grads(sr);
    axpy(&mut grads, w.l1, &g1);
    axpy(&mut grads, w.ssim, &gs);
    axpy(&mut grads, w.psnr, &gp);
    Ok((value, grads))
}

pub fn classification_loss(logits_sr: &[Vec<f64>], logits_hr: &[Vec<f64>]) -> Result<LossValue> {
    Ok(classification_loss_with_grad(logits_sr, logits_hr)?.0)
}

/// Mean squared difference between classifier logits on SR and HR inputs.
/// The gradient is with respect to `logits_sr`.
pub fn classification_loss_with_grad(
    logits_sr: &[Vec<f64>],
    logits_hr: &[Vec<f64>],
) -> Result<(LossValue, Vec<Vec<f64>>)> {
    if logits_sr.is_empty() {
        return Err(Error::Domain("empty logit batch".into()));
    }
    if logits_sr.len() != logits_hr.len() {
        return shape_err(format!(
            "logit batch mismatch: {} vs {}",
            logits_sr.len(),
            logits_hr.len()
        ));
    }
    if let Some(bad) = logits_sr
        .iter()
        .chain(logits_hr)
        .find(|v| v.len() != NUM_CLASSES)
    {
        return shape_err(format!(
            "logit vectors must have {NUM_CLASSES} entries, got {}",
            bad.len()
        ));
    }
    let n = (logits_sr.len() * NUM_CLASSES) as f64;
    let mut sum = 0.0;
    let grads = logits_sr
        .iter()
        .zip(logits_hr)
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(x, y)| {
                    let d = x - y;
                    sum += d * d;
                    2.0 * d / n
                })
                .collect()
        })
        .collect();
    Ok((LossValue::single(CLS_LOSS, sum / n), grads))
}

/// `L_SR + L_CLS`, recording both totals as components.
pub fn merged_loss(sr_loss: &LossValue, cls_loss: &LossValue) -> Result<LossValue> {
    sr_loss.ensure_finite()?;
    cls_loss.ensure_finite()?;
    Ok(LossValue {
        total: sr_loss.total + cls_loss.total,
        components: BTreeMap::from([
            (SR_LOSS.to_string(), sr_loss.total),
            (CLS_LOSS.to_string(), cls_loss.total),
        ]),
    })
}
