//! Image-quality and classification metrics.
//!
//! PSNR and SSIM come in value-only and value-plus-gradient forms; the gradient
//! variants are what the loss functions are built on.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::image::{check_pair, Grid, Image};
use crate::NUM_CLASSES;

/// MSE floor used by PSNR.
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Side length of the Gaussian SSIM window.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Smallest image side accepted by [`ssim`].
pub const SSIM_MIN_SIDE: usize = 8;

const TEN_OVER_LN10: f64 = 10.0 / std::f64::consts::LN_10;

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.as_slice().len() as f64)
}

pub fn psnr_max(peak: f64, epsilon: f64) -> Result<f64> {
    if !(peak > 0.0 && epsilon > 0.0) {
        return Err(Error::Domain(format!(
            "psnr_max needs positive peak and epsilon, got M={peak}, eps={epsilon}"
        )));
    }
    Ok(10.0 * (peak * peak / epsilon).log10())
}

/// `10·log10(M² / max(MSE, ε))`.
pub fn psnr(a: &Image, b: &Image, epsilon: f64) -> Result<f64> {
    let m = mse(a, b)?;
    psnr_from_mse(m, a.peak(), epsilon)
}

pub fn psnr_from_mse(mse: f64, peak: f64, epsilon: f64) -> Result<f64> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::Domain(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    Ok(10.0 * (peak * peak / mse.max(epsilon)).log10())
}

/// PSNR and its gradient with respect to `a`. The gradient is zero on the
/// flat region `MSE ≤ ε`.
pub fn psnr_with_grad(a: &Image, b: &Image, epsilon: f64) -> Result<(f64, Grid)> {
    let m = mse(a, b)?;
    let value = psnr_from_mse(m, a.peak(), epsilon)?;
    let n = a.as_slice().len() as f64;
    let mut grad = Grid::zeros(a.height(), a.width());
    if m > epsilon {
        // d/da 10 log10(M²/mse) = -(10/ln10) · (2 (a - b) / n) / mse
        let k = -TEN_OVER_LN10 * 2.0 / (n * m);
        for ((g, x), y) in grad
            .as_mut_slice()
            .iter_mut()
            .zip(a.as_slice())
            .zip(b.as_slice())
        {
            *g = k * (x - y);
        }
    }
    Ok((value, grad))
}

/// Mean PSNR over image pairs (computed per pair, then averaged).
pub fn mean_psnr(a: &[Image], b: &[Image], epsilon: f64) -> Result<f64> {
    crate::image::check_batches(a, b)?;
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        total += psnr(x, y, epsilon)?;
    }
    Ok(total / a.len() as f64)
}

pub fn mean_ssim(a: &[Image], b: &[Image]) -> Result<f64> {
    crate::image::check_batches(a, b)?;
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        total += ssim(x, y)?;
    }
    Ok(total / a.len() as f64)
}

/// Per-position normalized 1-D Gaussian taps for one axis.
///
/// The window is truncated at the image border and renormalized to sum to one,
/// so interior positions use the full 11-tap kernel.
#[derive(Debug, Clone)]
struct AxisWindow {
    taps: Vec<(usize, Vec<f64>)>,
}

impl AxisWindow {
    fn new(len: usize) -> Self {
        let half = (SSIM_WINDOW / 2) as isize;
        let taps = (0..len as isize)
            .map(|p| {
                let lo = (p - half).max(0);
                let hi = (p + half).min(len as isize - 1);
                let mut w: Vec<f64> = (lo..=hi)
                    .map(|q| {
                        let d = (q - p) as f64;
                        (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
                    })
                    .collect();
                let s: f64 = w.iter().sum();
                w.iter_mut().for_each(|v| *v /= s);
                (lo as usize, w)
            })
            .collect();
        Self { taps }
    }
}

struct Window {
    rows: AxisWindow,
    cols: AxisWindow,
    height: usize,
    width: usize,
}

impl Window {
    fn new(height: usize, width: usize) -> Self {
        Self {
            rows: AxisWindow::new(height),
            cols: AxisWindow::new(width),
            height,
            width,
        }
    }

    fn blur(&self, src: &[f64]) -> Vec<f64> {
        let (h, w) = (self.height, self.width);
        let mut tmp = vec![0.0; h * w];
        for r in 0..h {
            let row = &src[r * w..(r + 1) * w];
            for (c, (start, taps)) in self.cols.taps.iter().enumerate() {
                tmp[r * w + c] = taps.iter().zip(&row[*start..]).map(|(k, v)| k * v).sum();
            }
        }
        let mut out = vec![0.0; h * w];
        for (r, (start, taps)) in self.rows.taps.iter().enumerate() {
            let dst = &mut out[r * w..(r + 1) * w];
            for (i, k) in taps.iter().enumerate() {
                let s = &tmp[(start + i) * w..(start + i + 1) * w];
                dst.iter_mut().zip(s).for_each(|(d, v)| *d += k * v);
            }
        }
        out
    }

    /// Transpose of [`Window::blur`].
    fn blur_adjoint(&self, src: &[f64]) -> Vec<f64> {
        let (h, w) = (self.height, self.width);
        let mut tmp = vec![0.0; h * w];
        for (r, (start, taps)) in self.rows.taps.iter().enumerate() {
            let s = &src[r * w..(r + 1) * w];
            for (i, k) in taps.iter().enumerate() {
                let dst = &mut tmp[(start + i) * w..(start + i + 1) * w];
                dst.iter_mut().zip(s).for_each(|(d, v)| *d += k * v);
            }
        }
        let mut out = vec![0.0; h * w];
        for r in 0..h {
            for (c, (start, taps)) in self.cols.taps.iter().enumerate() {
                let g = tmp[r * w + c];
                let dst = &mut out[r * w + start..];
                dst.iter_mut().zip(taps).for_each(|(d, k)| *d += k * g);
            }
        }
        out
    }
}

fn check_ssim_pair(a: &Image, b: &Image) -> Result<()> {
    check_pair(a, b)?;
    let (h, w) = a.dims();
    if h < SSIM_MIN_SIDE || w < SSIM_MIN_SIDE {
        return shape_err(format!(
            "SSIM needs images of at least {SSIM_MIN_SIDE}x{SSIM_MIN_SIDE}, got {h}x{w}"
        ));
    }
    Ok(())
}

struct SsimStats {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    var_x: Vec<f64>,
    var_y: Vec<f64>,
    cov: Vec<f64>,
}

fn local_stats(win: &Window, x: &[f64], y: &[f64]) -> SsimStats {
    let mu_x = win.blur(x);
    let mu_y = win.blur(y);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let sxx = win.blur(&xx);
    let syy = win.blur(&yy);
    let sxy = win.blur(&xy);
    let var_x = sxx.iter().zip(&mu_x).map(|(s, m)| s - m * m).collect();
    let var_y = syy.iter().zip(&mu_y).map(|(s, m)| s - m * m).collect();
    let cov = sxy
        .iter()
        .zip(mu_x.iter().zip(&mu_y))
        .map(|(s, (a, b))| s - a * b)
        .collect();
    SsimStats {
        mu_x,
        mu_y,
        var_x,
        var_y,
        cov,
    }
}

fn stabilizers(peak: f64) -> (f64, f64) {
    ((SSIM_K1 * peak).powi(2), (SSIM_K2 * peak).powi(2))
}

/// Mean structural similarity with an 11×11 Gaussian window (σ = 1.5).
/// Negative local values are clamped to zero, so the result lies in `[0, 1]`.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_ssim_pair(a, b)?;
    let (h, w) = a.dims();
    let win = Window::new(h, w);
    let st = local_stats(&win, a.as_slice(), b.as_slice());
    let (c1, c2) = stabilizers(a.peak());
    let mut total = 0.0;
    for i in 0..h * w {
        let num = (2.0 * st.mu_x[i] * st.mu_y[i] + c1) * (2.0 * st.cov[i] + c2);
        let den = (st.mu_x[i].powi(2) + st.mu_y[i].powi(2) + c1) * (st.var_x[i] + st.var_y[i] + c2);
        total += (num / den).max(0.0);
    }
    Ok((total / (h * w) as f64).min(1.0))
}

/// SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Grid)> {
    check_ssim_pair(a, b)?;
    let (h, w) = a.dims();
    let n = (h * w) as f64;
    let win = Window::new(h, w);
    let (x, y) = (a.as_slice(), b.as_slice());
    let st = local_stats(&win, x, y);
    let (c1, c2) = stabilizers(a.peak());

    let mut total = 0.0;
    let mut g_mu = vec![0.0; h * w];
    let mut g_sxx = vec![0.0; h * w];
    let mut g_sxy = vec![0.0; h * w];
    for i in 0..h * w {
        let (mx, my) = (st.mu_x[i], st.mu_y[i]);
        let a1 = 2.0 * mx * my + c1;
        let a2 = 2.0 * st.cov[i] + c2;
        let b1 = mx * mx + my * my + c1;
        let b2 = st.var_x[i] + st.var_y[i] + c2;
        let s = a1 * a2 / (b1 * b2);
        if s <= 0.0 {
            continue;
        }
        total += s;
        let d_mu = 2.0 * my * a2 / (b1 * b2) - s * 2.0 * mx / b1;
        let d_var = -s / b2;
        let d_cov = 2.0 * a1 / (b1 * b2);
        // var_x = Sxx - mu_x², cov = Sxy - mu_x mu_y
        g_mu[i] = (d_mu - 2.0 * mx * d_var - my * d_cov) / n;
        g_sxx[i] = d_var / n;
        g_sxy[i] = d_cov / n;
    }
    let t_mu = win.blur_adjoint(&g_mu);
    let t_sxx = win.blur_adjoint(&g_sxx);
    let t_sxy = win.blur_adjoint(&g_sxy);
    let grad: Vec<f64> = (0..h * w)
        .map(|i| t_mu[i] + 2.0 * x[i] * t_sxx[i] + y[i] * t_sxy[i])
        .collect();
    Ok(((total / n).min(1.0), Grid::new(h, w, grad)?))
}

/// Row = truth, column = prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix(pub [[u64; NUM_CLASSES]; NUM_CLASSES]);

impl ConfusionMatrix {
    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.0[truth][predicted]
    }

    pub fn row_sums(&self) -> [u64; NUM_CLASSES] {
        self.0.map(|row| row.iter().sum())
    }

    pub fn col_sums(&self) -> [u64; NUM_CLASSES] {
        let mut out = [0; NUM_CLASSES];
        for row in &self.0 {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    pub fn total(&self) -> u64 {
        self.row_sums().iter().sum()
    }
}

pub fn confusion_matrix(predictions: &[usize], truths: &[usize]) -> Result<ConfusionMatrix> {
    if predictions.len() != truths.len() {
        return shape_err(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        ));
    }
    let mut m = ConfusionMatrix::default();
    for (&p, &t) in predictions.iter().zip(truths) {
        if p >= NUM_CLASSES || t >= NUM_CLASSES {
            return Err(Error::Domain(format!(
                "label out of range 0..{NUM_CLASSES}: truth {t}, prediction {p}"
            )));
        }
        m.0[t][p] += 1;
    }
    Ok(m)
}

/// Per-class F1 and their unweighted mean. Classes with no support and no
/// predictions score 0.
pub fn f1_scores(confusion: &ConfusionMatrix) -> ([f64; NUM_CLASSES], f64) {
    let rows = confusion.row_sums();
    let cols = confusion.col_sums();
    let mut per_class = [0.0; NUM_CLASSES];
    for (k, f1) in per_class.iter_mut().enumerate() {
        let tp = confusion.0[k][k] as f64;
        let denom = rows[k] as f64 + cols[k] as f64;
        *f1 = if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
    }
    let macro_f1 = per_class.iter().sum::<f64>() / NUM_CLASSES as f64;
    (per_class, macro_f1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub per_class_f1: [f64; NUM_CLASSES],
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
}

impl ClassificationMetrics {
    pub fn from_labels(predictions: &[usize], truths: &[usize]) -> Result<Self> {
        let confusion = confusion_matrix(predictions, truths)?;
        let (per_class_f1, macro_f1) = f1_scores(&confusion);
        Ok(Self {
            per_class_f1,
            macro_f1,
            confusion,
        })
    }
}

/// Evaluation quantities for one configuration; each part is optional because
/// SR validation has no labels and classifier validation has no SR pairs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub classification: Option<ClassificationMetrics>,
}

impl MetricReport {
    pub fn image_quality(sr: &[Image], hr: &[Image], epsilon: f64) -> Result<Self> {
        Ok(Self {
            psnr_db: Some(mean_psnr(sr, hr, epsilon)?),
            ssim: Some(mean_ssim(sr, hr)?),
            classification: None,
        })
    }

    pub fn macro_f1(&self) -> Option<f64> {
        self.classification.as_ref().map(|c| c.macro_f1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(v: f64, n: usize) -> Image {
        Image::constant(n, n, v).unwrap()
    }

    #[test]
    fn mse_examples() {
        let z = constant(0.0, 4);
        assert_eq!(mse(&z, &z).unwrap(), 0.0);
        assert_eq!(mse(&z, &constant(1.0, 4)).unwrap(), 1.0);
        assert_eq!(mse(&z, &constant(0.5, 4)).unwrap(), 0.25);
    }

    #[test]
    fn mse_errors() {
        let a = constant(0.0, 4);
        assert!(matches!(mse(&a, &constant(0.0, 5)), Err(Error::Shape(_))));
        let b = Image::new(4, 4, vec![0.0; 16], 255.0).unwrap();
        assert!(matches!(mse(&a, &b), Err(Error::Config(_))));
    }

    #[test]
    fn psnr_examples() {
        let z = constant(0.0, 4);
        assert_close!(psnr(&z, &z, 1e-8).unwrap(), 80.0, 1e-12);
        assert_close!(psnr(&z, &constant(1.0, 4), 1e-8).unwrap(), 0.0, 1e-12);
        assert_close!(psnr(&z, &constant(0.5, 4), 1e-8).unwrap(), 6.0206, 1e-4);
    }

    #[test]
    fn psnr_max_examples() {
        assert_close!(psnr_max(1.0, 1e-8).unwrap(), 80.0, 1e-12);
        assert_close!(psnr_max(255.0, 1e-8).unwrap(), 128.131, 1e-3);
        assert_close!(psnr_max(1.0, 1.0).unwrap(), 0.0, 1e-15);
        assert!(matches!(psnr_max(0.0, 1e-8), Err(Error::Domain(_))));
        assert!(matches!(psnr_max(1.0, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn ssim_constants() {
        let z = constant(0.0, 16);
        assert_eq!(ssim(&z, &z).unwrap(), 1.0);
        let c1 = 1e-4;
        assert_close!(
            ssim(&z, &constant(1.0, 16)).unwrap(),
            c1 / (1.0 + c1),
            1e-12
        );
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = constant(0.0, 7);
        assert!(matches!(ssim(&a, &a), Err(Error::Shape(_))));
    }

    #[test]
    fn confusion_examples() {
        let labels: Vec<usize> = (0..12).map(|i| i / 2).collect();
        let m = confusion_matrix(&labels, &labels).unwrap();
        for k in 0..NUM_CLASSES {
            assert_eq!(m.get(k, k), 2);
        }
        assert_eq!(m.total(), 12);
        assert_eq!(
            confusion_matrix(&[], &[]).unwrap(),
            ConfusionMatrix::default()
        );

        let m = confusion_matrix(&[0, 1, 1], &[0, 0, 1]).unwrap();
        assert_eq!((m.get(0, 0), m.get(0, 1), m.get(1, 1)), (1, 1, 1));
        assert_eq!(m.total(), 3);
        assert!(matches!(
            confusion_matrix(&[6], &[0]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(confusion_matrix(&[0], &[]), Err(Error::Shape(_))));
    }

    #[test]
    fn f1_examples() {
        let labels: Vec<usize> = (0..12).map(|i| i / 2).collect();
        let (pc, mac) = f1_scores(&confusion_matrix(&labels, &labels).unwrap());
        assert_eq!(pc, [1.0; 6]);
        assert_eq!(mac, 1.0);

        let (pc, mac) = f1_scores(&confusion_matrix(&[0, 1, 1], &[0, 0, 1]).unwrap());
        assert_close!(pc[0], 2.0 / 3.0, 1e-15);
        assert_close!(pc[1], 2.0 / 3.0, 1e-15);
        assert_eq!(&pc[2..], &[0.0; 4]);
        assert_close!(mac, 2.0 / 9.0, 1e-15);
    }
}
