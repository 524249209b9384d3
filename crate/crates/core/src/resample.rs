//! Bicubic resampling (Keys kernel, `a = -0.5`) with half-sample symmetric
//! borders. Downscaling widens the kernel by the scale factor (antialiasing).

use crate::error::{shape_err, Result};
use crate::image::Image;

const KEYS_A: f64 = -0.5;

pub(crate) fn cubic(x: f64) -> f64 {
    let t = x.abs();
    if t <= 1.0 {
        (KEYS_A + 2.0) * t * t * t - (KEYS_A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        KEYS_A * t * t * t - 5.0 * KEYS_A * t * t + 8.0 * KEYS_A * t - 4.0 * KEYS_A
    } else {
        0.0
    }
}

/// Maps any integer index onto `0..len` by half-sample symmetric reflection.
pub(crate) fn reflect(i: isize, len: usize) -> usize {
    let n = len as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Per-output-sample `(source index, weight)` lists for one axis.
fn axis_weights(in_len: usize, out_len: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = out_len as f64 / in_len as f64;
    // widen the kernel when shrinking
    let stretch = if scale < 1.0 { 1.0 / scale } else { 1.0 };
    let support = 2.0 * stretch;
    (0..out_len)
        .map(|i| {
            let center = (i as f64 + 0.5) / scale - 0.5;
            let lo = (center - support).floor() as isize;
            let hi = (center + support).ceil() as isize;
            let mut taps: Vec<(usize, f64)> = (lo..=hi)
                .filter_map(|j| {
                    let w = cubic((j as f64 - center) / stretch);
                    (w != 0.0).then(|| (reflect(j, in_len), w))
                })
                .collect();
            let sum: f64 = taps.iter().map(|(_, w)| w).sum();
            taps.iter_mut().for_each(|(_, w)| *w /= sum);
            taps
        })
        .collect()
}

/// Separable resize to `out_h × out_w` without clamping.
pub(crate) fn resize_raw(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let wx = axis_weights(w, out_w);
    let wy = axis_weights(h, out_h);
    let mut tmp = vec![0.0; h * out_w];
    for r in 0..h {
        let row = &src[r * w..(r + 1) * w];
        for (c, taps) in wx.iter().enumerate() {
            tmp[r * out_w + c] = taps.iter().map(|&(j, k)| k * row[j]).sum();
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for (r, taps) in wy.iter().enumerate() {
        let dst = &mut out[r * out_w..(r + 1) * out_w];
        for &(j, k) in taps {
            let s = &tmp[j * out_w..(j + 1) * out_w];
            dst.iter_mut().zip(s).for_each(|(d, v)| *d += k * v);
        }
    }
    out
}

/// Bicubic resize, clamped back into `[0, M]`.
pub fn resize_bicubic(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return shape_err("resize target must be non-empty");
    }
    let (h, w) = img.dims();
    let out = resize_raw(img.as_slice(), h, w, out_h, out_w);
    Image::from_clamped(out_h, out_w, out, img.peak())
}

/// Antialiased bicubic reduction by an integer factor.
pub fn downsample(hr: &Image, factor: usize) -> Result<Image> {
    if factor == 0 {
        return shape_err("downsampling factor must be positive");
    }
    let (h, w) = hr.dims();
    if h % factor != 0 || w % factor != 0 {
        return shape_err(format!("{h}x{w} image not divisible by factor {factor}"));
    }
    resize_bicubic(hr, h / factor, w / factor)
}

/// Bicubic enlargement by an integer factor.
pub fn upsample(lr: &Image, factor: usize) -> Result<Image> {
    if factor == 0 {
        return shape_err("upsampling factor must be positive");
    }
    let (h, w) = lr.dims();
    resize_bicubic(lr, h * factor, w * factor)
}

/// Pixel replication enlargement.
pub fn upsample_nearest(lr: &Image, factor: usize) -> Result<Image> {
    if factor == 0 {
        return shape_err("upsampling factor must be positive");
    }
    let (h, w) = lr.dims();
    Image::from_fn(h * factor, w * factor, lr.peak(), |r, c| {
        lr.get(r / factor, c / factor)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;

    /// Non-separable evaluation of the same resampling definition.
    fn brute_force(img: &Image, out_h: usize, out_w: usize) -> Vec<f64> {
        let (h, w) = img.dims();
        let (sy, sx) = (out_h as f64 / h as f64, out_w as f64 / w as f64);
        let (ty, tx) = (
            if sy < 1.0 { 1.0 / sy } else { 1.0 },
            if sx < 1.0 { 1.0 / sx } else { 1.0 },
        );
        let mut out = Vec::new();
        for i in 0..out_h {
            for j in 0..out_w {
                let cy = (i as f64 + 0.5) / sy - 0.5;
                let cx = (j as f64 + 0.5) / sx - 0.5;
                let (mut acc, mut norm) = (0.0, 0.0);
                for p in -10isize..(h as isize + 10) {
                    for q in -10isize..(w as isize + 10) {
                        let k = cubic((p as f64 - cy) / ty) * cubic((q as f64 - cx) / tx);
                        if k == 0.0 {
                            continue;
                        }
                        acc += k * img.get(reflect(p, h), reflect(q, w));
                        norm += k;
                    }
                }
                out.push((acc / norm).clamp(0.0, img.peak()));
            }
        }
        out
    }

    #[test]
    fn keys_kernel_values() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        assert!((cubic(0.5) - 0.5625).abs() < 1e-15);
        assert!((cubic(1.5) - -0.0625).abs() < 1e-15);
    }

    #[test]
    fn reflection() {
        let got: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
    }

    #[test]
    fn downsample_shapes_and_constants() {
        let img = Image::constant(64, 64, 0.37).unwrap();
        let lr = downsample(&img, 2).unwrap();
        assert_eq!(lr.dims(), (32, 32));
        assert!(lr.as_slice().iter().all(|v| (v - 0.37).abs() < 1e-6));
        let up = upsample(&lr, 2).unwrap();
        assert!(up.as_slice().iter().all(|v| (v - 0.37).abs() < 1e-6));
        assert!(matches!(
            downsample(&Image::constant(9, 8, 0.0).unwrap(), 2),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn checkerboard_matches_brute_force() {
        let img = Image::from_fn(16, 16, 1.0, |r, c| ((r + c) % 2) as f64).unwrap();
        let lr = downsample(&img, 2).unwrap();
        let oracle = brute_force(&img, 8, 8);
        for (a, b) in lr.as_slice().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        // low-passed: the Nyquist pattern collapses toward mid-grey
        assert!(lr.as_slice().iter().all(|v| (v - 0.5).abs() < 0.1));
    }

    #[test]
    fn upsample_matches_brute_force() {
        let img = Image::from_fn(7, 5, 1.0, |r, c| ((r * 7 + c * 3) % 11) as f64 / 10.0).unwrap();
        let up = upsample(&img, 2).unwrap();
        let oracle = brute_force(&img, 14, 10);
        for (a, b) in up.as_slice().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn nearest_replicates() {
        let img = Image::unit(1, 2, vec![0.2, 0.8]).unwrap();
        let up = upsample_nearest(&img, 2).unwrap();
        assert_eq!(up.as_slice(), &[0.2, 0.2, 0.8, 0.8, 0.2, 0.2, 0.8, 0.8]);
    }
}
