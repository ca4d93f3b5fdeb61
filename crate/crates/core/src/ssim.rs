//! Structural similarity over 3x3 box windows.
//!
//! Windows are clipped at the image border and normalized by their actual
//! sample count; the masked variants additionally drop samples flagged
//! invalid, which keeps scores meaningful next to masked-out warp holes.
//! Multi-channel images are scored per channel and averaged. The backward
//! pass is the closed-form derivative of the same expression, so identical
//! inputs score exactly 1 and gradients need no smoothing.

use thiserror::Error;

use crate::image::{BoolMask, ImageBuffer};

const K1: f64 = 0.01;
const K2: f64 = 0.03;
/// Stabilizers for the [0, 1] intensity range.
pub const SSIM_C1: f64 = K1 * K1;
pub const SSIM_C2: f64 = K2 * K2;

const RADIUS: usize = 1;

#[derive(Debug, Error)]
pub enum SsimError {
    #[error("image shapes differ: {0}x{1}x{2} vs {3}x{4}x{5}")]
    ShapeMismatch(usize, usize, usize, usize, usize, usize),
}

fn check_shapes(x: &ImageBuffer, y: &ImageBuffer) -> Result<(), SsimError> {
    if !x.same_shape(y) {
        return Err(SsimError::ShapeMismatch(
            x.height(),
            x.width(),
            x.channels(),
            y.height(),
            y.width(),
            y.channels(),
        ));
    }
    Ok(())
}

#[inline]
fn window(dim: usize, center: usize) -> (usize, usize) {
    let lo = center.saturating_sub(RADIUS);
    let hi = (center + RADIUS).min(dim - 1);
    (lo, hi)
}

#[inline]
fn included(mask: Option<&BoolMask>, r: usize, c: usize) -> bool {
    mask.map_or(true, |m| m.get(r, c))
}

struct WindowStats {
    n: f64,
    mu_x: f64,
    mu_y: f64,
    var_x: f64,
    var_y: f64,
    cov: f64,
}

fn window_stats(
    x: &ImageBuffer,
    y: &ImageBuffer,
    mask: Option<&BoolMask>,
    r: usize,
    c: usize,
    ch: usize,
) -> WindowStats {
    let (r_lo, r_hi) = window(x.height(), r);
    let (c_lo, c_hi) = window(x.width(), c);
    let mut n = 0.0;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for rr in r_lo..=r_hi {
        for cc in c_lo..=c_hi {
            if !included(mask, rr, cc) {
                continue;
            }
            let xv = x.get(rr, cc, ch);
            let yv = y.get(rr, cc, ch);
            n += 1.0;
            sx += xv;
            sy += yv;
            sxx += xv * xv;
            syy += yv * yv;
            sxy += xv * yv;
        }
    }
    let mu_x = sx / n;
    let mu_y = sy / n;
    WindowStats {
        n,
        mu_x,
        mu_y,
        var_x: sxx / n - mu_x * mu_x,
        var_y: syy / n - mu_y * mu_y,
        cov: sxy / n - mu_x * mu_y,
    }
}

#[inline]
fn score(s: &WindowStats) -> f64 {
    let a1 = 2.0 * s.mu_x * s.mu_y + SSIM_C1;
    let a2 = 2.0 * s.cov + SSIM_C2;
    let b1 = s.mu_x * s.mu_x + s.mu_y * s.mu_y + SSIM_C1;
    let b2 = s.var_x + s.var_y + SSIM_C2;
    (a1 * a2) / (b1 * b2)
}

/// Per-pixel channel-averaged SSIM map, length `height * width`.
pub fn ssim_map(x: &ImageBuffer, y: &ImageBuffer) -> Result<Vec<f64>, SsimError> {
    check_shapes(x, y)?;
    Ok(ssim_map_impl(x, y, None))
}

/// Masked SSIM: window statistics only use samples where `mask` is true, and
/// entries at masked centers are 0 (the caller excludes them anyway).
pub fn ssim_map_masked(
    x: &ImageBuffer,
    y: &ImageBuffer,
    mask: &BoolMask,
) -> Result<Vec<f64>, SsimError> {
    check_shapes(x, y)?;
    Ok(ssim_map_impl(x, y, Some(mask)))
}

fn ssim_map_impl(x: &ImageBuffer, y: &ImageBuffer, mask: Option<&BoolMask>) -> Vec<f64> {
    let (h, w, channels) = (x.height(), x.width(), x.channels());
    let mut map = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            if !included(mask, r, c) {
                map.push(0.0);
                continue;
            }
            let mut acc = 0.0;
            for ch in 0..channels {
                acc += score(&window_stats(x, y, mask, r, c, ch));
            }
            map.push(acc / channels as f64);
        }
    }
    map
}

/// Accumulates `d(sum_p upstream[p] * ssim_map[p]) / d(y)` per sample.
///
/// `upstream` has one weight per pixel; the result is indexed
/// `pixel * channels + channel` like the image data itself.
pub fn ssim_backward(x: &ImageBuffer, y: &ImageBuffer, upstream: &[f64]) -> Vec<f64> {
    ssim_backward_impl(x, y, None, upstream)
}

/// Backward pass of [`ssim_map_masked`] under the same window restriction.
pub fn ssim_backward_masked(
    x: &ImageBuffer,
    y: &ImageBuffer,
    mask: &BoolMask,
    upstream: &[f64],
) -> Vec<f64> {
    ssim_backward_impl(x, y, Some(mask), upstream)
}

fn ssim_backward_impl(
    x: &ImageBuffer,
    y: &ImageBuffer,
    mask: Option<&BoolMask>,
    upstream: &[f64],
) -> Vec<f64> {
    assert!(x.same_shape(y), "image shapes differ");
    let (h, w, channels) = (x.height(), x.width(), x.channels());
    assert_eq!(upstream.len(), h * w, "upstream length mismatch");
    let mut grad = vec![0.0; h * w * channels];
    let ch_scale = 1.0 / channels as f64;
    for r in 0..h {
        for c in 0..w {
            let g = upstream[r * w + c];
            if g == 0.0 || !included(mask, r, c) {
                continue;
            }
            let (r_lo, r_hi) = window(h, r);
            let (c_lo, c_hi) = window(w, c);
            for ch in 0..channels {
                let s = window_stats(x, y, mask, r, c, ch);
                let a1 = 2.0 * s.mu_x * s.mu_y + SSIM_C1;
                let a2 = 2.0 * s.cov + SSIM_C2;
                let b1 = s.mu_x * s.mu_x + s.mu_y * s.mu_y + SSIM_C1;
                let b2 = s.var_x + s.var_y + SSIM_C2;
                let val = (a1 * a2) / (b1 * b2);
                let inv_n = 1.0 / s.n;
                let inv_den = 1.0 / (b1 * b2);
                for rr in r_lo..=r_hi {
                    for cc in c_lo..=c_hi {
                        if !included(mask, rr, cc) {
                            continue;
                        }
                        let xq = x.get(rr, cc, ch);
                        let yq = y.get(rr, cc, ch);
                        let da1 = 2.0 * s.mu_x * inv_n;
                        let da2 = 2.0 * inv_n * (xq - s.mu_x);
                        let db1 = 2.0 * s.mu_y * inv_n;
                        let db2 = 2.0 * inv_n * (yq - s.mu_y);
                        let ds = ((da1 * a2 + a1 * da2) - val * (db1 * b2 + b1 * db2)) * inv_den;
                        grad[(rr * w + cc) * channels + ch] += g * ch_scale * ds;
                    }
                }
            }
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, channels: usize) -> ImageBuffer {
        let data = (0..h * w * channels)
            .map(|_| rng.random_range(0.2..0.8))
            .collect();
        ImageBuffer::new(h, w, channels, data).unwrap()
    }

    #[test]
    fn identical_inputs_score_exactly_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let img = random_image(&mut rng, 9, 13, 3);
        let map = ssim_map(&img, &img).unwrap();
        for &s in &map {
            assert_eq!(s, 1.0);
        }
    }

    #[test]
    fn constant_zero_vs_one_matches_closed_form() {
        let x = ImageBuffer::filled(8, 8, 1, 0.0);
        let y = ImageBuffer::filled(8, 8, 1, 1.0);
        let map = ssim_map(&x, &y).unwrap();
        let expect = SSIM_C1 / (1.0 + SSIM_C1);
        for &s in &map {
            assert_relative_eq!(s, expect, max_relative = 1e-12);
            assert_relative_eq!(s, 9.999e-5, max_relative = 1e-4);
        }
    }

    #[test]
    fn symmetric_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let x = random_image(&mut rng, 7, 11, 3);
            let y = random_image(&mut rng, 7, 11, 3);
            let xy = ssim_map(&x, &y).unwrap();
            let yx = ssim_map(&y, &x).unwrap();
            for (a, b) in xy.iter().zip(&yx) {
                assert!((a - b).abs() < 1e-12, "asymmetry {}", a - b);
                assert!(a.abs() <= 1.0 + 1e-12, "out of bounds: {a}");
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let x = ImageBuffer::filled(4, 4, 1, 0.5);
        let y = ImageBuffer::filled(4, 5, 1, 0.5);
        assert!(ssim_map(&x, &y).is_err());
        let y3 = ImageBuffer::filled(4, 4, 3, 0.5);
        assert!(ssim_map(&x, &y3).is_err());
    }

    #[test]
    fn masked_windows_ignore_invalid_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let x = random_image(&mut rng, 6, 6, 1);
        // y agrees with x at valid pixels and is garbage (zero) elsewhere.
        let mut mask = BoolMask::all_true(6, 6);
        let mut y_data = x.data().to_vec();
        for (r, c) in [(0, 0), (2, 3), (5, 5), (3, 3)] {
            mask.set(r, c, false);
            y_data[r * 6 + c] = 0.0;
        }
        let y = ImageBuffer::new(6, 6, 1, y_data).unwrap();
        let map = ssim_map_masked(&x, &y, &mask).unwrap();
        for r in 0..6 {
            for c in 0..6 {
                if mask.get(r, c) {
                    assert_eq!(map[r * 6 + c], 1.0, "polluted window at ({r},{c})");
                } else {
                    assert_eq!(map[r * 6 + c], 0.0);
                }
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let x = random_image(&mut rng, 6, 8, 3);
        let y = random_image(&mut rng, 6, 8, 3);
        let mut mask = BoolMask::all_true(6, 8);
        mask.set(1, 1, false);
        mask.set(4, 6, false);
        let upstream: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grad = ssim_backward_masked(&x, &y, &mask, &upstream);
        let objective = |img: &ImageBuffer| -> f64 {
            ssim_map_masked(&x, img, &mask)
                .unwrap()
                .iter()
                .zip(&upstream)
                .map(|(s, u)| s * u)
                .sum()
        };
        let h = 1e-6;
        for i in (0..y.data().len()).step_by(7) {
            let mut dp = y.data().to_vec();
            let mut dm = y.data().to_vec();
            dp[i] += h;
            dm[i] -= h;
            let yp = ImageBuffer::new(6, 8, 3, dp).unwrap();
            let ym = ImageBuffer::new(6, 8, 3, dm).unwrap();
            let fd = (objective(&yp) - objective(&ym)) / (2.0 * h);
            assert_relative_eq!(grad[i], fd, max_relative = 1e-5, epsilon = 1e-9);
        }
    }

    #[test]
    fn border_windows_use_clipped_counts() {
        // A 2x2 image has only 4-pixel windows; identical inputs still score 1.
        let img = ImageBuffer::new(2, 2, 1, vec![0.1, 0.4, 0.7, 0.9]).unwrap();
        let map = ssim_map(&img, &img).unwrap();
        for &s in &map {
            assert_eq!(s, 1.0);
        }
        let stats = window_stats(&img, &img, None, 0, 0, 0);
        assert_eq!(stats.n, 4.0);
    }
}
