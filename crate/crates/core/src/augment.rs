//! Seeded augmentation pipeline applied consistently across a frame tuple.
//!
//! Geometric ops (aspect-ratio crop+resize, horizontal flip) transform every
//! frame identically and rewrite the intrinsics so reprojection stays
//! consistent. Photometric ops (color jitter, the photometric-only random
//! augmentation set, rectangle erasing) share one parameter draw across the
//! tuple. Every operation takes an explicit RNG and the applied parameters are
//! returned as a serializable record, so a (seed, policy, input) triple always
//! reproduces bit-identical output.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::Intrinsics;
use crate::image::{BoolMask, ImageBuffer};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("source {height}x{width} too small for aspect-ratio crops (need {MIN_AR_SOURCE}x{MIN_AR_SOURCE})")]
    SourceTooSmall { height: usize, width: usize },
    #[error("frame tuple is empty")]
    EmptyTuple,
    #[error("frame {index} shape differs from frame 0")]
    FrameShapeMismatch { index: usize },
    #[error("crop spec {spec:?} does not fit a {height}x{width} source")]
    SpecOutOfBounds {
        spec: CropSpec,
        height: usize,
        width: usize,
    },
    #[error("intrinsics are {k_width}x{k_height} but frames are {width}x{height}")]
    IntrinsicsMismatch {
        k_width: usize,
        k_height: usize,
        width: usize,
        height: usize,
    },
    #[error("invalid policy: {reason}")]
    InvalidPolicy { reason: &'static str },
}

/// Smallest source side for which every table ratio still yields a usable crop.
pub const MIN_AR_SOURCE: usize = 64;

/// The sixteen aspect ratios the crop sampler draws from, as `width:height`.
/// Six portrait (plus square), ten landscape.
pub const ASPECT_RATIOS: [(u32, u32); 16] = [
    (6, 13),
    (9, 16),
    (3, 5),
    (2, 3),
    (4, 5),
    (1, 1),
    (5, 4),
    (4, 3),
    (3, 2),
    (14, 9),
    (5, 3),
    (16, 9),
    (2, 1),
    (24, 10),
    (33, 10),
    (18, 5),
];

/// A crop-and-resize plan: crop `size` at `origin`, then resize to `output`.
///
/// `output` holds roughly the source pixel count (within 5%), both dimensions
/// multiples of four. `coverage` is the sampled fraction of the constraining
/// source dimension, in `[0.5, 1.0]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    /// Crop origin as (row, col).
    pub origin: (usize, usize),
    /// Crop size as (height, width).
    pub size: (usize, usize),
    /// Output size as (height, width).
    pub output: (usize, usize),
    /// Table ratio this crop was built for, as width:height.
    pub ratio: (u32, u32),
    /// Sampled coverage of the constraining dimension.
    pub coverage: f64,
}

impl CropSpec {
    /// Resize scale as (sx, sy) mapping crop coordinates to output coordinates.
    pub fn scale(&self) -> (f64, f64) {
        (
            self.output.1 as f64 / self.size.1 as f64,
            self.output.0 as f64 / self.size.0 as f64,
        )
    }

    /// Intrinsics seen by the cropped-and-resized frames: principal point
    /// shifted by the origin, then everything scaled by the resize.
    pub fn transform_intrinsics(&self, k: &Intrinsics) -> Intrinsics {
        let (sx, sy) = self.scale();
        k.cropped(self.origin.0, self.origin.1, self.size.0, self.size.1)
            .scaled(sx, sy, self.output.1, self.output.0)
    }

    fn fits(&self, height: usize, width: usize) -> bool {
        self.size.0 >= 1
            && self.size.1 >= 1
            && self.origin.0 + self.size.0 <= height
            && self.origin.1 + self.size.1 <= width
            && self.output.0 >= 1
            && self.output.1 >= 1
    }
}

/// Largest crop of aspect `rw:rh` that fits a `src_h x src_w` source, then
/// shrunk by `coverage`; plus the pixel-count-preserving output size.
fn plan_crop(ratio: (u32, u32), coverage: f64, src_h: usize, src_w: usize) -> CropSpec {
    let aspect = ratio.0 as f64 / ratio.1 as f64;
    let max_w = (src_w as f64).min(src_h as f64 * aspect);
    let max_h = (src_h as f64).min(src_w as f64 / aspect);
    let crop_h = ((coverage * max_h).round() as usize).clamp(1, src_h);
    let crop_w = ((coverage * max_w).round() as usize).clamp(1, src_w);

    // Preserve the pixel count at the realized (post-rounding) crop aspect.
    let n = src_h * src_w;
    let realized = crop_w as f64 / crop_h as f64;
    let out_h = (n as f64 / realized).sqrt();
    let out_w = (n as f64 * realized).sqrt();
    let output = best_multiple_of_4_pair(out_h, out_w, n);

    CropSpec {
        origin: (0, 0),
        size: (crop_h, crop_w),
        output,
        ratio,
        coverage,
    }
}

/// Multiple-of-4 output dimensions near the float targets whose product stays
/// within 5% of `n`.
///
/// Candidates follow the constant-pixel-count hyperbola `h * w = n` (for each
/// height near the target, widths near `n / h`), because rounding both
/// dimensions toward the targets independently can overshoot the pixel budget
/// when the aspect is extreme and the source is small. Scoring prefers
/// in-budget pairs, then the least aspect distortion, then pixel-count error.
fn best_multiple_of_4_pair(target_h: f64, target_w: f64, n: usize) -> (usize, usize) {
    let round4 = |x: f64| ((x / 4.0).round() as i64).max(1) * 4;
    let target_aspect = target_w / target_h;
    let mut best = (4, 4);
    let mut best_key = (true, f64::INFINITY, f64::INFINITY);
    for dh in -2i64..=2 {
        let h = (round4(target_h) + 4 * dh).max(4) as usize;
        let w_on_curve = round4(n as f64 / h as f64);
        for dw in -1i64..=1 {
            let w = (w_on_curve + 4 * dw).max(4) as usize;
            let err = (h * w).abs_diff(n) as f64;
            let over_budget = err > 0.05 * n as f64;
            let aspect_dist = ((w as f64 / h as f64) / target_aspect).ln().abs();
            let key = (over_budget, aspect_dist, err);
            if key < best_key {
                best_key = key;
                best = (h, w);
            }
        }
    }
    best
}

/// Samples a crop plan: a table ratio drawn uniformly, coverage uniform in
/// `[0.5, 1.0]` of the constraining dimension, placement uniform over valid
/// origins, output sized to preserve the pixel count within 5%.
pub fn sample_ar_crop(
    rng: &mut ChaCha8Rng,
    src_h: usize,
    src_w: usize,
) -> Result<CropSpec, AugmentError> {
    if src_h < MIN_AR_SOURCE || src_w < MIN_AR_SOURCE {
        return Err(AugmentError::SourceTooSmall {
            height: src_h,
            width: src_w,
        });
    }
    let ratio = ASPECT_RATIOS[rng.random_range(0..ASPECT_RATIOS.len())];
    let coverage = rng.random_range(0.5..=1.0);
    let mut spec = plan_crop(ratio, coverage, src_h, src_w);
    spec.origin = (
        rng.random_range(0..=src_h - spec.size.0),
        rng.random_range(0..=src_w - spec.size.1),
    );
    let (out_h, out_w) = spec.output;
    debug_assert!(
        (out_h * out_w).abs_diff(src_h * src_w) as f64 <= 0.05 * (src_h * src_w) as f64,
        "pixel count drifted more than 5%: {}x{} from {}x{}",
        out_h,
        out_w,
        src_h,
        src_w
    );
    Ok(spec)
}

/// Applies one crop-and-resize plan to every frame and rewrites the intrinsics
/// to match, so a 3D point projects to the same image feature before and after.
pub fn apply_ar_aug(
    frames: &[ImageBuffer],
    k: &Intrinsics,
    spec: &CropSpec,
) -> Result<(Vec<ImageBuffer>, Intrinsics), AugmentError> {
    let (h, w) = check_tuple(frames, Some(k))?;
    if !spec.fits(h, w) {
        return Err(AugmentError::SpecOutOfBounds {
            spec: *spec,
            height: h,
            width: w,
        });
    }
    let out = frames
        .iter()
        .map(|f| {
            f.crop(spec.origin.0, spec.origin.1, spec.size.0, spec.size.1)
                .expect("spec checked against frame shape")
                .resize_bilinear(spec.output.0, spec.output.1)
        })
        .collect();
    Ok((out, spec.transform_intrinsics(k)))
}

fn check_tuple(
    frames: &[ImageBuffer],
    k: Option<&Intrinsics>,
) -> Result<(usize, usize), AugmentError> {
    let first = frames.first().ok_or(AugmentError::EmptyTuple)?;
    for (index, f) in frames.iter().enumerate().skip(1) {
        if !f.same_shape(first) {
            return Err(AugmentError::FrameShapeMismatch { index });
        }
    }
    if let Some(k) = k {
        if k.width != first.width() || k.height != first.height() {
            return Err(AugmentError::IntrinsicsMismatch {
                k_width: k.width,
                k_height: k.height,
                width: first.width(),
                height: first.height(),
            });
        }
    }
    Ok((first.height(), first.width()))
}

// ---------------------------------------------------------------------------
// Photometric random augmentation
// ---------------------------------------------------------------------------

/// The photometric-only op set; geometric ops are excluded by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhotoOp {
    Identity,
    AutoContrast,
    Equalize,
    Sharpness,
    Brightness,
    Color,
    Contrast,
}

impl PhotoOp {
    pub const ALL: [PhotoOp; 7] = [
        PhotoOp::Identity,
        PhotoOp::AutoContrast,
        PhotoOp::Equalize,
        PhotoOp::Sharpness,
        PhotoOp::Brightness,
        PhotoOp::Color,
        PhotoOp::Contrast,
    ];

    /// Whether the op consumes an enhancement factor.
    fn enhanced(self) -> bool {
        matches!(
            self,
            PhotoOp::Sharpness | PhotoOp::Brightness | PhotoOp::Color | PhotoOp::Contrast
        )
    }
}

/// One sampled op: the kind plus its enhancement factor (1.0 where unused).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandAugmentDraw {
    pub op: PhotoOp,
    pub factor: f64,
}

/// Draws three ops independently (with replacement) from the seven-op
/// photometric set and applies the same sequence, with the same factors, to
/// every frame in the tuple. Enhancement factors are uniform in `[0.1, 1.9]`.
pub fn randaugment_photo(
    rng: &mut ChaCha8Rng,
    frames: &[ImageBuffer],
) -> Result<(Vec<ImageBuffer>, [RandAugmentDraw; 3]), AugmentError> {
    check_tuple(frames, None)?;
    let draws = std::array::from_fn(|_| {
        let op = PhotoOp::ALL[rng.random_range(0..PhotoOp::ALL.len())];
        let factor = if op.enhanced() {
            1.0 + 0.9 * rng.random_range(-1.0..=1.0)
        } else {
            1.0
        };
        RandAugmentDraw { op, factor }
    });
    let out = frames
        .iter()
        .map(|f| {
            let mut img = f.clone();
            for d in &draws {
                img = apply_photo_op(&img, d.op, d.factor);
            }
            img
        })
        .collect();
    Ok((out, draws))
}

/// Applies one op. The histogram-based ops (auto-contrast, equalization, the
/// contrast pivot and the grayscale used by color) work on a 256-bin
/// quantization of `[0, 1]` and map back, mirroring their 8-bit origins.
pub fn apply_photo_op(img: &ImageBuffer, op: PhotoOp, factor: f64) -> ImageBuffer {
    match op {
        PhotoOp::Identity => img.clone(),
        PhotoOp::Brightness => img.map_clamped(|v| v * factor),
        PhotoOp::AutoContrast => per_channel_lut(img, autocontrast_lut),
        PhotoOp::Equalize => per_channel_lut(img, equalize_lut),
        PhotoOp::Color => {
            if img.channels() == 1 {
                return img.clone();
            }
            blend_toward(img, factor, |img, r, c, _| {
                quantized_luma(img, r, c) as f64 / 255.0
            })
        }
        PhotoOp::Contrast => {
            let pivot = mean_quantized_luma(img) / 255.0;
            blend_toward(img, factor, move |_, _, _, _| pivot)
        }
        PhotoOp::Sharpness => {
            let smooth = smooth_3x3(img);
            ImageBuffer::from_fn_clamped(img.height(), img.width(), img.channels(), |r, c, ch| {
                let d = smooth.get(r, c, ch);
                d + factor * (img.get(r, c, ch) - d)
            })
        }
    }
}

/// `degenerate + factor * (img - degenerate)` per sample, clamped.
fn blend_toward(
    img: &ImageBuffer,
    factor: f64,
    degenerate: impl Fn(&ImageBuffer, usize, usize, usize) -> f64,
) -> ImageBuffer {
    ImageBuffer::from_fn_clamped(img.height(), img.width(), img.channels(), |r, c, ch| {
        let d = degenerate(img, r, c, ch);
        d + factor * (img.get(r, c, ch) - d)
    })
}

#[inline]
fn quantize(v: f64) -> usize {
    (v * 255.0).round() as usize
}

/// Integer ITU-R 601 luma on the 256-bin grid; the channel itself for grayscale.
fn quantized_luma(img: &ImageBuffer, r: usize, c: usize) -> usize {
    if img.channels() == 1 {
        quantize(img.get(r, c, 0))
    } else {
        (299 * quantize(img.get(r, c, 0))
            + 587 * quantize(img.get(r, c, 1))
            + 114 * quantize(img.get(r, c, 2)))
            / 1000
    }
}

/// Mean quantized luma rounded to the nearest bin, as the contrast pivot.
fn mean_quantized_luma(img: &ImageBuffer) -> f64 {
    let mut sum = 0usize;
    for r in 0..img.height() {
        for c in 0..img.width() {
            sum += quantized_luma(img, r, c);
        }
    }
    (sum as f64 / img.pixel_count() as f64).round()
}

fn per_channel_lut(img: &ImageBuffer, build: impl Fn(&[usize; 256]) -> [u8; 256]) -> ImageBuffer {
    let (h, w, channels) = (img.height(), img.width(), img.channels());
    let mut out = vec![0.0; h * w * channels];
    for ch in 0..channels {
        let mut hist = [0usize; 256];
        for r in 0..h {
            for c in 0..w {
                hist[quantize(img.get(r, c, ch))] += 1;
            }
        }
        let lut = build(&hist);
        for r in 0..h {
            for c in 0..w {
                out[img.index(r, c, ch)] = lut[quantize(img.get(r, c, ch))] as f64 / 255.0;
            }
        }
    }
    ImageBuffer::new(h, w, channels, out).expect("lut outputs lie in [0, 1]")
}

/// Linear remap stretching the occupied bin range to the full range; identity
/// when the channel is constant. Intermediate values truncate toward zero.
fn autocontrast_lut(hist: &[usize; 256]) -> [u8; 256] {
    let lo = hist.iter().position(|&n| n > 0);
    let hi = hist.iter().rposition(|&n| n > 0);
    let (lo, hi) = match (lo, hi) {
        (Some(lo), Some(hi)) if hi > lo => (lo, hi),
        _ => return identity_lut(),
    };
    let scale = 255.0 / (hi - lo) as f64;
    let offset = -(lo as f64) * scale;
    std::array::from_fn(|i| ((i as f64 * scale + offset).trunc() as i64).clamp(0, 255) as u8)
}

/// Histogram equalization: cumulative counts quantized by the bin-average
/// step, everything below the first step mapping to zero and the top of the
/// range to 255. Identity when fewer than two bins are occupied or the image
/// is too small for a nonzero step.
fn equalize_lut(hist: &[usize; 256]) -> [u8; 256] {
    let nonzero: Vec<usize> = hist.iter().copied().filter(|&n| n > 0).collect();
    if nonzero.len() <= 1 {
        return identity_lut();
    }
    let step = (nonzero.iter().sum::<usize>() - nonzero.last().unwrap()) / 255;
    if step == 0 {
        return identity_lut();
    }
    let mut n = step / 2;
    std::array::from_fn(|i| {
        let v = (n / step).min(255) as u8;
        n += hist[i];
        v
    })
}

fn identity_lut() -> [u8; 256] {
    std::array::from_fn(|i| i as u8)
}

/// 3x3 smoothing with kernel `[[1,1,1],[1,5,1],[1,1,1]] / 13`; the one-pixel
/// border is left untouched.
fn smooth_3x3(img: &ImageBuffer) -> ImageBuffer {
    let (h, w, channels) = (img.height(), img.width(), img.channels());
    let mut out = img.data().to_vec();
    if h >= 3 && w >= 3 {
        for r in 1..h - 1 {
            for c in 1..w - 1 {
                for ch in 0..channels {
                    let mut sum = 4.0 * img.get(r, c, ch);
                    for dr in -1i64..=1 {
                        for dc in -1i64..=1 {
                            sum += img.get(
                                (r as i64 + dr) as usize,
                                (c as i64 + dc) as usize,
                                ch,
                            );
                        }
                    }
                    out[img.index(r, c, ch)] = sum / 13.0;
                }
            }
        }
    }
    ImageBuffer::new(h, w, channels, out).expect("convex average stays in range")
}

// ---------------------------------------------------------------------------
// Color jitter
// ---------------------------------------------------------------------------

/// Half-widths of the jitter factor ranges. A brightness of 0.2 means the
/// factor is uniform in `[0.8, 1.2]`; hue is an absolute shift in turns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitterRanges {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl Default for JitterRanges {
    fn default() -> Self {
        Self {
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            hue: 0.1,
        }
    }
}

/// The factors actually sampled for one jitter application.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterDraw {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

/// Samples one factor per component and applies brightness, contrast,
/// saturation, then hue to every frame with those shared factors. Uses float
/// statistics throughout (no histogram quantization).
pub fn color_jitter(
    rng: &mut ChaCha8Rng,
    frames: &[ImageBuffer],
    ranges: &JitterRanges,
) -> Result<(Vec<ImageBuffer>, JitterDraw), AugmentError> {
    check_tuple(frames, None)?;
    let mut centered = |r: f64| {
        let lo = (1.0 - r).max(0.0);
        rng_range(rng, lo, 1.0 + r)
    };
    let draw = JitterDraw {
        brightness: centered(ranges.brightness),
        contrast: centered(ranges.contrast),
        saturation: centered(ranges.saturation),
        hue: rng_range(rng, -ranges.hue, ranges.hue),
    };
    let out = frames.iter().map(|f| apply_jitter(f, &draw)).collect();
    Ok((out, draw))
}

fn rng_range(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn apply_jitter(img: &ImageBuffer, draw: &JitterDraw) -> ImageBuffer {
    let bright = img.map_clamped(|v| v * draw.brightness);
    let mean = float_luma_mean(&bright);
    let mut out = blend_toward(&bright, draw.contrast, move |_, _, _, _| mean);

    if img.channels() == 3 {
        out = blend_toward(&out, draw.saturation, |img, r, c, _| {
            float_luma(img.get(r, c, 0), img.get(r, c, 1), img.get(r, c, 2))
        });
        if draw.hue != 0.0 {
            out = shift_hue(&out, draw.hue);
        }
    }
    out
}

// ITU-R 601 weights; they sum to one, so gray pixels are fixed points.
#[inline]
fn float_luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

fn float_luma_mean(img: &ImageBuffer) -> f64 {
    let mut sum = 0.0;
    for r in 0..img.height() {
        for c in 0..img.width() {
            sum += if img.channels() == 1 {
                img.get(r, c, 0)
            } else {
                float_luma(img.get(r, c, 0), img.get(r, c, 1), img.get(r, c, 2))
            };
        }
    }
    sum / img.pixel_count() as f64
}

/// Rotates hue by `shift` turns through an RGB-HSV round trip.
fn shift_hue(img: &ImageBuffer, shift: f64) -> ImageBuffer {
    ImageBuffer::from_fn_clamped(img.height(), img.width(), 3, |r, c, ch| {
        let (h, s, v) = rgb_to_hsv(img.get(r, c, 0), img.get(r, c, 1), img.get(r, c, 2));
        let rgb = hsv_to_rgb((h + shift).rem_euclid(1.0), s, v);
        rgb[ch]
    })
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let maxc = r.max(g).max(b);
    let minc = r.min(g).min(b);
    let v = maxc;
    if maxc <= minc {
        return (0.0, 0.0, v);
    }
    let s = (maxc - minc) / maxc;
    let span = maxc - minc;
    let rc = (maxc - r) / span;
    let gc = (maxc - g) / span;
    let bc = (maxc - b) / span;
    let h = if r == maxc {
        bc - gc
    } else if g == maxc {
        2.0 + rc - bc
    } else {
        4.0 + gc - rc
    };
    ((h / 6.0).rem_euclid(1.0), s, v)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    if s == 0.0 {
        return [v, v, v];
    }
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match (i as i64).rem_euclid(6) {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

// ---------------------------------------------------------------------------
// Rectangle erasing
// ---------------------------------------------------------------------------

/// Default erased-area bounds as a fraction of the image.
pub const CUTOUT_AREA_BOUNDS: (f64, f64) = (0.02, 0.25);

/// What the erased rectangle is filled with. `Random`'s noise replays from its
/// own seed so the same draw reproduces the same patch on every frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum FillSpec {
    White,
    Black,
    Gray { level: f64 },
    Rgb { color: [f64; 3] },
    Random { seed: u64 },
}

/// One sampled erase: rectangle plus fill.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoutDraw {
    /// Rectangle origin as (row, col).
    pub origin: (usize, usize),
    /// Rectangle size as (height, width).
    pub size: (usize, usize),
    pub fill: FillSpec,
}

/// Samples a rectangle whose area fraction lies within `bounds` (aspect in
/// `[0.5, 2]`, placement uniform) and one of the five fill modes, each
/// equally likely.
pub fn sample_cutout(
    rng: &mut ChaCha8Rng,
    src_h: usize,
    src_w: usize,
    bounds: (f64, f64),
) -> CutoutDraw {
    let n = (src_h * src_w) as f64;
    let target = rng.random_range(bounds.0..=bounds.1);
    let aspect = rng.random_range(0.5..=2.0);
    let h_f = (target * n * aspect).sqrt().min(src_h as f64);
    let w_f = (target * n / aspect).sqrt().min(src_w as f64);

    // Rounding either dimension can push the realized fraction out of bounds;
    // of the four floor/ceil combinations prefer in-bounds ones closest to the
    // target, falling back to the least out-of-bounds.
    let clamp_dims = |x: f64, max: usize| {
        let down = (x.floor() as usize).clamp(1, max);
        let up = (x.ceil() as usize).clamp(1, max);
        [down, up]
    };
    let mut best = (1usize, 1usize);
    let mut best_key = (true, f64::INFINITY);
    for h in clamp_dims(h_f, src_h) {
        for w in clamp_dims(w_f, src_w) {
            let frac = (h * w) as f64 / n;
            let inside = frac >= bounds.0 && frac <= bounds.1;
            let dist = if inside {
                (frac - target).abs()
            } else {
                (frac - frac.clamp(bounds.0, bounds.1)).abs()
            };
            let key = (!inside, dist);
            if key < best_key {
                best_key = key;
                best = (h, w);
            }
        }
    }
    let (rect_h, rect_w) = best;

    let origin = (
        rng.random_range(0..=src_h - rect_h),
        rng.random_range(0..=src_w - rect_w),
    );
    let fill = match rng.random_range(0..5) {
        0 => FillSpec::White,
        1 => FillSpec::Black,
        2 => FillSpec::Gray {
            level: rng.random_range(0.0..=1.0),
        },
        3 => FillSpec::Rgb {
            color: [
                rng.random_range(0.0..=1.0),
                rng.random_range(0.0..=1.0),
                rng.random_range(0.0..=1.0),
            ],
        },
        _ => FillSpec::Random { seed: rng.random() },
    };
    CutoutDraw {
        origin,
        size: (rect_h, rect_w),
        fill,
    }
}

/// Erases the draw's rectangle from one frame; pure, so the same draw can be
/// replayed over a whole tuple. Returns the erased frame and a mask of the
/// erased pixels.
pub fn apply_cutout(frame: &ImageBuffer, draw: &CutoutDraw) -> (ImageBuffer, BoolMask) {
    let (h, w, channels) = (frame.height(), frame.width(), frame.channels());
    let (r0, c0) = draw.origin;
    let (rh, rw) = draw.size;
    assert!(r0 + rh <= h && c0 + rw <= w, "cutout rectangle out of bounds");

    let mut noise = match draw.fill {
        FillSpec::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };
    let mut data = frame.data().to_vec();
    let mut mask = BoolMask::all_false(h, w);
    for r in r0..r0 + rh {
        for c in c0..c0 + rw {
            mask.set(r, c, true);
            for ch in 0..channels {
                data[frame.index(r, c, ch)] = match &draw.fill {
                    FillSpec::White => 1.0,
                    FillSpec::Black => 0.0,
                    FillSpec::Gray { level } => *level,
                    FillSpec::Rgb { color } => color[ch.min(2)],
                    FillSpec::Random { .. } => {
                        noise.as_mut().expect("noise rng for random fill").random_range(0.0..=1.0)
                    }
                };
            }
        }
    }
    (
        ImageBuffer::new(h, w, channels, data).expect("fill values lie in [0, 1]"),
        mask,
    )
}

/// Samples and applies one erase with the default area bounds.
pub fn cutout(rng: &mut ChaCha8Rng, frame: &ImageBuffer) -> (ImageBuffer, BoolMask) {
    let draw = sample_cutout(rng, frame.height(), frame.width(), CUTOUT_AREA_BOUNDS);
    apply_cutout(frame, &draw)
}

// ---------------------------------------------------------------------------
// Policy
// ---------------------------------------------------------------------------

/// Per-augmentation firing probabilities plus parameter ranges and the seed
/// the CLI derives its RNG from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    pub p_ar: f64,
    pub p_flip: f64,
    pub p_jitter: f64,
    pub p_randaugment: f64,
    pub p_cutout: f64,
    pub jitter: JitterRanges,
    pub cutout_area: (f64, f64),
    pub seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            p_ar: 0.7,
            p_flip: 0.5,
            p_jitter: 0.3,
            p_randaugment: 0.3,
            p_cutout: 0.3,
            jitter: JitterRanges::default(),
            cutout_area: CUTOUT_AREA_BOUNDS,
            seed: 0,
        }
    }
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let probs = [
            self.p_ar,
            self.p_flip,
            self.p_jitter,
            self.p_randaugment,
            self.p_cutout,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(AugmentError::InvalidPolicy {
                reason: "probabilities must lie in [0, 1]",
            });
        }
        let (lo, hi) = self.cutout_area;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(AugmentError::InvalidPolicy {
                reason: "cutout area bounds must satisfy 0 < lo <= hi <= 1",
            });
        }
        let j = &self.jitter;
        if [j.brightness, j.contrast, j.saturation, j.hue]
            .iter()
            .any(|r| !r.is_finite() || *r < 0.0)
        {
            return Err(AugmentError::InvalidPolicy {
                reason: "jitter ranges must be finite and nonnegative",
            });
        }
        Ok(())
    }
}

/// Everything one policy application did, in application order, with enough
/// parameters to replay it exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum AppliedOp {
    AspectRatio { spec: CropSpec },
    Flip,
    ColorJitter { draw: JitterDraw },
    RandAugment { draws: [RandAugmentDraw; 3] },
    Cutout { draw: CutoutDraw },
}

/// Runs the policy once over a frame tuple: each augmentation fires
/// independently with its probability.
///
/// The five fire/skip decisions are drawn first in a fixed order (aspect
/// ratio, flip, jitter, random augmentation, cutout) so which ops fire for a
/// given seed never depends on parameter draws; ops are then applied in that
/// same order (geometry first). Aspect-ratio cropping is skipped on sources
/// smaller than `MIN_AR_SOURCE`. The cutout rectangle and fill replay
/// identically on every frame of the tuple.
pub fn apply_policy(
    rng: &mut ChaCha8Rng,
    policy: &AugmentPolicy,
    frames: &[ImageBuffer],
    k: &Intrinsics,
) -> Result<(Vec<ImageBuffer>, Intrinsics, Vec<AppliedOp>), AugmentError> {
    policy.validate()?;
    let (h, w) = check_tuple(frames, Some(k))?;

    let fire_ar = rng.random_bool(policy.p_ar) && h >= MIN_AR_SOURCE && w >= MIN_AR_SOURCE;
    let fire_flip = rng.random_bool(policy.p_flip);
    let fire_jitter = rng.random_bool(policy.p_jitter);
    let fire_ra = rng.random_bool(policy.p_randaugment);
    let fire_cutout = rng.random_bool(policy.p_cutout);

    let mut out: Vec<ImageBuffer> = frames.to_vec();
    let mut k_out = *k;
    let mut record = Vec::new();

    if fire_ar {
        let spec = sample_ar_crop(rng, h, w)?;
        let (frames, k2) = apply_ar_aug(&out, &k_out, &spec)?;
        out = frames;
        k_out = k2;
        record.push(AppliedOp::AspectRatio { spec });
    }
    if fire_flip {
        out = out.iter().map(ImageBuffer::flip_horizontal).collect();
        k_out = k_out.flipped_horizontal();
        record.push(AppliedOp::Flip);
    }
    if fire_jitter {
        let (frames, draw) = color_jitter(rng, &out, &policy.jitter)?;
        out = frames;
        record.push(AppliedOp::ColorJitter { draw });
    }
    if fire_ra {
        let (frames, draws) = randaugment_photo(rng, &out)?;
        out = frames;
        record.push(AppliedOp::RandAugment { draws });
    }
    if fire_cutout {
        let draw = sample_cutout(rng, out[0].height(), out[0].width(), policy.cutout_area);
        out = out.iter().map(|f| apply_cutout(f, &draw).0).collect();
        record.push(AppliedOp::Cutout { draw });
    }
    Ok((out, k_out, record))
}
