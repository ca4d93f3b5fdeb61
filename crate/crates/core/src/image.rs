//! Intensity images and boolean masks.
//!
//! Images are row-major, channel-interleaved `f64` in `[0, 1]`. Construction
//! validates the range; nothing is clamped silently. Resampling helpers use
//! pixel-center coordinates: pixel `(r, c)` sits at continuous `(c + 0.5, r + 0.5)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions must be nonzero, got {height}x{width}")]
    ZeroDimension { height: usize, width: usize },
    #[error("channel count must be 1 or 3, got {0}")]
    BadChannelCount(usize),
    #[error("data length {got} does not match {height}x{width}x{channels}")]
    LengthMismatch {
        got: usize,
        height: usize,
        width: usize,
        channels: usize,
    },
    #[error("intensity {value} at flat index {index} lies outside [0, 1]")]
    OutOfRange { value: f64, index: usize },
    #[error("crop {top},{left} size {height}x{width} exceeds source {src_height}x{src_width}")]
    CropOutOfBounds {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
        src_height: usize,
        src_width: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, ImageError> {
        if height == 0 || width == 0 {
            return Err(ImageError::ZeroDimension { height, width });
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::BadChannelCount(channels));
        }
        if data.len() != height * width * channels {
            return Err(ImageError::LengthMismatch {
                got: data.len(),
                height,
                width,
                channels,
            });
        }
        for (index, &value) in data.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(ImageError::OutOfRange { value, index });
            }
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Constant image; `value` must already lie in `[0, 1]`.
    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels])
            .expect("constant fill within range")
    }

    /// Builds from a per-(row, col, channel) function, clamping results to `[0, 1]`.
    pub fn from_fn_clamped(
        height: usize,
        width: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch).clamp(0.0, 1.0));
                }
            }
        }
        Self::new(height, width, channels, data).expect("clamped data within range")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    #[inline]
    pub fn index(&self, r: usize, c: usize, ch: usize) -> usize {
        (r * self.width + c) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize, ch: usize) -> f64 {
        self.data[self.index(r, c, ch)]
    }

    /// Applies `f` to every sample and clamps the result to `[0, 1]`.
    pub fn map_clamped(&self, f: impl Fn(f64) -> f64) -> ImageBuffer {
        let data = self.data.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect();
        Self::new(self.height, self.width, self.channels, data).expect("clamped data within range")
    }

    /// 2x2 box-average downsample; odd trailing rows/columns are dropped.
    pub fn downsample2(&self) -> ImageBuffer {
        let oh = (self.height / 2).max(1);
        let ow = (self.width / 2).max(1);
        let mut data = Vec::with_capacity(oh * ow * self.channels);
        for r in 0..oh {
            for c in 0..ow {
                for ch in 0..self.channels {
                    let r0 = (2 * r).min(self.height - 1);
                    let r1 = (2 * r + 1).min(self.height - 1);
                    let c0 = (2 * c).min(self.width - 1);
                    let c1 = (2 * c + 1).min(self.width - 1);
                    let sum = self.get(r0, c0, ch)
                        + self.get(r0, c1, ch)
                        + self.get(r1, c0, ch)
                        + self.get(r1, c1, ch);
                    data.push(sum * 0.25);
                }
            }
        }
        Self::new(oh, ow, self.channels, data).expect("box average within range")
    }

    /// Edge-clamped bilinear resize; the identity resize is bit-exact.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> ImageBuffer {
        assert!(out_h > 0 && out_w > 0, "output dimensions must be nonzero");
        let mut data = vec![0.0; out_h * out_w * self.channels];
        for ch in 0..self.channels {
            let mut plane = Vec::with_capacity(self.height * self.width);
            for r in 0..self.height {
                for c in 0..self.width {
                    plane.push(self.get(r, c, ch));
                }
            }
            let resized = resize_plane_bilinear(&plane, self.height, self.width, out_h, out_w);
            for r in 0..out_h {
                for c in 0..out_w {
                    data[(r * out_w + c) * self.channels + ch] = resized[r * out_w + c];
                }
            }
        }
        Self::new(out_h, out_w, self.channels, data).expect("interpolants within range")
    }

    pub fn crop(
        &self,
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    ) -> Result<ImageBuffer, ImageError> {
        if height == 0 || width == 0 {
            return Err(ImageError::ZeroDimension { height, width });
        }
        if top + height > self.height || left + width > self.width {
            return Err(ImageError::CropOutOfBounds {
                top,
                left,
                height,
                width,
                src_height: self.height,
                src_width: self.width,
            });
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..self.channels {
                    data.push(self.get(top + r, left + c, ch));
                }
            }
        }
        Self::new(height, width, self.channels, data)
    }

    pub fn flip_horizontal(&self) -> ImageBuffer {
        let mut data = Vec::with_capacity(self.data.len());
        for r in 0..self.height {
            for c in 0..self.width {
                for ch in 0..self.channels {
                    data.push(self.get(r, self.width - 1 - c, ch));
                }
            }
        }
        Self::new(self.height, self.width, self.channels, data).expect("permutation of valid data")
    }
}

/// Edge-clamped bilinear resize of a single plane with no range restriction.
///
/// Output pixel centers are mapped proportionally into the source, so resizing
/// to the same size copies the plane bit-exactly.
pub fn resize_plane_bilinear(
    src: &[f64],
    src_h: usize,
    src_w: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f64> {
    assert_eq!(src.len(), src_h * src_w, "plane length mismatch");
    assert!(out_h > 0 && out_w > 0, "output dimensions must be nonzero");
    let sy = src_h as f64 / out_h as f64;
    let sx = src_w as f64 / out_w as f64;
    let mut out = Vec::with_capacity(out_h * out_w);
    for r in 0..out_h {
        let v = (r as f64 + 0.5) * sy;
        let y = (v - 0.5).clamp(0.0, (src_h - 1) as f64);
        let r0 = (y.floor() as usize).min(src_h.saturating_sub(2));
        let ty = if src_h == 1 { 0.0 } else { y - r0 as f64 };
        for c in 0..out_w {
            let u = (c as f64 + 0.5) * sx;
            let x = (u - 0.5).clamp(0.0, (src_w - 1) as f64);
            let c0 = (x.floor() as usize).min(src_w.saturating_sub(2));
            let tx = if src_w == 1 { 0.0 } else { x - c0 as f64 };
            let c1 = (c0 + 1).min(src_w - 1);
            let r1 = (r0 + 1).min(src_h - 1);
            let top = (1.0 - tx) * src[r0 * src_w + c0] + tx * src[r0 * src_w + c1];
            let bot = (1.0 - tx) * src[r1 * src_w + c0] + tx * src[r1 * src_w + c1];
            out.push((1.0 - ty) * top + ty * bot);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoolMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BoolMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), height * width, "mask length mismatch");
        Self {
            height,
            width,
            data,
        }
    }

    pub fn all_true(height: usize, width: usize) -> Self {
        Self::new(height, width, vec![true; height * width])
    }

    pub fn all_false(height: usize, width: usize) -> Self {
        Self::new(height, width, vec![false; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.width + c]
    }

    #[inline]
    pub fn get_flat(&self, i: usize) -> bool {
        self.data[i]
    }

    pub fn set(&mut self, r: usize, c: usize, value: bool) {
        self.data[r * self.width + c] = value;
    }

    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn fraction_true(&self) -> f64 {
        self.count_true() as f64 / self.data.len() as f64
    }

    pub fn and(&self, other: &BoolMask) -> BoolMask {
        assert_eq!(
            (self.height, self.width),
            (other.height, other.width),
            "mask shape mismatch"
        );
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a && b)
            .collect();
        Self::new(self.height, self.width, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_of_range_data_is_rejected() {
        let err = ImageBuffer::new(1, 2, 1, vec![0.5, 1.5]).unwrap_err();
        assert!(matches!(err, ImageError::OutOfRange { index: 1, .. }));
        let err = ImageBuffer::new(1, 2, 1, vec![-0.1, 0.5]).unwrap_err();
        assert!(matches!(err, ImageError::OutOfRange { index: 0, .. }));
        assert!(ImageBuffer::new(0, 2, 1, vec![]).is_err());
        assert!(ImageBuffer::new(1, 2, 2, vec![0.0; 4]).is_err());
        assert!(ImageBuffer::new(2, 2, 1, vec![0.0; 3]).is_err());
    }

    #[test]
    fn interleaved_indexing() {
        let img = ImageBuffer::new(2, 2, 3, (0..12).map(|i| i as f64 / 11.0).collect()).unwrap();
        assert_eq!(img.get(0, 0, 0), 0.0);
        assert_eq!(img.get(0, 1, 2), 5.0 / 11.0);
        assert_eq!(img.get(1, 1, 1), 10.0 / 11.0);
    }

    #[test]
    fn identity_resize_is_bit_exact() {
        let img = ImageBuffer::from_fn_clamped(5, 7, 3, |r, c, ch| {
            ((r * 31 + c * 17 + ch * 7) % 97) as f64 / 96.0
        });
        let same = img.resize_bilinear(5, 7);
        assert_eq!(img, same);
    }

    #[test]
    fn downsample_averages_blocks() {
        let img = ImageBuffer::new(2, 2, 1, vec![0.0, 0.4, 0.8, 0.4]).unwrap();
        let half = img.downsample2();
        assert_eq!(half.height(), 1);
        assert_eq!(half.width(), 1);
        assert_eq!(half.get(0, 0, 0), 0.4);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = ImageBuffer::filled(6, 9, 1, 0.37);
        let out = img.resize_bilinear(10, 4);
        for &v in out.data() {
            assert_eq!(v, 0.37);
        }
    }

    #[test]
    fn crop_and_flip() {
        let img = ImageBuffer::from_fn_clamped(4, 6, 1, |r, c, _| (r * 6 + c) as f64 / 23.0);
        let crop = img.crop(1, 2, 2, 3).unwrap();
        assert_eq!(crop.get(0, 0, 0), img.get(1, 2, 0));
        assert_eq!(crop.get(1, 2, 0), img.get(2, 4, 0));
        assert!(img.crop(3, 0, 2, 2).is_err());

        let flipped = img.flip_horizontal();
        assert_eq!(flipped.get(0, 0, 0), img.get(0, 5, 0));
        assert_eq!(flipped.flip_horizontal(), img);
    }

    #[test]
    fn mask_ops() {
        let mut m = BoolMask::all_false(2, 3);
        m.set(1, 2, true);
        assert_eq!(m.count_true(), 1);
        assert!((m.fraction_true() - 1.0 / 6.0).abs() < 1e-12);
        let both = m.and(&BoolMask::all_true(2, 3));
        assert!(both.get(1, 2));
        assert_eq!(both.count_true(), 1);
    }
}
