//! Depth maps, sigmoid disparity fields, and the mapping between them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::BoolMask;

#[derive(Debug, Error)]
pub enum DepthError {
    #[error("dimensions must be nonzero, got {height}x{width}")]
    ZeroDimension { height: usize, width: usize },
    #[error("value length {got} does not match {height}x{width}")]
    LengthMismatch {
        got: usize,
        height: usize,
        width: usize,
    },
    #[error("depth {value} at flat index {index} is not strictly positive and finite")]
    InvalidDepth { value: f64, index: usize },
    #[error("disparity {value} at flat index {index} outside open interval (0, 1)")]
    InvalidDisparity { value: f64, index: usize },
    #[error("depth range [{min}, {max}] is empty or non-positive")]
    BadRange { min: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    validity: Option<BoolMask>,
}

impl DepthMap {
    /// Fully valid map; every entry must be strictly positive and finite.
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self, DepthError> {
        Self::check_shape(height, width, values.len())?;
        for (index, &value) in values.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(DepthError::InvalidDepth { value, index });
            }
        }
        Ok(Self {
            height,
            width,
            values,
            validity: None,
        })
    }

    /// Partially valid map; only entries flagged valid must be positive and finite.
    pub fn with_mask(
        height: usize,
        width: usize,
        values: Vec<f64>,
        mask: BoolMask,
    ) -> Result<Self, DepthError> {
        Self::check_shape(height, width, values.len())?;
        assert_eq!(
            (mask.height(), mask.width()),
            (height, width),
            "mask shape mismatch"
        );
        for (index, &value) in values.iter().enumerate() {
            if mask.get_flat(index) && !(value > 0.0 && value.is_finite()) {
                return Err(DepthError::InvalidDepth { value, index });
            }
        }
        Ok(Self {
            height,
            width,
            values,
            validity: Some(mask),
        })
    }

    fn check_shape(height: usize, width: usize, len: usize) -> Result<(), DepthError> {
        if height == 0 || width == 0 {
            return Err(DepthError::ZeroDimension { height, width });
        }
        if len != height * width {
            return Err(DepthError::LengthMismatch {
                got: len,
                height,
                width,
            });
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.width + c]
    }

    #[inline]
    pub fn is_valid(&self, r: usize, c: usize) -> bool {
        match &self.validity {
            Some(mask) => mask.get(r, c),
            None => true,
        }
    }

    pub fn validity(&self) -> Option<&BoolMask> {
        self.validity.as_ref()
    }

    pub fn valid_count(&self) -> usize {
        match &self.validity {
            Some(mask) => mask.count_true(),
            None => self.values.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityField {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl DisparityField {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self, DepthError> {
        DepthMap::check_shape(height, width, values.len())?;
        for (index, &value) in values.iter().enumerate() {
            if !(value > 0.0 && value < 1.0) {
                return Err(DepthError::InvalidDisparity { value, index });
            }
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.width + c]
    }

    pub fn to_depth(&self, range: DepthRange) -> DepthMap {
        let values = self.values.iter().map(|&d| range.depth_of(d)).collect();
        DepthMap::new(self.height, self.width, values).expect("range maps into positive depths")
    }
}

/// Linear inverse-depth reparameterization of sigmoid disparity.
///
/// `depth = 1 / (a d + b)` with `a = 1/min - 1/max`, `b = 1/max`, so the open
/// disparity interval `(0, 1)` maps onto `(min, max)` strictly decreasingly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthRange {
    pub min: f64,
    pub max: f64,
}

impl DepthRange {
    pub fn new(min: f64, max: f64) -> Result<Self, DepthError> {
        if !(min > 0.0 && max.is_finite() && min < max) {
            return Err(DepthError::BadRange { min, max });
        }
        Ok(Self { min, max })
    }

    #[inline]
    fn coeffs(&self) -> (f64, f64) {
        (1.0 / self.min - 1.0 / self.max, 1.0 / self.max)
    }

    #[inline]
    pub fn depth_of(&self, d: f64) -> f64 {
        let (a, b) = self.coeffs();
        1.0 / (a * d + b)
    }

    /// d(depth)/d(disparity) = -a * depth^2; strictly negative.
    #[inline]
    pub fn depth_derivative(&self, d: f64) -> f64 {
        let (a, _) = self.coeffs();
        let depth = self.depth_of(d);
        -a * depth * depth
    }

    /// Inverse mapping; result lies in (0, 1) iff `depth` lies in (min, max).
    #[inline]
    pub fn disparity_of(&self, depth: f64) -> f64 {
        let (a, b) = self.coeffs();
        (1.0 / depth - b) / a
    }
}

impl Default for DepthRange {
    fn default() -> Self {
        Self {
            min: 0.1,
            max: 100.0,
        }
    }
}

pub fn disparity_to_depth(d: f64, d_min: f64, d_max: f64) -> Result<f64, DepthError> {
    let range = DepthRange::new(d_min, d_max)?;
    Ok(range.depth_of(d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn depth_validation() {
        assert!(DepthMap::new(1, 2, vec![1.0, 2.0]).is_ok());
        assert!(DepthMap::new(1, 2, vec![1.0, 0.0]).is_err());
        assert!(DepthMap::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(DepthMap::new(1, 2, vec![1.0, f64::INFINITY]).is_err());
        let mask = BoolMask::new(1, 2, vec![true, false]);
        let masked = DepthMap::with_mask(1, 2, vec![1.0, -5.0], mask).unwrap();
        assert!(masked.is_valid(0, 0));
        assert!(!masked.is_valid(0, 1));
        assert_eq!(masked.valid_count(), 1);
    }

    #[test]
    fn disparity_validation() {
        assert!(DisparityField::new(1, 2, vec![0.5, 0.999]).is_ok());
        assert!(DisparityField::new(1, 2, vec![0.0, 0.5]).is_err());
        assert!(DisparityField::new(1, 2, vec![1.0, 0.5]).is_err());
    }

    #[test]
    fn range_endpoints() {
        let range = DepthRange::new(0.1, 100.0).unwrap();
        assert_relative_eq!(range.depth_of(1.0), 0.1, max_relative = 1e-12);
        assert_relative_eq!(range.depth_of(0.0), 100.0, max_relative = 1e-12);
        // a = 1/0.1 - 1/100 = 9.99, b = 0.01; d = 0.5 -> 1/5.005.
        assert_relative_eq!(
            disparity_to_depth(0.5, 0.1, 100.0).unwrap(),
            1.0 / 5.005,
            max_relative = 1e-12
        );
    }

    #[test]
    fn empty_range_rejected() {
        assert!(DepthRange::new(1.0, 1.0).is_err());
        assert!(DepthRange::new(2.0, 1.0).is_err());
        assert!(DepthRange::new(0.0, 1.0).is_err());
        assert!(DepthRange::new(-1.0, 1.0).is_err());
        assert!(disparity_to_depth(0.5, 5.0, 2.0).is_err());
    }

    #[test]
    fn strictly_decreasing_and_derivative_matches() {
        let range = DepthRange::new(0.5, 20.0).unwrap();
        let h = 1e-7;
        let mut prev = f64::INFINITY;
        for i in 1..100 {
            let d = i as f64 / 100.0;
            let depth = range.depth_of(d);
            assert!(depth < prev, "depth must decrease with disparity");
            assert!(depth > range.min && depth < range.max);
            prev = depth;
            let fd = (range.depth_of(d + h) - range.depth_of(d - h)) / (2.0 * h);
            assert_relative_eq!(range.depth_derivative(d), fd, max_relative = 1e-6);
            assert!(range.depth_derivative(d) < 0.0);
            assert_relative_eq!(range.disparity_of(depth), d, max_relative = 1e-9);
        }
    }
}
