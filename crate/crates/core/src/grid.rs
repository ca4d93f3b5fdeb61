//! Homogeneous pixel coordinate grids.
//!
//! Pixel `(r, c)` has continuous coordinates `(c + 0.5, r + 0.5, 1)`. The half
//! offset makes intrinsics rescaling under resize/crop exact, and is the single
//! convention used by every module that touches pixel coordinates.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid dimensions must be nonzero, got {height}x{width}")]
    ZeroDimension { height: usize, width: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelGrid {
    height: usize,
    width: usize,
    coords: Vec<[f64; 3]>,
}

impl PixelGrid {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> [f64; 3] {
        self.coords[r * self.width + c]
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }
}

/// Continuous center coordinate of pixel `(r, c)`.
#[inline]
pub fn pixel_center(r: usize, c: usize) -> (f64, f64) {
    (c as f64 + 0.5, r as f64 + 0.5)
}

pub fn make_pixel_grid(height: usize, width: usize) -> Result<PixelGrid, GridError> {
    if height == 0 || width == 0 {
        return Err(GridError::ZeroDimension { height, width });
    }
    let mut coords = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            let (u, v) = pixel_center(r, c);
            coords.push([u, v, 1.0]);
        }
    }
    Ok(PixelGrid {
        height,
        width,
        coords,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_grid() {
        let g = make_pixel_grid(1, 1).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.get(0, 0), [0.5, 0.5, 1.0]);
    }

    #[test]
    fn two_by_two_enumeration() {
        let g = make_pixel_grid(2, 2).unwrap();
        assert_eq!(g.len(), 4);
        let us: Vec<f64> = g.coords().iter().map(|p| p[0]).collect();
        assert_eq!(us, vec![0.5, 1.5, 0.5, 1.5]);
        let vs: Vec<f64> = g.coords().iter().map(|p| p[1]).collect();
        assert_eq!(vs, vec![0.5, 0.5, 1.5, 1.5]);
    }

    #[test]
    fn vga_extent() {
        let g = make_pixel_grid(480, 640).unwrap();
        assert_eq!(g.len(), 307_200);
        let max_u = g.coords().iter().map(|p| p[0]).fold(f64::MIN, f64::max);
        let max_v = g.coords().iter().map(|p| p[1]).fold(f64::MIN, f64::max);
        assert_eq!(max_u, 639.5);
        assert_eq!(max_v, 479.5);
        assert!(g.coords().iter().all(|p| p[2] == 1.0));
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(make_pixel_grid(0, 4).is_err());
        assert!(make_pixel_grid(4, 0).is_err());
    }

    #[test]
    fn repeated_calls_identical() {
        let a = make_pixel_grid(7, 9).unwrap();
        let b = make_pixel_grid(7, 9).unwrap();
        assert_eq!(a, b);
    }
}
