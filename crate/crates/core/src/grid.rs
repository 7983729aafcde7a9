//! Row-major 2-D grids used for images, masks and score maps.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// RGB image with channel values in `[0, 1]`.
pub type ImageGrid = Grid<[f32; 3]>;
/// `{0,1}` grid; `1` marks anomalous pixels.
pub type BinaryMask = Grid<u8>;
/// `{0..=Y}` grid; `0` is normal.
pub type LabelMask = Grid<u8>;
/// `{0,1}` grid marking object foreground.
pub type ForegroundMap = Grid<u8>;
pub type ScoreMap = Grid<f64>;

impl<T: Clone> Grid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::DimensionMismatch {
                expected: height * width,
                found: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, y: usize, x: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_dims<U>(&self, other: &Grid<U>) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::ShapeMismatch {
                left: self.dims(),
                right: other.dims(),
            });
        }
        Ok(())
    }
}

impl Grid<u8> {
    /// Number of nonzero cells.
    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&v| v != 0)
    }

    /// Inclusive bounding box `(y0, x0, y1, x1)` of nonzero cells.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if *self.get(y, x) != 0 {
                    bb = Some(match bb {
                        None => (y, x, y, x),
                        Some((y0, x0, y1, x1)) => (y0.min(y), x0.min(x), y1.max(y), x1.max(x)),
                    });
                }
            }
        }
        bb
    }
}

impl<T: Clone> Grid<T> {
    /// Copy of the inclusive window `[y0..=y1] x [x0..=x1]`.
    pub fn crop(&self, y0: usize, x0: usize, y1: usize, x1: usize) -> Self {
        Grid::from_fn(y1 - y0 + 1, x1 - x0 + 1, |y, x| self.get(y0 + y, x0 + x).clone())
    }
}

impl ImageGrid {
    /// Rec. 601 luma in `[0, 1]`.
    pub fn luminance(&self) -> Grid<f64> {
        self.map(|p| 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
    }
}

/// Mask coupling: the classification mask carries `label` exactly where the
/// detection mask is set.
pub fn class_mask_from(detect: &BinaryMask, label: u8) -> LabelMask {
    detect.map(|&v| if v != 0 { label } else { 0 })
}
