//! Frozen multi-scale feature extractors.

use alloc::vec;
use alloc::vec::Vec;

use super::tensor::Tensor;
use crate::math::sqrt;
use crate::ImageGrid;

/// Frozen, deterministic multi-scale feature extractor. Levels are
/// returned finest first.
pub trait VisionBackbone {
    fn level_channels(&self) -> Vec<usize>;
    fn extract(&self, image: &ImageGrid) -> Vec<Tensor>;
}

/// Per-channel local mean and standard deviation over square windows,
/// one level per `(window, stride)` pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchStatsBackbone {
    pub levels: Vec<(usize, usize)>,
}

impl Default for PatchStatsBackbone {
    fn default() -> Self {
        Self {
            levels: vec![(3, 2), (7, 4), (15, 8)],
        }
    }
}

impl VisionBackbone for PatchStatsBackbone {
    fn level_channels(&self) -> Vec<usize> {
        vec![6; self.levels.len()]
    }

    fn extract(&self, image: &ImageGrid) -> Vec<Tensor> {
        let (h, w) = image.dims();
        // Integral images of values and squares, (h+1) x (w+1) per channel.
        let stride = w + 1;
        let mut sums = vec![vec![0.0f64; (h + 1) * stride]; 3];
        let mut squares = vec![vec![0.0f64; (h + 1) * stride]; 3];
        for y in 0..h {
            for x in 0..w {
                let p = image.get(y, x);
                for c in 0..3 {
                    let v = f64::from(p[c]);
                    let i = (y + 1) * stride + x + 1;
                    sums[c][i] = v + sums[c][i - 1] + sums[c][i - stride] - sums[c][i - stride - 1];
                    squares[c][i] = v * v + squares[c][i - 1] + squares[c][i - stride] - squares[c][i - stride - 1];
                }
            }
        }
        let window_sum = |table: &[f64], y0: usize, x0: usize, y1: usize, x1: usize| {
            table[y1 * stride + x1] - table[y0 * stride + x1] - table[y1 * stride + x0] + table[y0 * stride + x0]
        };

        self.levels
            .iter()
            .map(|&(window, step)| {
                let oh = (h / step).max(1);
                let ow = (w / step).max(1);
                let half = window / 2;
                let mut t = Tensor::zeros(6, oh, ow);
                for oy in 0..oh {
                    let cy = (oy * step + step / 2).min(h - 1);
                    let (y0, y1) = (cy.saturating_sub(half), (cy + half + 1).min(h));
                    for ox in 0..ow {
                        let cx = (ox * step + step / 2).min(w - 1);
                        let (x0, x1) = (cx.saturating_sub(half), (cx + half + 1).min(w));
                        let n = ((y1 - y0) * (x1 - x0)) as f64;
                        for c in 0..3 {
                            let mean = window_sum(&sums[c], y0, x0, y1, x1) / n;
                            let var = (window_sum(&squares[c], y0, x0, y1, x1) / n - mean * mean).max(0.0);
                            // Centered and rescaled to roughly unit range.
                            t.data[(c * oh + oy) * ow + ox] = 2.0 * mean - 1.0;
                            t.data[((c + 3) * oh + oy) * ow + ox] = 4.0 * sqrt(var);
                        }
                    }
                }
                t
            })
            .collect()
    }
}
