//! Gaussian-window SSIM on luminance.

use alloc::vec::Vec;

use crate::math::exp;
use crate::{Error, Grid, ImageGrid, Result};

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
/// Dynamic range of the inputs.
pub const RANGE: f64 = 1.0;

fn gaussian_window(size: usize) -> Vec<f64> {
    let half = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - half;
            exp(-(d * d) / (2.0 * SIGMA * SIGMA))
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Mean SSIM over all positions where the window fits. Inputs smaller
/// than the window use the largest odd window that fits.
pub fn ssim(a: &Grid<f64>, b: &Grid<f64>) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch {
            left: a.dims(),
            right: b.dims(),
        });
    }
    let (h, w) = a.dims();
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument("SSIM of an empty image".into()));
    }
    let mut size = WINDOW.min(h).min(w);
    if size % 2 == 0 {
        size -= 1;
    }
    let taps = gaussian_window(size);
    let c1 = (K1 * RANGE) * (K1 * RANGE);
    let c2 = (K2 * RANGE) * (K2 * RANGE);

    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..=h - size {
        for x in 0..=w - size {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (i, ty) in taps.iter().enumerate() {
                for (j, tx) in taps.iter().enumerate() {
                    let wgt = ty * tx;
                    let va = *a.get(y + i, x + j);
                    let vb = *b.get(y + i, x + j);
                    mx += wgt * va;
                    my += wgt * vb;
                    sxx += wgt * va * va;
                    syy += wgt * vb * vb;
                    sxy += wgt * va * vb;
                }
            }
            let var_x = sxx - mx * mx;
            let var_y = syy - my * my;
            let cov = sxy - mx * my;
            let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
            let den = (mx * mx + my * my + c1) * (var_x + var_y + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// SSIM of two sub-images mapped from `[-1, 1]` to `[0, 1]`.
pub fn ssim_matching_score(original_sub: &ImageGrid, repainted_sub: &ImageGrid) -> Result<f64> {
    Ok((ssim(&original_sub.luminance(), &repainted_sub.luminance())? + 1.0) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, rng_from};

    fn ramp(h: usize, w: usize) -> Grid<f64> {
        Grid::from_fn(h, w, |y, x| ((y * 3 + x * 5) % 17) as f64 / 17.0)
    }

    #[test]
    fn identical_is_one() {
        let a = ramp(24, 30);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let img = a.map(|&v| [v as f32; 3]);
        assert_eq!(ssim_matching_score(&img, &img).unwrap(), 1.0);
    }

    #[test]
    fn constant_black_vs_white_closed_form() {
        // Zero variance everywhere: SSIM = C1 / (1 + C1) * C2 / C2.
        let a = Grid::filled(16, 16, 0.0);
        let b = Grid::filled(16, 16, 1.0);
        let c1 = (K1 * RANGE) * (K1 * RANGE);
        let expected = c1 / (1.0 + c1);
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn small_noise_scores_high_but_not_one() {
        let a = ramp(32, 32);
        let mut rng = rng_from(5);
        let b = a.map(|&v| v + 0.01 * normal(&mut rng));
        let ia = a.map(|&v| [v as f32; 3]);
        let ib = b.map(|&v| [v as f32; 3]);
        let s = ssim_matching_score(&ia, &ib).unwrap();
        assert!(s > 0.9 && s < 1.0, "{s}");
    }

    #[test]
    fn shape_mismatch() {
        assert!(matches!(
            ssim(&ramp(12, 12), &ramp(12, 13)),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn tiny_inputs_shrink_the_window() {
        let a = ramp(5, 9);
        let b = a.map(|&v| 1.0 - v);
        let s = ssim(&a, &b).unwrap();
        assert!(s.is_finite() && s < 1.0);
    }
}
