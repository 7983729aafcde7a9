//! Affine augmentation of a cropped anomaly region and its mask.

use rand::Rng as _;

use crate::math::{abs, cos, floor, round, sin};
use crate::rng::Rng;
use crate::{BinaryMask, Grid, ImageGrid};

/// Ranges for the random affine applied identically to a region and its
/// mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentSpec {
    pub max_rotation_deg: f64,
    pub scale_range: (f64, f64),
    pub flip_horizontal_prob: f64,
    pub flip_vertical_prob: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            max_rotation_deg: 30.0,
            scale_range: (0.8, 1.2),
            flip_horizontal_prob: 0.5,
            flip_vertical_prob: 0.5,
        }
    }
}

impl AugmentSpec {
    pub fn identity() -> Self {
        Self {
            max_rotation_deg: 0.0,
            scale_range: (1.0, 1.0),
            flip_horizontal_prob: 0.0,
            flip_vertical_prob: 0.0,
        }
    }

    pub fn draw(&self, rng: &mut Rng) -> Affine {
        let rotation_deg = if self.max_rotation_deg > 0.0 {
            rng.gen_range(-self.max_rotation_deg..=self.max_rotation_deg)
        } else {
            0.0
        };
        let (lo, hi) = self.scale_range;
        let scale = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        Affine {
            rotation_deg,
            scale,
            flip_horizontal: rng.gen_bool(self.flip_horizontal_prob.clamp(0.0, 1.0)),
            flip_vertical: rng.gen_bool(self.flip_vertical_prob.clamp(0.0, 1.0)),
        }
    }
}

/// One concrete transform: flip, then scale, then rotate about the center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub rotation_deg: f64,
    pub scale: f64,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        rotation_deg: 0.0,
        scale: 1.0,
        flip_horizontal: false,
        flip_vertical: false,
    };

    /// Transforms `region` and `mask` (same size) with nearest-neighbour
    /// sampling onto the rotated bounding canvas, then trims the result to
    /// the mask's bounding box. `None` when the mask vanishes.
    pub fn apply(&self, region: &ImageGrid, mask: &BinaryMask) -> Option<(ImageGrid, BinaryMask)> {
        let (h, w) = region.dims();
        let theta = self.rotation_deg.to_radians();
        let (s, c) = (sin(theta), cos(theta));
        let out_h = (round(self.scale * (h as f64 * abs(c) + w as f64 * abs(s))) as usize).max(1);
        let out_w = (round(self.scale * (w as f64 * abs(c) + h as f64 * abs(s))) as usize).max(1);
        let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
        let (ocy, ocx) = (out_h as f64 / 2.0, out_w as f64 / 2.0);

        let source_of = |oy: usize, ox: usize| -> Option<(usize, usize)> {
            let dy = oy as f64 + 0.5 - ocy;
            let dx = ox as f64 + 0.5 - ocx;
            // Inverse rotation, then inverse scale.
            let ry = (c * dy - s * dx) / self.scale;
            let rx = (s * dy + c * dx) / self.scale;
            let mut sy = ry + cy;
            let mut sx = rx + cx;
            if self.flip_vertical {
                sy = h as f64 - sy;
            }
            if self.flip_horizontal {
                sx = w as f64 - sx;
            }
            let (fy, fx) = (floor(sy), floor(sx));
            (fy >= 0.0 && fx >= 0.0 && fy < h as f64 && fx < w as f64).then_some((fy as usize, fx as usize))
        };

        let mut out_img = ImageGrid::filled(out_h, out_w, [0.0; 3]);
        let out_mask = Grid::from_fn(out_h, out_w, |oy, ox| match source_of(oy, ox) {
            Some((sy, sx)) if *mask.get(sy, sx) != 0 => {
                out_img.set(oy, ox, *region.get(sy, sx));
                1
            }
            _ => 0,
        });
        let (y0, x0, y1, x1) = out_mask.bounding_box()?;
        Some((out_img.crop(y0, x0, y1, x1), out_mask.crop(y0, x0, y1, x1)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full(h: usize, w: usize) -> (ImageGrid, BinaryMask) {
        (
            Grid::from_fn(h, w, |y, x| [y as f32 / 10.0, x as f32 / 10.0, 0.5]),
            BinaryMask::filled(h, w, 1),
        )
    }

    #[test]
    fn identity_keeps_region() {
        let (img, mask) = full(3, 5);
        let (oi, om) = Affine::IDENTITY.apply(&img, &mask).unwrap();
        assert_eq!(oi, img);
        assert_eq!(om, mask);
    }

    #[test]
    fn quarter_turn_swaps_sides() {
        let (img, mask) = full(3, 5);
        let turn = Affine {
            rotation_deg: 90.0,
            ..Affine::IDENTITY
        };
        let (_, om) = turn.apply(&img, &mask).unwrap();
        assert_eq!(om.dims(), (5, 3));
        assert_eq!(om.count_nonzero(), 15);
    }

    #[test]
    fn horizontal_flip_mirrors_pixels() {
        let (img, mask) = full(3, 5);
        let flip = Affine {
            flip_horizontal: true,
            ..Affine::IDENTITY
        };
        let (oi, _) = flip.apply(&img, &mask).unwrap();
        for y in 0..3 {
            for x in 0..5 {
                assert_eq!(oi.get(y, x), img.get(y, 4 - x));
            }
        }
    }

    #[test]
    fn scaled_area_tracks_square_of_scale() {
        let (img, mask) = full(12, 20);
        for scale in [0.8, 0.9, 1.1, 1.2] {
            let a = Affine {
                scale,
                ..Affine::IDENTITY
            };
            let (_, om) = a.apply(&img, &mask).unwrap();
            let expected = 240.0 * scale * scale;
            // One pixel row/column of slack on each side.
            let slack = 12.0f64.max(20.0) * scale + 12.0 * scale;
            assert!((om.count_nonzero() as f64 - expected).abs() <= slack, "scale {scale}");
        }
    }
}
