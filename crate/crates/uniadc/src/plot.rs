//! Static line plot of accuracy and mIoU against the threshold.

use std::path::Path;

use image::{Rgb, RgbImage};
use imageproc::drawing::{draw_filled_rect_mut, draw_hollow_rect_mut, draw_line_segment_mut};
use imageproc::rect::Rect;

use crate::error::{AppError, AppResult};
use crate::io::ensure_parent;
use crate::report::SweepPoint;

const WIDTH: u32 = 640;
const HEIGHT: u32 = 400;
const MARGIN: f32 = 40.0;
pub const ACC_COLOR: Rgb<u8> = Rgb([31, 119, 180]);
pub const MIOU_COLOR: Rgb<u8> = Rgb([214, 39, 40]);

/// Draws Acc (blue) and mIoU (red) over tau in [0, 1], with the 0.4-0.6
/// band shaded and light gridlines every 0.1.
pub fn render_sweep(points: &[SweepPoint]) -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let (w, h) = (WIDTH as f32 - 2.0 * MARGIN, HEIGHT as f32 - 2.0 * MARGIN);
    let to_px = |tau: f64, v: f64| {
        (
            MARGIN + w * tau.clamp(0.0, 1.0) as f32,
            MARGIN + h * (1.0 - v.clamp(0.0, 1.0) as f32),
        )
    };
    let (band_lo, _) = to_px(0.4, 0.0);
    let (band_hi, _) = to_px(0.6, 0.0);
    draw_filled_rect_mut(
        &mut img,
        Rect::at(band_lo as i32, MARGIN as i32).of_size((band_hi - band_lo) as u32, h as u32),
        Rgb([235, 235, 235]),
    );
    for i in 0..=10 {
        let t = f64::from(i) / 10.0;
        let (x, _) = to_px(t, 0.0);
        let (_, y) = to_px(0.0, t);
        let grid = Rgb([215, 215, 215]);
        draw_line_segment_mut(&mut img, (x, MARGIN), (x, MARGIN + h), grid);
        draw_line_segment_mut(&mut img, (MARGIN, y), (MARGIN + w, y), grid);
    }
    draw_hollow_rect_mut(
        &mut img,
        Rect::at(MARGIN as i32, MARGIN as i32).of_size(w as u32 + 1, h as u32 + 1),
        Rgb([0, 0, 0]),
    );
    for (color, get) in [
        (ACC_COLOR, (|p: &SweepPoint| p.acc) as fn(&SweepPoint) -> Option<f64>),
        (MIOU_COLOR, |p: &SweepPoint| p.miou),
    ] {
        let pts: Vec<(f32, f32)> = points.iter().filter_map(|p| get(p).map(|v| to_px(p.tau, v))).collect();
        for pair in pts.windows(2) {
            draw_line_segment_mut(&mut img, pair[0], pair[1], color);
        }
        for &(x, y) in &pts {
            draw_filled_rect_mut(&mut img, Rect::at(x as i32 - 2, y as i32 - 2).of_size(5, 5), color);
        }
    }
    img
}

pub fn write_sweep_plot(path: &Path, points: &[SweepPoint]) -> AppResult<()> {
    ensure_parent(path)?;
    render_sweep(points).save(path).map_err(|e| AppError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
