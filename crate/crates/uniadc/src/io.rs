//! PNG/JPEG reading and writing for images, masks and score maps.

use std::fs;
use std::io::Read;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use sha2::{Digest, Sha256};
use uniadc_core::{BinaryMask, Grid, ImageGrid, LabelMask, ScoreMap};

use crate::error::{AppError, AppResult};

fn image_err(path: &Path, e: impl std::fmt::Display) -> AppError {
    AppError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn read_image(path: &Path) -> AppResult<ImageGrid> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img
        .pixels()
        .map(|p| p.0.map(|v| f32::from(v) / 255.0))
        .collect();
    Ok(Grid::from_vec(h as usize, w as usize, data)?)
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_image(path: &Path, image: &ImageGrid) -> AppResult<()> {
    let (h, w) = image.dims();
    let out = RgbImage::from_fn(w as u32, h as u32, |x, y| Rgb(image.get(y as usize, x as usize).map(to_u8)));
    ensure_parent(path)?;
    out.save(path).map_err(|e| image_err(path, e))
}

/// Reads a single-channel mask; values above 127 are foreground.
pub fn read_mask(path: &Path) -> AppResult<BinaryMask> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_luma8();
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| u8::from(p.0[0] > 127)).collect();
    Ok(Grid::from_vec(h as usize, w as usize, data)?)
}

/// Writes a mask as 0/255 grayscale.
pub fn write_mask(path: &Path, mask: &BinaryMask) -> AppResult<()> {
    let (h, w) = mask.dims();
    let out = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([if *mask.get(y as usize, x as usize) > 0 { 255 } else { 0 }])
    });
    ensure_parent(path)?;
    out.save(path).map_err(|e| image_err(path, e))
}

pub fn write_score_map(path: &Path, map: &ScoreMap) -> AppResult<()> {
    let (h, w) = map.dims();
    let out = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([to_u8(*map.get(y as usize, x as usize) as f32)])
    });
    ensure_parent(path)?;
    out.save(path).map_err(|e| image_err(path, e))
}

const PALETTE: [[u8; 3]; 8] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
];

/// Writes a label map with one colour per label (black for normal).
pub fn write_label_map(path: &Path, labels: &LabelMask) -> AppResult<()> {
    let (h, w) = labels.dims();
    let out = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let l = usize::from(*labels.get(y as usize, x as usize));
        Rgb(if l == 0 { PALETTE[0] } else { PALETTE[1 + (l - 1) % 7] })
    });
    ensure_parent(path)?;
    out.save(path).map_err(|e| image_err(path, e))
}

pub fn ensure_parent(path: &Path) -> AppResult<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).map_err(|e| AppError::io(p, e))?;
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> AppResult<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| AppError::io(path, e))
}

/// Hex SHA-256 of a file's contents.
pub fn sha256_file(path: &Path) -> AppResult<String> {
    let mut f = fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| AppError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

pub fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}
