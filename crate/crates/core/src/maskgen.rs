//! Anomaly mask generation from shape and size priors.
//!
//! Seven local mask families are generated at three scales; the eighth
//! family reuses the object's foreground. Local shapes other than Perlin
//! noise produce one or two separated regions; Perlin noise may produce
//! more. Every region's area falls inside the requested size class.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};
use core::fmt;

use rand::Rng as _;

use crate::components::{fill_holes, label};
use crate::math::{abs, ceil, cos, floor, sin, sqrt};
use crate::rng::{rng_for, Rng};
use crate::synth::AnomalyPrior;
use crate::{BinaryMask, Error, ForegroundMap, Grid, ImageGrid, Result};

/// Smallest accepted image side.
pub const MIN_RESOLUTION: usize = 32;
/// Whole-mask redraws (with derived seeds) before giving up.
pub const MASK_RETRY_BUDGET: usize = 8;

const PARAM_REDRAWS: usize = 16;
const PLACEMENT_TRIES: usize = 48;
const FIT_ITERATIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MaskShape {
    Rectangle,
    Line,
    Polygon,
    Ellipse,
    HollowEllipse,
    RandomBrush,
    PerlinNoise,
    ForegroundMask,
}

impl MaskShape {
    pub const ALL: [MaskShape; 8] = [
        MaskShape::Rectangle,
        MaskShape::Line,
        MaskShape::Polygon,
        MaskShape::Ellipse,
        MaskShape::HollowEllipse,
        MaskShape::RandomBrush,
        MaskShape::PerlinNoise,
        MaskShape::ForegroundMask,
    ];

    /// Shapes that come in three scales.
    pub const LOCAL: [MaskShape; 7] = [
        MaskShape::Rectangle,
        MaskShape::Line,
        MaskShape::Polygon,
        MaskShape::Ellipse,
        MaskShape::HollowEllipse,
        MaskShape::RandomBrush,
        MaskShape::PerlinNoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MaskShape::Rectangle => "Rectangle",
            MaskShape::Line => "Line",
            MaskShape::Polygon => "Polygon",
            MaskShape::Ellipse => "Ellipse",
            MaskShape::HollowEllipse => "HollowEllipse",
            MaskShape::RandomBrush => "RandomBrush",
            MaskShape::PerlinNoise => "PerlinNoise",
            MaskShape::ForegroundMask => "Foreground",
        }
    }

    /// Parses a shape name, ignoring case, spaces, dashes and underscores.
    /// `Foreground` and `ForegroundMask` are both accepted.
    pub fn parse(text: &str) -> Option<Self> {
        let key: alloc::string::String = text
            .chars()
            .filter(|c| !matches!(c, ' ' | '-' | '_'))
            .flat_map(char::to_lowercase)
            .collect();
        Some(match key.as_str() {
            "rectangle" => MaskShape::Rectangle,
            "line" => MaskShape::Line,
            "polygon" => MaskShape::Polygon,
            "ellipse" => MaskShape::Ellipse,
            "hollowellipse" => MaskShape::HollowEllipse,
            "randombrush" => MaskShape::RandomBrush,
            "perlinnoise" | "perlin" => MaskShape::PerlinNoise,
            "foreground" | "foregroundmask" => MaskShape::ForegroundMask,
            _ => return None,
        })
    }

    /// Whether masks of this shape are limited to two regions with
    /// per-region size bounds.
    pub fn is_region_bounded(self) -> bool {
        !matches!(self, MaskShape::PerlinNoise | MaskShape::ForegroundMask)
    }
}

impl fmt::Display for MaskShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

impl SizeClass {
    pub const ALL: [SizeClass; 3] = [SizeClass::Small, SizeClass::Medium, SizeClass::Large];

    /// Area fraction bounds `(lo, hi)` of one region relative to the whole
    /// image. `lo` is inclusive; `hi` is exclusive except for `Large`.
    pub fn area_fraction_range(self) -> (f64, f64) {
        match self {
            SizeClass::Small => (0.001, 0.01),
            SizeClass::Medium => (0.01, 0.05),
            SizeClass::Large => (0.05, 0.20),
        }
    }

    pub fn contains_fraction(self, fraction: f64) -> bool {
        let (lo, hi) = self.area_fraction_range();
        match self {
            SizeClass::Large => fraction >= lo && fraction <= hi,
            _ => fraction >= lo && fraction < hi,
        }
    }

    pub fn contains_area(self, pixels: usize, total: usize) -> bool {
        self.contains_fraction(pixels as f64 / total as f64)
    }

    /// Inclusive pixel-count range for an image of `total` pixels, or
    /// `None` when no integer count fits.
    pub fn pixel_range(self, total: usize) -> Option<(usize, usize)> {
        let (lo, hi) = self.area_fraction_range();
        let mut min = ceil(lo * total as f64) as usize;
        while min > 0 && self.contains_area(min - 1, total) {
            min -= 1;
        }
        while !self.contains_area(min, total) && (min as f64) <= hi * total as f64 {
            min += 1;
        }
        let mut max = floor(hi * total as f64) as usize;
        while max > min && !self.contains_area(max, total) {
            max -= 1;
        }
        (self.contains_area(min, total) && self.contains_area(max, total)).then_some((min, max))
    }

    pub fn name(self) -> &'static str {
        match self {
            SizeClass::Small => "Small",
            SizeClass::Medium => "Medium",
            SizeClass::Large => "Large",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text.trim().to_ascii_lowercase().as_str() {
            "small" => Some(SizeClass::Small),
            "medium" => Some(SizeClass::Medium),
            "large" => Some(SizeClass::Large),
            _ => None,
        }
    }
}

impl fmt::Display for SizeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Candidate `(shape, size)` pairs for a category. `None` size means any.
pub fn mask_menu(prior: &AnomalyPrior) -> Vec<(MaskShape, Option<SizeClass>)> {
    let shapes: Vec<MaskShape> = match (&prior.shapes, &prior.sizes) {
        (Some(shapes), _) => shapes.clone(),
        // A size prior alone describes a local anomaly.
        (None, Some(_)) => MaskShape::LOCAL.to_vec(),
        (None, None) => MaskShape::ALL.to_vec(),
    };
    let sizes: Vec<SizeClass> = prior.sizes.clone().unwrap_or_else(|| SizeClass::ALL.to_vec());
    let mut menu = Vec::new();
    for shape in shapes {
        if shape == MaskShape::ForegroundMask {
            menu.push((shape, None));
        } else {
            menu.extend(sizes.iter().map(|&s| (shape, Some(s))));
        }
    }
    menu
}

/// Generates an anomaly mask. Deterministic in all arguments.
pub fn generate_mask(
    shape: MaskShape,
    size: Option<SizeClass>,
    resolution: (usize, usize),
    foreground: Option<&ForegroundMap>,
    seed: u64,
) -> Result<BinaryMask> {
    let (height, width) = resolution;
    if height < MIN_RESOLUTION || width < MIN_RESOLUTION {
        return Err(Error::InvalidResolution {
            height,
            width,
            min: MIN_RESOLUTION,
        });
    }
    if let Some(fg) = foreground {
        if fg.dims() != resolution {
            return Err(Error::ShapeMismatch {
                left: resolution,
                right: fg.dims(),
            });
        }
    }
    if shape == MaskShape::ForegroundMask {
        let fg = foreground.ok_or(Error::MissingForeground)?;
        let mask = fg.map(|&v| u8::from(v != 0));
        return if mask.any() {
            Ok(mask)
        } else {
            Err(Error::EmptyMask { attempts: 1 })
        };
    }

    for attempt in 0..MASK_RETRY_BUDGET {
        let mut rng = rng_for(seed, &[attempt as u64]);
        let size = size.unwrap_or_else(|| SizeClass::ALL[rng.gen_range(0..3)]);
        let drawn = if shape == MaskShape::PerlinNoise {
            perlin_mask(size, resolution, foreground, &mut rng)
        } else {
            local_mask(shape, size, resolution, foreground, &mut rng)
        };
        if let Some(mut mask) = drawn {
            if let Some(fg) = foreground {
                for (m, f) in mask.as_mut_slice().iter_mut().zip(fg.as_slice()) {
                    *m &= u8::from(*f != 0);
                }
            }
            if mask.any() {
                return Ok(mask);
            }
        }
    }
    Err(Error::EmptyMask {
        attempts: MASK_RETRY_BUDGET,
    })
}

fn local_mask(
    shape: MaskShape,
    size: SizeClass,
    (height, width): (usize, usize),
    foreground: Option<&ForegroundMap>,
    rng: &mut Rng,
) -> Option<BinaryMask> {
    let total = height * width;
    let (min_px, max_px) = size.pixel_range(total)?;
    let regions = rng.gen_range(1..=2usize);
    let mut mask = BinaryMask::filled(height, width, 0);
    let mut placed = 0;
    for _ in 0..regions {
        let mut done = false;
        for _ in 0..PARAM_REDRAWS {
            let params = ShapeParams::draw(shape, rng);
            let target = rng.gen_range(min_px as f64..=max_px as f64);
            let Some(stamp) = fit_stamp(&params, target, min_px, max_px) else {
                continue;
            };
            if place(&stamp, &mut mask, foreground, rng) {
                done = true;
                break;
            }
        }
        if done {
            placed += 1;
        } else if placed == 0 {
            return None;
        } else {
            // Second region did not fit; one region is still a valid mask.
            break;
        }
    }
    Some(mask)
}

/// Shape parameters drawn once per region; only the scale is then fitted.
#[derive(Debug, Clone)]
enum ShapeParams {
    Rectangle { aspect: f64, angle: f64 },
    Ellipse { aspect: f64, angle: f64 },
    HollowEllipse { aspect: f64, angle: f64, thickness: f64 },
    Line { ratio: f64, angle: f64 },
    Polygon { vertices: Vec<(f64, f64)> },
    RandomBrush { disks: Vec<(f64, f64, f64)> },
}

impl ShapeParams {
    fn draw(shape: MaskShape, rng: &mut Rng) -> Self {
        let angle = rng.gen_range(0.0..PI);
        match shape {
            MaskShape::Rectangle => ShapeParams::Rectangle {
                aspect: rng.gen_range(0.3..=3.0),
                angle,
            },
            MaskShape::Ellipse => ShapeParams::Ellipse {
                aspect: rng.gen_range(0.4..=2.5),
                angle,
            },
            MaskShape::HollowEllipse => ShapeParams::HollowEllipse {
                aspect: rng.gen_range(0.5..=2.0),
                angle,
                thickness: rng.gen_range(0.05..=0.20),
            },
            MaskShape::Line => ShapeParams::Line {
                ratio: rng.gen_range(6.0..=14.0),
                angle,
            },
            MaskShape::Polygon => {
                let n = rng.gen_range(3..=8usize);
                let mut angles: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..TAU)).collect();
                angles.sort_by(f64::total_cmp);
                let vertices = angles
                    .into_iter()
                    .map(|a| {
                        let r = rng.gen_range(0.5..=1.0);
                        (r * sin(a), r * cos(a))
                    })
                    .collect();
                ShapeParams::Polygon { vertices }
            }
            MaskShape::RandomBrush => {
                let steps = rng.gen_range(3..=8usize);
                let mut disks = Vec::with_capacity(steps);
                let (mut y, mut x) = (0.0, 0.0);
                let mut heading = rng.gen_range(0.0..TAU);
                for _ in 0..steps {
                    let r = rng.gen_range(0.7..=1.3);
                    disks.push((y, x, r));
                    heading += rng.gen_range(-PI / 3.0..=PI / 3.0);
                    // Step below the smallest radius keeps consecutive disks overlapping.
                    y += 0.6 * sin(heading);
                    x += 0.6 * cos(heading);
                }
                ShapeParams::RandomBrush { disks }
            }
            MaskShape::PerlinNoise | MaskShape::ForegroundMask => {
                unreachable!("not a stamped shape")
            }
        }
    }

    /// Pixel area of the unit-scale shape times `scale^2`, used as the
    /// starting point of the scale search.
    fn initial_scale(&self, target: f64) -> f64 {
        let unit_area = match self {
            ShapeParams::Rectangle { .. } => 4.0,
            ShapeParams::Ellipse { .. } => PI,
            ShapeParams::HollowEllipse { thickness, .. } => PI * (1.0 - (1.0 - thickness) * (1.0 - thickness)),
            ShapeParams::Line { ratio, .. } => *ratio,
            ShapeParams::Polygon { .. } => 1.5,
            ShapeParams::RandomBrush { disks } => 1.2 * disks.len() as f64,
        };
        sqrt(target / unit_area).max(0.5)
    }

    fn extent(&self, scale: f64) -> f64 {
        let unit = match self {
            ShapeParams::Rectangle { aspect, .. } => sqrt(aspect.max(1.0 / aspect)) * 1.5,
            ShapeParams::Ellipse { aspect, .. } | ShapeParams::HollowEllipse { aspect, .. } => {
                sqrt(aspect.max(1.0 / aspect))
            }
            ShapeParams::Line { ratio, .. } => ratio / 2.0 + 1.0,
            ShapeParams::Polygon { .. } => 1.0,
            ShapeParams::RandomBrush { disks } => disks
                .iter()
                .map(|&(y, x, r)| sqrt(y * y + x * x) + r)
                .fold(0.0, f64::max),
        };
        unit * scale + 2.0
    }

    fn contains(&self, scale: f64, py: f64, px: f64) -> bool {
        match self {
            ShapeParams::Rectangle { aspect, angle } => {
                let (u, v) = rotate(py, px, *angle);
                let hy = scale / sqrt(*aspect);
                let hx = scale * sqrt(*aspect);
                abs(u) <= hy && abs(v) <= hx
            }
            ShapeParams::Ellipse { aspect, angle } => {
                let (u, v) = rotate(py, px, *angle);
                let ay = scale / sqrt(*aspect);
                let ax = scale * sqrt(*aspect);
                (u / ay) * (u / ay) + (v / ax) * (v / ax) <= 1.0
            }
            ShapeParams::HollowEllipse {
                aspect,
                angle,
                thickness,
            } => {
                let (u, v) = rotate(py, px, *angle);
                let ay = scale / sqrt(*aspect);
                let ax = scale * sqrt(*aspect);
                let t = (thickness * ay.min(ax)).max(1.0);
                let outer = (u / ay) * (u / ay) + (v / ax) * (v / ax) <= 1.0;
                let (iy, ix) = (ay - t, ax - t);
                let inner = iy > 0.0 && ix > 0.0 && (u / iy) * (u / iy) + (v / ix) * (v / ix) < 1.0;
                outer && !inner
            }
            ShapeParams::Line { ratio, angle } => {
                let (u, v) = rotate(py, px, *angle);
                let half_len = scale * ratio / 2.0;
                let half_width = (scale / 2.0).max(0.75);
                let du = (abs(u) - half_len).max(0.0);
                du * du + v * v <= half_width * half_width
            }
            ShapeParams::Polygon { vertices } => {
                let (y, x) = (py / scale, px / scale);
                let mut inside = false;
                let n = vertices.len();
                for i in 0..n {
                    let (yi, xi) = vertices[i];
                    let (yj, xj) = vertices[(i + n - 1) % n];
                    if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                }
                inside
            }
            ShapeParams::RandomBrush { disks } => disks.iter().any(|&(dy, dx, r)| {
                let (ey, ex) = (py - dy * scale, px - dx * scale);
                ey * ey + ex * ex <= (r * scale) * (r * scale)
            }),
        }
    }

    fn rasterize(&self, scale: f64) -> Option<BinaryMask> {
        let reach = ceil(self.extent(scale)) as i64;
        let side = (2 * reach + 1) as usize;
        let canvas = Grid::from_fn(side, side, |y, x| {
            u8::from(self.contains(scale, y as f64 - reach as f64, x as f64 - reach as f64))
        });
        let (y0, x0, y1, x1) = canvas.bounding_box()?;
        Some(canvas.crop(y0, x0, y1, x1))
    }
}

fn rotate(y: f64, x: f64, angle: f64) -> (f64, f64) {
    let (s, c) = (sin(angle), cos(angle));
    (c * y - s * x, s * y + c * x)
}

/// Searches the scale so the stamp is one region with an area inside
/// `[min_px, max_px]`.
fn fit_stamp(params: &ShapeParams, target: f64, min_px: usize, max_px: usize) -> Option<BinaryMask> {
    let mut scale = params.initial_scale(target);
    for _ in 0..FIT_ITERATIONS {
        let Some(stamp) = params.rasterize(scale) else {
            scale *= 1.5;
            continue;
        };
        let area = stamp.count_nonzero();
        if (min_px..=max_px).contains(&area) && label(&stamp).count() == 1 {
            return Some(stamp);
        }
        let ratio = target / area.max(1) as f64;
        // Near-target connectivity failures need a nudge, not a rescale.
        scale *= if (0.9..1.1).contains(&ratio) { 1.05 } else { sqrt(ratio) };
    }
    None
}

/// Places `stamp` into `mask` without touching existing regions (so regions
/// stay separate) and fully inside the foreground when given.
fn place(stamp: &BinaryMask, mask: &mut BinaryMask, foreground: Option<&ForegroundMap>, rng: &mut Rng) -> bool {
    let (h, w) = mask.dims();
    let (sh, sw) = stamp.dims();
    if sh > h || sw > w {
        return false;
    }
    'tries: for _ in 0..PLACEMENT_TRIES {
        let oy = rng.gen_range(0..=h - sh);
        let ox = rng.gen_range(0..=w - sw);
        for sy in 0..sh {
            for sx in 0..sw {
                if *stamp.get(sy, sx) == 0 {
                    continue;
                }
                let (y, x) = (oy + sy, ox + sx);
                if let Some(fg) = foreground {
                    if *fg.get(y, x) == 0 {
                        continue 'tries;
                    }
                }
                for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        if *mask.get(ny, nx) != 0 {
                            continue 'tries;
                        }
                    }
                }
            }
        }
        for sy in 0..sh {
            for sx in 0..sw {
                if *stamp.get(sy, sx) != 0 {
                    mask.set(oy + sy, ox + sx, 1);
                }
            }
        }
        return true;
    }
    false
}

/// Two-octave gradient noise thresholded at the quantile that yields the
/// target area.
fn perlin_mask(
    size: SizeClass,
    (height, width): (usize, usize),
    foreground: Option<&ForegroundMap>,
    rng: &mut Rng,
) -> Option<BinaryMask> {
    let total = height * width;
    let (min_px, max_px) = size.pixel_range(total)?;
    let target = rng.gen_range(min_px..=max_px);
    let cells_y = rng.gen_range(2..=6usize);
    let cells_x = rng.gen_range(2..=6usize);
    let coarse = GradientLattice::new(cells_y, cells_x, rng);
    let fine = GradientLattice::new(cells_y * 2, cells_x * 2, rng);

    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(total);
    for y in 0..height {
        for x in 0..width {
            if foreground.is_some_and(|fg| *fg.get(y, x) == 0) {
                continue;
            }
            let v = (y as f64 + 0.5) / height as f64;
            let u = (x as f64 + 0.5) / width as f64;
            let value = coarse.sample(v, u) + 0.5 * fine.sample(v, u);
            candidates.push((value, y * width + x));
        }
    }
    if candidates.len() < target {
        return None;
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    // Thresholding leaves fragments; those below the class minimum are
    // dropped so every region stays inside the size class. When nothing
    // survives, the threshold is lowered (never past the class maximum)
    // until blobs merge into a region large enough.
    let limit = max_px.min(candidates.len());
    let mut count = target;
    loop {
        let mut mask = BinaryMask::filled(height, width, 0);
        for &(_, idx) in &candidates[..count] {
            mask.as_mut_slice()[idx] = 1;
        }
        let regions = label(&mask);
        let kept = regions
            .labels
            .map(|&l| u8::from(l > 0 && regions.areas[l as usize - 1] >= min_px));
        if kept.any() {
            return Some(kept);
        }
        if count >= limit {
            return None;
        }
        count = (count + count / 4 + 1).min(limit);
    }
}

struct GradientLattice {
    cells_y: usize,
    cells_x: usize,
    gradients: Vec<(f64, f64)>,
}

impl GradientLattice {
    fn new(cells_y: usize, cells_x: usize, rng: &mut Rng) -> Self {
        let gradients = (0..(cells_y + 1) * (cells_x + 1))
            .map(|_| {
                let a = rng.gen_range(0.0..TAU);
                (sin(a), cos(a))
            })
            .collect();
        Self {
            cells_y,
            cells_x,
            gradients,
        }
    }

    fn sample(&self, v: f64, u: f64) -> f64 {
        let fy = v * self.cells_y as f64;
        let fx = u * self.cells_x as f64;
        let iy = (floor(fy) as usize).min(self.cells_y - 1);
        let ix = (floor(fx) as usize).min(self.cells_x - 1);
        let (ty, tx) = (fy - iy as f64, fx - ix as f64);
        let dot = |gy: usize, gx: usize, dy: f64, dx: f64| {
            let (a, b) = self.gradients[gy * (self.cells_x + 1) + gx];
            a * dy + b * dx
        };
        let n00 = dot(iy, ix, ty, tx);
        let n01 = dot(iy, ix + 1, ty, tx - 1.0);
        let n10 = dot(iy + 1, ix, ty - 1.0, tx);
        let n11 = dot(iy + 1, ix + 1, ty - 1.0, tx - 1.0);
        let fade = |t: f64| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
        let (sy, sx) = (fade(ty), fade(tx));
        let top = n00 + sx * (n01 - n00);
        let bottom = n10 + sx * (n11 - n10);
        top + sy * (bottom - top)
    }
}

/// Reference foreground estimate: Otsu threshold on luminance, the class
/// touching the border less is foreground, largest region kept, holes
/// filled. A uniform image is all foreground.
pub fn foreground_estimate(image: &ImageGrid) -> ForegroundMap {
    let (h, w) = image.dims();
    let luma = image.luminance();
    let (lo, hi) = luma
        .as_slice()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi - lo > 1e-6) {
        return ForegroundMap::filled(h, w, 1);
    }

    let bins = 256usize;
    let bin_of = |v: f64| ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
    let mut hist = vec![0usize; bins];
    for &v in luma.as_slice() {
        hist[bin_of(v)] += 1;
    }
    let total = (h * w) as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut weight_bg, mut sum_bg) = (0.0, 0.0);
    let (mut best_split, mut best_var) = (0usize, -1.0);
    for (i, &count) in hist.iter().enumerate().take(bins - 1) {
        weight_bg += count as f64;
        sum_bg += i as f64 * count as f64;
        let weight_fg = total - weight_bg;
        if weight_bg == 0.0 || weight_fg == 0.0 {
            continue;
        }
        let mean_bg = sum_bg / weight_bg;
        let mean_fg = (sum_all - sum_bg) / weight_fg;
        let between = weight_bg * weight_fg * (mean_bg - mean_fg) * (mean_bg - mean_fg);
        if between > best_var {
            best_var = between;
            best_split = i;
        }
    }
    let above = luma.map(|&v| u8::from(bin_of(v) > best_split));

    let (mut border_above, mut border_total) = (0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            if y == 0 || x == 0 || y + 1 == h || x + 1 == w {
                border_total += 1;
                border_above += usize::from(*above.get(y, x));
            }
        }
    }
    let chosen = if 2 * border_above > border_total {
        above.map(|&v| 1 - v)
    } else {
        above
    };
    match label(&chosen).largest() {
        Some(largest) => fill_holes(&largest),
        None => ForegroundMap::filled(h, w, 1),
    }
}

/// Uses the externally supplied map when present, the reference estimate
/// otherwise.
pub fn foreground_or_estimate(image: &ImageGrid, external: Option<ForegroundMap>) -> ForegroundMap {
    external.unwrap_or_else(|| foreground_estimate(image))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::components::label;
    use alloc::string::ToString;

    fn prior(shapes: Option<Vec<MaskShape>>, sizes: Option<Vec<SizeClass>>) -> AnomalyPrior {
        AnomalyPrior {
            image_class: "c".to_string(),
            category_id: 1,
            category_name: "x".to_string(),
            descriptions: vec!["x".to_string()],
            shapes,
            sizes,
            detection_only: false,
        }
    }

    #[test]
    fn exactly_eight_shapes() {
        assert_eq!(MaskShape::ALL.len(), 8);
        for s in MaskShape::ALL {
            assert_eq!(MaskShape::parse(s.name()), Some(s));
        }
        assert_eq!(MaskShape::parse("Hollow Ellipse"), Some(MaskShape::HollowEllipse));
        assert_eq!(MaskShape::parse("Circle"), None);
    }

    #[test]
    fn size_ranges_are_ordered_and_disjoint() {
        let r: Vec<_> = SizeClass::ALL.iter().map(|s| s.area_fraction_range()).collect();
        assert!(r[0].1 <= r[1].0 && r[1].1 <= r[2].0);
        assert!(SizeClass::Small.contains_fraction(0.001));
        assert!(!SizeClass::Small.contains_fraction(0.01));
        assert!(SizeClass::Medium.contains_fraction(0.01));
        assert!(SizeClass::Large.contains_fraction(0.20));
    }

    #[test]
    fn pixel_range_matches_fraction_rule() {
        for total in [1024usize, 4096, 16384, 65536] {
            for s in SizeClass::ALL {
                let (lo, hi) = s.pixel_range(total).unwrap();
                assert!(s.contains_area(lo, total) && s.contains_area(hi, total));
                assert!(!s.contains_area(lo - 1, total));
                assert!(!s.contains_area(hi + 1, total));
            }
        }
    }

    #[test]
    fn menu_cases() {
        assert_eq!(
            mask_menu(&prior(Some(vec![MaskShape::Ellipse]), Some(vec![SizeClass::Small]))),
            vec![(MaskShape::Ellipse, Some(SizeClass::Small))]
        );
        assert_eq!(mask_menu(&prior(None, None)).len(), 22);
        assert_eq!(
            mask_menu(&prior(Some(vec![MaskShape::Line]), None)),
            vec![
                (MaskShape::Line, Some(SizeClass::Small)),
                (MaskShape::Line, Some(SizeClass::Medium)),
                (MaskShape::Line, Some(SizeClass::Large)),
            ]
        );
        assert_eq!(
            mask_menu(&prior(Some(vec![MaskShape::ForegroundMask]), None)),
            vec![(MaskShape::ForegroundMask, None)]
        );
        assert_eq!(mask_menu(&prior(None, Some(vec![SizeClass::Large]))).len(), 7);
    }

    #[test]
    fn foreground_shape_with_full_foreground_is_the_foreground() {
        let fg = ForegroundMap::filled(64, 64, 1);
        let m = generate_mask(MaskShape::ForegroundMask, None, (64, 64), Some(&fg), 0).unwrap();
        assert_eq!(m, fg);
    }

    #[test]
    fn foreground_shape_needs_a_map() {
        assert_eq!(
            generate_mask(MaskShape::ForegroundMask, None, (64, 64), None, 0),
            Err(Error::MissingForeground)
        );
    }

    #[test]
    fn rejects_tiny_resolution() {
        assert!(matches!(
            generate_mask(MaskShape::Ellipse, None, (16, 64), None, 0),
            Err(Error::InvalidResolution { .. })
        ));
    }

    #[test]
    fn small_ellipse_regions() {
        let m = generate_mask(MaskShape::Ellipse, Some(SizeClass::Small), (256, 256), None, 7).unwrap();
        let c = label(&m);
        assert!((1..=2).contains(&c.count()));
        for &a in &c.areas {
            let f = a as f64 / 65536.0;
            assert!((0.001..0.01).contains(&f), "fraction {f}");
        }
    }

    #[test]
    fn medium_perlin_total_area() {
        let m = generate_mask(MaskShape::PerlinNoise, Some(SizeClass::Medium), (256, 256), None, 3).unwrap();
        let f = m.count_nonzero() as f64 / 65536.0;
        assert!((0.01..0.05).contains(&f), "fraction {f}");
    }

    #[test]
    fn masks_stay_inside_foreground() {
        let fg = Grid::from_fn(96, 96, |y, x| u8::from((20..80).contains(&y) && (10..70).contains(&x)));
        for shape in MaskShape::LOCAL {
            for seed in 0..20 {
                let m = generate_mask(shape, Some(SizeClass::Small), (96, 96), Some(&fg), seed).unwrap();
                assert!(m.as_slice().iter().zip(fg.as_slice()).all(|(&m, &f)| m <= f));
            }
        }
    }

    #[test]
    fn tiny_foreground_exhausts_retries() {
        let mut fg = ForegroundMap::filled(64, 64, 0);
        fg.set(5, 5, 1);
        assert_eq!(
            generate_mask(MaskShape::Rectangle, Some(SizeClass::Large), (64, 64), Some(&fg), 1),
            Err(Error::EmptyMask {
                attempts: MASK_RETRY_BUDGET
            })
        );
    }

    #[test]
    fn deterministic_per_seed() {
        for shape in MaskShape::LOCAL {
            let a = generate_mask(shape, None, (64, 80), None, 11).unwrap();
            let b = generate_mask(shape, None, (64, 80), None, 11).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn constant_image_is_all_foreground() {
        let img = ImageGrid::filled(8, 8, [0.5; 3]);
        assert_eq!(foreground_estimate(&img), ForegroundMap::filled(8, 8, 1));
    }

    #[test]
    fn bright_object_on_black() {
        // Hand-worked 4x4 case: the object is the 2x2 block of 0.9 values;
        // Otsu splits {0.0} from {0.9}, the dark class owns the border.
        let bright = [(1, 1), (1, 2), (2, 1), (2, 2)];
        let img = Grid::from_fn(4, 4, |y, x| if bright.contains(&(y, x)) { [0.9f32; 3] } else { [0.0; 3] });
        let fg = foreground_estimate(&img);
        let expected = Grid::from_fn(4, 4, |y, x| u8::from(bright.contains(&(y, x))));
        assert_eq!(fg, expected);
    }

    #[test]
    fn external_map_bypasses_estimate() {
        let img = Grid::from_fn(8, 8, |y, x| if (y + x) % 2 == 0 { [1.0f32; 3] } else { [0.0; 3] });
        let external = Grid::from_fn(8, 8, |y, _| u8::from(y < 3));
        assert_eq!(foreground_or_estimate(&img, Some(external.clone())), external);
    }
}
