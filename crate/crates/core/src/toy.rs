//! Procedural toy benchmark: two texture classes, each with a dark
//! elliptical "spot", a thin "scratch" and a coloured "stain", plus one
//! held-out category for open-set experiments.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::maskgen::{generate_mask, MaskShape, SizeClass};
use crate::math::{round, sin};
use crate::rng::{derive_seed, normal, rng_for};
use crate::synth::{reference_blend_repaint, AnomalyPrior};
use crate::{Error, Grid, ImageGrid, Label, LabelMask, Result};

pub const TOY_CLASSES: [&str; 2] = ["fabric", "tile"];

/// Noise-factor range used to render the benchmark's real anomalies.
pub const RENDER_GAMMA: (f64, f64) = (0.45, 0.65);

struct CategoryDef {
    name: &'static str,
    description: &'static str,
    shape: MaskShape,
    size: SizeClass,
}

const fn def(name: &'static str, description: &'static str, shape: MaskShape, size: SizeClass) -> CategoryDef {
    CategoryDef {
        name,
        description,
        shape,
        size,
    }
}

// Names are in lexicographic order so that ids follow name order.
const FABRIC: [CategoryDef; 3] = [
    def("scratch", SCRATCH, MaskShape::Line, SizeClass::Medium),
    def("spot", SPOT, MaskShape::Ellipse, SizeClass::Small),
    def("stain", STAIN, MaskShape::Polygon, SizeClass::Medium),
];
const TILE: [CategoryDef; 3] = [
    def("scratch", SCRATCH, MaskShape::Line, SizeClass::Medium),
    def("spot", SPOT, MaskShape::Ellipse, SizeClass::Medium),
    def("stain", STAIN, MaskShape::Polygon, SizeClass::Large),
];
const SPOT: &str = "a small dark spot of ink";
const SCRATCH: &str = "a faint scratch";
const STAIN: &str = "a small stain";
const UNSEEN: CategoryDef = def("smudge", "a colored smudge", MaskShape::PerlinNoise, SizeClass::Medium);

fn defs(class: &str) -> Result<&'static [CategoryDef]> {
    match class {
        "fabric" => Ok(&FABRIC),
        "tile" => Ok(&TILE),
        other => Err(Error::InvalidArgument(alloc::format!("unknown toy class {other:?}"))),
    }
}

fn prior_of(class: &str, id: Label, d: &CategoryDef) -> AnomalyPrior {
    AnomalyPrior {
        image_class: class.to_string(),
        category_id: id,
        category_name: d.name.to_string(),
        descriptions: vec![d.description.to_string()],
        shapes: Some(vec![d.shape]),
        sizes: Some(vec![d.size]),
        detection_only: false,
    }
}

/// Anomaly priors of a toy class, ids `1..=3`.
pub fn toy_priors(class: &str) -> Result<Vec<AnomalyPrior>> {
    Ok(defs(class)?
        .iter()
        .enumerate()
        .map(|(i, d)| prior_of(class, (i + 1) as Label, d))
        .collect())
}

/// The held-out category, labeled one past the known categories.
pub fn toy_unseen_prior(class: &str) -> Result<AnomalyPrior> {
    let n = defs(class)?.len();
    Ok(prior_of(class, (n + 1) as Label, &UNSEEN))
}

fn quantize(v: f64) -> f32 {
    (round(v.clamp(0.0, 1.0) * 255.0) / 255.0) as f32
}

/// Renders one defect-free texture image.
pub fn render_normal(class: &str, size: usize, seed: u64) -> Result<ImageGrid> {
    defs(class)?;
    let mut rng = rng_for(seed, &[0x6e6f726d]);
    let tau = core::f64::consts::TAU;
    let mut img = Grid::filled(size, size, [0.0f32; 3]);
    match class {
        "fabric" => {
            let (py, px) = (rng.gen::<f64>() * tau, rng.gen::<f64>() * tau);
            let period = 5.5 + rng.gen::<f64>();
            for y in 0..size {
                for x in 0..size {
                    let weave = sin(tau * x as f64 / period + px) * sin(tau * y as f64 / period + py);
                    let n = 0.025 * normal(&mut rng);
                    let base = [0.55, 0.50, 0.42];
                    img.set(y, x, base.map(|b| quantize(b + 0.07 * weave + n)));
                }
            }
        }
        _ => {
            let pitch = 32;
            let (oy, ox) = (rng.gen_range(0..pitch), rng.gen_range(0..pitch));
            let cells = size / pitch + 2;
            let shades: Vec<f64> = (0..cells * cells).map(|_| 0.04 * (rng.gen::<f64>() - 0.5)).collect();
            for y in 0..size {
                for x in 0..size {
                    let (ty, tx) = ((y + oy) / pitch, (x + ox) / pitch);
                    let grout = (y + oy) % pitch < 2 || (x + ox) % pitch < 2;
                    let n = 0.02 * normal(&mut rng);
                    let v = if grout {
                        [0.36, 0.35, 0.34].map(|b| b + n)
                    } else {
                        let s = shades[ty * cells + tx];
                        [0.62, 0.62, 0.60].map(|b| b + s + n)
                    };
                    img.set(y, x, v.map(quantize));
                }
            }
        }
    }
    Ok(img)
}

/// Repaints a category-specific defect into `image`. Returns the defective
/// image and its label mask.
pub fn render_anomaly(image: &ImageGrid, prior: &AnomalyPrior, seed: u64) -> Result<(ImageGrid, LabelMask)> {
    let shape = prior.shapes.as_ref().and_then(|s| s.first().copied()).unwrap_or(MaskShape::Ellipse);
    let size = prior.sizes.as_ref().and_then(|s| s.first().copied());
    let mask = generate_mask(shape, size, image.dims(), None, derive_seed(seed, &[0x6d61736b]))?;
    let mut rng = rng_for(seed, &[0x67616d6d61]);
    let gamma = RENDER_GAMMA.0 + rng.gen::<f64>() * (RENDER_GAMMA.1 - RENDER_GAMMA.0);
    let description = prior.descriptions.first().map(String::as_str).unwrap_or("anomaly");
    let repainted = reference_blend_repaint(image, &mask, description, gamma, derive_seed(seed, &[0x7061696e74]));
    let out = repainted.map(|p| p.map(|v| quantize(f64::from(v))));
    let labels = mask.map(|&m| if m > 0 { prior.category_id } else { 0 });
    Ok((out, labels))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyImage {
    pub image: ImageGrid,
    pub labels: LabelMask,
    /// Image label: `0` for normal images.
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyClassData {
    pub name: String,
    pub priors: Vec<AnomalyPrior>,
    pub train_normals: Vec<ImageGrid>,
    pub test: Vec<ToyImage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub size: usize,
    pub train_normals: usize,
    pub test_normals: usize,
    pub test_per_category: usize,
    /// Adds `test_per_category` images of the held-out category.
    pub include_unseen: bool,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            size: 128,
            train_normals: 40,
            test_normals: 20,
            test_per_category: 10,
            include_unseen: false,
            seed: 0,
        }
    }
}

/// Builds one toy class: normal training images and a labeled test split.
pub fn toy_class(class: &str, config: &ToyConfig) -> Result<ToyClassData> {
    let priors = toy_priors(class)?;
    let class_seed = derive_seed(config.seed, &[crate::rng::stable_hash(class)]);
    let normal_at = |split: u64, k: usize| render_normal(class, config.size, derive_seed(class_seed, &[split, k as u64]));
    let train_normals = (0..config.train_normals)
        .map(|k| normal_at(0, k))
        .collect::<Result<Vec<_>>>()?;
    let mut test = Vec::new();
    for k in 0..config.test_normals {
        test.push(ToyImage {
            image: normal_at(1, k)?,
            labels: LabelMask::filled(config.size, config.size, 0),
            label: 0,
        });
    }
    let mut categories = priors.clone();
    if config.include_unseen {
        categories.push(toy_unseen_prior(class)?);
    }
    for prior in &categories {
        for k in 0..config.test_per_category {
            let id = u64::from(prior.category_id);
            let base = normal_at(2 + id, k)?;
            let (image, labels) = render_anomaly(&base, prior, derive_seed(class_seed, &[100 + id, k as u64]))?;
            test.push(ToyImage {
                image,
                labels,
                label: prior.category_id,
            });
        }
    }
    Ok(ToyClassData {
        name: class.to_string(),
        priors,
        train_normals,
        test,
    })
}

/// The full toy benchmark, classes in [`TOY_CLASSES`] order.
pub fn toy_benchmark(config: &ToyConfig) -> Result<Vec<ToyClassData>> {
    TOY_CLASSES.iter().map(|c| toy_class(c, config)).collect()
}
