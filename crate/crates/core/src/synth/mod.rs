//! Category-labeled anomaly synthesis by controllable inpainting.
//!
//! Two routes produce a [`SynthSample`]: prior-guided (a mask drawn from
//! the category's shape/size prior, repainted with one of its text
//! descriptions) and sample-guided (a real anomaly cropped, augmented,
//! pasted and repainted). [`make_training_set`] wraps either route with
//! mini-batch category consistency selection.

mod augment;
mod repaint;
mod training_set;

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;

pub use augment::{Affine, AugmentSpec};
pub use repaint::{prompt_tint, reference_blend_repaint, BackendConfig, InpaintBackend, ReferenceRepainter};
pub use training_set::{
    class_agnostic_samples, make_training_set, AnomalyExample, AnomalySupport, NormalImage, TrainingSetConfig,
    GENERIC_ANOMALY_PROMPT,
};

use crate::grid::class_mask_from;
use crate::maskgen::{generate_mask, mask_menu, MaskShape, SizeClass};
use crate::rng::{derive_seed, rng_from};
use crate::{BinaryMask, Error, ForegroundMap, ImageGrid, Label, LabelMask, Result};

/// Human-supplied knowledge about one anomaly category.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyPrior {
    pub image_class: String,
    /// `1..=Y`, unique within the image class.
    pub category_id: Label,
    pub category_name: String,
    /// Text prompts; at least one.
    pub descriptions: Vec<String>,
    /// `None` means any shape.
    pub shapes: Option<Vec<MaskShape>>,
    /// `None` means any size.
    pub sizes: Option<Vec<SizeClass>>,
    /// Evaluated for detection only; excluded from classification metrics.
    pub detection_only: bool,
}

impl AnomalyPrior {
    pub fn validate(&self) -> Result<()> {
        if self.category_id == 0 {
            return Err(Error::InvalidArgument(alloc::format!(
                "category {:?} has id 0, which is reserved for normal",
                self.category_name
            )));
        }
        if self.descriptions.is_empty() || self.descriptions.iter().any(|d| d.trim().is_empty()) {
            return Err(Error::InvalidArgument(alloc::format!(
                "category {:?} needs at least one non-empty description",
                self.category_name
            )));
        }
        if self.shapes.as_ref().is_some_and(Vec::is_empty) || self.sizes.as_ref().is_some_and(Vec::is_empty) {
            return Err(Error::InvalidArgument(alloc::format!(
                "category {:?} lists an empty shape or size set; omit it for any",
                self.category_name
            )));
        }
        Ok(())
    }
}

/// Noise strength `gamma` in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct NoiseFactor(f64);

impl NoiseFactor {
    pub const DEFAULT_RANGE: (f64, f64) = (0.4, 0.6);

    pub fn new(gamma: f64) -> Result<Self> {
        if gamma > 0.0 && gamma <= 1.0 {
            Ok(Self(gamma))
        } else {
            Err(Error::InvalidArgument(alloc::format!("noise factor {gamma} outside (0, 1]")))
        }
    }

    /// Uniform draw from the half-open interval `(lo, hi]`.
    pub fn sample(rng: &mut crate::rng::Rng, (lo, hi): (f64, f64)) -> Self {
        let u: f64 = rng.gen();
        Self(hi - u * (hi - lo))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// One discriminator training tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub image: ImageGrid,
    /// `0` for a pure-normal tuple.
    pub label: Label,
    pub detect_mask: BinaryMask,
    pub class_mask: LabelMask,
}

impl SynthSample {
    /// Builds a sample, deriving the class mask from the detection mask.
    pub fn new(image: ImageGrid, label: Label, detect_mask: BinaryMask) -> Result<Self> {
        image.same_dims(&detect_mask)?;
        let class_mask = class_mask_from(&detect_mask, label);
        Ok(Self {
            image,
            label,
            detect_mask,
            class_mask,
        })
    }

    pub fn normal(image: ImageGrid) -> Self {
        let (h, w) = image.dims();
        Self {
            image,
            label: 0,
            detect_mask: BinaryMask::filled(h, w, 0),
            class_mask: LabelMask::filled(h, w, 0),
        }
    }

    /// Detection and classification masks agree pixel for pixel.
    pub fn is_coupled(&self) -> bool {
        self.image.dims() == self.detect_mask.dims()
            && self.detect_mask.dims() == self.class_mask.dims()
            && self
                .detect_mask
                .as_slice()
                .iter()
                .zip(self.class_mask.as_slice())
                .all(|(&d, &c)| if d != 0 { c == self.label } else { c == 0 })
    }
}

/// A synthesized sample plus what selection needs to score it.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub sample: SynthSample,
    /// Pasted-but-not-repainted image (sample-guided route only).
    pub preliminary: Option<ImageGrid>,
    pub prompt: String,
    pub gamma: NoiseFactor,
}

/// Prior-guided synthesis: draw a mask from the category's menu, pick a
/// description, repaint the masked region.
pub fn prior_guided_synthesize(
    normal_image: &ImageGrid,
    prior: &AnomalyPrior,
    backend: &mut dyn InpaintBackend,
    gamma: NoiseFactor,
    foreground: Option<&ForegroundMap>,
    seed: u64,
) -> Result<Candidate> {
    prior.validate()?;
    let mut rng = rng_from(derive_seed(seed, &[1]));
    // Without a foreground map the whole-foreground shape is not drawable.
    let menu: Vec<_> = mask_menu(prior)
        .into_iter()
        .filter(|(shape, _)| foreground.is_some() || *shape != MaskShape::ForegroundMask)
        .collect();
    if menu.is_empty() {
        return Err(Error::MissingForeground);
    }
    let (shape, size) = menu[rng.gen_range(0..menu.len())];
    let mask = generate_mask(shape, size, normal_image.dims(), foreground, derive_seed(seed, &[2]))?;
    let prompt = prior.descriptions[rng.gen_range(0..prior.descriptions.len())].clone();
    let repainted = backend.repaint(normal_image, &mask, &prompt, gamma, derive_seed(seed, &[3]))?;
    let image = repaint::composite(normal_image, repainted, &mask)?;
    Ok(Candidate {
        sample: SynthSample::new(image, prior.category_id, mask)?,
        preliminary: None,
        prompt,
        gamma,
    })
}

/// Where the augmented region goes on the normal image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Random,
    /// Top-left corner of the augmented region's bounding box.
    At { y: usize, x: usize },
}

/// Retry budget for random paste locations.
pub const PASTE_RETRY_BUDGET: usize = 8;

/// Sample-guided synthesis: crop the anomaly by its mask's bounding box,
/// augment region and mask identically, paste, then repaint the pasted
/// region with `prompt`.
#[allow(clippy::too_many_arguments)]
pub fn sample_guided_synthesize(
    normal_image: &ImageGrid,
    anomaly: &AnomalyExample,
    prompt: &str,
    backend: &mut dyn InpaintBackend,
    gamma: NoiseFactor,
    augment: &AugmentSpec,
    placement: Placement,
    foreground: Option<&ForegroundMap>,
    seed: u64,
) -> Result<Candidate> {
    anomaly.image.same_dims(&anomaly.mask)?;
    let (y0, x0, y1, x1) = anomaly
        .mask
        .bounding_box()
        .ok_or_else(|| Error::InvalidArgument("anomaly sample mask is empty".into()))?;
    let region = anomaly.image.crop(y0, x0, y1, x1);
    let region_mask = anomaly.mask.crop(y0, x0, y1, x1);
    let (h, w) = normal_image.dims();
    let mut rng = rng_from(derive_seed(seed, &[1]));

    let attempts = match placement {
        Placement::Random => PASTE_RETRY_BUDGET,
        Placement::At { .. } => 1,
    };
    for _ in 0..attempts {
        let Some((patch, patch_mask)) = augment.draw(&mut rng).apply(&region, &region_mask) else {
            continue;
        };
        let (ph, pw) = patch.dims();
        if ph > h || pw > w {
            continue;
        }
        let (oy, ox) = match placement {
            Placement::Random => (rng.gen_range(0..=h - ph), rng.gen_range(0..=w - pw)),
            Placement::At { y, x } if y + ph <= h && x + pw <= w => (y, x),
            Placement::At { .. } => continue,
        };
        let fits = (0..ph).all(|py| {
            (0..pw).all(|px| *patch_mask.get(py, px) == 0 || foreground.is_none_or(|fg| *fg.get(oy + py, ox + px) != 0))
        });
        if !fits {
            continue;
        }

        let mut preliminary = normal_image.clone();
        let mut mask = BinaryMask::filled(h, w, 0);
        for py in 0..ph {
            for px in 0..pw {
                if *patch_mask.get(py, px) != 0 {
                    preliminary.set(oy + py, ox + px, *patch.get(py, px));
                    mask.set(oy + py, ox + px, 1);
                }
            }
        }
        let repainted = backend.repaint(&preliminary, &mask, prompt, gamma, derive_seed(seed, &[2]))?;
        let image = repaint::composite(&preliminary, repainted, &mask)?;
        return Ok(Candidate {
            sample: SynthSample::new(image, anomaly.label, mask)?,
            preliminary: Some(preliminary),
            prompt: prompt.into(),
            gamma,
        });
    }
    Err(Error::PasteOutOfBounds { attempts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::components::label;
    use crate::Grid;
    use alloc::string::ToString;
    use alloc::vec;

    fn texture(h: usize, w: usize, phase: usize) -> ImageGrid {
        Grid::from_fn(h, w, |y, x| {
            let v = 0.35 + 0.25 * ((((y + phase) * 5 + x * 3) % 13) as f32 / 13.0);
            [v, 0.8 * v, 0.5]
        })
    }

    fn ellipse_prior() -> AnomalyPrior {
        AnomalyPrior {
            image_class: "tile".to_string(),
            category_id: 2,
            category_name: "poke".to_string(),
            descriptions: vec!["a tiny hole".to_string(), "puncture".to_string()],
            shapes: Some(vec![MaskShape::Ellipse]),
            sizes: Some(vec![SizeClass::Small]),
            detection_only: false,
        }
    }

    #[test]
    fn noise_factor_bounds() {
        assert!(NoiseFactor::new(0.0).is_err());
        assert!(NoiseFactor::new(1.0).is_ok());
        assert!(NoiseFactor::new(1.2).is_err());
        let mut rng = crate::rng::rng_from(4);
        for _ in 0..1000 {
            let g = NoiseFactor::sample(&mut rng, NoiseFactor::DEFAULT_RANGE).value();
            assert!(g > 0.4 && g <= 0.6);
        }
    }

    #[test]
    fn vanishing_gamma_keeps_the_image() {
        let img = texture(64, 64, 0);
        let mut backend = ReferenceRepainter::default();
        let gamma = NoiseFactor::new(1e-300).unwrap();
        let c = prior_guided_synthesize(&img, &ellipse_prior(), &mut backend, gamma, None, 1).unwrap();
        assert_eq!(c.sample.image, img);
    }

    #[test]
    fn prior_guided_couples_masks() {
        let img = texture(64, 64, 0);
        let mut backend = ReferenceRepainter::default();
        let c = prior_guided_synthesize(&img, &ellipse_prior(), &mut backend, NoiseFactor::new(0.5).unwrap(), None, 5)
            .unwrap();
        let s = &c.sample;
        assert!(s.is_coupled());
        assert_eq!(s.label, 2);
        for y in 0..64 {
            for x in 0..64 {
                let d = *s.detect_mask.get(y, x);
                assert_eq!(*s.class_mask.get(y, x), if d == 1 { 2 } else { 0 });
                if d == 0 {
                    assert_eq!(s.image.get(y, x), img.get(y, x));
                }
            }
        }
        let regions = label(&s.detect_mask);
        assert!(regions.count() <= 2);
        for &a in &regions.areas {
            assert!(SizeClass::Small.contains_area(a, 64 * 64));
        }
        assert!(ellipse_prior().descriptions.contains(&c.prompt));
    }

    fn anomaly_example() -> AnomalyExample {
        let image = texture(64, 64, 3).map(|p| [1.0 - p[0], p[1], 0.9]);
        let mask = Grid::from_fn(64, 64, |y, x| u8::from((20..23).contains(&y) && (30..35).contains(&x)));
        AnomalyExample { label: 1, image, mask }
    }

    #[test]
    fn identity_paste_at_origin_restores_the_anomaly() {
        let normal = texture(64, 64, 0);
        let ex = anomaly_example();
        let mut backend = ReferenceRepainter::default();
        let c = sample_guided_synthesize(
            &normal,
            &ex,
            "crack",
            &mut backend,
            NoiseFactor::new(1e-300).unwrap(),
            &AugmentSpec::identity(),
            Placement::At { y: 20, x: 30 },
            None,
            0,
        )
        .unwrap();
        assert_eq!(c.sample.detect_mask, ex.mask);
        for y in 0..64 {
            for x in 0..64 {
                let expected = if *ex.mask.get(y, x) != 0 { ex.image.get(y, x) } else { normal.get(y, x) };
                assert_eq!(c.sample.image.get(y, x), expected);
            }
        }
    }

    #[test]
    fn random_paste_respects_foreground() {
        let normal = texture(64, 64, 0);
        let fg = Grid::from_fn(64, 64, |y, _| u8::from(y >= 32));
        let mut backend = ReferenceRepainter::default();
        for seed in 0..10 {
            let c = sample_guided_synthesize(
                &normal,
                &anomaly_example(),
                "crack",
                &mut backend,
                NoiseFactor::new(0.5).unwrap(),
                &AugmentSpec::default(),
                Placement::Random,
                Some(&fg),
                seed,
            );
            let Ok(c) = c else { continue };
            assert!(c.sample.is_coupled());
            let m = &c.sample.detect_mask;
            assert!(m.as_slice().iter().zip(fg.as_slice()).all(|(&m, &f)| m <= f));
            let pre = c.preliminary.as_ref().unwrap();
            for (i, &mv) in m.as_slice().iter().enumerate() {
                if mv == 0 {
                    assert_eq!(c.sample.image.as_slice()[i], normal.as_slice()[i]);
                    assert_eq!(pre.as_slice()[i], normal.as_slice()[i]);
                }
            }
        }
    }

    #[test]
    fn oversized_region_fails_to_paste() {
        let normal = texture(32, 32, 0);
        let ex = AnomalyExample {
            label: 1,
            image: texture(64, 64, 1),
            mask: Grid::from_fn(64, 64, |y, x| u8::from(y < 60 && x < 60)),
        };
        let mut backend = ReferenceRepainter::default();
        let r = sample_guided_synthesize(
            &normal,
            &ex,
            "x",
            &mut backend,
            NoiseFactor::new(0.5).unwrap(),
            &AugmentSpec::identity(),
            Placement::Random,
            None,
            0,
        );
        assert_eq!(r.unwrap_err(), Error::PasteOutOfBounds { attempts: PASTE_RETRY_BUDGET });
    }

    #[test]
    fn invalid_prior_is_rejected() {
        let mut p = ellipse_prior();
        p.descriptions.clear();
        assert!(p.validate().is_err());
        let mut p = ellipse_prior();
        p.category_id = 0;
        assert!(p.validate().is_err());
    }
}
