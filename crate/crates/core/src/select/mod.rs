//! Category consistency selection.
//!
//! Every synthesized candidate in a mini-batch gets a matching score and
//! only the best one is kept. Zero-shot candidates are scored by a softmax
//! over region/text embedding inner products; few-shot candidates by SSIM
//! between the pasted and repainted sub-images.

mod ssim;

use alloc::vec;
use alloc::vec::Vec;

pub use ssim::{ssim, ssim_matching_score};

use crate::math::{exp, sqrt};
use crate::rng::{rng_from, stable_hash, derive_seed, normal};
use crate::synth::{AnomalyPrior, Candidate};
use crate::{BinaryMask, Error, ImageGrid, Label, Result};

/// Region-aware vision encoder paired with a text encoder in the same
/// embedding space.
///
/// Implementations must be deterministic and return finite vectors of one
/// fixed dimension.
pub trait RegionTextEncoder {
    fn dim(&self) -> usize;
    fn encode_region(&self, image: &ImageGrid, mask: &BinaryMask) -> Result<Vec<f64>>;
    fn encode_text(&self, text: &str) -> Result<Vec<f64>>;
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l2_normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = sqrt(dot(&v, &v));
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| exp(l - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Text embedding of a category: its description embedding, or the
/// normalized mean when it has several.
pub fn category_text_embedding(encoder: &dyn RegionTextEncoder, prior: &AnomalyPrior) -> Result<Vec<f64>> {
    if let [only] = prior.descriptions.as_slice() {
        return encoder.encode_text(only);
    }
    let mut acc = vec![0.0; encoder.dim()];
    for d in &prior.descriptions {
        let e = encoder.encode_text(d)?;
        check_dim(encoder, &e)?;
        acc.iter_mut().zip(&e).for_each(|(a, x)| *a += x);
    }
    Ok(l2_normalize(acc))
}

fn check_dim(encoder: &dyn RegionTextEncoder, v: &[f64]) -> Result<()> {
    if v.len() != encoder.dim() || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::EncoderFailure(alloc::format!(
            "expected {} finite values, got {} values",
            encoder.dim(),
            v.len()
        )));
    }
    Ok(())
}

/// Inner products of the region embedding with every category's text
/// embedding, in `priors` order.
pub fn category_logits(
    image: &ImageGrid,
    mask: &BinaryMask,
    priors: &[AnomalyPrior],
    encoder: &dyn RegionTextEncoder,
) -> Result<Vec<f64>> {
    let v = encoder.encode_region(image, mask)?;
    check_dim(encoder, &v)?;
    priors
        .iter()
        .map(|p| {
            let t = category_text_embedding(encoder, p)?;
            check_dim(encoder, &t)?;
            Ok(dot(&v, &t))
        })
        .collect()
}

/// Softmax probability of `target` among all categories.
pub fn category_matching_score(
    image: &ImageGrid,
    mask: &BinaryMask,
    target: Label,
    priors: &[AnomalyPrior],
    encoder: &dyn RegionTextEncoder,
) -> Result<f64> {
    let idx = priors
        .iter()
        .position(|p| p.category_id == target)
        .ok_or_else(|| Error::InvalidArgument(alloc::format!("no prior for category {target}")))?;
    let logits = category_logits(image, mask, priors, encoder)?;
    Ok(softmax(&logits)[idx])
}

/// Index and value of the highest score; ties go to the lowest index and
/// NaN never wins.
pub fn select_best<T>(candidates: Vec<T>, scores: &[f64]) -> Result<(usize, T)> {
    if candidates.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if scores.len() != candidates.len() {
        return Err(Error::DimensionMismatch {
            expected: candidates.len(),
            found: scores.len(),
        });
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] || (scores[best].is_nan() && !s.is_nan()) {
            best = i;
        }
    }
    let chosen = candidates.into_iter().nth(best).ok_or(Error::EmptyBatch)?;
    Ok((best, chosen))
}

/// Scores a candidate for its target category.
pub trait CandidateScorer {
    fn score(&self, candidate: &Candidate, target: &AnomalyPrior, priors: &[AnomalyPrior]) -> Result<f64>;
}

/// Embedding softmax score, used with prior-guided candidates.
#[derive(Debug, Clone)]
pub struct EmbeddingScorer<E> {
    pub encoder: E,
}

impl<E: RegionTextEncoder> CandidateScorer for EmbeddingScorer<E> {
    fn score(&self, candidate: &Candidate, target: &AnomalyPrior, priors: &[AnomalyPrior]) -> Result<f64> {
        let s = &candidate.sample;
        category_matching_score(&s.image, &s.detect_mask, target.category_id, priors, &self.encoder)
    }
}

/// SSIM score between the pasted and repainted sub-images.
#[derive(Debug, Clone, Copy, Default)]
pub struct SsimScorer;

/// Sub-image window around the mask: bounding box grown by a quarter of
/// its diagonal (at least 8 px), clamped to the image. Inclusive bounds.
pub fn context_window(mask: &BinaryMask) -> Option<(usize, usize, usize, usize)> {
    let (y0, x0, y1, x1) = mask.bounding_box()?;
    let (bh, bw) = ((y1 - y0 + 1) as f64, (x1 - x0 + 1) as f64);
    let margin = (0.25 * sqrt(bh * bh + bw * bw)).max(8.0) as usize;
    let (h, w) = mask.dims();
    Some((
        y0.saturating_sub(margin),
        x0.saturating_sub(margin),
        (y1 + margin).min(h - 1),
        (x1 + margin).min(w - 1),
    ))
}

impl CandidateScorer for SsimScorer {
    fn score(&self, candidate: &Candidate, _target: &AnomalyPrior, _priors: &[AnomalyPrior]) -> Result<f64> {
        let original = candidate
            .preliminary
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("SSIM selection needs the pasted image".into()))?;
        let repainted = &candidate.sample.image;
        original.same_dims(repainted)?;
        let (y0, x0, y1, x1) = context_window(&candidate.sample.detect_mask)
            .ok_or_else(|| Error::InvalidArgument("candidate mask is empty".into()))?;
        ssim_matching_score(&original.crop(y0, x0, y1, x1), &repainted.crop(y0, x0, y1, x1))
    }
}

/// Reference encoder. Regions: masked color histogram (8 bins per
/// channel) and four mask moments, projected by a seeded Gaussian matrix.
/// Text: a seeded Gaussian vector keyed by the string hash. Both
/// L2-normalized.
#[derive(Debug, Clone)]
pub struct ReferenceEncoder {
    dim: usize,
    seed: u64,
    projection: Vec<f64>,
}

const HIST_BINS: usize = 8;
const REGION_FEATURES: usize = 3 * HIST_BINS + 4;

impl ReferenceEncoder {
    pub const DEFAULT_DIM: usize = 64;

    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = rng_from(derive_seed(seed, &[0x70726f6a]));
        let projection = (0..dim * REGION_FEATURES).map(|_| normal(&mut rng)).collect();
        Self { dim, seed, projection }
    }

    fn region_features(image: &ImageGrid, mask: &BinaryMask) -> Vec<f64> {
        let (h, w) = image.dims();
        let mut f = vec![0.0; REGION_FEATURES];
        let (mut n, mut sy, mut sx, mut syy, mut sxx) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                if *mask.get(y, x) == 0 {
                    continue;
                }
                for (c, &v) in image.get(y, x).iter().enumerate() {
                    let bin = ((f64::from(v).clamp(0.0, 1.0) * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
                    f[c * HIST_BINS + bin] += 1.0;
                }
                let (fy, fx) = (y as f64 / h as f64, x as f64 / w as f64);
                n += 1.0;
                sy += fy;
                sx += fx;
                syy += fy * fy;
                sxx += fx * fx;
            }
        }
        if n > 0.0 {
            f[..3 * HIST_BINS].iter_mut().for_each(|v| *v /= n);
            let (my, mx) = (sy / n, sx / n);
            let base = 3 * HIST_BINS;
            f[base] = n / (h * w) as f64;
            f[base + 1] = my;
            f[base + 2] = mx;
            f[base + 3] = sqrt((syy / n - my * my).max(0.0) + (sxx / n - mx * mx).max(0.0));
        }
        f
    }
}

impl Default for ReferenceEncoder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM, 0)
    }
}

impl RegionTextEncoder for ReferenceEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_region(&self, image: &ImageGrid, mask: &BinaryMask) -> Result<Vec<f64>> {
        image.same_dims(mask)?;
        let f = Self::region_features(image, mask);
        let v = self
            .projection
            .chunks_exact(REGION_FEATURES)
            .map(|row| dot(row, &f))
            .collect();
        Ok(l2_normalize(v))
    }

    fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        let mut rng = rng_from(derive_seed(self.seed, &[stable_hash(text)]));
        Ok(l2_normalize((0..self.dim).map(|_| normal(&mut rng)).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Grid;
    use alloc::string::{String, ToString};

    /// Region embedding is a fixed vector; text embedding is looked up.
    struct TableEncoder {
        region: Vec<f64>,
        texts: Vec<(String, Vec<f64>)>,
    }

    impl RegionTextEncoder for TableEncoder {
        fn dim(&self) -> usize {
            self.region.len()
        }
        fn encode_region(&self, _: &ImageGrid, _: &BinaryMask) -> Result<Vec<f64>> {
            Ok(self.region.clone())
        }
        fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
            self.texts
                .iter()
                .find(|(t, _)| t == text)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| Error::EncoderFailure(text.to_string()))
        }
    }

    fn prior(id: Label, desc: &str) -> AnomalyPrior {
        AnomalyPrior {
            image_class: "c".into(),
            category_id: id,
            category_name: desc.into(),
            descriptions: vec![desc.into()],
            shapes: None,
            sizes: None,
            detection_only: false,
        }
    }

    fn dummy() -> (ImageGrid, BinaryMask) {
        (ImageGrid::filled(4, 4, [0.5; 3]), BinaryMask::filled(4, 4, 1))
    }

    #[test]
    fn single_category_scores_one() {
        let (img, mask) = dummy();
        let enc = ReferenceEncoder::default();
        let s = category_matching_score(&img, &mask, 1, &[prior(1, "a")], &enc).unwrap();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn equal_products_split_evenly() {
        let (img, mask) = dummy();
        let enc = TableEncoder {
            region: vec![1.0, 1.0],
            texts: vec![("a".into(), vec![1.0, 0.0]), ("b".into(), vec![0.0, 1.0])],
        };
        let s = category_matching_score(&img, &mask, 1, &[prior(1, "a"), prior(2, "b")], &enc).unwrap();
        assert!((s - 0.5).abs() < 1e-15);
    }

    #[test]
    fn one_zero_zero_products() {
        let (img, mask) = dummy();
        let enc = TableEncoder {
            region: vec![1.0, 0.0, 0.0],
            texts: vec![
                ("a".into(), vec![1.0, 0.0, 0.0]),
                ("b".into(), vec![0.0, 1.0, 0.0]),
                ("c".into(), vec![0.0, 0.0, 1.0]),
            ],
        };
        let priors = [prior(1, "a"), prior(2, "b"), prior(3, "c")];
        let s = category_matching_score(&img, &mask, 1, &priors, &enc).unwrap();
        let e = core::f64::consts::E;
        assert!((s - e / (e + 2.0)).abs() < 1e-12);
        assert!((s - 0.576117).abs() < 1e-6);
    }

    #[test]
    fn encoder_failure_propagates() {
        let (img, mask) = dummy();
        let enc = TableEncoder {
            region: vec![1.0],
            texts: vec![],
        };
        assert!(matches!(
            category_matching_score(&img, &mask, 1, &[prior(1, "a")], &enc),
            Err(Error::EncoderFailure(_))
        ));
    }

    #[test]
    fn select_cases() {
        assert_eq!(select_best(vec!['a'], &[0.3]).unwrap(), (0, 'a'));
        assert_eq!(select_best(vec!['a', 'b', 'c'], &[0.2, 0.9, 0.4]).unwrap(), (1, 'b'));
        assert_eq!(select_best(vec!['a', 'b'], &[0.7, 0.7]).unwrap(), (0, 'a'));
        assert_eq!(select_best(vec!['a', 'b'], &[f64::NAN, 0.1]).unwrap(), (1, 'b'));
        assert_eq!(select_best::<char>(vec![], &[]).unwrap_err(), Error::EmptyBatch);
    }

    #[test]
    fn reference_encoder_is_normalized_and_deterministic() {
        let enc = ReferenceEncoder::default();
        let img = Grid::from_fn(16, 16, |y, x| [y as f32 / 16.0, x as f32 / 16.0, 0.3]);
        let mask = Grid::from_fn(16, 16, |y, x| u8::from(y > 4 && x < 9));
        let v = enc.encode_region(&img, &mask).unwrap();
        assert_eq!(v.len(), 64);
        assert!((dot(&v, &v) - 1.0).abs() < 1e-12);
        assert_eq!(v, enc.encode_region(&img, &mask).unwrap());
        let t = enc.encode_text("dark spot").unwrap();
        assert!((dot(&t, &t) - 1.0).abs() < 1e-12);
        assert_ne!(t, enc.encode_text("thin scratch").unwrap());
    }

    #[test]
    fn context_window_has_minimum_margin() {
        let mask = Grid::from_fn(64, 64, |y, x| u8::from((30..33).contains(&y) && (30..33).contains(&x)));
        assert_eq!(context_window(&mask), Some((22, 22, 40, 40)));
        let corner = Grid::from_fn(64, 64, |y, x| u8::from(y < 2 && x < 2));
        assert_eq!(context_window(&corner), Some((0, 0, 9, 9)));
    }
}
