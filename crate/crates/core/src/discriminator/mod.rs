//! Multi-task discriminator: multi-scale feature fusion, alignment with
//! category embeddings, detection/classification outputs and training.

mod backbone;
mod fusion;
mod loss;
mod outputs;
mod tensor;
mod train;

use alloc::vec::Vec;

pub use backbone::{PatchStatsBackbone, VisionBackbone};
pub use fusion::{ForwardCache, FusionArch, FusionNetwork, Layout, INITIAL_TEMPERATURE};
pub use loss::{
    detection_map, dice_loss, focal_loss, loss, masked_cross_entropy, LossTerms, LossWeights, DEFAULT_LAMBDA,
    DICE_SMOOTHING, FOCAL_GAMMA,
};
pub use outputs::{derive_outputs, dominant_label, threshold_labels, DetectionOutputs, DEFAULT_THRESHOLD};
pub use tensor::{Resampler, Tensor};
pub use train::{
    check_gradients, sample_loss_and_grad, train, train_from, GradientCheck, SampleGradient, TrainConfig,
    TrainOutcome,
};

use crate::math::{sigmoid, sqrt};
use crate::rng::{derive_seed, normal, rng_from, stable_hash};
use crate::synth::SynthSample;
use crate::{Error, ImageGrid, Result, ScoreMap};

/// Embedding width of the reference fusion head.
pub const DEFAULT_EMBED_DIM: usize = 64;

/// One embedding per known category (label `y` at row `y - 1`), plus an
/// optional trainable "Other" embedding at label `len_known() + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryEmbeddings {
    known: Vec<Vec<f64>>,
    other: Option<Vec<f64>>,
}

impl CategoryEmbeddings {
    pub fn from_vectors(known: Vec<Vec<f64>>) -> Result<Self> {
        let dim = known.first().map(Vec::len).ok_or(Error::EmptyBatch)?;
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        if let Some(v) = known.iter().find(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        Ok(Self { known, other: None })
    }

    /// Seeded unit vectors keyed by category name. Like the outputs of a
    /// text encoder, they share a common direction: pairwise cosine is
    /// close to [`REFERENCE_SHARED_FRACTION`].
    pub fn reference(names: &[&str], dim: usize, seed: u64) -> Result<Self> {
        Self::from_vectors(names.iter().map(|n| reference_vector(n, dim, seed)).collect())
    }

    pub fn dim(&self) -> usize {
        self.known[0].len()
    }

    pub fn len_known(&self) -> usize {
        self.known.len()
    }

    /// Number of maps produced at inference, including "Other".
    pub fn len(&self) -> usize {
        self.known.len() + usize::from(self.other.is_some())
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn other(&self) -> Option<&[f64]> {
        self.other.as_deref()
    }

    /// Label reported for "Other", if present.
    pub fn other_label(&self) -> Option<crate::Label> {
        self.other.as_ref().map(|_| (self.known.len() + 1) as crate::Label)
    }

    pub fn set_other(&mut self, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: vector.len(),
            });
        }
        self.other = Some(vector);
        Ok(())
    }

    pub fn known(&self) -> &[Vec<f64>] {
        &self.known
    }

    /// Rows in label order, "Other" last.
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.known.iter().map(Vec::as_slice).chain(self.other.as_deref())
    }
}

/// Weight of the shared direction in reference embeddings.
pub const REFERENCE_SHARED_FRACTION: f64 = 0.9;

fn reference_vector(name: &str, dim: usize, seed: u64) -> Vec<f64> {
    let shared = seeded_unit_vector(derive_seed(seed, &[0x736861726564]), dim);
    let own = seeded_unit_vector(derive_seed(seed, &[stable_hash(name)]), dim);
    let (a, b) = (sqrt(REFERENCE_SHARED_FRACTION), sqrt(1.0 - REFERENCE_SHARED_FRACTION));
    let mut v: Vec<f64> = shared.iter().zip(&own).map(|(s, o)| a * s + b * o).collect();
    let norm = sqrt(v.iter().map(|x| x * x).sum::<f64>()).max(f64::MIN_POSITIVE);
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

fn seeded_unit_vector(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = rng_from(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
    let norm = sqrt(v.iter().map(|x| x * x).sum::<f64>()).max(f64::MIN_POSITIVE);
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Adds a trainable "Other" embedding when class-agnostic anomalies are
/// available; otherwise returns the embeddings unchanged.
pub fn open_set_extend(
    embeddings: &CategoryEmbeddings,
    class_agnostic: &[SynthSample],
    seed: u64,
) -> CategoryEmbeddings {
    let mut out = embeddings.clone();
    if class_agnostic.iter().any(|s| s.detect_mask.any()) && out.other.is_none() {
        out.other = Some(reference_vector("other", out.dim(), seed));
    }
    out
}

/// Per-category logit maps `<f, g_y> / eps` at the feature resolution.
pub fn logit_maps(features: &Tensor, embeddings: &CategoryEmbeddings, eps: f64) -> Result<Vec<ScoreMap>> {
    if features.channels != embeddings.dim() {
        return Err(Error::DimensionMismatch {
            expected: embeddings.dim(),
            found: features.channels,
        });
    }
    let plane = features.plane_len();
    Ok(embeddings
        .rows()
        .map(|g| {
            let mut out = alloc::vec![0.0; plane];
            for (c, &gv) in g.iter().enumerate() {
                for (o, &fv) in out.iter_mut().zip(features.plane(c)) {
                    *o += fv * gv;
                }
            }
            out.iter_mut().for_each(|v| *v /= eps);
            ScoreMap::from_vec(features.height, features.width, out).expect("plane size")
        })
        .collect())
}

/// Sigmoid similarity maps upsampled bilinearly to `out_hw`.
pub fn similarity_maps(
    features: &Tensor,
    embeddings: &CategoryEmbeddings,
    eps: f64,
    out_hw: (usize, usize),
) -> Result<Vec<ScoreMap>> {
    let up = Resampler::new((features.height, features.width), out_hw);
    let mut buf = alloc::vec![0.0; out_hw.0 * out_hw.1];
    logit_maps(features, embeddings, eps)?
        .into_iter()
        .map(|l| {
            let s: Vec<f64> = l.as_slice().iter().map(|&v| sigmoid(v)).collect();
            up.forward_plane(&s, &mut buf);
            ScoreMap::from_vec(out_hw.0, out_hw.1, buf.clone())
        })
        .collect()
}

/// Full inference: backbone, fusion, similarity maps, outputs at `tau`.
pub fn infer(
    image: &ImageGrid,
    backbone: &dyn VisionBackbone,
    network: &FusionNetwork,
    embeddings: &CategoryEmbeddings,
    tau: f64,
) -> Result<DetectionOutputs> {
    let levels = backbone.extract(image);
    let (f, _) = network.forward(&levels)?;
    let maps = similarity_maps(&f, embeddings, network.temperature(), image.dims())?;
    derive_outputs(maps, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn one_pixel(f: &[f64]) -> Tensor {
        Tensor {
            channels: f.len(),
            height: 1,
            width: 1,
            data: f.to_vec(),
        }
    }

    #[test]
    fn similarity_examples() {
        let emb = CategoryEmbeddings::from_vectors(vec![vec![1.0, 0.0]]).unwrap();
        let s = |f: &[f64], eps: f64| similarity_maps(&one_pixel(f), &emb, eps, (1, 1)).unwrap()[0].as_slice()[0];
        assert_eq!(s(&[0.0, 3.0], 0.07), 0.5);
        assert!((s(&[1.0, 0.0], 1.0) - 0.7310586).abs() < 1e-7);
        assert!((s(&[1.0, 0.0], 0.5) - 0.8807971).abs() < 1e-7);
    }

    #[test]
    fn embedding_dimension_checked() {
        let emb = CategoryEmbeddings::from_vectors(vec![vec![1.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            similarity_maps(&one_pixel(&[1.0, 0.0]), &emb, 1.0, (1, 1)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(CategoryEmbeddings::from_vectors(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn reference_embeddings_are_unit_and_stable() {
        let a = CategoryEmbeddings::reference(&["hole", "crack"], 16, 4).unwrap();
        let b = CategoryEmbeddings::reference(&["hole", "crack"], 16, 4).unwrap();
        assert_eq!(a, b);
        for r in a.rows() {
            assert!((r.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_ne!(a.known()[0], a.known()[1]);
    }

    #[test]
    fn open_set_without_samples_is_identity() {
        let e = CategoryEmbeddings::reference(&["a"], 8, 0).unwrap();
        assert_eq!(open_set_extend(&e, &[], 1), e);
        let img = ImageGrid::filled(4, 4, [0.5; 3]);
        let mut mask = crate::BinaryMask::filled(4, 4, 0);
        mask.set(1, 1, 1);
        let s = SynthSample::new(img, 2, mask).unwrap();
        let ext = open_set_extend(&e, &[s], 1);
        assert_eq!(ext.len(), 2);
        assert_eq!(ext.other_label(), Some(2));
    }
}
