use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;

use super::{
    prior_guided_synthesize, sample_guided_synthesize, AugmentSpec, InpaintBackend, NoiseFactor, Placement,
    SynthSample,
};
use crate::maskgen::{generate_mask, MaskShape};
use crate::rng::{derive_seed, rng_from};
use crate::select::{select_best, CandidateScorer};
use crate::synth::AnomalyPrior;
use crate::{BinaryMask, Error, ForegroundMap, ImageGrid, Label, Result};

/// Prompt stem for class-agnostic anomalies; each sample appends an index
/// so the appearance varies.
pub const GENERIC_ANOMALY_PROMPT: &str = "anomaly";

/// A normal support image with its optional foreground.
#[derive(Debug, Clone)]
pub struct NormalImage {
    pub image: ImageGrid,
    pub foreground: Option<ForegroundMap>,
}

/// A real anomaly from the support set.
#[derive(Debug, Clone)]
pub struct AnomalyExample {
    pub label: Label,
    pub image: ImageGrid,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, Copy)]
pub enum AnomalySupport<'a> {
    /// Priors only: prior-guided synthesis.
    ZeroShot,
    /// Real anomalies per category: sample-guided synthesis.
    FewShot(&'a [AnomalyExample]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSetConfig {
    pub n_per_category: usize,
    /// Mini-batch size `B` for category consistency selection.
    pub batch_size: usize,
    pub gamma_range: (f64, f64),
    pub augment: AugmentSpec,
}

impl Default for TrainingSetConfig {
    fn default() -> Self {
        Self {
            n_per_category: 16,
            batch_size: 32,
            gamma_range: NoiseFactor::DEFAULT_RANGE,
            augment: AugmentSpec::default(),
        }
    }
}

/// Synthesizes `n_per_category` samples for each prior, each the
/// best-scoring of a fresh mini-batch of `batch_size` candidates.
///
/// Normal images (and few-shot examples of a category) are used in turn.
/// Output is ordered by prior, then sample index.
pub fn make_training_set(
    normals: &[NormalImage],
    priors: &[AnomalyPrior],
    support: AnomalySupport<'_>,
    backend: &mut dyn InpaintBackend,
    scorer: &dyn CandidateScorer,
    config: &TrainingSetConfig,
    seed: u64,
) -> Result<Vec<SynthSample>> {
    if config.n_per_category == 0 || config.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "n_per_category and batch_size must be at least 1".into(),
        ));
    }
    if normals.is_empty() {
        return Err(Error::InvalidArgument("no normal support images".into()));
    }
    let mut out = Vec::with_capacity(priors.len() * config.n_per_category);
    for prior in priors {
        prior.validate()?;
        let examples: Vec<&AnomalyExample> = match support {
            AnomalySupport::ZeroShot => Vec::new(),
            AnomalySupport::FewShot(all) => {
                let ex: Vec<_> = all.iter().filter(|e| e.label == prior.category_id).collect();
                if ex.is_empty() {
                    return Err(Error::InvalidArgument(format!(
                        "few-shot mode has no anomaly samples for category {:?}",
                        prior.category_name
                    )));
                }
                ex
            }
        };
        for k in 0..config.n_per_category {
            let normal = &normals[k % normals.len()];
            let mut batch = Vec::with_capacity(config.batch_size);
            let mut scores = Vec::with_capacity(config.batch_size);
            for b in 0..config.batch_size {
                let cand_seed = derive_seed(seed, &[u64::from(prior.category_id), k as u64, b as u64]);
                let gamma = NoiseFactor::sample(&mut rng_from(cand_seed), config.gamma_range);
                let candidate = if examples.is_empty() {
                    prior_guided_synthesize(
                        &normal.image,
                        prior,
                        backend,
                        gamma,
                        normal.foreground.as_ref(),
                        derive_seed(cand_seed, &[0]),
                    )?
                } else {
                    sample_guided_synthesize(
                        &normal.image,
                        examples[k % examples.len()],
                        &prior.category_name,
                        backend,
                        gamma,
                        &config.augment,
                        Placement::Random,
                        normal.foreground.as_ref(),
                        derive_seed(cand_seed, &[0]),
                    )?
                };
                scores.push(scorer.score(&candidate, prior, priors)?);
                batch.push(candidate);
            }
            let (_, best) = select_best(batch, &scores)?;
            out.push(best.sample);
        }
    }
    Ok(out)
}

/// Unconstrained synthetic anomalies for the open-set embedding: any local
/// shape at any size, repainted with a varying generic prompt.
pub fn class_agnostic_samples(
    normals: &[NormalImage],
    backend: &mut dyn InpaintBackend,
    count: usize,
    label: Label,
    gamma_range: (f64, f64),
    seed: u64,
) -> Result<Vec<SynthSample>> {
    if normals.is_empty() {
        return Err(Error::InvalidArgument("no normal support images".into()));
    }
    (0..count)
        .map(|k| {
            let normal = &normals[k % normals.len()];
            let s = derive_seed(seed, &[k as u64]);
            let mut rng = rng_from(s);
            let shape = MaskShape::LOCAL[rng.gen_range(0..MaskShape::LOCAL.len())];
            let gamma = NoiseFactor::sample(&mut rng, gamma_range);
            let mask = generate_mask(shape, None, normal.image.dims(), normal.foreground.as_ref(), derive_seed(s, &[1]))?;
            let prompt = format!("{GENERIC_ANOMALY_PROMPT} {k}");
            let repainted = backend.repaint(&normal.image, &mask, &prompt, gamma, derive_seed(s, &[2]))?;
            let image = super::repaint::composite(&normal.image, repainted, &mask)?;
            SynthSample::new(image, label, mask)
        })
        .collect()
}
