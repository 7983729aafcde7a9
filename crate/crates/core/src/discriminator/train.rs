//! Gradient computation and the momentum-SGD training loop.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::backbone::VisionBackbone;
use super::fusion::{FusionArch, FusionNetwork};
use super::loss::{dice_loss, focal_loss, masked_cross_entropy, LossTerms, LossWeights};
use super::tensor::{Resampler, Tensor};
use super::{logit_maps, CategoryEmbeddings};
use crate::math::{sigmoid, sqrt};
use crate::rng::{derive_seed, rng_for};
use crate::synth::SynthSample;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub lambda: f64,
    /// Global gradient-norm ceiling per step.
    pub grad_clip: Option<f64>,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.05,
            momentum: 0.9,
            batch_size: 4,
            lambda: super::DEFAULT_LAMBDA,
            grad_clip: Some(5.0),
            hidden: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub network: FusionNetwork,
    pub embeddings: CategoryEmbeddings,
    /// Mean mini-batch loss per optimizer step.
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleGradient {
    pub terms: LossTerms,
    /// Gradient over [`FusionNetwork::params`].
    pub params: Vec<f64>,
    /// Gradient over the "Other" embedding, when present.
    pub other: Option<Vec<f64>>,
}

/// Loss and gradient of one training tuple given precomputed backbone
/// levels.
pub fn sample_loss_and_grad(
    network: &FusionNetwork,
    embeddings: &CategoryEmbeddings,
    levels: &[Tensor],
    sample: &SynthSample,
    weights: LossWeights,
) -> Result<SampleGradient> {
    let (f, cache) = network.forward(levels)?;
    let eps = network.temperature();
    let k = embeddings.len();
    let coarse = (f.height, f.width);
    let full = sample.image.dims();
    let up = Resampler::new(coarse, full);
    let full_len = full.0 * full.1;

    let logits = logit_maps(&f, embeddings, eps)?;
    let sig: Vec<Vec<f64>> = logits
        .iter()
        .map(|l| l.as_slice().iter().map(|&v| sigmoid(v)).collect())
        .collect();
    let mut s_d = vec![0.0; full_len];
    let mut buf = vec![0.0; full_len];
    for s in &sig {
        up.forward_plane(s, &mut buf);
        s_d.iter_mut().zip(&buf).for_each(|(a, b)| *a += b);
    }
    s_d.iter_mut().for_each(|v| *v /= k as f64);
    let logits_full: Vec<Vec<f64>> = logits
        .iter()
        .map(|l| {
            let mut o = vec![0.0; full_len];
            up.forward_plane(l.as_slice(), &mut o);
            o
        })
        .collect();

    let detect = sample.detect_mask.as_slice();
    let (focal, g_focal) = focal_loss(&s_d, detect);
    let (dice, g_dice) = dice_loss(&s_d, detect);
    let planes: Vec<&[f64]> = logits_full.iter().map(Vec::as_slice).collect();
    let (ce, g_ce) = masked_cross_entropy(&planes, sample.class_mask.as_slice())?;
    let terms = weights.combine(focal, dice, ce);

    // Gradient w.r.t. S_d, shared by every category map.
    let g_sd: Vec<f64> = g_focal
        .iter()
        .zip(&g_dice)
        .map(|(a, b)| (weights.focal * a + weights.dice * b) / k as f64)
        .collect();
    let coarse_len = coarse.0 * coarse.1;
    let mut shared = vec![0.0; coarse_len];
    up.backward_plane(&g_sd, &mut shared);

    let mut grad_f = Tensor::zeros(f.channels, f.height, f.width);
    let mut grad_log_eps = 0.0;
    let mut grad_other = embeddings.other().map(|_| vec![0.0; f.channels]);
    let other_index = embeddings.len_known();
    for (y, g) in embeddings.rows().enumerate() {
        let mut dl: Vec<f64> = shared
            .iter()
            .zip(&sig[y])
            .map(|(d, s)| d * s * (1.0 - s))
            .collect();
        if weights.ce != 0.0 {
            let scaled: Vec<f64> = g_ce[y].iter().map(|v| v * weights.ce).collect();
            up.backward_plane(&scaled, &mut dl);
        }
        let l = logits[y].as_slice();
        grad_log_eps -= dl.iter().zip(l).map(|(a, b)| a * b).sum::<f64>();
        for (c, &gv) in g.iter().enumerate() {
            let coef = gv / eps;
            for (o, &d) in grad_f.plane_mut(c).iter_mut().zip(&dl) {
                *o += coef * d;
            }
        }
        if y == other_index {
            if let Some(go) = grad_other.as_mut() {
                for (c, o) in go.iter_mut().enumerate() {
                    *o = f.plane(c).iter().zip(&dl).map(|(a, b)| a * b).sum::<f64>() / eps;
                }
            }
        }
    }

    let mut params = vec![0.0; network.layout().len()];
    network.backward(&cache, &grad_f, &mut params);
    params[network.layout().log_temperature_index()] += grad_log_eps;
    Ok(SampleGradient {
        terms,
        params,
        other: grad_other,
    })
}

/// Result of comparing analytic and central finite-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub checked: usize,
}

/// Compares analytic gradients against central differences with step `h`
/// at the given coordinates. Indices past the network's parameters address
/// the "Other" embedding. Relative error is `|a - n| / max(|a|, |n|, floor)`.
#[allow(clippy::too_many_arguments)]
pub fn check_gradients(
    network: &FusionNetwork,
    embeddings: &CategoryEmbeddings,
    levels: &[Tensor],
    sample: &SynthSample,
    weights: LossWeights,
    indices: &[usize],
    h: f64,
    floor: f64,
) -> Result<GradientCheck> {
    let analytic = sample_loss_and_grad(network, embeddings, levels, sample, weights)?;
    let n_params = network.layout().len();
    let mut net = network.clone();
    let mut emb = embeddings.clone();
    let mut worst = 0.0f64;
    let eval = |net: &FusionNetwork, emb: &CategoryEmbeddings| -> Result<f64> {
        Ok(sample_loss_and_grad(net, emb, levels, sample, weights)?.terms.total)
    };
    for &i in indices {
        let (a, numeric) = if i < n_params {
            let orig = net.params[i];
            net.params[i] = orig + h;
            let up = eval(&net, &emb)?;
            net.params[i] = orig - h;
            let down = eval(&net, &emb)?;
            net.params[i] = orig;
            (analytic.params[i], (up - down) / (2.0 * h))
        } else {
            let j = i - n_params;
            let base: Vec<f64> = emb.other().ok_or(Error::InvalidArgument("no other embedding".into()))?.to_vec();
            let mut v = base.clone();
            v[j] += h;
            emb.set_other(v.clone())?;
            let up = eval(&net, &emb)?;
            v[j] -= 2.0 * h;
            emb.set_other(v)?;
            let down = eval(&net, &emb)?;
            emb.set_other(base)?;
            (analytic.other.as_ref().expect("other gradient")[j], (up - down) / (2.0 * h))
        };
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        worst = worst.max(rel);
    }
    Ok(GradientCheck {
        max_relative_error: worst,
        checked: indices.len(),
    })
}

/// Initializes a fusion network from `config` and trains it.
pub fn train(
    samples: &[SynthSample],
    backbone: &dyn VisionBackbone,
    embeddings: CategoryEmbeddings,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let arch = FusionArch {
        level_channels: backbone.level_channels(),
        hidden: config.hidden,
        embed_dim: embeddings.dim(),
    };
    let network = FusionNetwork::new(arch, derive_seed(config.seed, &[0x696e6974]))?;
    train_from(network, samples, backbone, embeddings, config)
}

/// Continues training an existing network.
pub fn train_from(
    mut network: FusionNetwork,
    samples: &[SynthSample],
    backbone: &dyn VisionBackbone,
    mut embeddings: CategoryEmbeddings,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let first = samples.first().ok_or(Error::EmptyBatch)?;
    for s in samples {
        first.image.same_dims(&s.image)?;
        if let Some(&bad) = s.class_mask.as_slice().iter().find(|&&l| usize::from(l) > embeddings.len()) {
            return Err(Error::DimensionMismatch {
                expected: embeddings.len(),
                found: usize::from(bad),
            });
        }
    }
    if network.embed_dim() != embeddings.dim() {
        return Err(Error::DimensionMismatch {
            expected: network.embed_dim(),
            found: embeddings.dim(),
        });
    }
    let features: Vec<Vec<Tensor>> = samples.iter().map(|s| backbone.extract(&s.image)).collect();
    let weights = LossWeights::with_lambda(config.lambda);
    let batch = config.batch_size.max(1);
    let mut rng = rng_for(config.seed, &[0x7368756666]);
    let mut velocity = vec![0.0; network.params.len()];
    let mut velocity_other = embeddings.other().map(|o| vec![0.0; o.len()]);
    let mut loss_trace = Vec::new();
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for _epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let step = loss_trace.len();
            let mut grad = vec![0.0; network.params.len()];
            let mut grad_other = velocity_other.as_ref().map(|v| vec![0.0; v.len()]);
            let mut loss_sum = 0.0;
            for &i in chunk {
                let g = sample_loss_and_grad(&network, &embeddings, &features[i], &samples[i], weights)?;
                if !g.terms.total.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        step,
                        detail: format!(
                            "sample {i}: focal={} dice={} ce={}",
                            g.terms.focal, g.terms.dice, g.terms.ce
                        ),
                    });
                }
                loss_sum += g.terms.total;
                grad.iter_mut().zip(&g.params).for_each(|(a, b)| *a += b);
                if let (Some(acc), Some(go)) = (grad_other.as_mut(), g.other.as_ref()) {
                    acc.iter_mut().zip(go).for_each(|(a, b)| *a += b);
                }
            }
            let inv = 1.0 / chunk.len() as f64;
            grad.iter_mut().for_each(|v| *v *= inv);
            if let Some(go) = grad_other.as_mut() {
                go.iter_mut().for_each(|v| *v *= inv);
            }
            let norm_sq: f64 = grad.iter().chain(grad_other.iter().flatten()).map(|v| v * v).sum();
            if !norm_sq.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    detail: format!("gradient norm is {}", sqrt(norm_sq)),
                });
            }
            let scale = match config.grad_clip {
                Some(c) if sqrt(norm_sq) > c => c / sqrt(norm_sq),
                _ => 1.0,
            };
            for ((p, v), g) in network.params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = config.momentum * *v - config.lr * scale * g;
                *p += *v;
            }
            if let (Some(vo), Some(go)) = (velocity_other.as_mut(), grad_other.as_ref()) {
                let mut other = embeddings.other().expect("other embedding").to_vec();
                for ((p, v), g) in other.iter_mut().zip(vo.iter_mut()).zip(go) {
                    *v = config.momentum * *v - config.lr * scale * g;
                    *p += *v;
                }
                embeddings.set_other(other)?;
            }
            loss_trace.push(loss_sum * inv);
        }
    }
    Ok(TrainOutcome {
        network,
        embeddings,
        loss_trace,
    })
}
