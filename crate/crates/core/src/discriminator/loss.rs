//! Focal, Dice and masked cross-entropy terms with their gradients.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{exp, ln, powi};
use crate::{BinaryMask, Error, LabelMask, Result, ScoreMap};

pub const FOCAL_GAMMA: f64 = 2.0;
pub const DICE_SMOOTHING: f64 = 1.0;
pub const DEFAULT_LAMBDA: f64 = 0.5;
const PROB_CLAMP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub focal: f64,
    pub dice: f64,
    pub ce: f64,
    pub total: f64,
}

/// Multipliers on each term of the objective. The default is
/// `focal + dice + 0.5 * ce`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub focal: f64,
    pub dice: f64,
    pub ce: f64,
}

impl LossWeights {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            focal: 1.0,
            dice: 1.0,
            ce: lambda,
        }
    }

    pub fn combine(&self, focal: f64, dice: f64, ce: f64) -> LossTerms {
        LossTerms {
            focal,
            dice,
            ce,
            total: self.focal * focal + self.dice * dice + self.ce * ce,
        }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::with_lambda(DEFAULT_LAMBDA)
    }
}

/// Mean binary focal loss and its gradient with respect to `pred`.
pub fn focal_loss(pred: &[f64], target: &[u8]) -> (f64, Vec<f64>) {
    let n = pred.len() as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for ((g, &p_raw), &t) in grad.iter_mut().zip(pred).zip(target) {
        let clamped = !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p_raw);
        let p = p_raw.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let (value, d) = if t > 0 {
            let q = 1.0 - p;
            (
                -powi(q, 2) * ln(p),
                FOCAL_GAMMA * q * ln(p) - powi(q, 2) / p,
            )
        } else {
            let q = 1.0 - p;
            (
                -powi(p, 2) * ln(q),
                -FOCAL_GAMMA * p * ln(q) + powi(p, 2) / q,
            )
        };
        total += value;
        *g = if clamped { 0.0 } else { d / n };
    }
    (total / n, grad)
}

/// Smoothed soft Dice loss and its gradient with respect to `pred`.
pub fn dice_loss(pred: &[f64], target: &[u8]) -> (f64, Vec<f64>) {
    let mut inter = 0.0;
    let mut p_sum = 0.0;
    let mut t_sum = 0.0;
    for (&p, &t) in pred.iter().zip(target) {
        let t = if t > 0 { 1.0 } else { 0.0 };
        inter += p * t;
        p_sum += p;
        t_sum += t;
    }
    let num = 2.0 * inter + DICE_SMOOTHING;
    let den = p_sum + t_sum + DICE_SMOOTHING;
    let grad = target
        .iter()
        .map(|&t| {
            let t = if t > 0 { 1.0 } else { 0.0 };
            -(2.0 * t * den - num) / (den * den)
        })
        .collect();
    (1.0 - num / den, grad)
}

/// Cross-entropy of the per-pixel softmax over `logits` (one plane per
/// category), averaged over pixels with a nonzero label. Label `y` selects
/// plane `y - 1`. Returns zero loss and zero gradient when no pixel is
/// labeled.
pub fn masked_cross_entropy(logits: &[&[f64]], labels: &[u8]) -> Result<(f64, Vec<Vec<f64>>)> {
    let k = logits.len();
    let mut grad = vec![vec![0.0; labels.len()]; k];
    let count = labels.iter().filter(|&&l| l > 0).count();
    if count == 0 {
        return Ok((0.0, grad));
    }
    if let Some(&bad) = labels.iter().find(|&&l| usize::from(l) > k) {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: usize::from(bad),
        });
    }
    let n = count as f64;
    let mut total = 0.0;
    let mut probs = vec![0.0; k];
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let m = logits.iter().map(|p| p[i]).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (pr, plane) in probs.iter_mut().zip(logits) {
            *pr = exp(plane[i] - m);
            z += *pr;
        }
        let target = usize::from(l) - 1;
        total += ln(z) + m - logits[target][i];
        for (c, pr) in probs.iter().enumerate() {
            let onehot = if c == target { 1.0 } else { 0.0 };
            grad[c][i] = (pr / z - onehot) / n;
        }
    }
    Ok((total / n, grad))
}

/// Mean of the per-category maps.
pub fn detection_map(maps: &[ScoreMap]) -> Result<ScoreMap> {
    let first = maps.first().ok_or(Error::EmptyBatch)?;
    let mut out = ScoreMap::filled(first.height(), first.width(), 0.0);
    for m in maps {
        first.same_dims(m)?;
        for (o, &v) in out.as_mut_slice().iter_mut().zip(m.as_slice()) {
            *o += v;
        }
    }
    let k = maps.len() as f64;
    out.as_mut_slice().iter_mut().for_each(|v| *v /= k);
    Ok(out)
}

/// Evaluates `focal(S_d, M_d) + dice(S_d, M_d) + lambda * ce(logits, M_c)`.
pub fn loss(
    maps: &[ScoreMap],
    logits: &[ScoreMap],
    detect: &BinaryMask,
    class: &LabelMask,
    lambda: f64,
) -> Result<LossTerms> {
    if maps.len() != logits.len() {
        return Err(Error::DimensionMismatch {
            expected: maps.len(),
            found: logits.len(),
        });
    }
    let s_d = detection_map(maps)?;
    s_d.same_dims(detect)?;
    s_d.same_dims(class)?;
    for l in logits {
        s_d.same_dims(l)?;
    }
    let (focal, _) = focal_loss(s_d.as_slice(), detect.as_slice());
    let (dice, _) = dice_loss(s_d.as_slice(), detect.as_slice());
    let planes: Vec<&[f64]> = logits.iter().map(|l| l.as_slice()).collect();
    let (ce, _) = masked_cross_entropy(&planes, class.as_slice())?;
    Ok(LossWeights::with_lambda(lambda).combine(focal, dice, ce))
}
