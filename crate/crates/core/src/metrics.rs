//! Detection, localization and classification metrics.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::seq::index;

use crate::components;
use crate::discriminator::{dominant_label, threshold_labels, DetectionOutputs};
use crate::rng::rng_from;
use crate::{BinaryMask, Label, LabelMask, ScoreMap};

pub const DEFAULT_FPR_LIMIT: f64 = 0.3;
pub const DEFAULT_PIXEL_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("only one class present")]
    SingleClass,
    #[error("no ground-truth regions")]
    NoRegions,
    #[error("no records left to score")]
    EmptySet,
    #[error("no anomaly category present in ground truth")]
    NoAnomalies,
    #[error("non-finite score")]
    NonFinite,
    #[error("map resolutions differ")]
    ShapeMismatch,
}

pub type MetricResult = core::result::Result<f64, MetricError>;

/// Prediction and ground truth for one test image.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub image_score: f64,
    pub predicted_label: Label,
    pub true_label: Label,
    pub score_map: ScoreMap,
    pub label_map: LabelMask,
    /// Unthresholded per-pixel argmax, used to re-derive labels at other
    /// thresholds.
    pub argmax_map: LabelMask,
    pub gt_mask: BinaryMask,
    pub gt_labels: LabelMask,
}

impl EvalRecord {
    pub fn from_outputs(outputs: &DetectionOutputs, gt_labels: LabelMask, true_label: Label) -> Self {
        Self {
            image_score: outputs.image_score,
            predicted_label: outputs.image_label,
            true_label,
            score_map: outputs.score_map.clone(),
            label_map: outputs.label_map.clone(),
            argmax_map: outputs.argmax_map.clone(),
            gt_mask: gt_labels.map(|&l| u8::from(l > 0)),
            gt_labels,
        }
    }
}

/// Area under the ROC curve by the Mann-Whitney statistic, ties counted
/// as one half.
pub fn auroc(scores: &[f64], labels: &[u8]) -> MetricResult {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let n_pos = labels.iter().filter(|&&l| l > 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // Walk tie groups in ascending order: each positive beats every negative
    // below its group and ties with those inside it.
    let mut wins = 0.0f64;
    let mut neg_below = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0usize, 0usize);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] > 0 {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        wins += pos as f64 * (neg_below as f64 + 0.5 * neg as f64);
        neg_below += neg;
        i = j;
    }
    Ok(wins / (n_pos as f64 * n_neg as f64))
}

/// Pooled per-pixel AUROC of `score_map` against `gt_mask`. When more than
/// `cap` pixels are pooled, a seeded uniform subset of `cap` is used.
pub fn pixel_auroc(records: &[EvalRecord], cap: usize, seed: u64) -> MetricResult {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for r in records {
        if r.score_map.dims() != r.gt_mask.dims() {
            return Err(MetricError::ShapeMismatch);
        }
        scores.extend_from_slice(r.score_map.as_slice());
        labels.extend(r.gt_mask.as_slice().iter().map(|&m| u8::from(m > 0)));
    }
    if scores.len() > cap {
        let mut rng = rng_from(seed);
        let mut picked = index::sample(&mut rng, scores.len(), cap).into_vec();
        picked.sort_unstable();
        scores = picked.iter().map(|&i| scores[i]).collect();
        labels = picked.iter().map(|&i| labels[i]).collect();
    }
    auroc(&scores, &labels)
}

/// Per-region overlap integrated over false-positive rate in
/// `[0, fpr_limit]` and divided by `fpr_limit`. Regions are 8-connected
/// components of each ground-truth mask; the false-positive rate is over
/// all normal pixels of the set.
pub fn pro(records: &[EvalRecord], fpr_limit: f64) -> MetricResult {
    #[derive(Clone, Copy)]
    struct Px {
        score: f64,
        /// `usize::MAX` for normal pixels, otherwise a global region index.
        region: usize,
    }
    let mut pixels = Vec::new();
    let mut areas: Vec<usize> = Vec::new();
    for r in records {
        if r.score_map.dims() != r.gt_mask.dims() {
            return Err(MetricError::ShapeMismatch);
        }
        let comps = components::label(&r.gt_mask);
        let base = areas.len();
        areas.extend_from_slice(&comps.areas);
        for (&s, &l) in r.score_map.as_slice().iter().zip(comps.labels.as_slice()) {
            if !s.is_finite() {
                return Err(MetricError::NonFinite);
            }
            let region = if l == 0 { usize::MAX } else { base + l as usize - 1 };
            pixels.push(Px { score: s, region });
        }
    }
    if areas.is_empty() {
        return Err(MetricError::NoRegions);
    }
    let n_normal = pixels.iter().filter(|p| p.region == usize::MAX).count();
    if n_normal == 0 {
        return Err(MetricError::SingleClass);
    }
    pixels.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal));

    let n_regions = areas.len() as f64;
    let mut overlap_sum = 0.0;
    let mut false_pos = 0usize;
    let (mut prev_fpr, mut prev_pro) = (0.0f64, 0.0f64);
    let mut integral = 0.0;
    let mut i = 0;
    while i < pixels.len() {
        let mut j = i;
        while j < pixels.len() && pixels[j].score == pixels[i].score {
            match pixels[j].region {
                usize::MAX => false_pos += 1,
                r => overlap_sum += 1.0 / areas[r] as f64,
            }
            j += 1;
        }
        i = j;
        let fpr = false_pos as f64 / n_normal as f64;
        let pro_value = overlap_sum / n_regions;
        if fpr >= fpr_limit {
            let t = if fpr > prev_fpr { (fpr_limit - prev_fpr) / (fpr - prev_fpr) } else { 0.0 };
            let at_limit = prev_pro + t * (pro_value - prev_pro);
            integral += 0.5 * (prev_pro + at_limit) * (fpr_limit - prev_fpr);
            return Ok((integral / fpr_limit).clamp(0.0, 1.0));
        }
        integral += 0.5 * (prev_pro + pro_value) * (fpr - prev_fpr);
        prev_fpr = fpr;
        prev_pro = pro_value;
    }
    // The lowest threshold flags every pixel, so FPR reaches 1 above.
    unreachable!("false-positive rate ends at 1")
}

/// Image-level top-1 accuracy of the predicted label, normal images
/// included, after dropping images whose true label is excluded.
pub fn classification_acc(records: &[EvalRecord], excluded: &[Label]) -> MetricResult {
    let kept: Vec<&EvalRecord> = records.iter().filter(|r| !excluded.contains(&r.true_label)).collect();
    if kept.is_empty() {
        return Err(MetricError::EmptySet);
    }
    let correct = kept.iter().filter(|r| r.predicted_label == r.true_label).count();
    Ok(correct as f64 / kept.len() as f64)
}

/// Pooled intersection and union pixel counts per label (index = label).
fn pooled_iou_counts<'a>(pairs: impl Iterator<Item = (&'a LabelMask, &'a LabelMask)>) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let n = usize::from(Label::MAX) + 1;
    let (mut inter, mut union, mut gt) = (vec![0; n], vec![0; n], vec![0; n]);
    for (pred, truth) in pairs {
        for (&p, &t) in pred.as_slice().iter().zip(truth.as_slice()) {
            let (p, t) = (usize::from(p), usize::from(t));
            if t > 0 {
                gt[t] += 1;
            }
            if p == t {
                if p > 0 {
                    inter[p] += 1;
                    union[p] += 1;
                }
            } else {
                if p > 0 {
                    union[p] += 1;
                }
                if t > 0 {
                    union[t] += 1;
                }
            }
        }
    }
    (inter, union, gt)
}

/// Per-category IoU pooled over the set, averaged over the categories that
/// appear in the ground truth.
pub fn miou(records: &[EvalRecord], excluded: &[Label]) -> MetricResult {
    miou_from_maps(
        records
            .iter()
            .filter(|r| !excluded.contains(&r.true_label))
            .map(|r| (&r.label_map, &r.gt_labels)),
        excluded,
    )
}

fn miou_from_maps<'a>(pairs: impl Iterator<Item = (&'a LabelMask, &'a LabelMask)>, excluded: &[Label]) -> MetricResult {
    let (inter, union, gt) = pooled_iou_counts(pairs);
    let ious: Vec<f64> = (1..gt.len())
        .filter(|&y| gt[y] > 0 && !excluded.contains(&(y as Label)))
        .map(|y| inter[y] as f64 / union[y] as f64)
        .collect();
    if ious.is_empty() {
        return Err(MetricError::NoAnomalies);
    }
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

/// Per-image variant: mean IoU over each anomalous image's ground-truth
/// categories, averaged over anomalous images.
pub fn miou_per_image(records: &[EvalRecord], excluded: &[Label]) -> MetricResult {
    let mut per_image = Vec::new();
    for r in records.iter().filter(|r| !excluded.contains(&r.true_label)) {
        if let Ok(v) = miou_from_maps(core::iter::once((&r.label_map, &r.gt_labels)), excluded) {
            per_image.push(v);
        }
    }
    if per_image.is_empty() {
        return Err(MetricError::NoAnomalies);
    }
    Ok(per_image.iter().sum::<f64>() / per_image.len() as f64)
}

/// Default threshold grid: 0.05, 0.10, ..., 0.95.
pub fn default_tau_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 / 20.0).collect()
}

/// Whether `tau` lies in the band where results are expected to be stable.
pub fn in_robust_band(tau: f64) -> bool {
    (0.4 - 1e-12..=0.6 + 1e-12).contains(&tau)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub tau: f64,
    pub acc: MetricResult,
    pub miou: MetricResult,
}

/// Re-derives pixel and image labels at each threshold and recomputes
/// accuracy and mIoU.
pub fn threshold_sweep(records: &[EvalRecord], taus: &[f64], excluded: &[Label]) -> Vec<SweepRow> {
    taus.iter()
        .map(|&tau| {
            let rethresholded: Vec<EvalRecord> = records
                .iter()
                .map(|r| {
                    let label_map = threshold_labels(&r.score_map, &r.argmax_map, tau);
                    EvalRecord {
                        predicted_label: dominant_label(&label_map, usize::from(Label::MAX)),
                        label_map,
                        ..r.clone()
                    }
                })
                .collect();
            SweepRow {
                tau,
                acc: classification_acc(&rethresholded, excluded),
                miou: miou(&rethresholded, excluded),
            }
        })
        .collect()
}

/// Per-category breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassBreakdown {
    pub label: Label,
    pub images: usize,
    /// Fraction of this category's images given the right image label.
    pub acc: MetricResult,
    pub iou: MetricResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub i_auc: MetricResult,
    pub p_auc: MetricResult,
    pub pro: MetricResult,
    pub acc: MetricResult,
    pub miou: MetricResult,
    pub per_class: Vec<ClassBreakdown>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub fpr_limit: f64,
    pub pixel_cap: usize,
    pub seed: u64,
    pub excluded: Vec<Label>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            fpr_limit: DEFAULT_FPR_LIMIT,
            pixel_cap: DEFAULT_PIXEL_CAP,
            seed: 0,
            excluded: Vec::new(),
        }
    }
}

pub fn evaluate(records: &[EvalRecord], options: &EvalOptions) -> MetricReport {
    let scores: Vec<f64> = records.iter().map(|r| r.image_score).collect();
    let labels: Vec<u8> = records.iter().map(|r| u8::from(r.true_label > 0)).collect();
    let mut seen: Vec<Label> = records.iter().map(|r| r.true_label).filter(|&l| l > 0).collect();
    seen.sort_unstable();
    seen.dedup();
    let (inter, union, gt) = pooled_iou_counts(records.iter().map(|r| (&r.label_map, &r.gt_labels)));
    let per_class = seen
        .iter()
        .map(|&label| {
            let own: Vec<&EvalRecord> = records.iter().filter(|r| r.true_label == label).collect();
            let correct = own.iter().filter(|r| r.predicted_label == label).count();
            let y = usize::from(label);
            ClassBreakdown {
                label,
                images: own.len(),
                acc: Ok(correct as f64 / own.len() as f64),
                iou: if gt[y] > 0 {
                    Ok(inter[y] as f64 / union[y] as f64)
                } else {
                    Err(MetricError::NoAnomalies)
                },
            }
        })
        .collect();
    MetricReport {
        i_auc: auroc(&scores, &labels),
        p_auc: pixel_auroc(records, options.pixel_cap, options.seed),
        pro: pro(records, options.fpr_limit),
        acc: classification_acc(records, &options.excluded),
        miou: miou(records, &options.excluded),
        per_class,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Grid;

    fn record(scores: Vec<f64>, gt: Vec<u8>, pred_labels: Vec<u8>, w: usize) -> EvalRecord {
        let h = scores.len() / w;
        let gt_labels = Grid::from_vec(h, w, gt).unwrap();
        let label_map = Grid::from_vec(h, w, pred_labels).unwrap();
        let true_label = gt_labels.as_slice().iter().copied().max().unwrap_or(0);
        let score_map = Grid::from_vec(h, w, scores).unwrap();
        EvalRecord {
            image_score: score_map.as_slice().iter().copied().fold(f64::MIN, f64::max),
            predicted_label: dominant_label(&label_map, 255),
            true_label,
            argmax_map: label_map.map(|&l| l.max(1)),
            label_map,
            gt_mask: gt_labels.map(|&l| u8::from(l > 0)),
            gt_labels,
            score_map,
        }
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]), Ok(1.0));
        assert_eq!(auroc(&[0.3; 4], &[0, 1, 0, 1]), Ok(0.5));
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]), Ok(0.75));
        assert_eq!(auroc(&[0.1, 0.4], &[1, 1]), Err(MetricError::SingleClass));
    }

    #[test]
    fn pixel_auroc_examples() {
        let r = record(vec![1.0, 0.0, 0.0, 1.0], vec![1, 0, 0, 1], vec![0; 4], 2);
        assert_eq!(pixel_auroc(&[r], DEFAULT_PIXEL_CAP, 0), Ok(1.0));
        let r = record(vec![0.3; 4], vec![1, 0, 0, 1], vec![0; 4], 2);
        assert_eq!(pixel_auroc(&[r], DEFAULT_PIXEL_CAP, 0), Ok(0.5));
    }

    #[test]
    fn pixel_auroc_subsampling_is_seeded() {
        let scores: Vec<f64> = (0..64).map(|i| (i % 7) as f64).collect();
        let gt: Vec<u8> = (0..64).map(|i| u8::from(i % 5 == 0)).collect();
        let r = record(scores, gt, vec![0; 64], 8);
        let a = pixel_auroc(core::slice::from_ref(&r), 20, 3).unwrap();
        assert_eq!(a, pixel_auroc(core::slice::from_ref(&r), 20, 3).unwrap());
        assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn pro_examples() {
        let mut gt = vec![0u8; 64];
        for i in [9, 10, 17, 18, 45, 46, 53, 54] {
            gt[i] = 1;
        }
        let perfect: Vec<f64> = gt.iter().map(|&g| f64::from(g)).collect();
        let r = record(perfect, gt.clone(), vec![0; 64], 8);
        assert!((pro(&[r], 0.3).unwrap() - 1.0).abs() < 1e-12);

        // A constant map has one operating point at FPR 1, PRO 1; the
        // segment from the origin gives PRO 0.15 at the limit.
        let r = record(vec![0.4; 64], gt.clone(), vec![0; 64], 8);
        assert!((pro(&[r], 0.3).unwrap() - 0.15).abs() < 1e-12);

        let r = record(vec![0.0; 64], vec![0; 64], vec![0; 64], 8);
        assert_eq!(pro(&[r], 0.3), Err(MetricError::NoRegions));
    }

    #[test]
    fn acc_examples() {
        let recs: Vec<EvalRecord> = [(0u8, 0u8), (1, 1), (2, 1)]
            .iter()
            .map(|&(t, p)| {
                let mut r = record(vec![0.0], vec![t], vec![p], 1);
                r.predicted_label = p;
                r
            })
            .collect();
        assert!((classification_acc(&recs, &[]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(classification_acc(&recs, &[2]), Ok(1.0));
        assert_eq!(classification_acc(&recs, &[0, 1, 2]), Err(MetricError::EmptySet));
    }

    #[test]
    fn miou_examples() {
        let r = record(vec![0.0; 4], vec![1, 1, 0, 0], vec![1, 1, 0, 0], 2);
        assert_eq!(miou(&[r], &[]), Ok(1.0));
        let r = record(vec![0.0; 4], vec![1, 1, 0, 0], vec![0, 0, 1, 1], 2);
        assert_eq!(miou(&[r], &[]), Ok(0.0));
        let r = record(vec![0.0; 4], vec![1, 1, 0, 0], vec![1, 0, 1, 0], 2);
        assert!((miou(core::slice::from_ref(&r), &[]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((miou_per_image(&[r], &[]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let r = record(vec![0.0; 4], vec![0; 4], vec![1, 0, 1, 0], 2);
        assert_eq!(miou(&[r], &[]), Err(MetricError::NoAnomalies));
    }

    #[test]
    fn sweep_degenerate_thresholds() {
        let normal = record(vec![0.2, 0.3, 0.1, 0.4], vec![0; 4], vec![0; 4], 2);
        let anomalous = record(vec![0.9, 0.8, 0.1, 0.2], vec![1, 1, 0, 0], vec![1, 1, 0, 0], 2);
        let recs = [normal, anomalous];
        let rows = threshold_sweep(&recs, &[0.0, 0.5, 1.0 + 1e-9], &[]);
        // Everything flagged: the normal image is misclassified.
        assert_eq!(rows[0].acc, Ok(0.5));
        assert_eq!(rows[1].acc, Ok(1.0));
        assert_eq!(rows[1].miou, Ok(1.0));
        assert_eq!(rows[2].miou, Ok(0.0));
        assert_eq!(rows[2].acc, Ok(0.5));
        assert_eq!(default_tau_grid().len(), 19);
        assert!(default_tau_grid().iter().filter(|&&t| in_robust_band(t)).count() == 5);
    }

    #[test]
    fn report_fields() {
        let normal = record(vec![0.2, 0.3, 0.1, 0.4], vec![0; 4], vec![0; 4], 2);
        let anomalous = record(vec![0.9, 0.8, 0.1, 0.2], vec![1, 1, 0, 0], vec![1, 1, 0, 0], 2);
        let rep = evaluate(&[normal, anomalous], &EvalOptions::default());
        assert_eq!(rep.i_auc, Ok(1.0));
        assert_eq!(rep.p_auc, Ok(1.0));
        assert_eq!(rep.acc, Ok(1.0));
        assert_eq!(rep.per_class.len(), 1);
        assert_eq!(rep.per_class[0].iou, Ok(1.0));
    }
}
