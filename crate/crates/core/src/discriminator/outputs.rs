//! Detection and classification outputs derived from per-category maps.

use alloc::vec;
use alloc::vec::Vec;

use super::loss::detection_map;
use crate::{Label, LabelMask, Result, ScoreMap};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionOutputs {
    /// One map per category, label `y` at index `y - 1`.
    pub class_maps: Vec<ScoreMap>,
    /// Mean of `class_maps`.
    pub score_map: ScoreMap,
    /// Maximum of `score_map`.
    pub image_score: f64,
    /// Per-pixel argmax label where `score_map >= tau`, 0 elsewhere.
    pub label_map: LabelMask,
    /// Per-pixel argmax label regardless of the threshold.
    pub argmax_map: LabelMask,
    /// Label covering the largest area of `label_map`, 0 if none.
    pub image_label: Label,
}

/// Turns per-category maps into detection and classification outputs at
/// threshold `tau`. Ties in the argmax go to the lowest label.
pub fn derive_outputs(class_maps: Vec<ScoreMap>, tau: f64) -> Result<DetectionOutputs> {
    let score_map = detection_map(&class_maps)?;
    let (h, w) = score_map.dims();
    let mut argmax_map = LabelMask::filled(h, w, 0);
    for (i, a) in argmax_map.as_mut_slice().iter_mut().enumerate() {
        let mut best = 0;
        for (y, m) in class_maps.iter().enumerate().skip(1) {
            if m.as_slice()[i] > class_maps[best].as_slice()[i] {
                best = y;
            }
        }
        *a = (best + 1) as Label;
    }
    let label_map = threshold_labels(&score_map, &argmax_map, tau);
    let image_label = dominant_label(&label_map, class_maps.len());
    let image_score = score_map.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(DetectionOutputs {
        class_maps,
        score_map,
        image_score,
        label_map,
        argmax_map,
        image_label,
    })
}

/// Keeps the argmax label where `score >= tau`.
pub fn threshold_labels(score_map: &ScoreMap, argmax_map: &LabelMask, tau: f64) -> LabelMask {
    let data = score_map
        .as_slice()
        .iter()
        .zip(argmax_map.as_slice())
        .map(|(&s, &a)| if s >= tau { a } else { 0 })
        .collect();
    LabelMask::from_vec(score_map.height(), score_map.width(), data).expect("matching dims")
}

/// Nonzero label with the largest pixel count; lowest label on ties.
pub fn dominant_label(label_map: &LabelMask, categories: usize) -> Label {
    let mut counts = vec![0usize; categories + 1];
    for &l in label_map.as_slice() {
        if let Some(c) = counts.get_mut(usize::from(l)) {
            *c += 1;
        }
    }
    let mut best = (0, 0);
    for (y, &c) in counts.iter().enumerate().skip(1) {
        if c > best.1 {
            best = (y, c);
        }
    }
    best.0 as Label
}
