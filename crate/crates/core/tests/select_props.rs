use proptest::prelude::*;
use uniadc_core::select::{category_logits, category_matching_score, select_best, softmax, ssim, RegionTextEncoder};
use uniadc_core::{AnomalyPrior, BinaryMask, Grid, ImageGrid, Result};

/// Encoder returning fixed vectors: one for every region, one per text.
struct Fixed {
    region: Vec<f64>,
    texts: Vec<(String, Vec<f64>)>,
}

impl RegionTextEncoder for Fixed {
    fn dim(&self) -> usize {
        self.region.len()
    }
    fn encode_region(&self, _: &ImageGrid, _: &BinaryMask) -> Result<Vec<f64>> {
        Ok(self.region.clone())
    }
    fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.texts.iter().find(|(t, _)| t == text).unwrap().1.clone())
    }
}

fn priors(n: usize) -> Vec<AnomalyPrior> {
    (0..n)
        .map(|i| AnomalyPrior {
            image_class: "c".into(),
            category_id: (i + 1) as u8,
            category_name: format!("cat{i}"),
            descriptions: vec![format!("cat{i}")],
            shapes: None,
            sizes: None,
            detection_only: false,
        })
        .collect()
}

fn encoder_case() -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>)> {
    (1usize..6, 2usize..6).prop_flat_map(|(dim, y)| {
        (
            prop::collection::vec(-3.0f64..3.0, dim),
            prop::collection::vec(prop::collection::vec(-3.0f64..3.0, dim), y),
        )
    })
}

proptest! {
    #[test]
    fn matching_scores_sum_to_one((region, texts) in encoder_case()) {
        let p = priors(texts.len());
        let enc = Fixed {
            region,
            texts: p.iter().map(|q| q.category_name.clone()).zip(texts).collect(),
        };
        let (image, mask) = (ImageGrid::filled(2, 2, [0.5; 3]), BinaryMask::filled(2, 2, 1));
        let total: f64 = p
            .iter()
            .map(|q| category_matching_score(&image, &mask, q.category_id, &p, &enc).unwrap())
            .sum();
        prop_assert!((total - 1.0).abs() < 1e-9, "{total}");
        let logits = category_logits(&image, &mask, &p, &enc).unwrap();
        prop_assert_eq!(logits.len(), p.len());
    }

    #[test]
    fn softmax_ignores_a_common_shift(logits in prop::collection::vec(-20.0f64..20.0, 1..8), shift in -50.0f64..50.0) {
        let a = softmax(&logits);
        let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
        for (x, y) in a.iter().zip(softmax(&shifted)) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn selection_ignores_increasing_transforms(scores in prop::collection::vec(-5.0f64..5.0, 1..40)) {
        let (i, _) = select_best((0..scores.len()).collect(), &scores).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 3.0).collect();
        let (j, _) = select_best((0..scores.len()).collect(), &transformed).unwrap();
        prop_assert_eq!(i, j);
    }

    #[test]
    fn ssim_is_symmetric_and_reflexive(
        a in prop::collection::vec(0.0f64..=1.0, 256),
        b in prop::collection::vec(0.0f64..=1.0, 256),
    ) {
        let (a, b) = (Grid::from_vec(16, 16, a).unwrap(), Grid::from_vec(16, 16, b).unwrap());
        let ab = ssim(&a, &b).unwrap();
        prop_assert!((ab - ssim(&b, &a).unwrap()).abs() < 1e-9);
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn one_hot_logits_give_e_over_e_plus_two() {
    let s = softmax(&[1.0, 0.0, 0.0]);
    let e = std::f64::consts::E;
    assert!((s[0] - e / (e + 2.0)).abs() < 1e-12);
}
