use proptest::prelude::*;
use uniadc_core::discriminator::{derive_outputs, similarity_maps, CategoryEmbeddings, Tensor};
use uniadc_core::ScoreMap;

fn features(c: usize, h: usize, w: usize, data: Vec<f64>) -> Tensor {
    Tensor {
        channels: c,
        height: h,
        width: w,
        data,
    }
}

fn case() -> impl Strategy<Value = (Tensor, Vec<Vec<f64>>)> {
    (1usize..5, 1usize..4, 1usize..4, 1usize..5).prop_flat_map(|(c, h, w, y)| {
        (
            prop::collection::vec(-2.0f64..2.0, c * h * w).prop_map(move |d| features(c, h, w, d)),
            prop::collection::vec(prop::collection::vec(-1.0f64..1.0, c), y),
        )
    })
}

fn score_maps(h: usize, w: usize, y: usize) -> impl Strategy<Value = Vec<ScoreMap>> {
    prop::collection::vec(prop::collection::vec(0.0f64..=1.0, h * w), y)
        .prop_map(move |v| v.into_iter().map(|d| ScoreMap::from_vec(h, w, d).unwrap()).collect())
}

proptest! {
    #[test]
    fn scaling_temperature_and_features_together_changes_nothing((f, g) in case(), c in 0.1f64..10.0) {
        let emb = CategoryEmbeddings::from_vectors(g).unwrap();
        let out = (f.height * 2, f.width * 2);
        let a = similarity_maps(&f, &emb, 0.07, out).unwrap();
        let scaled = Tensor { data: f.data.iter().map(|v| v * c).collect(), ..f.clone() };
        let b = similarity_maps(&scaled, &emb, 0.07 * c, out).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for (p, q) in x.as_slice().iter().zip(y.as_slice()) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn scores_increase_with_the_inner_product(f in prop::collection::vec(-1.0f64..1.0, 3), g in prop::collection::vec(-1.0f64..1.0, 3), bump in 0.01f64..1.0) {
        prop_assume!(g.iter().map(|v| v * v).sum::<f64>() > 1e-3);
        let emb = CategoryEmbeddings::from_vectors(vec![g.clone()]).unwrap();
        let s = |f: &[f64]| similarity_maps(&features(3, 1, 1, f.to_vec()), &emb, 1.0, (1, 1)).unwrap()[0].as_slice()[0];
        // Moving f along g raises <f, g>.
        let norm2: f64 = g.iter().map(|v| v * v).sum();
        let moved: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a + bump * b / norm2).collect();
        prop_assert!(s(&moved) > s(&f));
    }

    #[test]
    fn outputs_are_total_and_consistent(
        (maps, tau) in (1usize..5, 1usize..5, 1usize..5)
            .prop_flat_map(|(h, w, y)| (score_maps(h, w, y), 0.0f64..=1.0)),
    ) {
        let y = maps.len();
        let out = derive_outputs(maps.clone(), tau).unwrap();
        let n = out.score_map.len();
        for i in 0..n {
            let mean = maps.iter().map(|m| m.as_slice()[i]).sum::<f64>() / y as f64;
            let sd = out.score_map.as_slice()[i];
            prop_assert!((sd - mean).abs() < 1e-6);
            prop_assert!((0.0..=1.0).contains(&sd));
            let label = out.label_map.as_slice()[i];
            prop_assert!(usize::from(label) <= y);
            let arg = out.argmax_map.as_slice()[i];
            prop_assert!(arg >= 1 && usize::from(arg) <= y);
            let best = maps.iter().map(|m| m.as_slice()[i]).fold(f64::NEG_INFINITY, f64::max);
            // Lowest label wins ties.
            let first_best = maps.iter().position(|m| m.as_slice()[i] == best).unwrap() + 1;
            prop_assert_eq!(usize::from(arg), first_best);
            prop_assert_eq!(label, if sd >= tau { arg } else { 0 });
        }
        let max = out.score_map.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(out.image_score, max);
        prop_assert!(usize::from(out.image_label) <= y);
    }
}

#[test]
fn similarity_maps_stay_strictly_inside_the_unit_interval() {
    let f = features(2, 2, 2, vec![3.0, -3.0, 0.5, 0.0, -1.0, 2.0, 0.25, 1.0]);
    let emb = CategoryEmbeddings::from_vectors(vec![vec![1.0, 0.0], vec![0.6, -0.8]]).unwrap();
    // Unit temperature keeps the sigmoids away from floating-point saturation.
    for m in similarity_maps(&f, &emb, 1.0, (5, 3)).unwrap() {
        assert!(m.as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
