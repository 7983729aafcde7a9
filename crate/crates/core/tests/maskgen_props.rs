use proptest::prelude::*;
use uniadc_core::components::label;
use uniadc_core::maskgen::{foreground_estimate, generate_mask};
use uniadc_core::{ForegroundMap, ImageGrid, MaskShape, SizeClass};

fn shape() -> impl Strategy<Value = MaskShape> {
    prop::sample::select(MaskShape::LOCAL.to_vec())
}

fn size() -> impl Strategy<Value = Option<SizeClass>> {
    prop::option::of(prop::sample::select(SizeClass::ALL.to_vec()))
}

/// Disc-shaped foreground covering roughly half the image.
fn disc(side: usize) -> ForegroundMap {
    let c = side as f64 / 2.0;
    ForegroundMap::from_fn(side, side, |y, x| {
        let (dy, dx) = (y as f64 + 0.5 - c, x as f64 + 0.5 - c);
        u8::from(dy * dy + dx * dx <= 0.4 * side as f64 * side as f64)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masks_are_deterministic(shape in shape(), size in size(), seed in any::<u64>()) {
        let a = generate_mask(shape, size, (64, 48), None, seed).unwrap();
        prop_assert_eq!(&a, &generate_mask(shape, size, (64, 48), None, seed).unwrap());
        prop_assert!(a.any());
    }

    #[test]
    fn masks_respect_the_foreground(shape in shape(), seed in any::<u64>()) {
        let fg = disc(64);
        let m = generate_mask(shape, None, (64, 64), Some(&fg), seed).unwrap();
        prop_assert!(m.as_slice().iter().zip(fg.as_slice()).all(|(&m, &f)| m == 0 || f != 0));
    }

    #[test]
    fn whole_foreground_masks_match_the_foreground(seed in any::<u64>()) {
        let fg = disc(64);
        let m = generate_mask(MaskShape::ForegroundMask, None, (64, 64), Some(&fg), seed).unwrap();
        prop_assert!(m.as_slice().iter().zip(fg.as_slice()).all(|(&m, &f)| m == 0 || f != 0));
        prop_assert!(m.any());
    }

    #[test]
    fn local_masks_have_at_most_two_regions(shape in shape(), size in size(), seed in any::<u64>()) {
        prop_assume!(shape != MaskShape::PerlinNoise);
        let m = generate_mask(shape, size, (64, 64), None, seed).unwrap();
        let regions = label(&m);
        prop_assert!((1..=2).contains(&regions.count()));
        if let Some(s) = size {
            for &a in &regions.areas {
                prop_assert!(s.contains_area(a, m.len()), "{shape:?} {s:?} area {a}");
            }
        }
    }
}

#[test]
fn size_ranges_are_disjoint_and_ordered() {
    let r: Vec<_> = SizeClass::ALL.iter().map(|s| s.area_fraction_range()).collect();
    assert_eq!(r, [(0.001, 0.01), (0.01, 0.05), (0.05, 0.20)]);
    assert!(r.windows(2).all(|w| w[0].1 <= w[1].0));
    assert!(SizeClass::Medium.contains_fraction(0.01) && !SizeClass::Small.contains_fraction(0.01));
    assert!(SizeClass::Large.contains_fraction(0.20));
    assert_eq!(MaskShape::ALL.len(), 8);
}

#[test]
fn estimated_foreground_separates_a_bright_object() {
    let img = ImageGrid::from_fn(64, 64, |y, x| if (16..48).contains(&y) && (16..48).contains(&x) { [0.9; 3] } else { [0.1; 3] });
    let fg = foreground_estimate(&img);
    assert_eq!(fg.count_nonzero(), 32 * 32);
    assert_eq!(*fg.get(20, 20), 1);
}
