use proptest::prelude::*;
use uniadc::priors::{format_priors, load_priors, parse_priors, save_priors, PriorsError, PriorsTable};
use uniadc_core::{AnomalyPrior, MaskShape, SizeClass};

#[test]
fn hole_row_has_one_shape_and_any_size() {
    let t = parse_priors(
        r#"
[[class]]
name = "wood"
[[class.category]]
name = "hole"
descriptions = ["Hole in wood"]
shapes = ["Ellipse"]
"#,
    )
    .unwrap();
    let hole = &t.class("wood").unwrap()[0];
    assert_eq!(hole.descriptions, ["Hole in wood"]);
    assert_eq!(hole.shapes, Some(vec![MaskShape::Ellipse]));
    assert_eq!(hole.sizes, None);
    assert_eq!(hole.category_id, 1);
}

#[test]
fn several_descriptions_are_kept_in_order() {
    let t = parse_priors(
        r#"
[[class]]
name = "carpet"
[[class.category]]
name = "color"
descriptions = ["Red stain", "Black stain"]
sizes = ["Any"]
"#,
    )
    .unwrap();
    let color = &t.class("carpet").unwrap()[0];
    assert_eq!(color.descriptions, ["Red stain", "Black stain"]);
    assert_eq!(color.sizes, None);
}

#[test]
fn unknown_names_and_duplicates_are_rejected() {
    let bad_shape = "[[class]]\nname = \"a\"\n[[class.category]]\nname = \"x\"\nshapes = [\"Circle\"]\n";
    assert!(matches!(parse_priors(bad_shape), Err(PriorsError::UnknownShapeName { name, .. }) if name == "Circle"));
    let bad_size = "[[class]]\nname = \"a\"\n[[class.category]]\nname = \"x\"\nsizes = [\"Huge\"]\n";
    assert!(matches!(parse_priors(bad_size), Err(PriorsError::UnknownSizeName { .. })));
    let dup = "[[class]]\nname = \"a\"\n[[class.category]]\nname = \"x\"\n[[class.category]]\nname = \"x\"\n";
    assert!(matches!(parse_priors(dup), Err(PriorsError::DuplicateCategory { .. })));
    assert!(matches!(parse_priors("[[class]]\nnom = 1\n"), Err(PriorsError::Malformed(_))));
}

#[test]
fn ids_follow_category_name_order() {
    let t = parse_priors(
        "[[class]]\nname = \"a\"\n[[class.category]]\nname = \"zeta\"\n[[class.category]]\nname = \"alpha\"\n",
    )
    .unwrap();
    let names: Vec<_> = t.class("a").unwrap().iter().map(|p| (p.category_id, p.category_name.as_str())).collect();
    assert_eq!(names, [(1, "alpha"), (2, "zeta")]);
    assert_eq!(t.class("a").unwrap()[0].descriptions, ["alpha"]);
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p/x.priors");
    let t = uniadc_core::toy::toy_priors("fabric").unwrap();
    let mut table = PriorsTable::default();
    table.classes.insert("fabric".into(), t);
    save_priors(&path, &table).unwrap();
    assert_eq!(load_priors(&path).unwrap(), table);
}

fn prior_list(class: String) -> impl Strategy<Value = Vec<AnomalyPrior>> {
    let shapes = prop::option::of(prop::sample::subsequence(MaskShape::ALL.to_vec(), 1..=3));
    let sizes = prop::option::of(prop::sample::subsequence(SizeClass::ALL.to_vec(), 1..=3));
    let cat = (prop::collection::vec("[A-Za-z ,]{1,12}", 1..3), shapes, sizes, any::<bool>());
    (prop::collection::btree_set("[a-z]{1,6}", 1..5), prop::collection::vec(cat, 5)).prop_map(move |(names, cats)| {
        names
            .into_iter()
            .zip(cats)
            .enumerate()
            .map(|(i, (name, (descriptions, shapes, sizes, detection_only)))| AnomalyPrior {
                image_class: class.clone(),
                category_id: (i + 1) as u8,
                category_name: name,
                descriptions,
                shapes,
                sizes,
                detection_only,
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn tables_round_trip_losslessly(a in prior_list("bottle".into()), b in prior_list("grid".into())) {
        let mut table = PriorsTable::default();
        table.classes.insert("bottle".into(), a);
        table.classes.insert("grid".into(), b);
        prop_assert_eq!(parse_priors(&format_priors(&table)).unwrap(), table);
    }
}
