//! `.priors` files: per image class, the anomaly categories with their
//! descriptions, mask shapes and size classes.
//!
//! ```toml
//! [[class]]
//! name = "wood"
//!
//! [[class.category]]
//! name = "hole"
//! descriptions = ["Hole in wood"]
//! shapes = ["Ellipse"]
//! # sizes omitted: any size
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uniadc_core::{AnomalyPrior, Label, MaskShape, SizeClass};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PriorsError {
    #[error("{}: {message}", path.display())]
    Unreadable { path: PathBuf, message: String },
    #[error("malformed priors file: {0}")]
    Malformed(String),
    #[error("unknown mask shape {name:?} in {class}/{category}")]
    UnknownShapeName { class: String, category: String, name: String },
    #[error("unknown size class {name:?} in {class}/{category}")]
    UnknownSizeName { class: String, category: String, name: String },
    #[error("category {category:?} listed twice for class {class:?}")]
    DuplicateCategory { class: String, category: String },
    #[error("class {class:?} has {count} categories; at most 254 are supported")]
    TooManyCategories { class: String, count: usize },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRepr {
    #[serde(default, rename = "class")]
    classes: Vec<ClassRepr>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassRepr {
    name: String,
    #[serde(default, rename = "category")]
    categories: Vec<CategoryRepr>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CategoryRepr {
    name: String,
    #[serde(default)]
    descriptions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shapes: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sizes: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    detection_only: bool,
}

/// Priors per image class. Category ids follow lexicographic name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PriorsTable {
    pub classes: BTreeMap<String, Vec<AnomalyPrior>>,
}

impl PriorsTable {
    pub fn class(&self, name: &str) -> Option<&[AnomalyPrior]> {
        self.classes.get(name).map(Vec::as_slice)
    }

    /// Labels of detection-only categories, left out of classification
    /// metrics.
    pub fn detection_only_labels(&self, class: &str) -> Vec<Label> {
        self.class(class)
            .unwrap_or_default()
            .iter()
            .filter(|p| p.detection_only)
            .map(|p| p.category_id)
            .collect()
    }
}

fn is_any(names: &[String]) -> bool {
    names.iter().any(|n| n.trim().eq_ignore_ascii_case("any"))
}

pub fn parse_priors(text: &str) -> Result<PriorsTable, PriorsError> {
    let repr: FileRepr = toml::from_str(text).map_err(|e| PriorsError::Malformed(e.to_string()))?;
    let mut table = PriorsTable::default();
    for class in repr.classes {
        let mut cats = class.categories;
        cats.sort_by(|a, b| a.name.cmp(&b.name));
        if let Some(w) = cats.windows(2).find(|w| w[0].name == w[1].name) {
            return Err(PriorsError::DuplicateCategory {
                class: class.name.clone(),
                category: w[0].name.clone(),
            });
        }
        if cats.len() > 254 {
            return Err(PriorsError::TooManyCategories {
                class: class.name.clone(),
                count: cats.len(),
            });
        }
        let mut priors = Vec::with_capacity(cats.len());
        for (i, c) in cats.into_iter().enumerate() {
            let shapes = match c.shapes {
                Some(names) if !is_any(&names) && !names.is_empty() => Some(
                    names
                        .iter()
                        .map(|n| {
                            MaskShape::parse(n).ok_or_else(|| PriorsError::UnknownShapeName {
                                class: class.name.clone(),
                                category: c.name.clone(),
                                name: n.clone(),
                            })
                        })
                        .collect::<Result<Vec<_>, _>>()?,
                ),
                _ => None,
            };
            let sizes = match c.sizes {
                Some(names) if !is_any(&names) && !names.is_empty() => Some(
                    names
                        .iter()
                        .map(|n| {
                            SizeClass::parse(n).ok_or_else(|| PriorsError::UnknownSizeName {
                                class: class.name.clone(),
                                category: c.name.clone(),
                                name: n.clone(),
                            })
                        })
                        .collect::<Result<Vec<_>, _>>()?,
                ),
                _ => None,
            };
            let descriptions = if c.descriptions.is_empty() {
                vec![c.name.clone()]
            } else {
                c.descriptions
            };
            priors.push(AnomalyPrior {
                image_class: class.name.clone(),
                category_id: (i + 1) as Label,
                category_name: c.name,
                descriptions,
                shapes,
                sizes,
                detection_only: c.detection_only,
            });
        }
        table.classes.insert(class.name, priors);
    }
    Ok(table)
}

pub fn format_priors(table: &PriorsTable) -> String {
    let repr = FileRepr {
        classes: table
            .classes
            .iter()
            .map(|(name, priors)| ClassRepr {
                name: name.clone(),
                categories: priors
                    .iter()
                    .map(|p| CategoryRepr {
                        name: p.category_name.clone(),
                        descriptions: p.descriptions.clone(),
                        shapes: p.shapes.as_ref().map(|s| s.iter().map(|v| v.name().to_string()).collect()),
                        sizes: p.sizes.as_ref().map(|s| s.iter().map(|v| v.name().to_string()).collect()),
                        detection_only: p.detection_only,
                    })
                    .collect(),
            })
            .collect(),
    };
    toml::to_string_pretty(&repr).expect("priors serialize")
}

pub fn load_priors(path: &Path) -> Result<PriorsTable, PriorsError> {
    let text = std::fs::read_to_string(path).map_err(|e| PriorsError::Unreadable {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_priors(&text)
}

pub fn save_priors(path: &Path, table: &PriorsTable) -> Result<(), PriorsError> {
    let unreadable = |e: std::io::Error| PriorsError::Unreadable {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).map_err(unreadable)?;
    }
    std::fs::write(path, format_priors(table)).map_err(unreadable)
}
