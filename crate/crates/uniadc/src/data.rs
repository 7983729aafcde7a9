//! Dataset layout, support-set sampling and the on-disk toy benchmark.
//!
//! Layout: `root/<class>/train/good/*`, `root/<class>/test/<category>/*`
//! (with `good` for normal test images) and
//! `root/<class>/ground_truth/<category>/<stem>_mask.<ext>`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use uniadc_core::rng::rng_for;
use uniadc_core::toy::{toy_class, toy_priors, ToyConfig, TOY_CLASSES};
use uniadc_core::Label;

use crate::error::{AppError, AppResult};
use crate::io::{is_image_file, write_image, write_mask};
use crate::priors::{save_priors, PriorsTable};

pub const NORMAL_DIR: &str = "good";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataIssue {
    MissingMask { image: PathBuf },
    UnreadableImage { path: PathBuf, message: String },
    /// Classes without normal training images; empty when the root holds
    /// no class directories at all.
    EmptyClass { root: PathBuf, classes: Vec<String> },
    NotADirectory { path: PathBuf },
}

impl fmt::Display for DataIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MissingMask { image } => write!(f, "missing ground-truth mask for {}", image.display()),
            Self::UnreadableImage { path, message } => write!(f, "unreadable image {}: {message}", path.display()),
            Self::EmptyClass { root, classes } if classes.is_empty() => {
                write!(f, "no image classes under {}", root.display())
            }
            Self::EmptyClass { classes, .. } => write!(f, "no normal training images for {}", classes.join(", ")),
            Self::NotADirectory { path } => write!(f, "not a directory: {}", path.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("dataset validation failed:\n  {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n  "))]
    Invalid(Vec<DataIssue>),
    #[error("class {class:?}: need {needed} {what}, found {available}")]
    InsufficientSamples {
        class: String,
        what: String,
        needed: usize,
        available: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestItem {
    pub image: PathBuf,
    /// `0` for normal images.
    pub label: Label,
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassIndex {
    pub name: String,
    pub train_normal: Vec<PathBuf>,
    pub test: Vec<TestItem>,
    /// Category names; label `y` is `categories[y - 1]`.
    pub categories: Vec<String>,
}

impl ClassIndex {
    pub fn category_label(&self, name: &str) -> Option<Label> {
        self.categories.iter().position(|c| c == name).map(|i| (i + 1) as Label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub classes: Vec<ClassIndex>,
}

impl DatasetIndex {
    pub fn class(&self, name: &str) -> Option<&ClassIndex> {
        self.classes.iter().find(|c| c.name == name)
    }
}

fn sorted_entries(dir: &Path, issues: &mut Vec<DataIssue>) -> Vec<PathBuf> {
    match fs::read_dir(dir) {
        Ok(rd) => {
            let mut v: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path())).collect();
            v.sort();
            v
        }
        Err(_) => {
            issues.push(DataIssue::NotADirectory { path: dir.to_path_buf() });
            Vec::new()
        }
    }
}

fn images_in(dir: &Path, issues: &mut Vec<DataIssue>) -> Vec<PathBuf> {
    let files: Vec<PathBuf> = sorted_entries(dir, issues)
        .into_iter()
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    for f in &files {
        if let Err(e) = image::image_dimensions(f) {
            issues.push(DataIssue::UnreadableImage {
                path: f.clone(),
                message: e.to_string(),
            });
        }
    }
    files
}

fn find_mask(gt_dir: &Path, image: &Path) -> Option<PathBuf> {
    let stem = image.file_stem()?.to_str()?;
    crate::io::IMAGE_EXTENSIONS
        .iter()
        .map(|ext| gt_dir.join(format!("{stem}_mask.{ext}")))
        .find(|p| p.is_file())
}

/// Indexes a dataset directory. All validation problems are collected and
/// reported together.
pub fn load_dataset(root: &Path) -> Result<DatasetIndex, DataError> {
    let mut issues = Vec::new();
    if !root.is_dir() {
        return Err(DataError::Invalid(vec![DataIssue::NotADirectory {
            path: root.to_path_buf(),
        }]));
    }
    let class_dirs: Vec<PathBuf> = sorted_entries(root, &mut issues)
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    if class_dirs.is_empty() {
        return Err(DataError::Invalid(vec![DataIssue::EmptyClass {
            root: root.to_path_buf(),
            classes: Vec::new(),
        }]));
    }
    let mut classes = Vec::new();
    let mut empty = Vec::new();
    for dir in class_dirs {
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let train_dir = dir.join("train").join(NORMAL_DIR);
        let train_normal = if train_dir.is_dir() {
            images_in(&train_dir, &mut issues)
        } else {
            Vec::new()
        };
        if train_normal.is_empty() {
            empty.push(name.clone());
        }
        let test_dir = dir.join("test");
        let mut categories = Vec::new();
        let mut test = Vec::new();
        if test_dir.is_dir() {
            let cat_dirs: Vec<PathBuf> = sorted_entries(&test_dir, &mut issues)
                .into_iter()
                .filter(|p| p.is_dir())
                .collect();
            for cd in &cat_dirs {
                let cat = cd.file_name().and_then(|n| n.to_str()).unwrap_or_default();
                if cat != NORMAL_DIR {
                    categories.push(cat.to_string());
                }
            }
            for cd in &cat_dirs {
                let cat = cd.file_name().and_then(|n| n.to_str()).unwrap_or_default();
                let label = categories.iter().position(|c| c == cat).map_or(0, |i| (i + 1) as Label);
                let gt_dir = dir.join("ground_truth").join(cat);
                for img in images_in(cd, &mut issues) {
                    let mask = if label == 0 {
                        None
                    } else {
                        let m = find_mask(&gt_dir, &img);
                        if m.is_none() {
                            issues.push(DataIssue::MissingMask { image: img.clone() });
                        }
                        m
                    };
                    test.push(TestItem { image: img, label, mask });
                }
            }
        }
        classes.push(ClassIndex {
            name,
            train_normal,
            test,
            categories,
        });
    }
    if !empty.is_empty() {
        issues.push(DataIssue::EmptyClass {
            root: root.to_path_buf(),
            classes: empty,
        });
    }
    if issues.is_empty() {
        Ok(DatasetIndex {
            root: root.to_path_buf(),
            classes,
        })
    } else {
        Err(DataError::Invalid(issues))
    }
}

/// Support sets of one class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportSets {
    pub normals: Vec<PathBuf>,
    /// Anomalous support images drawn from the test split, grouped by
    /// category in label order.
    pub anomalies: Vec<TestItem>,
}

impl SupportSets {
    /// Test items that are not part of the support set.
    pub fn held_out<'a>(&self, class: &'a ClassIndex) -> Vec<&'a TestItem> {
        class
            .test
            .iter()
            .filter(|t| !self.anomalies.iter().any(|a| a.image == t.image))
            .collect()
    }
}

/// Seeded uniform sampling without replacement of `k_normal` training
/// normals and `k_anomaly` anomalies per category. `k_normal = None` takes
/// every training normal.
pub fn sample_support(
    class: &ClassIndex,
    k_normal: Option<usize>,
    k_anomaly: usize,
    seed: u64,
) -> Result<SupportSets, DataError> {
    let class_seed = uniadc_core::rng::stable_hash(&class.name);
    let pick = |pool: &[PathBuf], k: usize, stream: u64| -> Vec<PathBuf> {
        let mut rng = rng_for(seed, &[class_seed, stream]);
        let mut idx = index::sample(&mut rng, pool.len(), k).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| pool[i].clone()).collect()
    };
    let k_n = k_normal.unwrap_or(class.train_normal.len());
    if k_n == 0 || k_n > class.train_normal.len() {
        return Err(DataError::InsufficientSamples {
            class: class.name.clone(),
            what: "normal training images".into(),
            needed: k_n.max(1),
            available: class.train_normal.len(),
        });
    }
    let normals = pick(&class.train_normal, k_n, 0);
    let mut anomalies = Vec::new();
    if k_anomaly > 0 {
        for (i, cat) in class.categories.iter().enumerate() {
            let label = (i + 1) as Label;
            let pool: Vec<&TestItem> = class.test.iter().filter(|t| t.label == label).collect();
            // Keep at least one image of the category for evaluation.
            if pool.len() <= k_anomaly {
                return Err(DataError::InsufficientSamples {
                    class: class.name.clone(),
                    what: format!("anomalies of {cat:?} (support plus one held out)"),
                    needed: k_anomaly + 1,
                    available: pool.len(),
                });
            }
            let paths: Vec<PathBuf> = pool.iter().map(|t| t.image.clone()).collect();
            for p in pick(&paths, k_anomaly, u64::from(label)) {
                anomalies.push((*pool.iter().find(|t| t.image == p).expect("picked from pool")).clone());
            }
        }
    }
    Ok(SupportSets { normals, anomalies })
}

/// Writes the built-in toy benchmark under `root` (dataset layout plus
/// `toy.priors`) and returns its index and priors.
pub fn make_toy_benchmark(root: &Path, config: &ToyConfig) -> AppResult<(DatasetIndex, PriorsTable)> {
    let mut table = PriorsTable::default();
    for class in TOY_CLASSES {
        let data = toy_class(class, config)?;
        let dir = root.join(class);
        for (k, img) in data.train_normals.iter().enumerate() {
            write_image(&dir.join("train").join(NORMAL_DIR).join(format!("{k:03}.png")), img)?;
        }
        let mut counters: BTreeMap<Label, usize> = BTreeMap::new();
        for t in &data.test {
            let cat = if t.label == 0 {
                NORMAL_DIR.to_string()
            } else {
                data.priors
                    .iter()
                    .chain(std::iter::once(&uniadc_core::toy::toy_unseen_prior(class)?))
                    .find(|p| p.category_id == t.label)
                    .map(|p| p.category_name.clone())
                    .expect("known label")
            };
            let k = counters.entry(t.label).or_default();
            let stem = format!("{k:03}");
            *k += 1;
            write_image(&dir.join("test").join(&cat).join(format!("{stem}.png")), &t.image)?;
            if t.label > 0 {
                let mask = t.labels.map(|&l| u8::from(l > 0));
                write_mask(&dir.join("ground_truth").join(&cat).join(format!("{stem}_mask.png")), &mask)?;
            }
        }
        table.classes.insert(class.to_string(), toy_priors(class)?);
    }
    save_priors(&root.join("toy.priors"), &table)?;
    let index = load_dataset(root)?;
    Ok((index, table))
}

/// Checks that the priors cover exactly the dataset's categories with the
/// same ids.
pub fn check_priors_match(index: &DatasetIndex, priors: &PriorsTable) -> AppResult<()> {
    for class in &index.classes {
        let Some(list) = priors.class(&class.name) else {
            return Err(AppError::Config(format!("priors file has no entry for class {:?}", class.name)));
        };
        let names: Vec<&str> = list.iter().map(|p| p.category_name.as_str()).collect();
        let expected: Vec<&str> = class.categories.iter().map(String::as_str).collect();
        if names != expected {
            return Err(AppError::Config(format!(
                "class {:?}: priors list categories {names:?} but the dataset has {expected:?}",
                class.name
            )));
        }
    }
    Ok(())
}
