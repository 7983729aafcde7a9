//! Synthesis, training, evaluation and threshold sweeps over a dataset.
//!
//! Every command validates the configuration before touching the output
//! directory and always finishes by writing `run_<command>.json` with the
//! configuration, the artifact digests, timings and the outcome. Classes
//! run in parallel (`UNIADC_NUM_WORKERS` caps the pool), but each class
//! uses only seeds derived from its name, so results do not depend on the
//! worker count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use uniadc_core::discriminator::{infer, open_set_extend, train, CategoryEmbeddings, PatchStatsBackbone};
use uniadc_core::maskgen::foreground_estimate;
use uniadc_core::metrics::{default_tau_grid, evaluate, threshold_sweep, EvalOptions, EvalRecord};
use uniadc_core::rng::{derive_seed, stable_hash};
use uniadc_core::select::{CandidateScorer, EmbeddingScorer, ReferenceEncoder, SsimScorer};
use uniadc_core::synth::{
    class_agnostic_samples, make_training_set, AnomalyExample, AnomalySupport, NormalImage, ReferenceRepainter,
    TrainingSetConfig,
};
use uniadc_core::toy::ToyConfig;
use uniadc_core::{AnomalyPrior, BinaryMask, Label, LabelMask, SynthSample};

use crate::checkpoint::{load_checkpoint, save_checkpoint, ClassModel};
use crate::config::{ForegroundPolicy, RunConfig, ScorerKind};
use crate::data::{check_priors_match, load_dataset, make_toy_benchmark, sample_support, ClassIndex, DatasetIndex, SupportSets, TestItem};
use crate::error::{AppError, AppResult};
use crate::io::{read_image, read_mask, sha256_file, write_image, write_label_map, write_mask, write_score_map, write_text};
use crate::plot::write_sweep_plot;
use crate::priors::{load_priors, PriorsTable};
use crate::report::{mean_sweep, points_from_rows, sweep_csv, write_reports, ClassReport, SweepPoint};

pub const WORKERS_ENV: &str = "UNIADC_NUM_WORKERS";
pub const SAMPLES_FILE: &str = "samples.json";

const STREAM_SYNTH: u64 = 1;
const STREAM_AGNOSTIC: u64 = 2;
const STREAM_OTHER: u64 = 3;
const STREAM_TRAIN: u64 = 4;
const STREAM_PIXELS: u64 = 5;

/// Output locations under the run directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn toy_dataset(&self) -> PathBuf {
        self.root.join("toy_dataset")
    }
    pub fn synth(&self, class: &str) -> PathBuf {
        self.root.join("synth").join(class)
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn train_log(&self, class: &str) -> PathBuf {
        self.root.join("train").join(format!("{class}_loss.csv"))
    }
    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }
    pub fn sweep(&self) -> PathBuf {
        self.root.join("sweep")
    }
    pub fn manifest(&self, command: &str) -> PathBuf {
        self.root.join(format!("run_{command}.json"))
    }
}

pub fn checkpoint_path(dir: &Path, class: &str) -> PathBuf {
    dir.join(format!("{class}.ckpt"))
}

/// Dataset, priors and configuration of one run.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub config: RunConfig,
    pub index: DatasetIndex,
    pub priors: PriorsTable,
    pub layout: Layout,
}

impl Workspace {
    /// Validates `config`, then loads (or generates) the dataset and priors.
    pub fn prepare(config: &RunConfig) -> AppResult<Self> {
        config.validate()?;
        let layout = Layout {
            root: config.out.clone(),
        };
        let (mut index, priors) = if config.is_toy() {
            let toy = ToyConfig {
                seed: config.seed,
                ..ToyConfig::default()
            };
            make_toy_benchmark(&layout.toy_dataset(), &toy)?
        } else {
            let priors_path = config.priors.as_ref().expect("validated");
            let priors = load_priors(priors_path)?;
            (load_dataset(Path::new(&config.dataset))?, priors)
        };
        if !config.classes.is_empty() {
            let unknown: Vec<&String> = config.classes.iter().filter(|c| index.class(c).is_none()).collect();
            if !unknown.is_empty() {
                return Err(AppError::Config(format!("unknown classes {unknown:?}")));
            }
            index.classes.retain(|c| config.classes.contains(&c.name));
        }
        check_priors_match(&index, &priors)?;
        Ok(Self {
            config: config.clone(),
            index,
            priors,
            layout,
        })
    }

    pub fn class_priors(&self, class: &str) -> &[AnomalyPrior] {
        self.priors.class(class).expect("priors checked against the dataset")
    }

    pub fn class_seed(&self, class: &str, stream: u64) -> u64 {
        derive_seed(self.config.seed, &[stable_hash(class), stream])
    }

    pub fn support(&self, class: &ClassIndex) -> AppResult<SupportSets> {
        let c = &self.config;
        Ok(sample_support(class, c.normal_count(), c.k_anomaly, c.seed)?)
    }

    /// Runs `f` for every class on the worker pool; results keep class order.
    pub fn per_class<T: Send>(&self, f: impl Fn(&ClassIndex) -> AppResult<T> + Sync) -> AppResult<Vec<T>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(worker_count()?)
            .build()
            .map_err(|e| AppError::Config(format!("cannot start worker pool: {e}")))?;
        pool.install(|| self.index.classes.par_iter().map(&f).collect())
    }
}

/// Worker pool size from `UNIADC_NUM_WORKERS`; 0 lets the pool decide.
pub fn worker_count() -> AppResult<usize> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(0),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| AppError::Config(format!("{WORKERS_ENV}={v:?} is not a positive integer"))),
    }
}

/// Record of one command invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub status: String,
    pub error: Option<String>,
    pub config: RunConfig,
    pub workers: Option<usize>,
    /// Path relative to the run directory, then SHA-256 of the contents.
    pub artifacts: BTreeMap<String, String>,
    pub timings_ms: BTreeMap<String, u128>,
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> AppResult<()> {
    if !dir.is_dir() {
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| AppError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// SHA-256 of every file under `dirs`, keyed by path relative to `root`.
pub fn digest_tree(root: &Path, dirs: &[PathBuf]) -> AppResult<BTreeMap<String, String>> {
    let mut files = Vec::new();
    for d in dirs {
        collect_files(d, &mut files)?;
    }
    files
        .into_iter()
        .map(|p| {
            let rel = p.strip_prefix(root).unwrap_or(&p).to_string_lossy().replace('\\', "/");
            Ok((rel, sha256_file(&p)?))
        })
        .collect()
}

/// Stage timings of a command.
#[derive(Debug, Default)]
pub struct Timings(BTreeMap<String, u128>);

impl Timings {
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        *self.0.entry(stage.to_string()).or_default() += t.elapsed().as_millis();
        out
    }
}

/// Validates, prepares and runs `body`, then writes the run manifest
/// whether or not `body` succeeded. Invalid configurations fail before
/// anything is written.
fn with_manifest<T>(
    config: &RunConfig,
    command: &str,
    artifact_dirs: impl Fn(&Layout) -> Vec<PathBuf>,
    body: impl FnOnce(&Workspace, &mut Timings) -> AppResult<T>,
) -> AppResult<T> {
    config.validate()?;
    let workers = worker_count()?;
    let start = Instant::now();
    let mut timings = Timings::default();
    let layout = Layout {
        root: config.out.clone(),
    };
    let result = timings
        .time("prepare", || Workspace::prepare(config))
        .and_then(|ws| body(&ws, &mut timings));
    timings.0.insert("total".into(), start.elapsed().as_millis());
    let artifacts = digest_tree(&layout.root, &artifact_dirs(&layout))?;
    let manifest = RunManifest {
        command: command.into(),
        status: if result.is_ok() { "ok" } else { "failed" }.into(),
        error: result.as_ref().err().map(ToString::to_string),
        config: config.clone(),
        workers: (workers > 0).then_some(workers),
        artifacts,
        timings_ms: timings.0,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_text(&layout.manifest(command), &text)?;
    result
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleEntry {
    image: String,
    mask: String,
    label: Label,
    category: String,
}

fn label_name(categories: &[String], label: Label) -> String {
    match label {
        0 => "normal".into(),
        l => categories.get(usize::from(l) - 1).cloned().unwrap_or_else(|| "other".into()),
    }
}

/// Writes samples as `NNNN.png` / `NNNN_mask.png` plus `samples.json`.
pub fn write_samples(dir: &Path, samples: &[SynthSample], categories: &[String]) -> AppResult<()> {
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let image = format!("{i:04}.png");
        let mask = format!("{i:04}_mask.png");
        write_image(&dir.join(&image), &s.image)?;
        write_mask(&dir.join(&mask), &s.detect_mask)?;
        entries.push(SampleEntry {
            image,
            mask,
            label: s.label,
            category: label_name(categories, s.label),
        });
    }
    let mut text = serde_json::to_string_pretty(&entries).expect("entries serialize");
    text.push('\n');
    write_text(&dir.join(SAMPLES_FILE), &text)
}

pub fn read_samples(dir: &Path) -> AppResult<Vec<SynthSample>> {
    let path = dir.join(SAMPLES_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| AppError::io(&path, e))?;
    let entries: Vec<SampleEntry> =
        serde_json::from_str(&text).map_err(|e| AppError::Format(format!("{}: {e}", path.display())))?;
    entries
        .iter()
        .map(|e| {
            let image = read_image(&dir.join(&e.image))?;
            let mask = read_mask(&dir.join(&e.mask))?;
            Ok(SynthSample::new(image, e.label, mask)?)
        })
        .collect()
}

fn normal_images(ws: &Workspace, support: &SupportSets) -> AppResult<Vec<NormalImage>> {
    support
        .normals
        .iter()
        .map(|p| {
            let image = read_image(p)?;
            let foreground = match ws.config.foreground {
                ForegroundPolicy::None => None,
                ForegroundPolicy::Estimate => Some(foreground_estimate(&image)),
            };
            Ok(NormalImage { image, foreground })
        })
        .collect()
}

fn ground_truth(item: &TestItem, dims: (usize, usize)) -> AppResult<BinaryMask> {
    let mask = match &item.mask {
        Some(p) => read_mask(p)?,
        None => BinaryMask::filled(dims.0, dims.1, 0),
    };
    if mask.dims() != dims {
        return Err(AppError::Format(format!(
            "{}: mask is {:?} but the image is {dims:?}",
            item.image.display(),
            mask.dims()
        )));
    }
    Ok(mask)
}

/// Synthetic training tuples of one class: `n_per_category` selected
/// anomalies per category, the normal support images as pure-normal
/// tuples and, with `open_set`, class-agnostic anomalies labelled `Y + 1`.
pub fn synthesize_class(ws: &Workspace, class: &ClassIndex) -> AppResult<Vec<SynthSample>> {
    let c = &ws.config;
    let priors = ws.class_priors(&class.name);
    let support = ws.support(class)?;
    let normals = normal_images(ws, &support)?;
    let examples: Vec<AnomalyExample> = support
        .anomalies
        .iter()
        .map(|t| {
            let image = read_image(&t.image)?;
            let mask = ground_truth(t, image.dims())?;
            Ok(AnomalyExample {
                label: t.label,
                image,
                mask,
            })
        })
        .collect::<AppResult<_>>()?;
    let mode = if examples.is_empty() {
        AnomalySupport::ZeroShot
    } else {
        AnomalySupport::FewShot(&examples)
    };
    let encoder_scorer;
    let scorer: &dyn CandidateScorer = match c.effective_scorer() {
        ScorerKind::Ssim => &SsimScorer,
        _ => {
            encoder_scorer = EmbeddingScorer {
                encoder: ReferenceEncoder::new(ReferenceEncoder::DEFAULT_DIM, c.seed),
            };
            &encoder_scorer
        }
    };
    let set_config = TrainingSetConfig {
        n_per_category: c.n_per_category,
        batch_size: c.batch_select,
        gamma_range: (c.gamma_min, c.gamma_max),
        ..TrainingSetConfig::default()
    };
    let mut backend = ReferenceRepainter::default();
    let mut samples = make_training_set(
        &normals,
        priors,
        mode,
        &mut backend,
        scorer,
        &set_config,
        ws.class_seed(&class.name, STREAM_SYNTH),
    )?;
    samples.extend(normals.iter().map(|n| SynthSample::normal(n.image.clone())));
    if c.open_set {
        let other = Label::try_from(priors.len() + 1).map_err(|_| AppError::Config("too many categories".into()))?;
        samples.extend(class_agnostic_samples(
            &normals,
            &mut backend,
            c.n_per_category,
            other,
            set_config.gamma_range,
            ws.class_seed(&class.name, STREAM_AGNOSTIC),
        )?);
    }
    Ok(samples)
}

/// Per-class synthesis summary: sample count per category name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSummary {
    pub class: String,
    pub counts: BTreeMap<String, usize>,
}

fn synth_and_write(ws: &Workspace, class: &ClassIndex) -> AppResult<SynthSummary> {
    let samples = synthesize_class(ws, class)?;
    write_samples(&ws.layout.synth(&class.name), &samples, &class.categories)?;
    let mut counts = BTreeMap::new();
    for s in &samples {
        *counts.entry(label_name(&class.categories, s.label)).or_default() += 1;
    }
    Ok(SynthSummary {
        class: class.name.clone(),
        counts,
    })
}

pub fn run_synth(config: &RunConfig) -> AppResult<Vec<SynthSummary>> {
    with_manifest(config, "synth", |l| vec![l.root.join("synth")], |ws, t| {
        t.time("synth", || ws.per_class(|c| synth_and_write(ws, c)))
    })
}

/// Trains the discriminator of one class on its synthetic samples.
pub fn train_class(ws: &Workspace, class: &ClassIndex, samples: &[SynthSample]) -> AppResult<(ClassModel, Vec<f64>)> {
    let c = &ws.config;
    let names: Vec<&str> = class.categories.iter().map(String::as_str).collect();
    let known = CategoryEmbeddings::reference(&names, c.embed_dim, c.seed)?;
    let y = names.len();
    let agnostic: Vec<SynthSample> = samples.iter().filter(|s| usize::from(s.label) > y).cloned().collect();
    let embeddings = open_set_extend(&known, &agnostic, ws.class_seed(&class.name, STREAM_OTHER));
    let backbone = PatchStatsBackbone::default();
    let outcome = train(samples, &backbone, embeddings, &c.train_config(ws.class_seed(&class.name, STREAM_TRAIN)))?;
    let model = ClassModel {
        class: class.name.clone(),
        categories: class.categories.clone(),
        backbone,
        network: outcome.network,
        embeddings: outcome.embeddings,
    };
    Ok((model, outcome.loss_trace))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub class: String,
    pub samples: usize,
    pub checkpoint: PathBuf,
    pub final_loss: Option<f64>,
}

pub fn run_train(config: &RunConfig) -> AppResult<Vec<TrainSummary>> {
    let dirs = |l: &Layout| vec![l.root.join("synth"), l.checkpoints(), l.root.join("train")];
    with_manifest(config, "train", dirs, |ws, t| {
        let samples = t.time("synth", || {
            ws.per_class(|class| {
                let dir = ws.layout.synth(&class.name);
                if !dir.join(SAMPLES_FILE).is_file() {
                    synth_and_write(ws, class)?;
                }
                read_samples(&dir)
            })
        })?;
        t.time("train", || {
            ws.per_class(|class| {
                let i = ws.index.classes.iter().position(|c| c.name == class.name).expect("own class");
                let (model, trace) = train_class(ws, class, &samples[i])?;
                let path = checkpoint_path(&ws.layout.checkpoints(), &class.name);
                save_checkpoint(&path, &model)?;
                let mut log = String::from("step,loss\n");
                for (k, l) in trace.iter().enumerate() {
                    writeln!(log, "{k},{l}").unwrap();
                }
                write_text(&ws.layout.train_log(&class.name), &log)?;
                Ok(TrainSummary {
                    class: class.name.clone(),
                    samples: samples[i].len(),
                    checkpoint: path,
                    final_loss: trace.last().copied(),
                })
            })
        })
    })
}

fn load_model(dir: &Path, class: &ClassIndex) -> AppResult<ClassModel> {
    let model = load_checkpoint(&checkpoint_path(dir, &class.name))?;
    if model.class != class.name || model.categories != class.categories {
        return Err(AppError::Config(format!(
            "checkpoint for {:?} has categories {:?}, the dataset has {:?}",
            class.name, model.categories, class.categories
        )));
    }
    Ok(model)
}

/// One evaluated test image.
#[derive(Debug, Clone)]
pub struct Evaluated {
    pub item: TestItem,
    pub record: EvalRecord,
}

/// Runs the model over the held-out test images of a class.
pub fn class_records(ws: &Workspace, class: &ClassIndex, model: &ClassModel) -> AppResult<Vec<Evaluated>> {
    let support = ws.support(class)?;
    support
        .held_out(class)
        .into_iter()
        .map(|item| {
            let image = read_image(&item.image)?;
            let mask = ground_truth(item, image.dims())?;
            let labels: LabelMask = mask.map(|&m| if m != 0 { item.label } else { 0 });
            let out = infer(&image, &model.backbone, &model.network, &model.embeddings, ws.config.tau)?;
            Ok(Evaluated {
                item: item.clone(),
                record: EvalRecord::from_outputs(&out, labels, item.label),
            })
        })
        .collect()
}

/// Evaluated test images of one class plus the labels left out of
/// classification metrics.
#[derive(Debug, Clone)]
pub struct ClassEvaluation {
    pub class: String,
    pub categories: Vec<String>,
    pub excluded: Vec<Label>,
    pub images: Vec<Evaluated>,
}

impl ClassEvaluation {
    pub fn records(&self) -> Vec<EvalRecord> {
        self.images.iter().map(|e| e.record.clone()).collect()
    }
}

/// Loads every class checkpoint from `checkpoints` (default: the run's
/// own) and evaluates the held-out test images.
pub fn evaluate_all(ws: &Workspace, checkpoints: Option<&Path>) -> AppResult<Vec<ClassEvaluation>> {
    let dir = checkpoints.map_or_else(|| ws.layout.checkpoints(), Path::to_path_buf);
    ws.per_class(|class| {
        let model = load_model(&dir, class)?;
        Ok(ClassEvaluation {
            class: class.name.clone(),
            categories: class.categories.clone(),
            excluded: ws.priors.detection_only_labels(&class.name),
            images: class_records(ws, class, &model)?,
        })
    })
}

fn write_predictions(dir: &Path, eval: &ClassEvaluation, overlays: bool) -> AppResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["image", "true_label", "predicted_label", "image_score"]).unwrap();
    for e in &eval.images {
        let r = &e.record;
        w.write_record([
            e.item.image.display().to_string(),
            r.true_label.to_string(),
            r.predicted_label.to_string(),
            r.image_score.to_string(),
        ])
        .unwrap();
        if overlays {
            let cat = label_name(&eval.categories, e.item.label);
            let stem = e.item.image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let base = dir.join("overlays").join(&eval.class).join(format!("{cat}_{stem}"));
            write_score_map(&base.with_extension("score.png"), &r.score_map)?;
            write_label_map(&base.with_extension("labels.png"), &r.label_map)?;
        }
    }
    let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
    write_text(&dir.join(format!("{}_predictions.csv", eval.class)), &text)
}

pub fn run_eval(config: &RunConfig, checkpoints: Option<&Path>) -> AppResult<Vec<ClassReport>> {
    with_manifest(config, "eval", |l| vec![l.eval()], |ws, t| {
        let evals = t.time("inference", || evaluate_all(ws, checkpoints))?;
        let reports: Vec<ClassReport> = t.time("metrics", || {
            evals
                .iter()
                .map(|e| ClassReport {
                    class: e.class.clone(),
                    categories: e.categories.clone(),
                    report: evaluate(
                        &e.records(),
                        &EvalOptions {
                            seed: ws.class_seed(&e.class, STREAM_PIXELS),
                            excluded: e.excluded.clone(),
                            ..EvalOptions::default()
                        },
                    ),
                })
                .collect()
        });
        let dir = ws.layout.eval();
        write_reports(&dir, &reports)?;
        for e in &evals {
            write_predictions(&dir, e, ws.config.overlays)?;
        }
        Ok(reports)
    })
}

/// Class-averaged and per-class sweep tables.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub mean: Vec<SweepPoint>,
    pub per_class: Vec<(String, Vec<SweepPoint>)>,
}

/// Sweeps `taus` (default: 0.05 to 0.95 in steps of 0.05) and writes
/// `sweep.csv`, `sweep.png` and one CSV per class.
pub fn run_sweep(config: &RunConfig, checkpoints: Option<&Path>, taus: Option<&[f64]>) -> AppResult<SweepOutput> {
    let grid = taus.map_or_else(default_tau_grid, <[f64]>::to_vec);
    if grid.is_empty() || grid.iter().any(|t| !t.is_finite()) {
        return Err(AppError::Config("the threshold grid must be non-empty and finite".into()));
    }
    with_manifest(config, "sweep", |l| vec![l.sweep()], |ws, t| {
        let evals = t.time("inference", || evaluate_all(ws, checkpoints))?;
        let rows: Vec<_> = t.time("sweep", || {
            evals.iter().map(|e| threshold_sweep(&e.records(), &grid, &e.excluded)).collect()
        });
        let mean = mean_sweep(&rows);
        let dir = ws.layout.sweep();
        write_text(&dir.join("sweep.csv"), &sweep_csv(&mean))?;
        write_sweep_plot(&dir.join("sweep.png"), &mean)?;
        let mut per_class = Vec::new();
        for (e, r) in evals.iter().zip(&rows) {
            let points = points_from_rows(r);
            write_text(&dir.join(format!("sweep_{}.csv", e.class)), &sweep_csv(&points))?;
            per_class.push((e.class.clone(), points));
        }
        Ok(SweepOutput { mean, per_class })
    })
}
