//! End-to-end commands behind the CLI: dataset synthesis, training (with the
//! classical ablation), evaluation and single-image prediction.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::backbone::{parameter_summary, Ablation, HybridModel, ModelConfig};
use crate::config::{DataSource, RunConfig};
use crate::data::{
    expand_positives, export_dataset, load_directory, load_image, split, standardize, synthesize_dataset, resize_bilinear,
    write_manifest, LoadOptions, Sample, SplitSpec,
};
use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::train::{evaluate, fit, AngleMonitor, FitConfig, MetricsReport, Rates, TrainSettings};

pub const SUMMARY_FILE: &str = "summary.json";
pub const SPLITS_FILE: &str = "splits.csv";
pub const COMPARISON_CSV: &str = "comparison.csv";
pub const COMPARISON_JSON: &str = "comparison.json";
pub const EVAL_FILE: &str = "eval.json";
pub const MANIFEST_FILE: &str = "manifest.csv";

/// Runs `f` on a dedicated pool of `threads` workers (0: all cores).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build a pool of {threads} threads: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Splits {
    pub fn named(&self) -> [(&'static str, &[Sample]); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }
}

/// Synthetic samples or a directory tree, per `data.source`.
pub fn load_samples(cfg: &RunConfig) -> Result<Vec<Sample>> {
    match cfg.data.source {
        DataSource::Synthetic => {
            let s = &cfg.data.synthetic;
            synthesize_dataset(s.n_per_class, s.patch_size, cfg.run.seed)
        }
        DataSource::Directory => {
            let root = cfg.data.path.as_deref().ok_or_else(|| Error::Config("data.path is not set".into()))?;
            if !root.is_dir() {
                return Err(Error::Data(format!("dataset directory {} does not exist", root.display())));
            }
            let opts = LoadOptions {
                channels: cfg.model.backbone.in_channels,
                resize: Some(cfg.model.backbone.input_size),
            };
            let (samples, report) = load_directory(root, &opts)?;
            if report.warnings > 0 {
                log::warn!("{} unreadable files skipped", report.warnings);
            }
            Ok(samples)
        }
    }
}

/// Test split first (`data.split.train_fraction` of patients kept), then a
/// validation split carved out of the kept patients.
pub fn make_splits(samples: &[Sample], cfg: &RunConfig) -> Result<Splits> {
    let s = &cfg.data.split;
    let outer = SplitSpec {
        train_fraction: s.train_fraction,
        seed: cfg.run.seed,
        group_by_patient: s.group_by_patient,
    };
    let (rest, test) = split(samples, &outer)?;
    let inner = SplitSpec {
        train_fraction: 1.0 - s.val_fraction,
        seed: rng::stream_seed(cfg.run.seed, streams::SPLIT, 1),
        group_by_patient: s.group_by_patient,
    };
    let (train, val) = split(&rest, &inner)?;
    Ok(Splits { train, val, test })
}

/// `patient_id,split,negatives,positives` for every patient.
fn splits_csv(splits: &Splits) -> String {
    let mut rows: BTreeMap<(&str, &str), [usize; 2]> = BTreeMap::new();
    for (name, set) in splits.named() {
        for s in set {
            rows.entry((s.patient_id.as_str(), name)).or_default()[usize::from(s.label)] += 1;
        }
    }
    let mut out = String::from("patient_id,split,negatives,positives\n");
    for ((p, name), [neg, pos]) in rows {
        out.push_str(&format!("{p},{name},{neg},{pos}\n"));
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value).expect("serialisable") + "\n"))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SynthReport {
    pub root: PathBuf,
    pub negatives: usize,
    pub positives: usize,
    pub expanded: usize,
}

/// Generates the synthetic dataset, splits it, optionally expands the
/// training positives, and exports the class/patient PNG layout plus a
/// manifest under `root`.
pub fn cmd_synth(cfg: &RunConfig, root: &Path, expand: bool) -> Result<SynthReport> {
    cfg.validate()?;
    let s = &cfg.data.synthetic;
    let samples = synthesize_dataset(s.n_per_class, s.patch_size, cfg.run.seed)?;
    let mut splits = make_splits(&samples, cfg)?;
    let mut expanded = 0;
    if expand {
        let before = splits.train.len();
        splits.train = expand_positives(&splits.train, &cfg.data.augment, cfg.data.positive_copies, cfg.run.seed)?;
        expanded = splits.train.len() - before;
    }
    let mut all = Vec::new();
    let mut names = Vec::new();
    for (name, set) in splits.named() {
        all.extend_from_slice(set);
        names.extend(std::iter::repeat_n(name, set.len()));
    }
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let rows = export_dataset(&all, root, Some(&names))?;
    write_manifest(&root.join(MANIFEST_FILE), &rows)?;
    let positives = all.iter().filter(|s| s.is_positive()).count();
    Ok(SynthReport {
        root: root.to_path_buf(),
        negatives: all.len() - positives,
        positives,
        expanded,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SetSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSummary {
    pub label: String,
    pub ablation: Ablation,
    pub seed: u64,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub best_val_accuracy: Option<f64>,
    pub sizes: SetSizes,
    pub parameters: BTreeMap<String, usize>,
    pub test_loss: f64,
    pub test: Rates,
    pub final_epoch: Option<MetricsReport>,
    pub angles: AngleMonitor,
    pub total_seconds: f64,
    pub output_dir: PathBuf,
}

fn settings(cfg: &RunConfig) -> TrainSettings {
    TrainSettings {
        batch_size: cfg.run.batch_size,
        seed: cfg.run.seed,
        augment: cfg.data.augment.clone(),
        threshold: cfg.run.threshold,
        ..TrainSettings::default()
    }
}

/// Fits one model on `splits` into `out_dir` and evaluates the best
/// checkpoint on the test split.
pub fn train_one(cfg: &RunConfig, splits: &Splits, out_dir: &Path, label: &str) -> Result<TrainSummary> {
    let start = Instant::now();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut model = HybridModel::new(cfg.model.clone(), &mut rng::substream(cfg.run.seed, streams::INIT, 0))?;
    let fc = FitConfig {
        epochs: cfg.run.epochs,
        optim: cfg.optim.clone(),
        settings: settings(cfg),
    };
    let outcome = fit(&mut model, &splits.train, &splits.val, &fc, Some(out_dir))?;
    let test = evaluate(&outcome.best_model, &splits.test, cfg.run.threshold, fc.settings.eval_chunk)?;
    let summary = TrainSummary {
        label: label.to_string(),
        ablation: cfg.model.ablation,
        seed: cfg.run.seed,
        epochs: cfg.run.epochs,
        best_epoch: outcome.best_epoch,
        best_val_accuracy: outcome.best_epoch.map(|e| outcome.history[e - 1].accuracy),
        sizes: SetSizes {
            train: splits.train.len(),
            val: splits.val.len(),
            test: splits.test.len(),
        },
        parameters: parameter_summary(model.params()).into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        test_loss: test.loss,
        test: test.rates,
        final_epoch: outcome.history.last().cloned(),
        angles: outcome.angles,
        total_seconds: start.elapsed().as_secs_f64(),
        output_dir: out_dir.to_path_buf(),
    };
    write_json(&out_dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationChoice {
    /// Use `model.ablation` from the config.
    Config,
    None,
    ClassicalOnly,
    /// Hybrid and classical-only under the same seed, reported side by side.
    Both,
}

pub const HYBRID_DIR: &str = "hybrid";
pub const CLASSICAL_DIR: &str = "classical-only";

/// Writes the resolved config, loads and splits the data, then trains the
/// requested variant(s). With [`AblationChoice::Both`] the two runs go to
/// `hybrid/` and `classical-only/` and a comparison table is written.
pub fn cmd_train(cfg: &RunConfig, choice: AblationChoice) -> Result<Vec<TrainSummary>> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    match choice {
        AblationChoice::None => cfg.model.ablation = Ablation::None,
        AblationChoice::ClassicalOnly => cfg.model.ablation = Ablation::ClassicalOnly,
        AblationChoice::Config | AblationChoice::Both => {}
    }
    cfg.write_resolved()?;
    let out = cfg.run.output_dir.clone();
    let samples = load_samples(&cfg)?;
    let splits = make_splits(&samples, &cfg)?;
    write_text(&out.join(SPLITS_FILE), &splits_csv(&splits))?;
    log::info!(
        "split: {} train / {} val / {} test samples",
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    if choice != AblationChoice::Both {
        let label = match cfg.model.ablation {
            Ablation::None => "hybrid",
            Ablation::ClassicalOnly => "classical-only",
        };
        return Ok(vec![train_one(&cfg, &splits, &out, label)?]);
    }
    let mut summaries = Vec::new();
    for (ablation, dir) in [(Ablation::None, HYBRID_DIR), (Ablation::ClassicalOnly, CLASSICAL_DIR)] {
        let mut c = cfg.clone();
        c.model.ablation = ablation;
        summaries.push(train_one(&c, &splits, &out.join(dir), dir)?);
    }
    write_text(&out.join(COMPARISON_CSV), &comparison_csv(&summaries))?;
    write_json(&out.join(COMPARISON_JSON), &summaries)?;
    Ok(summaries)
}

pub const COMPARISON_HEADER: &str = "model,accuracy,auc,f1,sensitivity,specificity,precision,recall,tp,fp,tn,fn,best_epoch";

/// One row per trained variant, test-split metrics.
pub fn comparison_csv(summaries: &[TrainSummary]) -> String {
    let mut out = format!("{COMPARISON_HEADER}\n");
    for s in summaries {
        let t = &s.test;
        let c = t.confusion;
        out.push_str(&format!(
            "{},{:.4},{},{:.4},{:.4},{:.4},{:.4},{:.4},{},{},{},{},{}\n",
            s.label,
            t.accuracy,
            t.auc.map_or_else(|| "nan".into(), |a| format!("{a:.4}")),
            t.f1,
            t.sensitivity,
            t.specificity,
            t.precision,
            t.recall,
            c.tp,
            c.fp,
            c.tn,
            c.fn_,
            s.best_epoch.map_or_else(|| "-".into(), |e| e.to_string()),
        ));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Train,
    Val,
    Test,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub checkpoint: PathBuf,
    pub dataset: String,
    pub samples: usize,
    pub loss: f64,
    pub threshold: f64,
    #[serde(flatten)]
    pub rates: Rates,
}

/// Evaluates a checkpoint. With `data_dir` every image under it is used;
/// otherwise the configured dataset is rebuilt and `which` split selected.
/// `expected` (from a config file) must match the checkpoint architecture.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    expected: Option<&ModelConfig>,
    data_dir: Option<&Path>,
    which: EvalSplit,
) -> Result<EvalReport> {
    let (model, _) = HybridModel::load(checkpoint, expected)?;
    let mut cfg = cfg.clone();
    cfg.model = model.config().clone();
    let (samples, dataset) = match data_dir {
        Some(dir) => {
            cfg.data.source = DataSource::Directory;
            cfg.data.path = Some(dir.to_path_buf());
            (load_samples(&cfg)?, dir.display().to_string())
        }
        None => {
            let all = load_samples(&cfg)?;
            let splits = make_splits(&all, &cfg)?;
            let chosen = match which {
                EvalSplit::Train => splits.train,
                EvalSplit::Val => splits.val,
                EvalSplit::Test => splits.test,
                EvalSplit::All => all,
            };
            let name = serde_json::to_value(which).expect("serialisable");
            (chosen, name.as_str().unwrap_or_default().to_string())
        }
    };
    let ev = evaluate(&model, &samples, cfg.run.threshold, 64)?;
    Ok(EvalReport {
        checkpoint: checkpoint.to_path_buf(),
        dataset,
        samples: samples.len(),
        loss: ev.loss,
        threshold: cfg.run.threshold,
        rates: ev.rates,
    })
}

pub fn write_eval_report(report: &EvalReport, out_dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join(EVAL_FILE);
    write_json(&path, report)?;
    Ok(path)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    pub label: u8,
    pub probability: f64,
    pub q: Vec<f64>,
    /// Original `(height, width)` when the image had to be resized.
    pub resized_from: Option<(usize, usize)>,
}

/// Classifies one PNG with a checkpoint; mismatched sizes are resampled.
pub fn cmd_predict(checkpoint: &Path, image: &Path, threshold: f64) -> Result<Prediction> {
    let (model, _) = HybridModel::load(checkpoint, None)?;
    let b = &model.config().backbone;
    let img = load_image(image, b.in_channels)?;
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let resized_from = (h != b.input_size || w != b.input_size).then_some((h, w));
    let img = if let Some((h, w)) = resized_from {
        log::warn!("{}: {h}x{w} image resized to {s}x{s}", image.display(), s = b.input_size);
        resize_bilinear(&img, b.input_size, b.input_size)
    } else {
        img
    };
    let x = standardize(&img).reshaped(vec![1, b.in_channels, b.input_size, b.input_size])?;
    let (logits, q) = model.infer(&x, 1)?;
    let probability = 1.0 / (1.0 + (-logits[0]).exp());
    Ok(Prediction {
        label: u8::from(probability >= threshold),
        probability,
        q,
        resized_from,
    })
}
