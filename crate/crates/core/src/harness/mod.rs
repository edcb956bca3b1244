//! End-to-end runs: arrangement selection, encoding, level-2 training,
//! consensus training, metrics and on-disk artifacts; plus the L ablation
//! and the ViT/CNN comparison built on top of them.

mod metrics;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use metrics::{compute_metrics, ConfusionMatrix, Metrics, MetricsReport};

use crate::arrangement::{select_best, ArrangementSet, Selection};
use crate::classifiers::{
    concat_posteriors, posterior_batch, predict, train, ClassifierKind, ConsensusConfig, Model, Posterior, TrainConfig,
};
use crate::error::{Error, Result};
use crate::pseudo_image::{encode, PseudoImage};
use crate::seed::{derive, label};
use crate::skeleton::{load_dir, sample_frames, split_dataset, ActionSequence, ClassTable, SplitPolicy, DEFAULT_FRAMES, NUM_JOINTS};
use crate::synth::{synth_dataset, NUM_SYNTH_CLASSES};

pub const ARRANGEMENT_FILE: &str = "arrangements.txt";
pub const CONFIG_FILE: &str = "config.json";
pub const RESULTS_FILE: &str = "results.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FAILURE_MARKER: &str = "FAILED.json";
pub const CONSENSUS_CHECKPOINT: &str = "consensus.ckpt";

pub fn level2_checkpoint(l: usize) -> String {
    format!("level2_{l}.ckpt")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Generated on the fly; `seed` defaults to one derived from the run seed.
    Synthetic {
        per_class: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// A directory of NTU RGB+D `.skeleton` files.
    NtuDir {
        path: PathBuf,
        /// TOML class table; the built-in 14-class table when absent.
        #[serde(default)]
        class_table: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub split: SplitPolicy,
    pub classifier: ClassifierKind,
    /// Number of arrangements, `L`.
    pub arrangements: usize,
    /// Number of random sets scored during selection, `N`.
    pub draws: u64,
    /// Frames per sample, `T`.
    pub frames: usize,
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Level-3 epochs; level-2's when absent.
    pub consensus_epochs: Option<usize>,
    /// Fraction of the training split withheld from level 2 and used only
    /// to train level 3. With 0 both levels see the whole training split.
    pub consensus_holdout: f64,
    /// Also report the metrics of the mean of the level-2 posteriors.
    pub averaged_posteriors: bool,
    /// Threads used to train level-2 classifiers side by side. Not
    /// recorded with the results, which do not depend on it.
    #[serde(skip_serializing)]
    pub workers: usize,
    /// Use this arrangement file instead of running the selection.
    pub arrangement_file: Option<PathBuf>,
    /// Where artifacts are written; not recorded with the results either.
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetSource::Synthetic {
                per_class: 300,
                seed: None,
            },
            split: SplitPolicy::cross_view(),
            classifier: ClassifierKind::Vit,
            arrangements: 25,
            draws: 1000,
            frames: DEFAULT_FRAMES,
            seed: 0,
            epochs: 100,
            lr: 0.001,
            batch_size: 64,
            consensus_epochs: None,
            consensus_holdout: 0.0,
            averaged_posteriors: false,
            workers: 1,
            arrangement_file: None,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.arrangements == 0 {
            return bad("arrangements (L) must be at least 1".into());
        }
        if self.draws == 0 {
            return bad("draws (N) must be at least 1".into());
        }
        if self.frames != DEFAULT_FRAMES {
            return bad(format!("frames (T) must be {DEFAULT_FRAMES}; pseudo-images are square for the classifiers"));
        }
        if self.batch_size == 0 || self.workers == 0 {
            return bad("batch_size and workers must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.consensus_holdout) {
            return bad(format!("consensus_holdout must lie in [0, 1), got {}", self.consensus_holdout));
        }
        if let DatasetSource::Synthetic { per_class: 0, .. } = self.dataset {
            return bad("synthetic per_class must be positive".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads TOML, or JSON when the file name ends in `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))
        } else {
            Self::from_toml(&text)
        }
    }

    /// SHA-256 of the recorded JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// Train and test samples of a run, and the number of classes.
pub struct Dataset {
    pub train: Vec<ActionSequence>,
    pub test: Vec<ActionSequence>,
    pub num_classes: usize,
    /// Files skipped because their action is not in the class table.
    pub skipped: usize,
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let (samples, num_classes, skipped) = match &cfg.dataset {
        DatasetSource::Synthetic { per_class, seed } => {
            let seed = seed.unwrap_or_else(|| derive(cfg.seed, &[label("synth")]));
            (synth_dataset(*per_class, seed), NUM_SYNTH_CLASSES, 0)
        }
        DatasetSource::NtuDir { path, class_table } => {
            let classes = match class_table {
                Some(p) => ClassTable::from_toml(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
                None => ClassTable::default(),
            };
            let (samples, skipped) = load_dir(path, &classes)?;
            (samples, classes.len(), skipped)
        }
    };
    let (train, test) = split_dataset(samples, &cfg.split);
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config(format!(
            "split leaves {} training and {} test samples",
            train.len(),
            test.len()
        )));
    }
    Ok(Dataset {
        train,
        test,
        num_classes,
        skipped,
    })
}

/// Images indexed `[arrangement][sample]`.
pub fn encode_all(samples: &[ActionSequence], set: &ArrangementSet, frames: usize) -> Result<Vec<Vec<PseudoImage>>> {
    let sampled = samples
        .par_iter()
        .map(|s| sample_frames(s, frames))
        .collect::<Result<Vec<_>>>()?;
    set.members()
        .iter()
        .map(|arr| {
            sampled
                .par_iter()
                .map(|s| encode(s, arr).map(|(img, _)| img))
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub level2_train: usize,
    pub level3_train: usize,
    pub test: usize,
    pub skipped_files: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub config: RunConfig,
    pub config_hash: String,
    pub num_classes: usize,
    pub counts: SplitCounts,
    pub arrangement_score: u64,
    pub arrangement_draw: u64,
    pub arrangement_sha256: String,
    pub report: MetricsReport,
    /// Metrics of the mean level-2 posterior, when requested.
    pub averaged_posteriors: Option<Metrics>,
    pub level2_loss_curves: Vec<Vec<f64>>,
    pub consensus_loss_curve: Vec<f64>,
}

impl RunResults {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(RESULTS_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// `(row, metrics)` pairs: each classifier, their average, optionally
    /// the averaged posteriors, and the consensus.
    pub fn rows(&self) -> Vec<(String, Metrics)> {
        let kind = self.config.classifier;
        let mut rows: Vec<(String, Metrics)> = self
            .report
            .individual
            .iter()
            .enumerate()
            .map(|(l, m)| (format!("{kind}_{l}"), *m))
            .collect();
        rows.push((format!("average_of_{kind}"), self.report.average));
        if let Some(m) = self.averaged_posteriors {
            rows.push((format!("averaged_posteriors_of_{kind}"), m));
        }
        rows.push((format!("consensus_of_{kind}"), self.report.consensus));
        rows
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    config_hash: String,
    arrangement_file: String,
    arrangement_sha256: String,
    checkpoints: Vec<(String, String)>,
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text)
}

fn write_metrics_csv(path: &Path, rows: &[(String, Metrics)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row", "accuracy", "precision", "recall", "f_score"])?;
    for (name, m) in rows {
        w.write_record([
            name.clone(),
            m.accuracy.to_string(),
            m.precision.to_string(),
            m.recall.to_string(),
            m.f_score.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct FailureRecord<'a> {
    error: &'a str,
    kind: &'a str,
    config_hash: String,
}

/// Runs `body`, leaving a failure marker in `dir` if it errors.
fn with_failure_marker<T>(dir: &Path, cfg: &RunConfig, body: impl FnOnce() -> Result<T>) -> Result<T> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let marker = dir.join(FAILURE_MARKER);
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    let out = body();
    if let Err(e) = &out {
        let record = FailureRecord {
            error: &e.to_string(),
            kind: e.kind(),
            config_hash: cfg.hash(),
        };
        // The original error matters more than a failure to record it.
        let _ = write_json(&marker, &record);
    }
    out
}

/// Selects (or loads) the arrangement set and writes it to `dir`.
pub fn prepare_arrangements(cfg: &RunConfig, dir: &Path) -> Result<Selection> {
    let selection = match &cfg.arrangement_file {
        Some(path) => {
            let sel = Selection::load(path)?;
            if sel.set.len() != cfg.arrangements || sel.set.joints() != NUM_JOINTS {
                return Err(Error::Config(format!(
                    "{} holds L={} M={}, config asks for L={} M={NUM_JOINTS}",
                    path.display(),
                    sel.set.len(),
                    sel.set.joints(),
                    cfg.arrangements
                )));
            }
            sel
        }
        None => select_best(derive(cfg.seed, &[label("select")]), cfg.draws, cfg.arrangements, NUM_JOINTS)?,
    };
    selection.save(&dir.join(ARRANGEMENT_FILE))?;
    Ok(selection)
}

/// Indices of the training split kept for level 2 and those held out for level 3.
fn holdout_split(cfg: &RunConfig, n: usize) -> (Vec<usize>, Vec<usize>) {
    let all: Vec<usize> = (0..n).collect();
    let held = (cfg.consensus_holdout * n as f64).round() as usize;
    if held == 0 || held >= n {
        return (all.clone(), all);
    }
    let mut order = all;
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive(cfg.seed, &[label("holdout")])));
    let (l3, l2) = order.split_at(held);
    let (mut l2, mut l3) = (l2.to_vec(), l3.to_vec());
    l2.sort_unstable();
    l3.sort_unstable();
    (l2, l3)
}

fn posteriors_for(model: &Model<f32>, images: &[PseudoImage], idx: &[usize], batch_size: usize) -> Result<Vec<Posterior>> {
    predict(
        model,
        idx.len(),
        |chunk| {
            let batch: Vec<&PseudoImage> = chunk.iter().map(|&i| &images[idx[i]]).collect();
            model.image_batch(&batch)
        },
        batch_size,
    )
}

struct Level2 {
    model: Model<f32>,
    loss_curve: Vec<f64>,
}

fn train_level2(
    cfg: &RunConfig,
    num_classes: usize,
    images: &[Vec<PseudoImage>],
    labels: &[usize],
    idx: &[usize],
) -> Result<Vec<Level2>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let train_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
    pool.install(|| {
        (0..cfg.arrangements)
            .into_par_iter()
            .map(|l| {
                let mut model = Model::<f32>::level2(cfg.classifier, num_classes, derive(cfg.seed, &[label("init"), l as u64]))?;
                let layout = model.clone();
                let report = train(
                    &mut model,
                    idx.len(),
                    &train_labels,
                    |chunk| {
                        let batch: Vec<&PseudoImage> = chunk.iter().map(|&i| &images[l][idx[i]]).collect();
                        layout.image_batch(&batch)
                    },
                    &cfg.train_config(),
                    derive(cfg.seed, &[label("train"), l as u64]),
                )?;
                Ok(Level2 {
                    model,
                    loss_curve: report.loss_curve,
                })
            })
            .collect::<Result<Vec<_>>>()
    })
}

/// Concatenated per-sample posteriors of every classifier.
fn consensus_inputs(per_classifier: &[Vec<Posterior>], num_classes: usize) -> Result<Vec<Vec<f64>>> {
    let n = per_classifier[0].len();
    (0..n)
        .map(|i| {
            let row: Vec<Posterior> = per_classifier.iter().map(|p| p[i].clone()).collect();
            concat_posteriors(&row, num_classes)
        })
        .collect()
}

fn mean_posterior_metrics(per_classifier: &[Vec<Posterior>], truth: &[usize], num_classes: usize) -> Result<Metrics> {
    let l = per_classifier.len() as f64;
    let mean: Vec<Posterior> = (0..truth.len())
        .map(|i| {
            (0..num_classes)
                .map(|k| per_classifier.iter().map(|p| p[i][k]).sum::<f64>() / l)
                .collect()
        })
        .collect();
    Metrics::from_confusion(&ConfusionMatrix::from_posteriors(num_classes, truth, &mean))
}

/// The full level 1 → 2 → 3 pipeline. Artifacts go to `cfg.output_dir`;
/// on error a failure marker is left next to whatever was written.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunResults> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    with_failure_marker(&dir, cfg, || pipeline_body(cfg, &dir))
}

fn pipeline_body(cfg: &RunConfig, dir: &Path) -> Result<RunResults> {
    write_json(&dir.join(CONFIG_FILE), cfg)?;
    let data = load_dataset(cfg)?;
    let c = data.num_classes;
    let selection = prepare_arrangements(cfg, dir)?;
    let arrangement_sha256 = file_sha256(&dir.join(ARRANGEMENT_FILE))?;

    let train_images = encode_all(&data.train, &selection.set, cfg.frames)?;
    let test_images = encode_all(&data.test, &selection.set, cfg.frames)?;
    let train_labels: Vec<usize> = data.train.iter().map(|s| s.label).collect();
    let test_labels: Vec<usize> = data.test.iter().map(|s| s.label).collect();
    let (l2_idx, l3_idx) = holdout_split(cfg, data.train.len());

    let level2 = train_level2(cfg, c, &train_images, &train_labels, &l2_idx)?;
    let mut checkpoints = Vec::new();
    for (l, m) in level2.iter().enumerate() {
        let name = level2_checkpoint(l);
        m.model.save(&dir.join(&name), &format!("{}-level2-{l}", cfg.classifier))?;
        checkpoints.push((name.clone(), file_sha256(&dir.join(&name))?));
    }

    let all_test: Vec<usize> = (0..data.test.len()).collect();
    let mut test_post = Vec::with_capacity(level2.len());
    let mut l3_post = Vec::with_capacity(level2.len());
    for (l, m) in level2.iter().enumerate() {
        test_post.push(posteriors_for(&m.model, &test_images[l], &all_test, cfg.batch_size)?);
        l3_post.push(posteriors_for(&m.model, &train_images[l], &l3_idx, cfg.batch_size)?);
    }
    let individual: Vec<ConfusionMatrix> = test_post
        .iter()
        .map(|p| ConfusionMatrix::from_posteriors(c, &test_labels, p))
        .collect();

    let l3_rows = consensus_inputs(&l3_post, c)?;
    let l3_labels: Vec<usize> = l3_idx.iter().map(|&i| train_labels[i]).collect();
    let mut consensus = Model::<f32>::consensus(
        ConsensusConfig::new(cfg.arrangements, c),
        derive(cfg.seed, &[label("consensus-init")]),
    )?;
    let l3_cfg = TrainConfig {
        epochs: cfg.consensus_epochs.unwrap_or(cfg.epochs),
        ..cfg.train_config()
    };
    let consensus_report = train(
        &mut consensus,
        l3_rows.len(),
        &l3_labels,
        |chunk| posterior_batch(&chunk.iter().map(|&i| l3_rows[i].clone()).collect::<Vec<_>>()),
        &l3_cfg,
        derive(cfg.seed, &[label("consensus-train")]),
    )?;
    consensus.save(&dir.join(CONSENSUS_CHECKPOINT), "consensus")?;
    checkpoints.push((CONSENSUS_CHECKPOINT.to_string(), file_sha256(&dir.join(CONSENSUS_CHECKPOINT))?));

    let test_rows = consensus_inputs(&test_post, c)?;
    let consensus_post = predict(
        &consensus,
        test_rows.len(),
        |chunk| posterior_batch(&chunk.iter().map(|&i| test_rows[i].clone()).collect::<Vec<_>>()),
        cfg.batch_size,
    )?;
    let report = compute_metrics(
        &individual,
        &ConfusionMatrix::from_posteriors(c, &test_labels, &consensus_post),
    )?;
    let averaged_posteriors = if cfg.averaged_posteriors {
        Some(mean_posterior_metrics(&test_post, &test_labels, c)?)
    } else {
        None
    };

    let results = RunResults {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        num_classes: c,
        counts: SplitCounts {
            level2_train: l2_idx.len(),
            level3_train: l3_idx.len(),
            test: data.test.len(),
            skipped_files: data.skipped,
        },
        arrangement_score: selection.score,
        arrangement_draw: selection.draw,
        arrangement_sha256: arrangement_sha256.clone(),
        report,
        averaged_posteriors,
        level2_loss_curves: level2.into_iter().map(|m| m.loss_curve).collect(),
        consensus_loss_curve: consensus_report.loss_curve,
    };
    write_json(&dir.join(RESULTS_FILE), &results)?;
    write_metrics_csv(&dir.join(METRICS_CSV), &results.rows())?;
    write_json(
        &dir.join(MANIFEST_FILE),
        &Manifest {
            config_hash: results.config_hash.clone(),
            arrangement_file: ARRANGEMENT_FILE.into(),
            arrangement_sha256,
            checkpoints,
        },
    )?;
    Ok(results)
}

/// Reloads the checkpoints of a finished run and scores them on its test split.
pub fn evaluate_run(dir: &Path) -> Result<MetricsReport> {
    let cfg_path = dir.join(CONFIG_FILE);
    let cfg: RunConfig = serde_json::from_str(&fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?)?;
    let data = load_dataset(&cfg)?;
    let c = data.num_classes;
    let selection = Selection::load(&dir.join(ARRANGEMENT_FILE))?;
    let test_images = encode_all(&data.test, &selection.set, cfg.frames)?;
    let labels: Vec<usize> = data.test.iter().map(|s| s.label).collect();
    let all: Vec<usize> = (0..labels.len()).collect();
    let mut test_post = Vec::new();
    for (l, images) in test_images.iter().enumerate() {
        let mut model = Model::<f32>::level2(cfg.classifier, c, 0)?;
        model.load_params(&dir.join(level2_checkpoint(l)))?;
        test_post.push(posteriors_for(&model, images, &all, cfg.batch_size)?);
    }
    let mut consensus = Model::<f32>::consensus(ConsensusConfig::new(cfg.arrangements, c), 0)?;
    consensus.load_params(&dir.join(CONSENSUS_CHECKPOINT))?;
    let rows = consensus_inputs(&test_post, c)?;
    let post = predict(
        &consensus,
        rows.len(),
        |chunk| posterior_batch(&chunk.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>()),
        cfg.batch_size,
    )?;
    let individual: Vec<ConfusionMatrix> = test_post
        .iter()
        .map(|p| ConfusionMatrix::from_posteriors(c, &labels, p))
        .collect();
    compute_metrics(&individual, &ConfusionMatrix::from_posteriors(c, &labels, &post))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub arrangements: usize,
    pub arrangement_score: u64,
    pub average: Metrics,
    pub consensus: Metrics,
}

/// One pipeline per `L`, each in `output_dir/L{l}`, all from the same seed.
pub fn run_ablation(cfg: &RunConfig, l_values: &[usize]) -> Result<Vec<AblationRow>> {
    if l_values.is_empty() {
        return Err(Error::Config("ablation needs at least one L value".into()));
    }
    let root = cfg.output_dir.clone();
    with_failure_marker(&root, cfg, || {
        let mut rows = Vec::with_capacity(l_values.len());
        for &l in l_values {
            let run = RunConfig {
                arrangements: l,
                output_dir: root.join(format!("L{l}")),
                ..cfg.clone()
            };
            let r = run_pipeline(&run)?;
            rows.push(AblationRow {
                arrangements: l,
                arrangement_score: r.arrangement_score,
                average: r.report.average,
                consensus: r.report.consensus,
            });
        }
        write_json(&root.join("ablation.json"), &rows)?;
        let mut w = csv::Writer::from_path(root.join("ablation.csv"))?;
        w.write_record(["L", "score", "average_accuracy", "consensus_accuracy", "consensus_precision", "consensus_recall", "consensus_f_score"])?;
        for r in &rows {
            w.write_record([
                r.arrangements.to_string(),
                r.arrangement_score.to_string(),
                r.average.accuracy.to_string(),
                r.consensus.accuracy.to_string(),
                r.consensus.precision.to_string(),
                r.consensus.recall.to_string(),
                r.consensus.f_score.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&root, e))?;
        Ok(rows)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KindSummary {
    pub classifier: ClassifierKind,
    pub average: Metrics,
    pub consensus: Metrics,
    /// Consensus accuracy minus average accuracy.
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub arrangement_sha256: String,
    pub kinds: Vec<KindSummary>,
}

impl Comparison {
    /// Rows in the order average-of-CNN, consensus-of-CNN, average-of-ViT,
    /// consensus-of-ViT.
    pub fn rows(&self) -> Vec<(String, Metrics)> {
        self.kinds
            .iter()
            .flat_map(|k| {
                [
                    (format!("average_of_{}", k.classifier), k.average),
                    (format!("consensus_of_{}", k.classifier), k.consensus),
                ]
            })
            .collect()
    }
}

/// Runs the pipeline with the CNN and with the ViT on one shared arrangement
/// set, in `output_dir/cnn` and `output_dir/vit`.
pub fn compare_classifiers(cfg: &RunConfig) -> Result<Comparison> {
    cfg.validate()?;
    let root = cfg.output_dir.clone();
    with_failure_marker(&root, cfg, || {
        prepare_arrangements(cfg, &root)?;
        let shared = root.join(ARRANGEMENT_FILE);
        let shared_hash = file_sha256(&shared)?;
        let mut kinds = Vec::new();
        for kind in [ClassifierKind::Cnn, ClassifierKind::Vit] {
            let run = RunConfig {
                classifier: kind,
                arrangement_file: Some(shared.clone()),
                output_dir: root.join(kind.to_string()),
                ..cfg.clone()
            };
            let r = run_pipeline(&run)?;
            if r.arrangement_sha256 != shared_hash {
                return Err(Error::Contract(format!("{kind} run used a different arrangement set")));
            }
            kinds.push(KindSummary {
                classifier: kind,
                average: r.report.average,
                consensus: r.report.consensus,
                gap: r.report.consensus.accuracy - r.report.average.accuracy,
            });
        }
        let cmp = Comparison {
            arrangement_sha256: shared_hash,
            kinds,
        };
        write_json(&root.join("comparison.json"), &cmp)?;
        write_metrics_csv(&root.join("comparison.csv"), &cmp.rows())?;
        Ok(cmp)
    })
}

/// Plain-text table of one run directory, an ablation or a comparison.
pub fn render_report(dir: &Path) -> Result<String> {
    let mut out = String::new();
    let table = |out: &mut String, rows: &[(String, Metrics)]| {
        writeln!(out, "{:<32} {:>9} {:>9} {:>9} {:>9}", "row", "accuracy", "precision", "recall", "f_score").unwrap();
        for (name, m) in rows {
            writeln!(
                out,
                "{name:<32} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
                m.accuracy, m.precision, m.recall, m.f_score
            )
            .unwrap();
        }
    };
    if dir.join(RESULTS_FILE).exists() {
        let r = RunResults::load(dir)?;
        writeln!(
            out,
            "{} L={} train={} test={} score={} config={}",
            r.config.classifier,
            r.config.arrangements,
            r.counts.level2_train,
            r.counts.test,
            r.arrangement_score,
            &r.config_hash[..12]
        )
        .unwrap();
        table(&mut out, &r.rows());
    } else if dir.join("comparison.json").exists() {
        let path = dir.join("comparison.json");
        let cmp: Comparison = serde_json::from_str(&fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?)?;
        table(&mut out, &cmp.rows());
        for k in &cmp.kinds {
            writeln!(out, "gap {}: {:+.4}", k.classifier, k.gap).unwrap();
        }
    } else if dir.join("ablation.json").exists() {
        let path = dir.join("ablation.json");
        let rows: Vec<AblationRow> = serde_json::from_str(&fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?)?;
        writeln!(out, "{:>4} {:>8} {:>9} {:>9}", "L", "score", "average", "consensus").unwrap();
        for r in rows {
            writeln!(
                out,
                "{:>4} {:>8} {:>9.4} {:>9.4}",
                r.arrangements, r.arrangement_score, r.average.accuracy, r.consensus.accuracy
            )
            .unwrap();
        }
    } else {
        return Err(Error::Config(format!("{} holds no run, comparison or ablation", dir.display())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = RunConfig {
            arrangements: 5,
            consensus_epochs: Some(3),
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let partial = RunConfig::from_toml("arrangements = 3\nepochs = 2\n[dataset]\nkind = \"synthetic\"\nper_class = 4\n").unwrap();
        assert_eq!((partial.arrangements, partial.epochs, partial.draws), (3, 2, 1000));
        assert!(RunConfig::from_toml("arangements = 3").is_err());
    }

    #[test]
    fn hash_ignores_output_dir_and_workers() {
        let a = RunConfig::default();
        let b = RunConfig {
            output_dir: "elsewhere".into(),
            workers: 3,
            ..a.clone()
        };
        let c = RunConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate().is_ok());
        for bad in [
            RunConfig { arrangements: 0, ..RunConfig::default() },
            RunConfig { draws: 0, ..RunConfig::default() },
            RunConfig { frames: 30, ..RunConfig::default() },
            RunConfig { consensus_holdout: 1.0, ..RunConfig::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn holdout_partitions_the_training_split() {
        let cfg = RunConfig {
            consensus_holdout: 0.25,
            ..RunConfig::default()
        };
        let (l2, l3) = holdout_split(&cfg, 40);
        assert_eq!((l2.len(), l3.len()), (30, 10));
        let mut all: Vec<usize> = l2.iter().chain(&l3).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
        let (l2, l3) = holdout_split(&RunConfig::default(), 7);
        assert_eq!(l2, l3);
    }
}
