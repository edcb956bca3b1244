//! Level-2 classifiers (ViT, CNN baseline) and the level-3 consensus head,
//! with their shared training and inference loops.

mod cnn;
mod consensus;
mod vit;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use cnn::{Cnn, CnnConfig};
pub use consensus::{ConsensusConfig, ConsensusMlp};
pub use vit::{Vit, VitConfig};

use crate::autodiff::{checkpoint, softmax_in_place, Adam, Graph, ParamStore, Real, Tensor};
use crate::error::{Error, Result};
use crate::pseudo_image::{PseudoImage, CHANNELS};
use crate::seed;

/// Class probabilities of one sample.
pub type Posterior = Vec<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Vit,
    Cnn,
}

impl std::fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClassifierKind::Vit => "vit",
            ClassifierKind::Cnn => "cnn",
        })
    }
}

#[derive(Clone, Debug)]
pub enum Architecture {
    Vit(Vit),
    Cnn(Cnn),
    Consensus(ConsensusMlp),
}

/// An architecture together with its parameters.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub arch: Architecture,
    pub params: ParamStore<T>,
}

impl<T: Real> Model<T> {
    pub fn vit(config: VitConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vit = Vit::new(config, &mut params, &mut rng)?;
        Ok(Model {
            arch: Architecture::Vit(vit),
            params,
        })
    }

    pub fn cnn(config: CnnConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cnn = Cnn::new(config, &mut params, &mut rng)?;
        Ok(Model {
            arch: Architecture::Cnn(cnn),
            params,
        })
    }

    pub fn consensus(config: ConsensusConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = ConsensusMlp::new(config, &mut params, &mut rng)?;
        Ok(Model {
            arch: Architecture::Consensus(mlp),
            params,
        })
    }

    pub fn level2(kind: ClassifierKind, num_classes: usize, seed: u64) -> Result<Self> {
        match kind {
            ClassifierKind::Vit => Self::vit(
                VitConfig {
                    num_classes,
                    ..VitConfig::default()
                },
                seed,
            ),
            ClassifierKind::Cnn => Self::cnn(
                CnnConfig {
                    num_classes,
                    ..CnnConfig::default()
                },
                seed,
            ),
        }
    }

    pub fn num_classes(&self) -> usize {
        match &self.arch {
            Architecture::Vit(m) => m.config.num_classes,
            Architecture::Cnn(m) => m.config.num_classes,
            Architecture::Consensus(m) => m.config.num_classes,
        }
    }

    /// Logits for a batch laid out as the architecture expects.
    pub fn logits(&self, g: &mut Graph<T>, store: &ParamStore<T>, input: crate::autodiff::Var) -> Result<crate::autodiff::Var> {
        match &self.arch {
            Architecture::Vit(m) => m.forward(g, store, input),
            Architecture::Cnn(m) => m.forward(g, store, input),
            Architecture::Consensus(m) => m.forward(g, store, input),
        }
    }

    /// Batch tensor for level-2 images in this architecture's layout.
    pub fn image_batch(&self, images: &[&PseudoImage]) -> Result<Tensor<T>> {
        match &self.arch {
            Architecture::Vit(_) => images_hwc(images),
            Architecture::Cnn(_) => images_chw(images),
            Architecture::Consensus(_) => Err(Error::Contract("consensus head takes posteriors, not images".into())),
        }
    }

    /// Class probabilities for every row of `input`, evaluation mode.
    pub fn posteriors(&self, input: Tensor<T>) -> Result<Vec<Posterior>> {
        let mut g = Graph::eval();
        let x = g.constant(input);
        let logits = self.logits(&mut g, &self.params, x)?;
        let c = self.num_classes();
        Ok(g.value(logits)
            .data()
            .chunks(c)
            .map(|row| {
                let mut p: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
                softmax_in_place(&mut p);
                p
            })
            .collect())
    }

    /// Posterior for one image.
    pub fn classify(&self, image: &PseudoImage) -> Result<Posterior> {
        let batch = self.image_batch(&[image])?;
        Ok(self.posteriors(batch)?.remove(0))
    }
}

impl Model<f32> {
    pub fn save(&self, path: &Path, model_id: &str) -> Result<()> {
        checkpoint::save(path, model_id, &self.params)
    }

    /// Loads parameters saved from a model of the same architecture.
    pub fn load_params(&mut self, path: &Path) -> Result<String> {
        let (id, store) = checkpoint::load(path)?;
        self.params.load_values_from(&store)?;
        Ok(id)
    }
}

/// `[B, H, W, C]` with values scaled to `[0, 1]`.
pub fn images_hwc<T: Real>(images: &[&PseudoImage]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| Error::Contract("empty image batch".into()))?;
    let (h, w) = (first.rows(), first.cols());
    let mut data = Vec::with_capacity(images.len() * h * w * CHANNELS);
    for img in images {
        if (img.rows(), img.cols()) != (h, w) {
            return Err(Error::dim("image_batch", "images differ in size"));
        }
        data.extend(img.data().iter().map(|&v| T::from_real(v as f64 / 255.0)));
    }
    Tensor::new(&[images.len(), h, w, CHANNELS], data)
}

/// `[B, C, H, W]` with values scaled to `[0, 1]`.
pub fn images_chw<T: Real>(images: &[&PseudoImage]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| Error::Contract("empty image batch".into()))?;
    let (h, w) = (first.rows(), first.cols());
    let mut data = Vec::with_capacity(images.len() * h * w * CHANNELS);
    for img in images {
        if (img.rows(), img.cols()) != (h, w) {
            return Err(Error::dim("image_batch", "images differ in size"));
        }
        for ch in 0..CHANNELS {
            data.extend(img.data().iter().skip(ch).step_by(CHANNELS).map(|&v| T::from_real(v as f64 / 255.0)));
        }
    }
    Tensor::new(&[images.len(), CHANNELS, h, w], data)
}

/// Row-wise concatenation of per-classifier posteriors, `[B, L * c]`.
pub fn posterior_batch<T: Real>(rows: &[Vec<f64>]) -> Result<Tensor<T>> {
    let width = rows.first().map(|r| r.len()).ok_or_else(|| Error::Contract("empty posterior batch".into()))?;
    let mut data = Vec::with_capacity(rows.len() * width);
    for r in rows {
        if r.len() != width {
            return Err(Error::dim("posterior_batch", "rows differ in width"));
        }
        data.extend(r.iter().map(|&v| T::from_real(v)));
    }
    Tensor::new(&[rows.len(), width], data)
}

/// Concatenates one posterior per arrangement into a consensus input row.
pub fn concat_posteriors(posteriors: &[Posterior], num_classes: usize) -> Result<Vec<f64>> {
    if posteriors.is_empty() || posteriors.iter().any(|p| p.len() != num_classes) {
        return Err(Error::dim(
            "consensus_forward",
            format!("expected posteriors of length {num_classes}, got {:?}", posteriors.iter().map(|p| p.len()).collect::<Vec<_>>()),
        ));
    }
    Ok(posteriors.concat())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            lr: 0.001,
            batch_size: 64,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss of every epoch.
    pub loss_curve: Vec<f64>,
}

/// Minimizes cross-entropy with Adam over shuffled mini-batches.
///
/// `batch` builds the input tensor for a list of sample indices. The run is
/// a pure function of the model's initial parameters, the data and `seed`.
pub fn train<T: Real>(
    model: &mut Model<T>,
    n_samples: usize,
    labels: &[usize],
    batch: impl Fn(&[usize]) -> Result<Tensor<T>>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    if n_samples == 0 {
        return Err(Error::Contract("training set is empty".into()));
    }
    if labels.len() != n_samples {
        return Err(Error::Contract(format!("{} labels for {n_samples} samples", labels.len())));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..n_samples).collect();
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[seed::label("shuffle"), epoch as u64]));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let input = batch(chunk)?;
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new(true, seed::derive(seed, &[seed::label("dropout"), epoch as u64, step as u64]));
            let x = g.constant(input);
            let logits = model.logits(&mut g, &model.params, x)?;
            let loss = g.cross_entropy(logits, &y)?;
            let value = g.value(loss).item().as_f64();
            if !value.is_finite() {
                return Err(Error::Contract(format!("non-finite loss at epoch {epoch}, step {step}")));
            }
            total += value * chunk.len() as f64;
            model.params.zero_grad();
            g.backward_into(loss, &mut model.params)?;
            // release the graph's views of the parameters before updating them in place
            drop(g);
            adam.step(&mut model.params)?;
        }
        report.loss_curve.push(total / n_samples as f64);
    }
    model.params.zero_grad();
    Ok(report)
}

/// Posteriors for `n_samples` inputs, evaluated in batches.
pub fn predict<T: Real>(
    model: &Model<T>,
    n_samples: usize,
    batch: impl Fn(&[usize]) -> Result<Tensor<T>>,
    batch_size: usize,
) -> Result<Vec<Posterior>> {
    let idx: Vec<usize> = (0..n_samples).collect();
    let mut out = Vec::with_capacity(n_samples);
    for chunk in idx.chunks(batch_size.max(1)) {
        out.extend(model.posteriors(batch(chunk)?)?);
    }
    Ok(out)
}

pub fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}
