use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::init::fan_in_uniform;
use crate::autodiff::{Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusConfig {
    /// Number of level-2 classifiers feeding the head.
    pub arrangements: usize,
    pub num_classes: usize,
    pub hidden: usize,
}

impl ConsensusConfig {
    pub fn new(arrangements: usize, num_classes: usize) -> Self {
        ConsensusConfig {
            arrangements,
            num_classes,
            hidden: 512,
        }
    }

    pub fn input_width(&self) -> usize {
        self.arrangements * self.num_classes
    }
}

/// Input layer of `L * c` posteriors, one ReLU hidden layer, `c` outputs.
#[derive(Clone, Debug)]
pub struct ConsensusMlp {
    pub config: ConsensusConfig,
    hidden: (ParamId, ParamId),
    output: (ParamId, ParamId),
}

impl ConsensusMlp {
    pub fn new<T: Real>(config: ConsensusConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<Self> {
        if config.arrangements == 0 || config.num_classes == 0 || config.hidden == 0 {
            return Err(Error::Config(format!("degenerate consensus config {config:?}")));
        }
        let (i, h, o) = (config.input_width(), config.hidden, config.num_classes);
        let hidden = (
            store.add("hidden.weight", fan_in_uniform(&[i, h], i, rng)),
            store.add("hidden.bias", Tensor::zeros(&[h])),
        );
        let output = (
            store.add("output.weight", fan_in_uniform(&[h, o], h, rng)),
            store.add("output.bias", Tensor::zeros(&[o])),
        );
        Ok(ConsensusMlp { config, hidden, output })
    }

    /// Logits for concatenated posteriors `[B, L * c]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, posteriors: Var) -> Result<Var> {
        let s = g.shape(posteriors).to_vec();
        if s.len() != 2 || s[1] != self.config.input_width() {
            return Err(Error::dim(
                "consensus_forward",
                format!("expected [B, {}], got {s:?}", self.config.input_width()),
            ));
        }
        let (w, b) = (g.param(store, self.hidden.0), g.param(store, self.hidden.1));
        let x = g.matmul(posteriors, w)?;
        let x = g.add_trailing(x, b)?;
        let x = g.relu(x);
        let (w, b) = (g.param(store, self.output.0), g.param(store, self.output.1));
        let x = g.matmul(x, w)?;
        g.add_trailing(x, b)
    }
}
