use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::init::fan_in_uniform;
use crate::autodiff::{Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub image_size: usize,
    pub channels: usize,
    pub kernel: usize,
    pub conv_filters: [usize; 2],
    pub dense: [usize; 2],
    pub num_classes: usize,
    pub dropout_p: f64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            image_size: 25,
            channels: 3,
            kernel: 3,
            conv_filters: [32, 64],
            dense: [128, 64],
            num_classes: 14,
            dropout_p: 0.5,
        }
    }
}

impl CnnConfig {
    /// Spatial side after both conv/pool blocks.
    pub fn feature_side(&self) -> usize {
        let after_first = (self.image_size + 1 - self.kernel) / 2;
        (after_first + 1 - self.kernel) / 2
    }

    pub fn flat_features(&self) -> usize {
        self.conv_filters[1] * self.feature_side().pow(2)
    }
}

/// Two conv + max-pool blocks, then dense, dense, dropout, dense.
#[derive(Clone, Debug)]
pub struct Cnn {
    pub config: CnnConfig,
    conv: [(ParamId, ParamId); 2],
    dense: [(ParamId, ParamId); 3],
}

impl Cnn {
    pub fn new<T: Real>(config: CnnConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<Self> {
        if config.image_size < config.kernel || config.feature_side() == 0 {
            return Err(Error::Config(format!(
                "image size {} too small for two {}x{} conv/pool blocks",
                config.image_size, config.kernel, config.kernel
            )));
        }
        let k = config.kernel;
        let mut in_c = config.channels;
        let mut conv = Vec::new();
        for (i, &out_c) in config.conv_filters.iter().enumerate() {
            let fan_in = in_c * k * k;
            let w = store.add(format!("conv{i}.weight"), fan_in_uniform(&[out_c, in_c, k, k], fan_in, rng));
            let b = store.add(format!("conv{i}.bias"), Tensor::zeros(&[out_c]));
            conv.push((w, b));
            in_c = out_c;
        }
        let widths = [config.flat_features(), config.dense[0], config.dense[1], config.num_classes];
        let mut dense = Vec::new();
        for i in 0..3 {
            let w = store.add(format!("dense{i}.weight"), fan_in_uniform(&[widths[i], widths[i + 1]], widths[i], rng));
            let b = store.add(format!("dense{i}.bias"), Tensor::zeros(&[widths[i + 1]]));
            dense.push((w, b));
        }
        Ok(Cnn {
            config,
            conv: [conv[0], conv[1]],
            dense: [dense[0], dense[1], dense[2]],
        })
    }

    /// Logits for images `[B, C, H, W]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, images: Var) -> Result<Var> {
        let s = g.shape(images).to_vec();
        let c = &self.config;
        if s.len() != 4 || s[1] != c.channels || s[2] != c.image_size || s[3] != c.image_size {
            return Err(Error::dim(
                "cnn_forward",
                format!("expected [B, {1}, {0}, {0}], got {s:?}", c.image_size, c.channels),
            ));
        }
        let mut x = images;
        for &(w, b) in &self.conv {
            let w = g.param(store, w);
            let b = g.param(store, b);
            x = g.conv2d(x, w, b)?;
            x = g.relu(x);
            x = g.maxpool2d(x)?;
        }
        x = g.reshape(x, &[s[0], c.flat_features()])?;
        for (i, &(w, b)) in self.dense.iter().enumerate() {
            if i == 2 {
                x = g.dropout(x, c.dropout_p);
            }
            let w = g.param(store, w);
            let b = g.param(store, b);
            x = g.matmul(x, w)?;
            x = g.add_trailing(x, b)?;
            if i < 2 {
                x = g.relu(x);
            }
        }
        Ok(x)
    }
}
