use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::init::{glorot_uniform, truncated_normal};
use crate::autodiff::{Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::error::{Error, Result};

const TOKEN_INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VitConfig {
    pub image_size: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    pub mlp_hidden: usize,
    pub num_classes: usize,
    pub dropout_p: f64,
}

impl Default for VitConfig {
    fn default() -> Self {
        VitConfig {
            image_size: 25,
            channels: 3,
            patch_size: 6,
            embed_dim: 64,
            num_blocks: 8,
            num_heads: 4,
            mlp_hidden: 128,
            num_classes: 14,
            dropout_p: 0.1,
        }
    }
}

impl VitConfig {
    /// Side length after zero padding to a multiple of the patch size.
    pub fn padded_size(&self) -> usize {
        self.image_size.div_ceil(self.patch_size) * self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        let side = self.padded_size() / self.patch_size;
        side * side
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.num_heads == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "embed_dim {} must be divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        Ok(())
    }

    /// Closed-form number of trainable scalars.
    pub fn param_count(&self) -> usize {
        let d = self.embed_dim;
        let embed = self.patch_dim() * d + d;
        let tokens = d + (self.num_patches() + 1) * d;
        let block = 2 * d // first norm
            + d * 3 * d + 3 * d // fused qkv
            + d * d + d // output projection
            + 2 * d // second norm
            + d * self.mlp_hidden + self.mlp_hidden
            + self.mlp_hidden * d + d;
        let head = 2 * d + d * self.num_classes + self.num_classes;
        embed + tokens + self.num_blocks * block + head
    }
}

#[derive(Clone, Debug)]
struct Block {
    ln1_g: ParamId,
    ln1_b: ParamId,
    qkv_w: ParamId,
    qkv_b: ParamId,
    proj_w: ParamId,
    proj_b: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    fc1_w: ParamId,
    fc1_b: ParamId,
    fc2_w: ParamId,
    fc2_b: ParamId,
}

/// Pre-norm vision transformer with a class token readout.
#[derive(Clone, Debug)]
pub struct Vit {
    pub config: VitConfig,
    patch_w: ParamId,
    patch_b: ParamId,
    cls_token: ParamId,
    pos_embed: ParamId,
    blocks: Vec<Block>,
    norm_g: ParamId,
    norm_b: ParamId,
    head_w: ParamId,
    head_b: ParamId,
}

impl Vit {
    pub fn new<T: Real>(config: VitConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let patch_w = store.add("patch_embed.weight", glorot_uniform(&[config.patch_dim(), d], rng));
        let patch_b = store.add("patch_embed.bias", Tensor::zeros(&[d]));
        let cls_token = store.add("cls_token", truncated_normal(&[1, d], TOKEN_INIT_STD, rng));
        let pos_embed = store.add(
            "pos_embed",
            truncated_normal(&[config.num_patches() + 1, d], TOKEN_INIT_STD, rng),
        );
        let mut weight =
            |store: &mut ParamStore<T>, name: String, shape: &[usize]| store.add(name, glorot_uniform(shape, rng));
        let mut blocks = Vec::with_capacity(config.num_blocks);
        for i in 0..config.num_blocks {
            let p = format!("blocks.{i}");
            blocks.push(Block {
                ln1_g: store.add(format!("{p}.norm1.weight"), Tensor::full(&[d], T::one())),
                ln1_b: store.add(format!("{p}.norm1.bias"), Tensor::zeros(&[d])),
                qkv_w: weight(store, format!("{p}.attn.qkv.weight"), &[d, 3 * d]),
                qkv_b: store.add(format!("{p}.attn.qkv.bias"), Tensor::zeros(&[3 * d])),
                proj_w: weight(store, format!("{p}.attn.proj.weight"), &[d, d]),
                proj_b: store.add(format!("{p}.attn.proj.bias"), Tensor::zeros(&[d])),
                ln2_g: store.add(format!("{p}.norm2.weight"), Tensor::full(&[d], T::one())),
                ln2_b: store.add(format!("{p}.norm2.bias"), Tensor::zeros(&[d])),
                fc1_w: weight(store, format!("{p}.mlp.fc1.weight"), &[d, config.mlp_hidden]),
                fc1_b: store.add(format!("{p}.mlp.fc1.bias"), Tensor::zeros(&[config.mlp_hidden])),
                fc2_w: weight(store, format!("{p}.mlp.fc2.weight"), &[config.mlp_hidden, d]),
                fc2_b: store.add(format!("{p}.mlp.fc2.bias"), Tensor::zeros(&[d])),
            });
        }
        let norm_g = store.add("norm.weight", Tensor::full(&[d], T::one()));
        let norm_b = store.add("norm.bias", Tensor::zeros(&[d]));
        let head_w = weight(store, "head.weight".into(), &[d, config.num_classes]);
        let head_b = store.add("head.bias", Tensor::zeros(&[config.num_classes]));
        Ok(Vit {
            config,
            patch_w,
            patch_b,
            cls_token,
            pos_embed,
            blocks,
            norm_g,
            norm_b,
            head_w,
            head_b,
        })
    }

    /// Logits `[B, classes]` for images `[B, H, W, C]` with values in `[0, 1]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, images: Var) -> Result<Var> {
        let s = g.shape(images).to_vec();
        let c = &self.config;
        if s.len() != 4 || s[1] != c.image_size || s[2] != c.image_size || s[3] != c.channels {
            return Err(Error::dim(
                "vit_forward",
                format!("expected [B, {0}, {0}, {1}], got {s:?}", c.image_size, c.channels),
            ));
        }
        let patches = g.patchify(images, c.patch_size)?;
        self.forward_patches(g, store, patches)
    }

    /// Logits for already patchified input `[B, patches, patch_dim]`.
    pub fn forward_patches<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, patches: Var) -> Result<Var> {
        let batch = g.shape(patches)[0];
        let d = self.config.embed_dim;
        let w = g.param(store, self.patch_w);
        let b = g.param(store, self.patch_b);
        let x = g.matmul(patches, w)?;
        let x = g.add_trailing(x, b)?;
        let cls = g.param(store, self.cls_token);
        let cls = g.expand(cls, batch);
        let x = g.concat(&[cls, x], 1)?;
        let pos = g.param(store, self.pos_embed);
        let mut x = g.add_trailing(x, pos)?;
        for block in &self.blocks {
            x = self.block(g, store, block, x)?;
        }
        let ng = g.param(store, self.norm_g);
        let nb = g.param(store, self.norm_b);
        let x = g.layer_norm(x, ng, nb)?;
        let cls_out = g.slice(x, 1, 0, 1)?;
        let cls_out = g.reshape(cls_out, &[batch, d])?;
        let hw = g.param(store, self.head_w);
        let hb = g.param(store, self.head_b);
        let logits = g.matmul(cls_out, hw)?;
        g.add_trailing(logits, hb)
    }

    fn block<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, p: &Block, x: Var) -> Result<Var> {
        let drop = self.config.dropout_p;
        let ln1_g = g.param(store, p.ln1_g);
        let ln1_b = g.param(store, p.ln1_b);
        let h = g.layer_norm(x, ln1_g, ln1_b)?;
        let h = self.attention(g, store, p, h)?;
        let h = g.dropout(h, drop);
        let x = g.add(x, h)?;

        let ln2_g = g.param(store, p.ln2_g);
        let ln2_b = g.param(store, p.ln2_b);
        let h = g.layer_norm(x, ln2_g, ln2_b)?;
        let w1 = g.param(store, p.fc1_w);
        let b1 = g.param(store, p.fc1_b);
        let h = g.matmul(h, w1)?;
        let h = g.add_trailing(h, b1)?;
        let h = g.gelu(h);
        let h = g.dropout(h, drop);
        let w2 = g.param(store, p.fc2_w);
        let b2 = g.param(store, p.fc2_b);
        let h = g.matmul(h, w2)?;
        let h = g.add_trailing(h, b2)?;
        let h = g.dropout(h, drop);
        g.add(x, h)
    }

    fn attention<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, p: &Block, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (batch, tokens, d) = (s[0], s[1], s[2]);
        let heads = self.config.num_heads;
        let dh = d / heads;

        let w = g.param(store, p.qkv_w);
        let b = g.param(store, p.qkv_b);
        let qkv = g.matmul(x, w)?;
        let qkv = g.add_trailing(qkv, b)?;
        let qkv = g.reshape(qkv, &[batch, tokens, 3, heads, dh])?;
        // [3, B, heads, tokens, dh]
        let qkv = g.permute(qkv, &[2, 0, 3, 1, 4])?;
        let mut parts = [qkv; 3];
        for (i, part) in parts.iter_mut().enumerate() {
            let t = g.slice(qkv, 0, i, 1)?;
            *part = g.reshape(t, &[batch * heads, tokens, dh])?;
        }
        let [q, k, v] = parts;

        let scores = g.bmm(q, k, false, true)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let attn = g.softmax(scores);
        let out = g.bmm(attn, v, false, false)?;
        let out = g.reshape(out, &[batch, heads, tokens, dh])?;
        let out = g.permute(out, &[0, 2, 1, 3])?;
        let out = g.reshape(out, &[batch, tokens, d])?;

        let pw = g.param(store, p.proj_w);
        let pb = g.param(store, p.proj_b);
        let out = g.matmul(out, pw)?;
        g.add_trailing(out, pb)
    }

    /// Learned position embeddings, `[patches + 1, embed_dim]`; row 0 belongs to the class token.
    pub fn pos_embed_id(&self) -> ParamId {
        self.pos_embed
    }
}
