//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass as a node holding
//! its output value and whatever the backward rule needs. [`Graph::backward`]
//! walks the tape in reverse. Graphs are built per mini-batch and dropped
//! afterwards; parameters live in a [`ParamStore`] and enter a graph through
//! [`Graph::param`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Real, Tensor};
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var },
    Bmm { a: Var, b: Var, ta: bool, tb: bool },
    Add { a: Var, b: Var },
    AddTrailing { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, s: T },
    Conv2d { x: Var, w: Var, b: Var },
    MaxPool2d { x: Var, argmax: Vec<usize> },
    Relu { x: Var },
    Gelu { x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Softmax { x: Var },
    Dropout { x: Var, mask: Vec<T> },
    Reshape { x: Var },
    Permute { x: Var, perm: Vec<usize> },
    Patchify { x: Var, patch: usize },
    Concat { xs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Expand { x: Var },
    Sum { x: Var },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    training: bool,
    rng: ChaCha8Rng,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Walks a permutation of `shape`: calls `f(src, dst)` for every output
/// offset `dst` with its input offset `src`.
fn permute_walk(shape: &[usize], perm: &[usize], mut f: impl FnMut(usize, usize)) -> Vec<usize> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let numel: usize = shape.iter().product();
    if numel == 0 {
        return out_shape;
    }
    let rank = shape.len();
    if rank == 0 {
        f(0, 0);
        return out_shape;
    }
    let inner = out_shape[rank - 1];
    let inner_stride = src[rank - 1];
    let mut counter = vec![0usize; rank - 1];
    let mut offset = 0usize;
    let mut dst = 0usize;
    while dst < numel {
        for j in 0..inner {
            f(offset + j * inner_stride, dst + j);
        }
        dst += inner;
        for ax in (0..rank - 1).rev() {
            counter[ax] += 1;
            offset += src[ax];
            if counter[ax] < out_shape[ax] {
                break;
            }
            offset -= src[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    out_shape
}

fn gelu_parts<T: Real>(x: T) -> (T, T) {
    let c = T::from_real(0.797_884_560_802_865_4); // sqrt(2 / pi)
    let a = T::from_real(0.044715);
    let half = T::from_real(0.5);
    let one = T::one();
    // tanh through exp, which is much cheaper than the libm tanh
    let two = T::from_real(2.0);
    let t = one - two / (one + (two * c * (x + a * x * x * x)).exp_fast());
    let y = half * x * (one + t);
    let dy = half * (one + t) + half * x * (one - t * t) * c * (one + T::from_real(3.0) * a * x * x);
    (y, dy)
}

impl<T: Real> Graph<T> {
    pub fn new(training: bool, seed: u64) -> Self {
        Graph {
            nodes: Vec::with_capacity(256),
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Evaluation-mode graph: dropout is the identity.
    pub fn eval() -> Self {
        Self::new(false, 0)
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        debug_assert!(value.all_finite(), "non-finite value produced");
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf_node(&mut self, value: Tensor<T>, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    /// Untracked input: no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf_node(value, false, None)
    }

    /// Tracked input whose gradient can be read from [`Gradients`].
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.leaf_node(value, true, None)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.leaf_node(store.value(id).clone(), true, Some(id))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// `a [.., k] x b [k, n] -> [.., n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(Error::dim("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (k, n) = (sb[0], sb[1]);
        let rows = self.value(a).numel() / k;
        let mut out = vec![T::zero(); rows * n];
        gemm(false, false, rows, k, n, self.data(a), self.data(b), &mut out, false);
        let mut shape = sa;
        *shape.last_mut().unwrap() = n;
        Ok(self.push(Tensor::new(&shape, out)?, Op::MatMul { a, b }, &[a, b]))
    }

    /// Batched product of 3-D tensors, `op(a[i]) x op(b[i])` where `op`
    /// transposes the trailing two axes when the flag is set.
    pub fn bmm(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(Error::dim("bmm", format!("{sa:?} x {sb:?}")));
        }
        let (m, k) = if ta { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
        let (kb, n) = if tb { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != kb {
            return Err(Error::dim("bmm", format!("{sa:?} x {sb:?} (ta={ta}, tb={tb})")));
        }
        let batch = sa[0];
        let mut out = vec![T::zero(); batch * m * n];
        let (ad, bd) = (self.data(a), self.data(b));
        for i in 0..batch {
            gemm(
                ta,
                tb,
                m,
                k,
                n,
                &ad[i * m * k..(i + 1) * m * k],
                &bd[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        Ok(self.push(
            Tensor::new(&[batch, m, n], out)?,
            Op::Bmm { a, b, ta, tb },
            &[a, b],
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                "add",
                format!("{:?} + {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let out: Vec<T> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(&shape, out)?, Op::Add { a, b }, &[a, b]))
    }

    /// Adds `b` to every trailing block of `a`; `b`'s shape must be a suffix
    /// of `a`'s (bias and position-embedding broadcast).
    pub fn add_trailing(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::dim("add_bias", format!("{sa:?} + {sb:?}")));
        }
        let bd = self.data(b);
        let mut out = self.data(a).to_vec();
        for chunk in out.chunks_mut(bd.len()) {
            for (o, &v) in chunk.iter_mut().zip(bd) {
                *o += v;
            }
        }
        let shape = sa.to_vec();
        Ok(self.push(Tensor::new(&shape, out)?, Op::AddTrailing { a, b }, &[a, b]))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                "mul",
                format!("{:?} * {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let out: Vec<T> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(&shape, out)?, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::from_real(s);
        let out: Vec<T> = self.data(a).iter().map(|&x| x * s).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(&shape, out).unwrap(), Op::Scale { a, s }, &[a])
    }

    /// Stride-1 valid convolution: `x [B, C, H, W]`, `w [O, C, KH, KW]`, `b [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 4
            || sw.len() != 4
            || sx[1] != sw[1]
            || sb != [sw[0]]
            || sx[2] < sw[2]
            || sx[3] < sw[3]
        {
            return Err(Error::dim(
                "conv2d",
                format!("input {sx:?}, kernel {sw:?}, bias {sb:?}"),
            ));
        }
        let geo = ConvGeometry::new(sx, sw);
        let (xd, wd, bd) = (self.data(x), self.data(w), self.data(b));
        let mut out = vec![T::zero(); geo.batch * geo.out_c * geo.out_hw()];
        let mut cols = vec![T::zero(); geo.col_rows() * geo.out_hw()];
        for n in 0..geo.batch {
            geo.im2col(&xd[n * geo.in_len()..(n + 1) * geo.in_len()], &mut cols);
            let dst = &mut out[n * geo.out_c * geo.out_hw()..(n + 1) * geo.out_c * geo.out_hw()];
            for (o, row) in dst.chunks_mut(geo.out_hw()).enumerate() {
                row.fill(bd[o]);
            }
            gemm(false, false, geo.out_c, geo.col_rows(), geo.out_hw(), wd, &cols, dst, true);
        }
        let shape = [geo.batch, geo.out_c, geo.out_h, geo.out_w];
        Ok(self.push(Tensor::new(&shape, out)?, Op::Conv2d { x, w, b }, &[x, w, b]))
    }

    /// 2x2 max pooling with stride 2 over `[B, C, H, W]`; odd edges are dropped.
    pub fn maxpool2d(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[2] < 2 || s[3] < 2 {
            return Err(Error::dim("maxpool2d", format!("{s:?}")));
        }
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let (oh, ow) = (h / 2, w / 2);
        let xd = self.data(x);
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let base = p * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + 2 * i * w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * i + di) * w + 2 * j + dj;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        Ok(self.push(
            Tensor::new(&[s[0], s[1], oh, ow], out)?,
            Op::MaxPool2d { x, argmax },
            &[x],
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out: Vec<T> = self.data(x).iter().map(|&v| v.max(T::zero())).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::new(&shape, out).unwrap(), Op::Relu { x }, &[x])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out: Vec<T> = self
            .data(x)
            .iter()
            .map(|&v| gelu_parts(v).0)
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::new(&shape, out).unwrap(), Op::Gelu { x }, &[x])
    }

    /// Normalizes over the last axis, then applies `gamma * x + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let d = *s.last().unwrap_or(&0);
        if d == 0 || self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::dim(
                "layer_norm",
                format!(
                    "input {s:?}, gamma {:?}, beta {:?}",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        let (xd, gd, bd) = (self.data(x), self.data(gamma), self.data(beta));
        let rows = xd.len() / d;
        let mut out = vec![T::zero(); xd.len()];
        let mut xhat = vec![T::zero(); xd.len()];
        let mut rstd = Vec::with_capacity(rows);
        let inv_d = T::from_real(1.0 / d as f64);
        let eps = T::from_real(LAYER_NORM_EPS);
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gd[j] + bd[j];
            }
        }
        Ok(self.push(
            Tensor::new(&s, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let d = *s.last().unwrap();
        let mut out = self.data(x).to_vec();
        for row in out.chunks_mut(d) {
            softmax_in_place(row);
        }
        self.push(Tensor::new(&s, out).unwrap(), Op::Softmax { x }, &[x])
    }

    /// Inverted dropout; the identity outside training mode or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        if !self.training || p <= 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let scale = T::from_real(1.0 / keep);
        // keep with probability `keep`, resolved on 32-bit draws
        let threshold = (keep * 4_294_967_296.0).min(u32::MAX as f64) as u32;
        let n = self.value(x).numel();
        let mut mask = vec![T::zero(); n];
        for pair in mask.chunks_mut(2) {
            let bits: u64 = self.rng.random();
            for (k, m) in pair.iter_mut().enumerate() {
                if ((bits >> (32 * k)) as u32) < threshold {
                    *m = scale;
                }
            }
        }
        let out: Vec<T> = self
            .data(x)
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::new(&shape, out).unwrap(), Op::Dropout { x, mask }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x }, &[x]))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let mut seen = vec![false; s.len()];
        if perm.len() != s.len() || perm.iter().any(|&p| p >= s.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::dim("permute", format!("{s:?} by {perm:?}")));
        }
        let xd = self.data(x);
        let mut out = vec![T::zero(); xd.len()];
        let out_shape = permute_walk(&s, perm, |src, dst| out[dst] = xd[src]);
        Ok(self.push(
            Tensor::new(&out_shape, out)?,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            &[x],
        ))
    }

    /// Splits `x [B, H, W, C]` into non-overlapping `patch x patch` tiles,
    /// zero-padding the right and bottom edges up to a multiple of `patch`.
    /// Output is `[B, tiles, patch * patch * C]`, tiles in row-major order and
    /// each tile flattened as (row, col, channel).
    pub fn patchify(&mut self, x: Var, patch: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || patch == 0 {
            return Err(Error::dim("patchify", format!("{s:?} with patch {patch}")));
        }
        let geo = PatchGeometry::new(&s, patch);
        let xd = self.data(x);
        let mut out = vec![T::zero(); geo.batch * geo.tiles() * geo.tile_len()];
        geo.for_each(|src, dst| out[dst] = xd[src]);
        Ok(self.push(
            Tensor::new(&[geo.batch, geo.tiles(), geo.tile_len()], out)?,
            Op::Patchify { x, patch },
            &[x],
        ))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*xs.first().ok_or_else(|| Error::dim("concat", "no inputs"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::dim("concat", format!("axis {axis} of {first:?}")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != first.len()
                || s[..axis] != first[..axis]
                || s[axis + 1..] != first[axis + 1..]
            {
                return Err(Error::dim("concat", format!("{first:?} with {s:?}")));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let chunk = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.data(v)[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            xs,
        ))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::dim(
                "slice",
                format!("{s:?} axis {axis} [{start}, {})", start + len),
            ));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let xd = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * s[axis] + start) * inner;
            out.extend_from_slice(&xd[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Slice { x, axis, start },
            &[x],
        ))
    }

    /// Repeats `x` along a new leading axis of size `n`.
    pub fn expand(&mut self, x: Var, n: usize) -> Var {
        let mut shape = vec![n];
        shape.extend_from_slice(self.shape(x));
        let out = self.data(x).repeat(n);
        self.push(Tensor::new(&shape, out).unwrap(), Op::Expand { x }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.data(x).iter().copied().sum::<T>();
        self.push(Tensor::scalar(total), Op::Sum { x }, &[x])
    }

    /// Mean cross-entropy of `logits [B, c]` against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() || labels.iter().any(|&y| y >= s[1]) {
            return Err(Error::dim(
                "cross_entropy",
                format!("logits {s:?} with {} labels", labels.len()),
            ));
        }
        let c = s[1];
        let mut probs = self.data(logits).to_vec();
        let mut loss = 0.0;
        for (row, &y) in probs.chunks_mut(c).zip(labels) {
            softmax_in_place(row);
            loss -= row[y].as_f64().max(f64::MIN_POSITIVE).ln();
        }
        loss /= labels.len() as f64;
        Ok(self.push(
            Tensor::scalar(T::from_real(loss)),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Reverse pass from a scalar `loss`, returning gradients for every node
    /// that depends on a tracked leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else {
                continue;
            };
            self.backward_node(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Graph::backward`] and adds parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.backward(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Some(id), Some(g)) = (node.param, &grads.grads[i]) {
                store.accumulate_grad(id, g);
            }
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, dy: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        // Lazily allocated gradient buffer for an input, or None if untracked.
        let slot = |v: Var, grads: &mut [Option<Vec<T>>]| -> bool {
            if !nodes[v.0].requires_grad {
                return false;
            }
            if grads[v.0].is_none() {
                grads[v.0] = Some(vec![T::zero(); nodes[v.0].value.numel()]);
            }
            true
        };
        macro_rules! g {
            ($v:expr) => {
                grads[$v.0].as_mut().unwrap()
            };
        }
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let sb = self.shape(*b);
                let (k, n) = (sb[0], sb[1]);
                let rows = self.value(*a).numel() / k;
                if slot(*a, grads) {
                    gemm(false, true, rows, n, k, dy, self.data(*b), g!(a), true);
                }
                if slot(*b, grads) {
                    gemm(true, false, k, rows, n, self.data(*a), dy, g!(b), true);
                }
            }
            Op::Bmm { a, b, ta, tb } => {
                let (ta, tb) = (*ta, *tb);
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k) = if ta { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
                let n = if tb { sb[1] } else { sb[2] };
                let batch = sa[0];
                let (ad, bd) = (self.data(*a), self.data(*b));
                if slot(*a, grads) {
                    let ga = g!(a);
                    for t in 0..batch {
                        let dc = &dy[t * m * n..(t + 1) * m * n];
                        let bb = &bd[t * k * n..(t + 1) * k * n];
                        let da = &mut ga[t * m * k..(t + 1) * m * k];
                        if ta {
                            gemm(tb, true, k, n, m, bb, dc, da, true);
                        } else {
                            gemm(false, !tb, m, n, k, dc, bb, da, true);
                        }
                    }
                }
                if slot(*b, grads) {
                    let gb = g!(b);
                    for t in 0..batch {
                        let dc = &dy[t * m * n..(t + 1) * m * n];
                        let aa = &ad[t * m * k..(t + 1) * m * k];
                        let db = &mut gb[t * k * n..(t + 1) * k * n];
                        if tb {
                            gemm(true, ta, n, m, k, dc, aa, db, true);
                        } else {
                            gemm(!ta, false, k, m, n, aa, dc, db, true);
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    if slot(*v, grads) {
                        for (d, &s) in g!(v).iter_mut().zip(dy) {
                            *d += s;
                        }
                    }
                }
            }
            Op::AddTrailing { a, b } => {
                if slot(*a, grads) {
                    for (d, &s) in g!(a).iter_mut().zip(dy) {
                        *d += s;
                    }
                }
                if slot(*b, grads) {
                    let gb = g!(b);
                    let block = gb.len();
                    for chunk in dy.chunks(block) {
                        for (d, &s) in gb.iter_mut().zip(chunk) {
                            *d += s;
                        }
                    }
                }
            }
            Op::Mul { a, b } => {
                if slot(*a, grads) {
                    let bd = self.data(*b);
                    for ((d, &s), &o) in g!(a).iter_mut().zip(dy).zip(bd) {
                        *d += s * o;
                    }
                }
                if slot(*b, grads) {
                    let ad = self.data(*a);
                    for ((d, &s), &o) in g!(b).iter_mut().zip(dy).zip(ad) {
                        *d += s * o;
                    }
                }
            }
            Op::Scale { a, s } => {
                if slot(*a, grads) {
                    for (d, &v) in g!(a).iter_mut().zip(dy) {
                        *d += v * *s;
                    }
                }
            }
            Op::Conv2d { x, w, b } => {
                let geo = ConvGeometry::new(self.shape(*x), self.shape(*w));
                let hw = geo.out_hw();
                let per_out = geo.out_c * hw;
                if slot(*b, grads) {
                    let gb = g!(b);
                    for n in 0..geo.batch {
                        for (o, row) in dy[n * per_out..(n + 1) * per_out].chunks(hw).enumerate() {
                            gb[o] += row.iter().copied().sum::<T>();
                        }
                    }
                }
                let need_w = slot(*w, grads);
                let need_x = slot(*x, grads);
                if need_w || need_x {
                    let xd = self.data(*x);
                    let wd = self.data(*w);
                    let mut cols = vec![T::zero(); geo.col_rows() * hw];
                    let mut dcols = vec![T::zero(); geo.col_rows() * hw];
                    for n in 0..geo.batch {
                        let dyn_ = &dy[n * per_out..(n + 1) * per_out];
                        if need_w {
                            geo.im2col(&xd[n * geo.in_len()..(n + 1) * geo.in_len()], &mut cols);
                            gemm(false, true, geo.out_c, hw, geo.col_rows(), dyn_, &cols, g!(w), true);
                        }
                        if need_x {
                            gemm(true, false, geo.col_rows(), geo.out_c, hw, wd, dyn_, &mut dcols, false);
                            let gx = g!(x);
                            geo.col2im(&dcols, &mut gx[n * geo.in_len()..(n + 1) * geo.in_len()]);
                        }
                    }
                }
            }
            Op::MaxPool2d { x, argmax } => {
                if slot(*x, grads) {
                    let gx = g!(x);
                    for (&src, &d) in argmax.iter().zip(dy) {
                        gx[src] += d;
                    }
                }
            }
            Op::Relu { x } => {
                if slot(*x, grads) {
                    let xd = self.data(*x);
                    for ((d, &s), &v) in g!(x).iter_mut().zip(dy).zip(xd) {
                        if v > T::zero() {
                            *d += s;
                        }
                    }
                }
            }
            Op::Gelu { x } => {
                if slot(*x, grads) {
                    let xd = self.data(*x);
                    for ((d, &s), &v) in g!(x).iter_mut().zip(dy).zip(xd) {
                        *d += s * gelu_parts(v).1;
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = self.value(*gamma).numel();
                if slot(*gamma, grads) {
                    let gg = g!(gamma);
                    for (row_dy, row_h) in dy.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += row_dy[j] * row_h[j];
                        }
                    }
                }
                if slot(*beta, grads) {
                    let gb = g!(beta);
                    for row_dy in dy.chunks(d) {
                        for j in 0..d {
                            gb[j] += row_dy[j];
                        }
                    }
                }
                if slot(*x, grads) {
                    let gd = self.data(*gamma);
                    let gx = g!(x);
                    let inv_d = T::from_real(1.0 / d as f64);
                    let mut dh = vec![T::zero(); d];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let row_dy = &dy[r * d..(r + 1) * d];
                        let row_h = &xhat[r * d..(r + 1) * d];
                        let mut sum_dh = T::zero();
                        let mut sum_dh_h = T::zero();
                        for j in 0..d {
                            dh[j] = row_dy[j] * gd[j];
                            sum_dh += dh[j];
                            sum_dh_h += dh[j] * row_h[j];
                        }
                        for j in 0..d {
                            gx[r * d + j] += rs * (dh[j] - inv_d * sum_dh - row_h[j] * inv_d * sum_dh_h);
                        }
                    }
                }
            }
            Op::Softmax { x } => {
                if slot(*x, grads) {
                    let y = self.nodes[i].value.data();
                    let d = *self.shape(*x).last().unwrap();
                    let gx = g!(x);
                    for ((gr, yr), dr) in gx.chunks_mut(d).zip(y.chunks(d)).zip(dy.chunks(d)) {
                        let dot: T = yr.iter().zip(dr).map(|(&a, &b)| a * b).sum();
                        for j in 0..d {
                            gr[j] += yr[j] * (dr[j] - dot);
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if slot(*x, grads) {
                    for ((d, &s), &m) in g!(x).iter_mut().zip(dy).zip(mask) {
                        *d += s * m;
                    }
                }
            }
            Op::Reshape { x } => {
                if nodes[x.0].requires_grad && grads[x.0].is_none() {
                    grads[x.0] = Some(dy.to_vec());
                } else if slot(*x, grads) {
                    for (d, &s) in g!(x).iter_mut().zip(dy) {
                        *d += s;
                    }
                }
            }
            Op::Permute { x, perm } => {
                if slot(*x, grads) {
                    let shape = self.shape(*x).to_vec();
                    let gx = g!(x);
                    permute_walk(&shape, perm, |src, dst| gx[src] += dy[dst]);
                }
            }
            Op::Patchify { x, patch } => {
                if slot(*x, grads) {
                    let geo = PatchGeometry::new(self.shape(*x), *patch);
                    let gx = g!(x);
                    geo.for_each(|src, dst| gx[src] += dy[dst]);
                }
            }
            Op::Concat { xs, axis } => {
                let s = self.shape(xs[0]);
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let total = self.nodes[i].value.shape()[*axis];
                let mut offset = 0;
                for &v in xs {
                    let chunk = self.shape(v)[*axis] * inner;
                    if slot(v, grads) {
                        let gv = g!(v);
                        for o in 0..outer {
                            let src = o * total * inner + offset;
                            for (d, &s) in gv[o * chunk..(o + 1) * chunk].iter_mut().zip(&dy[src..src + chunk]) {
                                *d += s;
                            }
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Slice { x, axis, start } => {
                if slot(*x, grads) {
                    let s = self.shape(*x);
                    let len = self.nodes[i].value.shape()[*axis];
                    let outer: usize = s[..*axis].iter().product();
                    let inner: usize = s[axis + 1..].iter().product();
                    let full = s[*axis];
                    let gx = g!(x);
                    for o in 0..outer {
                        let base = (o * full + start) * inner;
                        let src = o * len * inner;
                        for (d, &v) in gx[base..base + len * inner].iter_mut().zip(&dy[src..src + len * inner]) {
                            *d += v;
                        }
                    }
                }
            }
            Op::Expand { x } => {
                if slot(*x, grads) {
                    let gx = g!(x);
                    let block = gx.len();
                    for chunk in dy.chunks(block) {
                        for (d, &s) in gx.iter_mut().zip(chunk) {
                            *d += s;
                        }
                    }
                }
            }
            Op::Sum { x } => {
                if slot(*x, grads) {
                    for d in g!(x).iter_mut() {
                        *d += dy[0];
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                if slot(*logits, grads) {
                    let c = self.shape(*logits)[1];
                    let scale = dy[0] / T::from_real(labels.len() as f64);
                    let gl = g!(logits);
                    for (r, &y) in labels.iter().enumerate() {
                        for j in 0..c {
                            let target = if j == y { T::one() } else { T::zero() };
                            gl[r * c + j] += (probs[r * c + j] - target) * scale;
                        }
                    }
                }
            }
        }
    }
}

/// Numerically stable softmax of one row.
pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    for v in row.iter_mut() {
        *v = (*v - max).exp_fast();
    }
    let total = row.iter().copied().sum::<T>();
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

struct ConvGeometry {
    batch: usize,
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeometry {
    fn new(sx: &[usize], sw: &[usize]) -> Self {
        ConvGeometry {
            batch: sx[0],
            in_c: sx[1],
            in_h: sx[2],
            in_w: sx[3],
            out_c: sw[0],
            kh: sw[2],
            kw: sw[3],
            out_h: sx[2] - sw[2] + 1,
            out_w: sx[3] - sw[3] + 1,
        }
    }

    fn in_len(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }

    fn out_hw(&self) -> usize {
        self.out_h * self.out_w
    }

    fn col_rows(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let hw = self.out_hw();
        for c in 0..self.in_c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    for i in 0..self.out_h {
                        let src = (c * self.in_h + i + ki) * self.in_w + kj;
                        dst[i * self.out_w..(i + 1) * self.out_w]
                            .copy_from_slice(&x[src..src + self.out_w]);
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        let hw = self.out_hw();
        for c in 0..self.in_c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * hw..(row + 1) * hw];
                    for i in 0..self.out_h {
                        let dst = (c * self.in_h + i + ki) * self.in_w + kj;
                        for (d, &s) in dx[dst..dst + self.out_w]
                            .iter_mut()
                            .zip(&src[i * self.out_w..(i + 1) * self.out_w])
                        {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

struct PatchGeometry {
    batch: usize,
    h: usize,
    w: usize,
    c: usize,
    patch: usize,
    tiles_h: usize,
    tiles_w: usize,
}

impl PatchGeometry {
    fn new(s: &[usize], patch: usize) -> Self {
        PatchGeometry {
            batch: s[0],
            h: s[1],
            w: s[2],
            c: s[3],
            patch,
            tiles_h: s[1].div_ceil(patch),
            tiles_w: s[2].div_ceil(patch),
        }
    }

    fn tiles(&self) -> usize {
        self.tiles_h * self.tiles_w
    }

    fn tile_len(&self) -> usize {
        self.patch * self.patch * self.c
    }

    /// Calls `f(input_offset, output_offset)` for every non-padding element.
    fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        let p = self.patch;
        for b in 0..self.batch {
            for ti in 0..self.tiles_h {
                for tj in 0..self.tiles_w {
                    let tile = (b * self.tiles() + ti * self.tiles_w + tj) * self.tile_len();
                    for r in 0..p {
                        let row = ti * p + r;
                        if row >= self.h {
                            break;
                        }
                        for col_in in 0..p {
                            let col = tj * p + col_in;
                            if col >= self.w {
                                break;
                            }
                            let src = ((b * self.h + row) * self.w + col) * self.c;
                            let dst = tile + (r * p + col_in) * self.c;
                            for ch in 0..self.c {
                                f(src + ch, dst + ch);
                            }
                        }
                    }
                }
            }
        }
    }
}
