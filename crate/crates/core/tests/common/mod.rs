//! Finite-difference cases shared by the gradient tests and the acceptance run.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skelvit::autodiff::{grad_check, GradCheckConfig, GradCheckReport, Graph, ParamStore, Tensor, Var};
use skelvit::classifiers::{CnnConfig, ConsensusConfig, Model, VitConfig};
use skelvit::Result;

fn uniform(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

pub fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    uniform(shape, seed, -1.0, 1.0)
}

/// Values in `[0, 1)`, like scaled pixels or posteriors.
pub fn unit(shape: &[usize], seed: u64) -> Tensor<f64> {
    uniform(shape, seed, 0.0, 1.0)
}

/// Checks `op` on random inputs of the given shapes, reducing its output to
/// a scalar through a fixed random weighting.
pub fn check_op(shapes: &[&[usize]], op: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>) -> GradCheckReport {
    let mut store = ParamStore::new();
    let ids: Vec<_> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| store.add(format!("in{i}"), random(s, 100 + i as u64)))
        .collect();
    let forward = |g: &mut Graph<f64>, store: &ParamStore<f64>| {
        let xs: Vec<Var> = ids.iter().map(|&id| g.param(store, id)).collect();
        let y = op(g, &xs)?;
        let w = g.constant(random(g.shape(y), 7));
        let prod = g.mul(y, w)?;
        Ok(g.sum(prod))
    };
    grad_check(&mut store, forward, &GradCheckConfig::default()).unwrap()
}

/// One report per operator (bmm once per transpose combination).
pub fn operator_reports() -> Vec<(String, GradCheckReport)> {
    let mut out: Vec<(String, GradCheckReport)> = Vec::new();
    let mut push = |name: &str, r| out.push((name.to_string(), r));
    push("matmul", check_op(&[&[2, 3, 4], &[4, 5]], |g, x| g.matmul(x[0], x[1])));
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let sa: &[usize] = if ta { &[2, 4, 3] } else { &[2, 3, 4] };
        let sb: &[usize] = if tb { &[2, 5, 4] } else { &[2, 4, 5] };
        push(&format!("bmm({ta},{tb})"), check_op(&[sa, sb], |g, x| g.bmm(x[0], x[1], ta, tb)));
    }
    push("add", check_op(&[&[3, 4], &[3, 4]], |g, x| g.add(x[0], x[1])));
    push("add_trailing", check_op(&[&[2, 3, 4], &[3, 4]], |g, x| g.add_trailing(x[0], x[1])));
    push("mul", check_op(&[&[3, 4], &[3, 4]], |g, x| g.mul(x[0], x[1])));
    push("scale", check_op(&[&[3, 4]], |g, x| Ok(g.scale(x[0], -1.7))));
    push("relu", check_op(&[&[5, 7]], |g, x| Ok(g.relu(x[0]))));
    push("gelu", check_op(&[&[5, 7]], |g, x| Ok(g.gelu(x[0]))));
    push("sum", check_op(&[&[5, 7]], |g, x| Ok(g.sum(x[0]))));
    push("layer_norm", check_op(&[&[3, 2, 6], &[6], &[6]], |g, x| g.layer_norm(x[0], x[1], x[2])));
    push("softmax", check_op(&[&[4, 5]], |g, x| Ok(g.softmax(x[0]))));
    push("cross_entropy", check_op(&[&[4, 5]], |g, x| g.cross_entropy(x[0], &[0, 3, 4, 3])));
    push("conv2d", check_op(&[&[2, 3, 6, 5], &[4, 3, 3, 3], &[4]], |g, x| g.conv2d(x[0], x[1], x[2])));
    push("maxpool2d", check_op(&[&[2, 3, 5, 4]], |g, x| g.maxpool2d(x[0])));
    push("reshape", check_op(&[&[2, 3, 4]], |g, x| g.reshape(x[0], &[4, 6])));
    push("permute", check_op(&[&[2, 3, 4, 5]], |g, x| g.permute(x[0], &[2, 0, 3, 1])));
    push("patchify", check_op(&[&[2, 5, 5, 3]], |g, x| g.patchify(x[0], 2)));
    push("concat", check_op(&[&[2, 1, 3], &[2, 4, 3]], |g, x| g.concat(&[x[0], x[1]], 1)));
    push("slice", check_op(&[&[2, 5, 3]], |g, x| g.slice(x[0], 1, 1, 3)));
    push("expand", check_op(&[&[1, 3]], |g, x| Ok(g.expand(x[0], 4))));
    // evaluation graphs, so dropout is the identity
    push("dropout", check_op(&[&[3, 4]], |g, x| Ok(g.dropout(x[0], 0.5))));
    out
}

/// Cross-entropy of `model` on `input`, checked on up to `max_entries`
/// random entries of every parameter tensor.
pub fn model_check(mut model: Model<f64>, input: Tensor<f64>, labels: Vec<usize>, max_entries: usize) -> GradCheckReport {
    let arch = model.arch.clone();
    let forward = move |g: &mut Graph<f64>, store: &ParamStore<f64>| {
        let x = g.constant(input.clone());
        let m = Model {
            arch: arch.clone(),
            params: ParamStore::new(),
        };
        let logits = m.logits(g, store, x)?;
        g.cross_entropy(logits, &labels)
    };
    let cfg = GradCheckConfig {
        max_entries: Some(max_entries),
        ..GradCheckConfig::default()
    };
    grad_check(&mut model.params, forward, &cfg).unwrap()
}

pub fn vit_report(num_blocks: usize, max_entries: usize) -> GradCheckReport {
    let cfg = VitConfig {
        num_blocks,
        ..VitConfig::default()
    };
    let model = Model::<f64>::vit(cfg, 1).unwrap();
    let input = unit(&[2, 25, 25, 3], 3);
    model_check(model, input, vec![3, 11], max_entries)
}

pub fn cnn_report(max_entries: usize) -> GradCheckReport {
    let model = Model::<f64>::cnn(CnnConfig::default(), 2).unwrap();
    let input = unit(&[2, 3, 25, 25], 4);
    model_check(model, input, vec![0, 13], max_entries)
}

pub fn consensus_report(max_entries: usize) -> GradCheckReport {
    let model = Model::<f64>::consensus(ConsensusConfig::new(3, 14), 3).unwrap();
    let input = unit(&[4, 42], 5);
    model_check(model, input, vec![1, 2, 5, 13], max_entries)
}
