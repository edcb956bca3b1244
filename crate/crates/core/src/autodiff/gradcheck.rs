//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Perturbation applied on each side of the evaluation point.
    pub epsilon: f64,
    /// Maximum admissible relative error.
    pub tolerance: f64,
    /// Denominator floor for the relative error, so entries whose true
    /// gradient is numerically zero are judged on absolute error.
    pub floor: f64,
    /// Check at most this many randomly chosen entries per parameter.
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-5,
            tolerance: 1e-3,
            floor: 1e-6,
            max_entries: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub entries_checked: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error < self.tolerance)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| p.max_rel_error >= self.tolerance)
    }
}

fn scalar_loss<F>(store: &ParamStore<f64>, forward: &F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::eval();
    let loss = forward(&mut g, store)?;
    if g.value(loss).numel() != 1 {
        return Err(Error::Contract("gradient check needs a scalar loss".into()));
    }
    Ok(g.value(loss).item())
}

/// Analytic gradients of `forward`'s scalar output for every parameter.
pub fn analytic_grads<F>(store: &mut ParamStore<f64>, forward: &F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    store.zero_grad();
    let mut g = Graph::eval();
    let loss = forward(&mut g, store)?;
    g.backward_into(loss, store)?;
    let grads = store
        .iter()
        .map(|(_, p)| p.grad.clone().unwrap_or_else(|| vec![0.0; p.value.numel()]))
        .collect();
    store.zero_grad();
    Ok(grads)
}

/// Compares supplied analytic gradients against central differences.
pub fn compare_with_numeric<F>(
    store: &mut ParamStore<f64>,
    forward: &F,
    analytic: &[Vec<f64>],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ids: Vec<_> = store.ids().collect();
    let mut params = Vec::with_capacity(ids.len());
    for (k, id) in ids.into_iter().enumerate() {
        let n = store.value(id).numel();
        let entries: Vec<usize> = match cfg.max_entries {
            Some(limit) if limit < n => {
                let mut picked = sample(&mut rng, n, limit).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..n).collect(),
        };
        let mut max_abs: f64 = 0.0;
        let mut max_rel: f64 = 0.0;
        for &e in &entries {
            let original = store.value(id).data()[e];
            store.get_mut(id).value.data_mut()[e] = original + cfg.epsilon;
            let plus = scalar_loss(store, forward)?;
            store.get_mut(id).value.data_mut()[e] = original - cfg.epsilon;
            let minus = scalar_loss(store, forward)?;
            store.get_mut(id).value.data_mut()[e] = original;

            let numeric = (plus - minus) / (2.0 * cfg.epsilon);
            let exact = analytic[k][e];
            let abs = (numeric - exact).abs();
            let rel = abs / numeric.abs().max(exact.abs()).max(cfg.floor);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(rel);
        }
        params.push(ParamCheck {
            name: store.get(id).name.clone(),
            entries_checked: entries.len(),
            max_abs_error: max_abs,
            max_rel_error: max_rel,
        });
    }
    Ok(GradCheckReport {
        tolerance: cfg.tolerance,
        params,
    })
}

/// Backward-pass gradients versus central differences for every parameter block.
pub fn grad_check<F>(
    store: &mut ParamStore<f64>,
    forward: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let analytic = analytic_grads(store, &forward)?;
    compare_with_numeric(store, &forward, &analytic, cfg)
}
