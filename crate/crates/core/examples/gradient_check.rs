//! Central finite-difference check of a two-block ViT at 64-bit precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skelvit::autodiff::{grad_check, GradCheckConfig, Graph, ParamStore, Tensor};
use skelvit::classifiers::{Model, VitConfig};

fn main() -> skelvit::Result<()> {
    let cfg = VitConfig {
        num_blocks: 2,
        ..VitConfig::default()
    };
    let mut model = Model::<f64>::vit(cfg, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let input = Tensor::new(&[2, 25, 25, 3], (0..2 * 25 * 25 * 3).map(|_| rng.random()).collect())?;
    let arch = model.arch.clone();
    let forward = |g: &mut Graph<f64>, store: &ParamStore<f64>| {
        let probe = Model {
            arch: arch.clone(),
            params: ParamStore::new(),
        };
        let x = g.constant(input.clone());
        let logits = probe.logits(g, store, x)?;
        g.cross_entropy(logits, &[4, 9])
    };
    let check = GradCheckConfig {
        max_entries: Some(8),
        ..GradCheckConfig::default()
    };
    let report = grad_check(&mut model.params, forward, &check)?;
    for p in report.params.iter().take(6) {
        println!("{:<28} {:>3} entries  max rel {:.2e}", p.name, p.entries_checked, p.max_rel_error);
    }
    println!(
        "{} tensors, worst relative error {:.2e}, passed: {}",
        report.params.len(),
        report.max_rel_error(),
        report.passed()
    );
    Ok(())
}
