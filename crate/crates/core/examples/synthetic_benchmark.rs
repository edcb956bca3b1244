//! Full pipeline on the synthetic dataset: L = 5 ViTs, 10 epochs.
//!
//! cargo run --release --example synthetic_benchmark -- [seed] [output dir]

use std::time::Instant;

use skelvit::harness::{render_report, run_pipeline, DatasetSource, RunConfig};

fn main() -> skelvit::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().map(|s| s.parse().expect("seed is an integer")).unwrap_or(0);
    let out = args.next().unwrap_or_else(|| format!("runs/synthetic-seed{seed}"));
    let cfg = RunConfig {
        dataset: DatasetSource::Synthetic {
            per_class: 300,
            seed: None,
        },
        arrangements: 5,
        epochs: 10,
        seed,
        output_dir: out.into(),
        ..RunConfig::default()
    };
    let start = Instant::now();
    let results = run_pipeline(&cfg)?;
    println!("{}", render_report(&cfg.output_dir)?);
    println!(
        "consensus accuracy {:.4} in {:.1}s",
        results.report.consensus.accuracy,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
