//! Consensus accuracy as the number of arrangements grows.
//!
//! cargo run --release --example ablation -- [output dir] [epochs]

use skelvit::harness::{run_ablation, DatasetSource, RunConfig};

fn main() -> skelvit::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "runs/ablation".into());
    let epochs = args.next().map(|s| s.parse().expect("epochs")).unwrap_or(5);
    let cfg = RunConfig {
        dataset: DatasetSource::Synthetic {
            per_class: 150,
            seed: None,
        },
        epochs,
        output_dir: out.into(),
        ..RunConfig::default()
    };
    for row in run_ablation(&cfg, &[3, 5, 9])? {
        println!(
            "L={:<3} average {:.4}  consensus {:.4}",
            row.arrangements, row.average.accuracy, row.consensus.accuracy
        );
    }
    Ok(())
}
