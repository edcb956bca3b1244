//! CNN and ViT ensembles trained on one shared arrangement set.
//!
//! cargo run --release --example compare_classifiers -- [output dir] [epochs]

use skelvit::harness::{compare_classifiers, render_report, DatasetSource, RunConfig};

fn main() -> skelvit::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "runs/compare".into());
    let epochs = args.next().map(|s| s.parse().expect("epochs")).unwrap_or(5);
    let cfg = RunConfig {
        dataset: DatasetSource::Synthetic {
            per_class: 150,
            seed: None,
        },
        arrangements: 3,
        epochs,
        output_dir: out.into(),
        ..RunConfig::default()
    };
    let cmp = compare_classifiers(&cfg)?;
    print!("{}", render_report(&cfg.output_dir)?);
    for k in &cmp.kinds {
        println!("{}: consensus minus average {:+.4}", k.classifier, k.gap);
    }
    Ok(())
}
