//! Generates the synthetic 14-class dataset and writes it as skeleton files.
//!
//! cargo run --release --example synth_dataset -- [output dir] [per class]

use skelvit::synth::{synth_dataset, write_dataset, NUM_SYNTH_CLASSES};

fn main() -> skelvit::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "runs/synthetic-data".into());
    let per_class = args.next().map(|s| s.parse().expect("per class is an integer")).unwrap_or(20);
    let samples = synth_dataset(per_class, 42);
    write_dataset(dir.as_ref(), &samples)?;
    let lengths: Vec<usize> = samples.iter().map(|s| s.frames.len()).collect();
    println!(
        "{} samples ({NUM_SYNTH_CLASSES} classes x {per_class}) in {dir}; frames {}..={}",
        samples.len(),
        lengths.iter().min().unwrap(),
        lengths.iter().max().unwrap()
    );
    Ok(())
}
