//! Parses one NTU RGB+D skeleton file and resamples it to 25 frames.
//!
//! cargo run --release --example parse_skeleton -- [path/to/SsssCcccPpppRrrrAaaa.skeleton]
//!
//! Without an argument a synthetic sample is written to a temporary file first.

use skelvit::skeleton::{parse_skeleton, sample_frames, serialize_skeleton, ClassTable, Parsed, DEFAULT_FRAMES};
use skelvit::synth::synth_generate;

fn main() -> skelvit::Result<()> {
    let path = match std::env::args().nth(1) {
        Some(p) => std::path::PathBuf::from(p),
        None => {
            let sample = synth_generate(2, 1, 0)?.remove(0);
            let path = std::env::temp_dir().join(format!("{}.skeleton", sample.source_id));
            std::fs::write(&path, serialize_skeleton(&sample)).expect("temp dir is writable");
            path
        }
    };
    let bytes = std::fs::read(&path).expect("readable skeleton file");
    let name = path.file_name().unwrap().to_string_lossy();
    let classes = ClassTable::default();
    match parse_skeleton(&bytes, &name, &classes)? {
        Parsed::Skipped { action_id } => println!("{name}: action A{action_id:03} is not in the class table"),
        Parsed::Sequence(seq) => {
            let sampled = sample_frames(&seq, DEFAULT_FRAMES)?;
            println!(
                "{}: class {} ({}), subject {}, camera {}, {} frames -> {}",
                seq.source_id,
                seq.label,
                classes.name(seq.label).unwrap_or("?"),
                seq.subject_id,
                seq.camera_id,
                seq.frames.len(),
                sampled.frames.len()
            );
            let j = sampled.frames[0].joints[3];
            println!("head joint in the first frame: ({:.3}, {:.3}, {:.3})", j.x, j.y, j.z);
        }
    }
    Ok(())
}
