//! Encodes one sample under the identity ordering and three selected
//! arrangements, and saves each pseudo-image as a PNG.
//!
//! cargo run --release --example encode_pseudo_images -- [output dir]

use skelvit::arrangement::{select_best, JointArrangement};
use skelvit::pseudo_image::{encode, export_png};
use skelvit::skeleton::{sample_frames, DEFAULT_FRAMES, NUM_JOINTS};
use skelvit::synth::synth_generate;

fn main() -> skelvit::Result<()> {
    let dir = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/pseudo-images".into()));
    std::fs::create_dir_all(&dir).expect("output dir");
    let seq = sample_frames(&synth_generate(5, 1, 3)?.remove(0), DEFAULT_FRAMES)?;
    let mut arrangements = vec![JointArrangement::identity(NUM_JOINTS)];
    arrangements.extend(select_best(0, 200, 3, NUM_JOINTS)?.set.members().iter().cloned());
    for (i, arr) in arrangements.iter().enumerate() {
        let (img, scaling) = encode(&seq, arr)?;
        let path = dir.join(format!("{}_{i}.png", seq.source_id));
        export_png(&img, &path)?;
        println!("{} ({}x{}), x range {:.3}..{:.3}", path.display(), img.rows(), img.cols(), scaling.min[0], scaling.max[0]);
    }
    Ok(())
}
