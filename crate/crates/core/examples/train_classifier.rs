//! Trains one level-2 classifier on pseudo-images of a single arrangement.
//!
//! cargo run --release --example train_classifier -- [vit|cnn] [epochs]

use skelvit::arrangement::{ArrangementSet, JointArrangement};
use skelvit::classifiers::{argmax, predict, train, ClassifierKind, Model, TrainConfig};
use skelvit::harness::{encode_all, ConfusionMatrix, Metrics};
use skelvit::skeleton::{split_dataset, SplitPolicy, DEFAULT_FRAMES, NUM_JOINTS};
use skelvit::synth::{synth_dataset, NUM_SYNTH_CLASSES};

fn main() -> skelvit::Result<()> {
    let kind = match std::env::args().nth(1).as_deref() {
        Some("cnn") => ClassifierKind::Cnn,
        _ => ClassifierKind::Vit,
    };
    let epochs = std::env::args().nth(2).map(|s| s.parse().expect("epochs")).unwrap_or(10);
    let (train_set, test_set) = split_dataset(synth_dataset(150, 1), &SplitPolicy::cross_view());
    let set = ArrangementSet::new(vec![JointArrangement::identity(NUM_JOINTS)])?;
    let train_images = encode_all(&train_set, &set, DEFAULT_FRAMES)?.remove(0);
    let test_images = encode_all(&test_set, &set, DEFAULT_FRAMES)?.remove(0);
    let labels: Vec<usize> = train_set.iter().map(|s| s.label).collect();

    let mut model = Model::<f32>::level2(kind, NUM_SYNTH_CLASSES, 0)?;
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let batch = |images: &[skelvit::pseudo_image::PseudoImage], idx: &[usize], model: &Model<f32>| {
        model.image_batch(&idx.iter().map(|&i| &images[i]).collect::<Vec<_>>())
    };
    let probe = model.clone();
    let report = train(&mut model, labels.len(), &labels, |idx| batch(&train_images, idx, &probe), &cfg, 0)?;
    println!("{kind}: loss per epoch {:.3?}", report.loss_curve);

    let posteriors = predict(&model, test_set.len(), |idx| batch(&test_images, idx, &model), 256)?;
    let truth: Vec<usize> = test_set.iter().map(|s| s.label).collect();
    let predicted: Vec<usize> = posteriors.iter().map(|p| argmax(p)).collect();
    let m = Metrics::from_confusion(&ConfusionMatrix::from_predictions(NUM_SYNTH_CLASSES, &truth, &predicted))?;
    println!("test accuracy {:.4} on {} samples, macro F {:.4}", m.accuracy, truth.len(), m.f_score);
    Ok(())
}
