use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use skelvit::arrangement::{
    dissimilarity, joint_displacement, max_dissimilarity, replay_draw, sample_set, select_best, ArrangementSet,
    JointArrangement, Selection,
};
use skelvit::harness::{ConfusionMatrix, Metrics};
use skelvit::pseudo_image::encode;
use skelvit::skeleton::{
    parse_skeleton, sample_frames, serialize_skeleton, ActionSequence, ClassTable, Joint, Parsed, SkeletonFrame,
    NUM_JOINTS,
};

fn sequence(frames: usize, rng: &mut impl Rng) -> ActionSequence {
    ActionSequence {
        frames: (0..frames)
            .map(|_| SkeletonFrame {
                joints: std::array::from_fn(|_| {
                    Joint::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(1.0..5.0))
                }),
            })
            .collect(),
        label: 0,
        subject_id: 1,
        camera_id: 1,
        source_id: "S001C001P001R001A006".into(),
    }
}

fn set_from_seed(seed: u64, l: usize, m: usize) -> ArrangementSet {
    sample_set(seed, l, m).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn dissimilarity_is_symmetric_under_member_order_and_relabeling(seed in any::<u64>(), l in 1usize..6, m in 1usize..10) {
        let set = set_from_seed(seed, l, m);
        let score = dissimilarity(&set);
        prop_assert!(score <= max_dissimilarity(l, m));

        let mut members = set.members().to_vec();
        members.reverse();
        prop_assert_eq!(dissimilarity(&ArrangementSet::new(members).unwrap()), score);

        // renaming the joints consistently in every member changes nothing
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let mut names: Vec<usize> = (0..m).collect();
        names.shuffle(&mut rng);
        let relabel = JointArrangement::new(names).unwrap();
        let renamed = ArrangementSet::new(set.members().iter().map(|a| a.relabeled(&relabel)).collect()).unwrap();
        prop_assert_eq!(dissimilarity(&renamed), score);

        let by_joint: u64 = (0..m).flat_map(|j| (0..l).map(move |q| (j, q))).map(|(j, q)| joint_displacement(j, q, &set)).sum();
        prop_assert_eq!(by_joint, score);
    }

    #[test]
    fn adding_a_copy_of_a_member_never_lowers_the_score(seed in any::<u64>(), l in 1usize..5, m in 2usize..9) {
        let set = set_from_seed(seed, l, m);
        let mut members = set.members().to_vec();
        members.push(members[0].clone());
        prop_assert!(dissimilarity(&ArrangementSet::new(members).unwrap()) >= dissimilarity(&set));
    }

    #[test]
    fn selection_text_round_trips(seed in any::<u64>(), l in 1usize..5) {
        let sel = select_best(seed, 7, l, NUM_JOINTS).unwrap();
        prop_assert_eq!(Selection::from_text(&sel.to_text()).unwrap(), sel);
    }

    #[test]
    fn sampled_frames_come_from_the_source_in_order(len in 1usize..200, frames in 1usize..40, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seq = sequence(len, &mut rng);
        for (i, f) in seq.frames.iter_mut().enumerate() {
            f.joints[0].x = i as f64;
        }
        let out = sample_frames(&seq, frames).unwrap();
        prop_assert_eq!(out.frames.len(), frames);
        let idx: Vec<usize> = out.frames.iter().map(|f| f.joints[0].x as usize).collect();
        prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(idx[0], 0);
        if len >= frames {
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        } else {
            prop_assert_eq!(*idx.last().unwrap(), len - 1);
        }
    }

    #[test]
    fn skeleton_text_round_trips(frames in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seq = sequence(frames, &mut rng);
        let text = serialize_skeleton(&seq);
        let parsed = parse_skeleton(text.as_bytes(), &seq.source_id, &ClassTable::default()).unwrap();
        prop_assert_eq!(parsed, Parsed::Sequence(seq));
    }

    #[test]
    fn encoding_is_deterministic_and_reordering_is_column_permutation(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seq = sequence(25, &mut rng);
        let set = set_from_seed(seed, 2, NUM_JOINTS);
        let (a, scale_a) = encode(&seq, &set.members()[0]).unwrap();
        let (b, scale_b) = encode(&seq, &set.members()[1]).unwrap();
        prop_assert_eq!(scale_a, scale_b);
        // column k of b holds the joint b[k], which sits at a's column pos_a[b[k]]
        let pos_a = set.members()[0].positions();
        let order: Vec<usize> = set.members()[1].order().iter().map(|&j| pos_a[j]).collect();
        prop_assert_eq!(a.permute_columns(&order), b);
    }
}

#[test]
fn selection_matches_an_independent_replay() {
    let (seed, n, l, m) = (11, 50, 3, 5);
    let sel = select_best(seed, n, l, m).unwrap();
    let scores: Vec<u64> = (0..n).map(|d| dissimilarity(&replay_draw(seed, d, l, m))).collect();
    let best = *scores.iter().max().unwrap();
    assert_eq!(sel.score, best);
    assert_eq!(sel.draw, scores.iter().position(|&s| s == best).unwrap() as u64);
    assert_eq!(sel.set, replay_draw(seed, sel.draw, l, m));
}

#[test]
fn random_arrangements_place_joints_uniformly() {
    let mut sum = vec![0u64; NUM_JOINTS];
    let trials = 10_000;
    for s in 0..trials {
        let set = set_from_seed(s, 1, NUM_JOINTS);
        for (j, p) in set.members()[0].positions().into_iter().enumerate() {
            sum[j] += p as u64;
        }
    }
    for total in sum {
        let mean = total as f64 / trials as f64;
        // sd of one position is about 7.2, so the sd of the mean is about 0.072
        assert!((mean - 12.0).abs() < 0.3, "{mean}");
    }
}

#[test]
fn uniform_guessing_scores_chance_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 50_000;
    let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..14)).collect();
    let guess: Vec<usize> = (0..n).map(|_| rng.random_range(0..14)).collect();
    let m = Metrics::from_confusion(&ConfusionMatrix::from_predictions(14, &truth, &guess)).unwrap();
    for v in [m.accuracy, m.precision, m.recall, m.f_score] {
        assert!((v - 1.0 / 14.0).abs() < 0.01, "{v}");
    }
}
