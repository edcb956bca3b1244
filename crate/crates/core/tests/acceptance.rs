//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Positional arguments select criteria by substring.

mod common;

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use skelvit::arrangement::{dissimilarity, max_dissimilarity, ArrangementSet, JointArrangement};
use skelvit::autodiff::{Adam, Graph, ParamStore, Tensor};
use skelvit::harness::{
    run_pipeline, DatasetSource, RunConfig, ARRANGEMENT_FILE, CONFIG_FILE, CONSENSUS_CHECKPOINT, MANIFEST_FILE,
    METRICS_CSV, RESULTS_FILE,
};
use skelvit::pseudo_image::encode;
use skelvit::skeleton::{ActionSequence, Joint, SkeletonFrame, DEFAULT_FRAMES, NUM_JOINTS};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

// ---- dissimilarity ----

fn random_set(rng: &mut ChaCha8Rng, l: usize, m: usize) -> ArrangementSet {
    let members = (0..l)
        .map(|_| {
            let mut order: Vec<usize> = (0..m).collect();
            order.shuffle(rng);
            JointArrangement::new(order).unwrap()
        })
        .collect();
    ArrangementSet::new(members).unwrap()
}

/// Sum over members l, joints m and other members q of the distance between
/// the columns holding joint m in l and in q.
fn brute_force(orders: &[Vec<usize>]) -> u64 {
    let column = |order: &[usize], joint: usize| order.iter().position(|&j| j == joint).unwrap() as i64;
    let m = orders[0].len();
    let mut total = 0;
    for l in 0..orders.len() {
        for joint in 0..m {
            for q in 0..orders.len() {
                if q != l {
                    total += (column(&orders[l], joint) - column(&orders[q], joint)).unsigned_abs();
                }
            }
        }
    }
    total
}

fn orders(set: &ArrangementSet) -> Vec<Vec<usize>> {
    set.members().iter().map(|a| a.order().to_vec()).collect()
}

fn dissimilarity_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (l, m) = (rng.random_range(1..=4), rng.random_range(1..=6));
        let set = random_set(&mut rng, l, m);
        if dissimilarity(&set) != brute_force(&orders(&set)) {
            mismatches += 1;
        }
    }
    let took = start.elapsed();
    outcome(
        mismatches == 0 && took < Duration::from_secs(10),
        format!("1000 sets, {mismatches} mismatches, {}", secs(took)),
    )
}

fn dissimilarity_bounds() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut problems = Vec::new();
    for _ in 0..2000 {
        let (l, m) = (rng.random_range(1..=6), rng.random_range(1..=9));
        let mut set = random_set(&mut rng, l, m);
        // make some sets fully or partly repetitive
        if rng.random_bool(0.3) {
            let first = set.members()[0].clone();
            let k = rng.random_range(1..=l);
            let mut members = set.members().to_vec();
            for member in members.iter_mut().take(k) {
                *member = first.clone();
            }
            set = ArrangementSet::new(members).unwrap();
        }
        let score = dissimilarity(&set);
        let identical = set.members().iter().all(|a| a == &set.members()[0]);
        if (score == 0) != identical || score > max_dissimilarity(l, m) {
            problems.push(format!("L={l} M={m} score={score}"));
        }
    }
    for m in 1..=25 {
        let fwd = JointArrangement::identity(m);
        let pair = ArrangementSet::new(vec![fwd.clone(), fwd.reversed()]).unwrap();
        let (score, oracle) = (dissimilarity(&pair), brute_force(&orders(&pair)));
        if score != max_dissimilarity(2, m) || oracle != score {
            problems.push(format!("reversal M={m}: {score} vs bound {}", max_dissimilarity(2, m)));
        }
    }
    let pair = ArrangementSet::new(vec![JointArrangement::identity(25), JointArrangement::identity(25).reversed()]).unwrap();
    let reversal = brute_force(&orders(&pair));
    outcome(
        problems.is_empty() && reversal == 624,
        format!("zero iff identical and bound held on 2000 sets; reversal pair M=25 oracle = {reversal}; {problems:?}"),
    )
}

// ---- codec ----

fn random_sequence(rng: &mut ChaCha8Rng, constant_axis: Option<usize>) -> ActionSequence {
    let mut seq = ActionSequence {
        frames: (0..DEFAULT_FRAMES)
            .map(|_| SkeletonFrame {
                joints: std::array::from_fn(|_| {
                    Joint::new(rng.random_range(-1.5..1.5), rng.random_range(-1.0..1.0), rng.random_range(1.5..4.5))
                }),
            })
            .collect(),
        label: 0,
        subject_id: 1,
        camera_id: 1,
        source_id: "S001C001P001R001A001".into(),
    };
    if let Some(axis) = constant_axis {
        let v = rng.random_range(-1.0..1.0);
        for f in &mut seq.frames {
            for j in &mut f.joints {
                *j.axis_mut(axis) = v;
            }
        }
    }
    seq
}

fn codec_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let identity = JointArrangement::identity(NUM_JOINTS);
    let mut failures: Vec<String> = Vec::new();
    let (mut constant_channels, mut varying_channels) = (0, 0);
    for i in 0..500 {
        let constant_axis = (i % 5 == 0).then(|| rng.random_range(0..3));
        let seq = random_sequence(&mut rng, constant_axis);
        let (img, _) = encode(&seq, &identity).unwrap();

        if img.data().len() != DEFAULT_FRAMES * NUM_JOINTS * 3 {
            failures.push(format!("{i}: size"));
        }
        for ch in 0..3 {
            let values: Vec<u8> = img.data().iter().skip(ch).step_by(3).copied().collect();
            if Some(ch) == constant_axis {
                constant_channels += 1;
            } else {
                varying_channels += 1;
                if !values.contains(&0) || !values.contains(&255) {
                    failures.push(format!("{i}: channel {ch} misses an extreme"));
                }
            }
        }

        let shift: [f64; 3] = std::array::from_fn(|_| rng.random_range(-5.0..5.0));
        let factor: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.05..20.0));
        let mut moved = seq.clone();
        for f in &mut moved.frames {
            for j in &mut f.joints {
                for a in 0..3 {
                    *j.axis_mut(a) = j.axis(a) * factor[a] + shift[a];
                }
            }
        }
        if encode(&moved, &identity).unwrap().0 != img {
            failures.push(format!("{i}: affine change altered the image"));
        }

        let mut order: Vec<usize> = (0..NUM_JOINTS).collect();
        order.shuffle(&mut rng);
        let arr = JointArrangement::new(order.clone()).unwrap();
        if encode(&seq, &arr).unwrap().0 != img.permute_columns(&order) {
            failures.push(format!("{i}: permutation"));
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "500 sequences ({varying_channels} varying, {constant_channels} constant channels); failures {:?}",
            &failures[..failures.len().min(5)]
        ),
    )
}

// ---- gradients ----

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut reports = common::operator_reports();
    let ops = reports.len();
    reports.push(("vit".into(), common::vit_report(8, 12)));
    reports.push(("cnn".into(), common::cnn_report(12)));
    reports.push(("consensus".into(), common::consensus_report(40)));
    let took = start.elapsed();
    let worst = reports
        .iter()
        .max_by(|a, b| a.1.max_rel_error().total_cmp(&b.1.max_rel_error()))
        .unwrap();
    let failing: Vec<&str> = reports.iter().filter(|(_, r)| !r.passed()).map(|(n, _)| n.as_str()).collect();
    let models: Vec<String> = reports[ops..]
        .iter()
        .map(|(n, r)| format!("{n} {:.1e}", r.max_rel_error()))
        .collect();
    outcome(
        failing.is_empty() && took < Duration::from_secs(300),
        format!(
            "{ops} operators + full models ({}); worst {} at {:.2e}; failing {failing:?}; {}",
            models.join(", "),
            worst.0,
            worst.1.max_rel_error(),
            secs(took)
        ),
    )
}

// ---- optimizer ----

fn adam_sanity() -> Outcome {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::scalar(0.0));
    let mut adam = Adam::<f64>::new(0.1);
    for _ in 0..500 {
        let mut g = Graph::eval();
        let w = g.param(&store, id);
        let target = g.constant(Tensor::scalar(-3.0));
        let diff = g.add(w, target).unwrap();
        let sq = g.mul(diff, diff).unwrap();
        let loss = g.sum(sq);
        store.zero_grad();
        g.backward_into(loss, &mut store).unwrap();
        drop(g);
        adam.step(&mut store).unwrap();
    }
    let final_w = store.value(id).item();

    let mut worst: f64 = 0.0;
    for grad in [3.0, -0.25, 1e-4, 250.0] {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(1.0));
        store.get_mut(id).grad = Some(vec![grad]);
        let mut adam = Adam::<f64>::new(0.01);
        adam.step(&mut store).unwrap();
        let step = (store.value(id).item() - 1.0).abs();
        let expected = 0.01 * grad.abs() / (grad.abs() + 1e-8);
        worst = worst.max(((step - expected) / expected).abs());
    }
    outcome(
        (final_w - 3.0).abs() < 1e-2 && worst < 1e-6,
        format!("quadratic optimum 3 reached at {final_w:.6}; first-step relative error {worst:.1e}"),
    )
}

// ---- end to end ----

fn benchmark_config(seed: u64, dir: &Path) -> RunConfig {
    RunConfig {
        dataset: DatasetSource::Synthetic {
            per_class: 300,
            seed: None,
        },
        arrangements: 5,
        epochs: 10,
        seed,
        output_dir: dir.to_path_buf(),
        ..RunConfig::default()
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn end_to_end() -> Vec<(&'static str, Outcome)> {
    let mut consensus = Vec::new();
    let mut gains = Vec::new();
    let mut times = Vec::new();
    let mut count_ok = true;
    for seed in 0..5 {
        let dir = tempfile::tempdir().unwrap();
        let start = Instant::now();
        let r = match run_pipeline(&benchmark_config(seed, dir.path())) {
            Ok(r) => r,
            Err(e) => return vec![("end-to-end synthetic benchmark", outcome(false, format!("seed {seed}: {e}")))],
        };
        times.push(start.elapsed());
        count_ok &= r.counts.level2_train == 14 * 200 && r.counts.test == 14 * 100;
        consensus.push(r.report.consensus.accuracy);
        gains.push(r.report.consensus.accuracy - r.report.average.accuracy);
        println!(
            "       seed {seed}: consensus {:.4}, mean individual {:.4}, {}",
            r.report.consensus.accuracy,
            r.report.average.accuracy,
            secs(times[times.len() - 1])
        );
    }
    let worst_acc = consensus.iter().copied().fold(f64::INFINITY, f64::min);
    let (gain, se) = mean_and_se(&gains);
    let slowest = *times.iter().max().unwrap();
    vec![
        (
            "synthetic benchmark: consensus accuracy >= 0.90",
            outcome(
                worst_acc >= 0.90 && count_ok,
                format!("lowest of 5 seeds {worst_acc:.4}; 200 train / 100 test per class: {count_ok}"),
            ),
        ),
        (
            "synthetic benchmark: consensus >= mean individual within one SE",
            outcome(gain >= -se, format!("mean gain {gain:+.4}, SE {se:.4} over 5 seeds")),
        ),
        (
            "synthetic benchmark: runtime < 10 min per run",
            outcome(slowest < Duration::from_secs(600), format!("slowest run {}", secs(slowest))),
        ),
    ]
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let files = [RESULTS_FILE, METRICS_CSV, MANIFEST_FILE, CONFIG_FILE, ARRANGEMENT_FILE, CONSENSUS_CHECKPOINT];
    let mut runs = Vec::new();
    for (i, workers) in [1, 1, 2, 4].into_iter().enumerate() {
        let dir = root.path().join(format!("run{i}"));
        let cfg = RunConfig {
            dataset: DatasetSource::Synthetic {
                per_class: 15,
                seed: None,
            },
            arrangements: 4,
            draws: 100,
            epochs: 2,
            batch_size: 32,
            seed: 21,
            workers,
            output_dir: dir.clone(),
            ..RunConfig::default()
        };
        if let Err(e) = run_pipeline(&cfg) {
            return outcome(false, format!("workers {workers}: {e}"));
        }
        let mut bytes: Vec<Vec<u8>> = files.iter().map(|f| fs::read(dir.join(f)).unwrap()).collect();
        bytes.extend((0..4).map(|l| fs::read(dir.join(format!("level2_{l}.ckpt"))).unwrap()));
        runs.push(bytes);
    }
    let identical = runs.iter().all(|r| r == &runs[0]);
    outcome(
        identical,
        format!("4 runs at worker counts 1, 1, 2, 4: results, metrics, manifest, arrangements and all checkpoints identical: {identical}"),
    )
}

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));

    type Check = fn() -> Vec<(&'static str, Outcome)>;
    let checks: [(&str, Check); 7] = [
        ("dissimilarity oracle equivalence", || vec![("dissimilarity oracle equivalence", dissimilarity_oracle())]),
        ("dissimilarity bounds and zero case", || vec![("dissimilarity bounds and zero case", dissimilarity_bounds())]),
        ("codec invariants", || vec![("codec invariants", codec_invariants())]),
        ("gradient verification", || vec![("gradient verification", gradient_checks())]),
        ("adam sanity", || vec![("adam sanity", adam_sanity())]),
        ("determinism", || vec![("determinism", determinism())]),
        ("synthetic benchmark", end_to_end),
    ];

    let mut failed = 0;
    for (name, check) in checks {
        if !wanted(name) {
            continue;
        }
        for (label, o) in check() {
            println!("[{}] {label}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
            failed += usize::from(!o.pass);
        }
    }
    if wanted("reproduction targets") {
        println!(
            "[EXCLUDED] NTU RGB+D reproduction targets (documented, not gated): consensus-ViT 73.43 cs / 80.85 cv; \
             CNN 64.50 -> 70.96 cs vs ViT 70.29 -> 73.43 cs; L=10/25/40 -> 72.08/80.82, 73.43/80.85, 73.57/80.94; \
             expected spread +-1.5 points"
        );
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
