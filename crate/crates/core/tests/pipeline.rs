use std::fs;
use std::path::Path;

use skelvit::classifiers::ClassifierKind;
use skelvit::harness::*;

fn tiny(dir: &Path, kind: ClassifierKind) -> RunConfig {
    RunConfig {
        dataset: DatasetSource::Synthetic {
            per_class: 6,
            seed: None,
        },
        classifier: kind,
        arrangements: 2,
        draws: 8,
        epochs: 1,
        batch_size: 16,
        seed: 4,
        output_dir: dir.to_path_buf(),
        ..RunConfig::default()
    }
}

#[test]
fn artifacts_and_report_invariants() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        averaged_posteriors: true,
        ..tiny(dir.path(), ClassifierKind::Cnn)
    };
    let r = run_pipeline(&cfg).unwrap();
    for f in [ARRANGEMENT_FILE, CONFIG_FILE, RESULTS_FILE, METRICS_CSV, MANIFEST_FILE, CONSENSUS_CHECKPOINT, "level2_0.ckpt", "level2_1.ckpt"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    assert!(!dir.path().join(FAILURE_MARKER).exists());
    assert_eq!(r.counts.test, 14 * 2);
    assert_eq!(r.counts.level2_train, 14 * 4);
    let all = r.report.individual_confusions.iter().chain([&r.report.consensus_confusion]);
    let rows = r.report.individual.iter().chain([&r.report.consensus]);
    for (m, metrics) in all.zip(rows) {
        assert_eq!(m.total(), r.counts.test as u64);
        assert_eq!(metrics.accuracy, m.trace() as f64 / m.total() as f64);
    }
    assert!(r.averaged_posteriors.is_some());
    let csv = fs::read_to_string(dir.path().join(METRICS_CSV)).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 + 1 + 1 + 1);

    let again = evaluate_run(dir.path()).unwrap();
    assert_eq!(again, r.report);
    assert!(render_report(dir.path()).unwrap().contains("consensus_of_cnn"));
}

#[test]
fn results_are_identical_across_worker_counts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(&tiny(a.path(), ClassifierKind::Vit)).unwrap();
    run_pipeline(&RunConfig {
        workers: 2,
        ..tiny(b.path(), ClassifierKind::Vit)
    })
    .unwrap();
    for f in [RESULTS_FILE, METRICS_CSV, MANIFEST_FILE, CONFIG_FILE, ARRANGEMENT_FILE, "level2_0.ckpt", "level2_1.ckpt", CONSENSUS_CHECKPOINT] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn failure_leaves_a_marker() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        dataset: DatasetSource::NtuDir {
            path: dir.path().join("missing"),
            class_table: None,
        },
        ..tiny(dir.path(), ClassifierKind::Cnn)
    };
    assert!(run_pipeline(&cfg).is_err());
    let marker = fs::read_to_string(dir.path().join(FAILURE_MARKER)).unwrap();
    let record: serde_json::Value = serde_json::from_str(&marker).unwrap();
    assert_eq!(record["kind"], "io");
}

#[test]
fn comparison_shares_one_arrangement_set() {
    let dir = tempfile::tempdir().unwrap();
    let cmp = compare_classifiers(&tiny(dir.path(), ClassifierKind::Vit)).unwrap();
    assert_eq!(cmp.rows().len(), 4);
    let a = file_sha256(&dir.path().join("cnn").join(ARRANGEMENT_FILE)).unwrap();
    let b = file_sha256(&dir.path().join("vit").join(ARRANGEMENT_FILE)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, cmp.arrangement_sha256);
    for k in &cmp.kinds {
        assert!((k.gap - (k.consensus.accuracy - k.average.accuracy)).abs() < 1e-15);
    }
}

#[test]
fn single_value_ablation_matches_a_plain_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = RunConfig {
        arrangements: 1,
        ..tiny(a.path(), ClassifierKind::Cnn)
    };
    let rows = run_ablation(&cfg, &[1]).unwrap();
    let plain = run_pipeline(&RunConfig {
        output_dir: b.path().to_path_buf(),
        ..cfg.clone()
    })
    .unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].consensus, plain.report.consensus);
    assert_eq!(rows[0].average, plain.report.average);
    assert!(run_ablation(&cfg, &[]).is_err());
}
