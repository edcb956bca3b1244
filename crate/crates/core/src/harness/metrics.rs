use serde::{Deserialize, Serialize};

use crate::classifiers::{argmax, Posterior};
use crate::error::{Error, Result};

/// Counts indexed `[true class][predicted class]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let classes = counts.len();
        if classes == 0 || counts.iter().any(|r| r.len() != classes) {
            return Err(Error::Contract("confusion matrix must be square and non-empty".into()));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn from_predictions(classes: usize, truth: &[usize], predicted: &[usize]) -> Self {
        let mut m = Self::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            m.counts[t][p] += 1;
        }
        m
    }

    pub fn from_posteriors(classes: usize, truth: &[usize], posteriors: &[Posterior]) -> Self {
        let predicted: Vec<usize> = posteriors.iter().map(|p| argmax(p)).collect();
        Self::from_predictions(classes, truth, &predicted)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|k| self.counts[k][k]).sum()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

impl Metrics {
    /// Accuracy, and one-vs-rest precision and recall macro-averaged over
    /// classes. A class never predicted (or never present) contributes 0.
    pub fn from_confusion(m: &ConfusionMatrix) -> Result<Self> {
        let total = m.total();
        if total == 0 {
            return Err(Error::Contract("confusion matrix holds no samples".into()));
        }
        let c = m.classes;
        let mut precision = 0.0;
        let mut recall = 0.0;
        for k in 0..c {
            let tp = m.counts[k][k] as f64;
            let predicted: u64 = (0..c).map(|r| m.counts[r][k]).sum();
            let actual: u64 = m.counts[k].iter().sum();
            if predicted > 0 {
                precision += tp / predicted as f64;
            }
            if actual > 0 {
                recall += tp / actual as f64;
            }
        }
        precision /= c as f64;
        recall /= c as f64;
        let f_score = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Ok(Metrics {
            accuracy: m.trace() as f64 / total as f64,
            precision,
            recall,
            f_score,
        })
    }

    pub fn mean(rows: &[Metrics]) -> Metrics {
        let n = rows.len().max(1) as f64;
        let sum = |f: fn(&Metrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Metrics {
            accuracy: sum(|m| m.accuracy),
            precision: sum(|m| m.precision),
            recall: sum(|m| m.recall),
            f_score: sum(|m| m.f_score),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// One row per level-2 classifier, in arrangement order.
    pub individual: Vec<Metrics>,
    /// Mean of the individual rows.
    pub average: Metrics,
    pub consensus: Metrics,
    pub individual_confusions: Vec<ConfusionMatrix>,
    pub consensus_confusion: ConfusionMatrix,
}

/// Metrics for each classifier's and the consensus head's test confusion.
pub fn compute_metrics(individual: &[ConfusionMatrix], consensus: &ConfusionMatrix) -> Result<MetricsReport> {
    let rows = individual
        .iter()
        .map(Metrics::from_confusion)
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport {
        average: Metrics::mean(&rows),
        individual: rows,
        consensus: Metrics::from_confusion(consensus)?,
        individual_confusions: individual.to_vec(),
        consensus_confusion: consensus.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_diagonal() {
        let m = ConfusionMatrix::from_counts(vec![vec![5, 0, 0], vec![0, 2, 0], vec![0, 0, 7]]).unwrap();
        let r = Metrics::from_confusion(&m).unwrap();
        assert_eq!((r.accuracy, r.precision, r.recall, r.f_score), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn two_class_hand_case() {
        let m = ConfusionMatrix::from_counts(vec![vec![3, 1], vec![1, 3]]).unwrap();
        let r = Metrics::from_confusion(&m).unwrap();
        for v in [r.accuracy, r.precision, r.recall, r.f_score] {
            assert!((v - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn unpredicted_class_contributes_zero_precision() {
        // everything predicted as class 0
        let m = ConfusionMatrix::from_counts(vec![vec![2, 0], vec![2, 0]]).unwrap();
        let r = Metrics::from_confusion(&m).unwrap();
        assert!((r.precision - 0.25).abs() < 1e-12);
        assert!((r.recall - 0.5).abs() < 1e-12);
        assert!((r.accuracy - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_matrix_is_rejected() {
        assert!(Metrics::from_confusion(&ConfusionMatrix::new(3)).is_err());
        assert!(ConfusionMatrix::from_counts(vec![]).is_err());
    }
}
