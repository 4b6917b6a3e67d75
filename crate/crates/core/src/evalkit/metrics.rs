use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{predict_classes, ModelParams};
use crate::shiftdata::Dataset;

const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    /// `confusion[truth][predicted]`
    pub confusion: Vec<Vec<usize>>,
    /// Windows per true class.
    pub class_counts: Vec<usize>,
    pub n_samples: usize,
}

impl MetricsReport {
    /// Accuracy plus macro precision and recall. Macro means run over the
    /// classes present in `truth`; a class never predicted has precision 0.
    pub fn from_predictions(truth: &[usize], pred: &[usize], n_classes: usize) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::InvalidArgument("cannot score an empty set".into()));
        }
        if truth.len() != pred.len() {
            return Err(Error::shape(
                "metrics",
                "prediction count",
                truth.len(),
                pred.len(),
            ));
        }
        if let Some(bad) = truth.iter().chain(pred).find(|&&c| c >= n_classes) {
            return Err(Error::InvalidArgument(format!(
                "class {bad} outside [0, {n_classes})"
            )));
        }
        let mut confusion = vec![vec![0usize; n_classes]; n_classes];
        for (&t, &p) in truth.iter().zip(pred) {
            confusion[t][p] += 1;
        }
        let class_counts: Vec<usize> = confusion.iter().map(|row| row.iter().sum()).collect();
        let correct: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
        let present: Vec<usize> = (0..n_classes).filter(|&c| class_counts[c] > 0).collect();
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = present
            .iter()
            .map(|&c| {
                ratio(
                    confusion[c][c],
                    (0..n_classes).map(|t| confusion[t][c]).sum(),
                )
            })
            .sum::<f64>()
            / present.len() as f64;
        let recall = present
            .iter()
            .map(|&c| ratio(confusion[c][c], class_counts[c]))
            .sum::<f64>()
            / present.len() as f64;
        Ok(MetricsReport {
            accuracy: correct as f64 / truth.len() as f64,
            macro_precision: precision,
            macro_recall: recall,
            confusion,
            class_counts,
            n_samples: truth.len(),
        })
    }
}

/// Scores eval-mode argmax predictions on a labeled dataset.
pub fn evaluate(params: &ModelParams, test: &Dataset) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("test set is empty".into()));
    }
    let truth = test.labels()?;
    MetricsReport::from_predictions(&truth, &predict(params, test)?, params.config.n_classes)
}

/// Eval-mode argmax class of every window, labeled or not.
pub fn predict(params: &ModelParams, data: &Dataset) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut pred = Vec::with_capacity(data.len());
    for chunk in idx.chunks(EVAL_CHUNK) {
        pred.extend(predict_classes(params, &data.batch(chunk)?)?);
    }
    Ok(pred)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 1, 0];
        let r = MetricsReport::from_predictions(&y, &y, 3).unwrap();
        assert_eq!(
            (r.accuracy, r.macro_precision, r.macro_recall),
            (1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn constant_predictor_on_balanced_data() {
        let y: Vec<usize> = (0..12).map(|i| i % 4).collect();
        let r = MetricsReport::from_predictions(&y, &[2; 12], 4).unwrap();
        assert_eq!(r.accuracy, 0.25);
        assert_eq!(r.macro_recall, 0.25);
        // Only class 2 is ever predicted: precision 3/12 there, 0 elsewhere.
        assert!((r.macro_precision - 0.25 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn hand_built_three_class_confusion() {
        // truth\pred   0  1  2
        //   0          3  1  0
        //   1          1  2  1
        //   2          0  2  2
        let mut truth = Vec::new();
        let mut pred = Vec::new();
        for (t, row) in [[3, 1, 0], [1, 2, 1], [0, 2, 2]].iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                truth.extend(std::iter::repeat(t).take(n));
                pred.extend(std::iter::repeat(p).take(n));
            }
        }
        let r = MetricsReport::from_predictions(&truth, &pred, 3).unwrap();
        assert!((r.accuracy - 7.0 / 12.0).abs() < 1e-15);
        let precision = (3.0 / 4.0 + 2.0 / 5.0 + 2.0 / 3.0) / 3.0;
        let recall = (3.0 / 4.0 + 2.0 / 4.0 + 2.0 / 4.0) / 3.0;
        assert!((r.macro_precision - precision).abs() < 1e-15);
        assert!((r.macro_recall - recall).abs() < 1e-15);
    }

    #[test]
    fn absent_classes_leave_macro_means() {
        let r = MetricsReport::from_predictions(&[0, 0, 1], &[0, 0, 1], 5).unwrap();
        assert_eq!(r.macro_recall, 1.0);
        assert_eq!(r.macro_precision, 1.0);
    }

    #[test]
    fn empty_set_is_an_error() {
        assert!(MetricsReport::from_predictions(&[], &[], 2).is_err());
    }
}
