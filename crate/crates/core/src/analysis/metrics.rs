use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

/// Binary metrics for the positive class; any 0/0 is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl ConfusionCounts {
    pub fn report(self) -> MetricsReport {
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        MetricsReport {
            counts: self,
            precision,
            recall,
            f1,
            accuracy: ratio(self.tp + self.tn, self.tp + self.fp + self.fn_ + self.tn),
        }
    }
}

pub fn metrics(predictions: &[usize], gold: &[usize], positive: usize) -> Result<MetricsReport> {
    if predictions.len() != gold.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} gold labels",
            predictions.len(),
            gold.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in predictions.iter().zip(gold) {
        match (p == positive, g == positive) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            // A wrong non-positive guess (K > 2) lands in no cell but still
            // counts against accuracy.
            (false, false) if p == g => c.tn += 1,
            (false, false) => {}
        }
    }
    let mut report = c.report();
    let correct = predictions.iter().zip(gold).filter(|(p, g)| p == g).count();
    report.accuracy = ratio(correct, gold.len());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_oracle() {
        let mut pred = vec![1, 1, 1, 1, 0, 0, 0, 0, 0, 0];
        let gold = vec![1, 1, 1, 0, 1, 1, 0, 0, 0, 0];
        let r = metrics(&pred, &gold, 1).unwrap();
        assert_eq!(
            r.counts,
            ConfusionCounts {
                tp: 3,
                fp: 1,
                fn_: 2,
                tn: 4
            }
        );
        assert_eq!(r.precision, 0.75);
        assert_eq!(r.recall, 0.6);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.accuracy, 0.7);
        pred.reverse();
        assert!(metrics(&pred[1..], &gold, 1).is_err());
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let gold = vec![1, 0, 1, 0];
        let r = metrics(&gold, &gold, 1).unwrap();
        assert_eq!(
            (r.precision, r.recall, r.f1, r.accuracy),
            (1.0, 1.0, 1.0, 1.0)
        );
        let r = metrics(&[0, 0, 0, 0], &gold, 1).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
        assert_eq!(r.accuracy, 0.5);
    }
}
