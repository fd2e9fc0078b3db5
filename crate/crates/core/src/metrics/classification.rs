use crate::error::{contract_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{kernels, Tensor};

/// Mean negative log-softmax probability of each row's label.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let n = *logits.shape().last().unwrap_or(&1);
    let rows = logits.len() / n;
    if rows != labels.len() {
        return Err(Error::Dimension {
            op: "cross_entropy",
            lhs: logits.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
        return contract_err(format!("label {bad} out of range for {n} classes"));
    }
    let lp = kernels::log_softmax_rows(logits.data(), n);
    let total: T = labels.iter().enumerate().map(|(i, &l)| lp[i * n + l]).sum();
    Ok(-total / T::of(rows as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationScores {
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub support: Vec<usize>,
}

/// Accuracy plus support-weighted F1; undefined precision/recall count as 0.
pub fn accuracy_and_weighted_f1(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<ClassificationScores> {
    if preds.len() != labels.len() {
        return Err(Error::Dimension {
            op: "accuracy_and_weighted_f1",
            lhs: vec![preds.len()],
            rhs: vec![labels.len()],
        });
    }
    if preds.is_empty() {
        return contract_err("no predictions to score");
    }
    if let Some(&bad) = preds.iter().chain(labels).find(|&&c| c >= n_classes) {
        return contract_err(format!("class {bad} out of range for {n_classes} classes"));
    }
    let mut tp = vec![0usize; n_classes];
    let mut predicted = vec![0usize; n_classes];
    let mut support = vec![0usize; n_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        predicted[p] += 1;
        support[l] += 1;
        if p == l {
            tp[l] += 1;
        }
    }
    let per_class_f1: Vec<f64> = (0..n_classes)
        .map(|c| {
            let precision = if predicted[c] > 0 { tp[c] as f64 / predicted[c] as f64 } else { 0.0 };
            let recall = if support[c] > 0 { tp[c] as f64 / support[c] as f64 } else { 0.0 };
            if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            }
        })
        .collect();
    let n = preds.len() as f64;
    let accuracy = tp.iter().sum::<usize>() as f64 / n;
    let weighted_f1 = per_class_f1.iter().zip(&support).map(|(f, &s)| f * s as f64 / n).sum();
    let macro_f1 = per_class_f1.iter().sum::<f64>() / n_classes as f64;
    Ok(ClassificationScores {
        accuracy,
        weighted_f1,
        macro_f1,
        per_class_f1,
        support,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_examples() {
        let uniform = Tensor::<f64>::zeros(&[2, 4]);
        assert!((cross_entropy(&uniform, &[0, 3]).unwrap() - 4f64.ln()).abs() < 1e-15);

        let sharp = Tensor::<f64>::from_f64(vec![1, 3], &[50.0, 0.0, 0.0]).unwrap();
        assert!(cross_entropy(&sharp, &[0]).unwrap() < 1e-20);

        let x = [0.2, -1.3, 0.9];
        let t = Tensor::<f64>::from_f64(vec![1, 3], &x).unwrap();
        let z: f64 = x.iter().map(|v| v.exp()).sum();
        let want = -(x[2].exp() / z).ln();
        assert!((cross_entropy(&t, &[2]).unwrap() - want).abs() < 1e-15);
        assert!(cross_entropy(&t, &[3]).is_err());
    }

    #[test]
    fn perfect_predictions() {
        let s = accuracy_and_weighted_f1(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!((s.accuracy, s.weighted_f1), (1.0, 1.0));
    }

    #[test]
    fn constant_predictor_on_balanced_pair() {
        let s = accuracy_and_weighted_f1(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(s.accuracy, 0.5);
        assert!((s.weighted_f1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn confusion_case_matches_hand_count() {
        // labels: 0 0 0 1 1 2 ; preds: 0 1 0 1 2 2
        let s = accuracy_and_weighted_f1(&[0, 1, 0, 1, 2, 2], &[0, 0, 0, 1, 1, 2], 3).unwrap();
        // class0: P=2/2 R=2/3 F=0.8 ; class1: P=1/2 R=1/2 F=0.5 ; class2: P=1/2 R=1 F=2/3
        let want = (3.0 * 0.8 + 2.0 * 0.5 + 1.0 * (2.0 / 3.0)) / 6.0;
        assert!((s.weighted_f1 - want).abs() < 1e-15);
        assert!((s.accuracy - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(s.support, vec![3, 2, 1]);
    }

    #[test]
    fn weighted_equals_macro_on_balanced_support() {
        let labels = [0, 0, 1, 1, 2, 2];
        let preds = [0, 1, 1, 2, 2, 0];
        let s = accuracy_and_weighted_f1(&preds, &labels, 3).unwrap();
        assert!((s.weighted_f1 - s.macro_f1).abs() < 1e-15);
    }
}
