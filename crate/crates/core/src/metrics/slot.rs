use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Typed span over frames `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub tag: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlotScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Micro-averaged exact-match span F1 over utterances.
pub fn slot_f1(pred: &[Vec<Span>], gold: &[Vec<Span>]) -> SlotScores {
    let (mut tp, mut n_pred, mut n_gold) = (0usize, 0usize, 0usize);
    for (p, g) in pred.iter().zip(gold) {
        let p: BTreeSet<_> = p.iter().collect();
        let g: BTreeSet<_> = g.iter().collect();
        tp += p.intersection(&g).count();
        n_pred += p.len();
        n_gold += g.len();
    }
    if n_pred == 0 && n_gold == 0 {
        return SlotScores {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        };
    }
    let precision = if n_pred > 0 { tp as f64 / n_pred as f64 } else { 0.0 };
    let recall = if n_gold > 0 { tp as f64 / n_gold as f64 } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    SlotScores { precision, recall, f1 }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(tag: usize, start: usize, end: usize) -> Span {
        Span { tag, start, end }
    }

    #[test]
    fn examples() {
        let gold = vec![vec![s(1, 0, 2), s(2, 4, 6)], vec![s(1, 1, 3)]];
        assert_eq!(slot_f1(&gold, &gold).f1, 1.0);
        assert_eq!(slot_f1(&[vec![], vec![]], &gold).f1, 0.0);

        let pred = vec![vec![s(1, 0, 2), s(2, 4, 5)], vec![s(1, 1, 3)]];
        let sc = slot_f1(&pred, &gold);
        assert!((sc.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((sc.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((sc.f1 - 2.0 / 3.0).abs() < 1e-15);
    }
}
