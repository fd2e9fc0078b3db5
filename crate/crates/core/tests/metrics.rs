mod common;

use peft_core::metrics::{accuracy_and_weighted_f1, levenshtein, mcd, slot_f1, wer, McepSequence, Span};
use proptest::prelude::*;

#[test]
fn goldens_match_hand_derivations() {
    for g in common::metric_goldens().unwrap() {
        assert!(g.passes(), "{}: {} vs {} (tol {:e})", g.name, g.got, g.want, g.tol);
    }
}

#[test]
fn wer_counts_word_tokens() {
    assert_eq!(wer("a b c", "a b c").unwrap(), 0.0);
    assert_eq!(wer("a  b\tc", "a b c").unwrap(), 0.0);
    assert!((wer("a b c d", "a c").unwrap() - 1.0).abs() < 1e-15);
}

fn frames() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..6).prop_flat_map(|n| proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 4), n))
}

fn spans() -> impl Strategy<Value = Vec<Span>> {
    proptest::collection::vec((0usize..3, 0usize..6, 1usize..4), 0..4)
        .prop_map(|v| v.into_iter().map(|(tag, start, len)| Span { tag, start, end: start + len }).collect())
}

proptest! {
    #[test]
    fn levenshtein_is_a_metric(
        a in proptest::collection::vec(0u8..3, 0..7),
        b in proptest::collection::vec(0u8..3, 0..7),
        c in proptest::collection::vec(0u8..3, 0..7),
    ) {
        prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
        prop_assert_eq!(levenshtein(&a, &a), 0);
        prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
        prop_assert!(levenshtein(&a, &b) <= a.len().max(b.len()));
        prop_assert!(levenshtein(&a, &b) >= a.len().abs_diff(b.len()));
    }

    #[test]
    fn mcd_is_symmetric_and_nonnegative(a in frames(), b in frames()) {
        let (a, b) = (McepSequence::new(4, a).unwrap(), McepSequence::new(4, b).unwrap());
        let (ab, ba) = (mcd(&a, &b).unwrap(), mcd(&b, &a).unwrap());
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert_eq!(mcd(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn weighted_f1_is_bounded(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..40)) {
        let (p, l): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let s = accuracy_and_weighted_f1(&p, &l, 4).unwrap();
        prop_assert!((0.0..=1.0).contains(&s.accuracy));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&s.weighted_f1));
        let perfect = accuracy_and_weighted_f1(&l, &l, 4).unwrap();
        prop_assert_eq!(perfect.accuracy, 1.0);
        prop_assert!((perfect.weighted_f1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn slot_f1_bounds_and_identity(pred in spans(), gold in spans()) {
        let s = slot_f1(&[pred.clone()], &[gold.clone()]);
        prop_assert!((0.0..=1.0).contains(&s.f1));
        prop_assert_eq!(slot_f1(&[gold.clone()], &[gold]).f1, 1.0);
    }
}
