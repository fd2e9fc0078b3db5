//! Levenshtein distance and the WER/CER/PER rates built on it.

use crate::error::{contract_err, Result};

/// Unit-cost edit distance.
pub fn levenshtein<S: PartialEq>(hyp: &[S], reference: &[S]) -> usize {
    let mut prev: Vec<usize> = (0..=reference.len()).collect();
    let mut cur = vec![0; reference.len() + 1];
    for (i, h) in hyp.iter().enumerate() {
        cur[0] = i + 1;
        for (j, r) in reference.iter().enumerate() {
            let sub = prev[j] + usize::from(h != r);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[reference.len()]
}

/// Edit distance normalized by reference length; may exceed 1.
pub fn edit_distance_rate<S: PartialEq>(hyp: &[S], reference: &[S]) -> Result<f64> {
    if reference.is_empty() {
        return contract_err("error rate undefined for an empty reference");
    }
    Ok(levenshtein(hyp, reference) as f64 / reference.len() as f64)
}

/// Word error rate over whitespace tokens.
pub fn wer(hyp: &str, reference: &str) -> Result<f64> {
    let h: Vec<&str> = hyp.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    edit_distance_rate(&h, &r)
}

/// Character error rate (whitespace included).
pub fn cer(hyp: &str, reference: &str) -> Result<f64> {
    let h: Vec<char> = hyp.chars().collect();
    let r: Vec<char> = reference.chars().collect();
    edit_distance_rate(&h, &r)
}
