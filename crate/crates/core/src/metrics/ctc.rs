//! Connectionist temporal classification, computed in log space.
//!
//! The blank symbol is index 0. Labels hold symbols in `1..V`.

use crate::error::{contract_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn log_add<T: Scalar>(a: T, b: T) -> T {
    if a == T::neg_infinity() {
        return b;
    }
    if b == T::neg_infinity() {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Loss value and whether any alignment exists.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CtcLoss<T> {
    pub loss: T,
    pub feasible: bool,
}

pub(crate) struct CtcOutcome<T> {
    pub loss: T,
    pub feasible: bool,
    /// d loss / d log_probs, row-major `[T, V]`.
    pub grad: Vec<T>,
}

fn extended(label: &[usize]) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * label.len() + 1);
    ext.push(0);
    for &l in label {
        ext.push(l);
        ext.push(0);
    }
    ext
}

fn validate(label: &[usize], steps: usize, v: usize) -> Result<()> {
    if steps == 0 {
        return contract_err("ctc requires at least one frame");
    }
    if let Some(&bad) = label.iter().find(|&&l| l == 0 || l >= v) {
        return contract_err(format!("ctc label symbol {bad} outside 1..{v}"));
    }
    Ok(())
}

fn forward_lattice<T: Scalar>(lp: &[T], steps: usize, v: usize, ext: &[usize]) -> Vec<T> {
    let s_len = ext.len();
    let ninf = T::neg_infinity();
    let mut alpha = vec![ninf; steps * s_len];
    alpha[0] = lp[ext[0]];
    if s_len > 1 {
        alpha[1] = lp[ext[1]];
    }
    for t in 1..steps {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut a = prev[s];
            if s >= 1 {
                a = log_add(a, prev[s - 1]);
            }
            if s >= 2 && ext[s] != 0 && ext[s] != ext[s - 2] {
                a = log_add(a, prev[s - 2]);
            }
            alpha[t * s_len + s] = if a == ninf { ninf } else { a + lp[t * v + ext[s]] };
        }
    }
    alpha
}

fn backward_lattice<T: Scalar>(lp: &[T], steps: usize, v: usize, ext: &[usize]) -> Vec<T> {
    let s_len = ext.len();
    let ninf = T::neg_infinity();
    let mut beta = vec![ninf; steps * s_len];
    let last = (steps - 1) * s_len;
    beta[last + s_len - 1] = lp[(steps - 1) * v + ext[s_len - 1]];
    if s_len > 1 {
        beta[last + s_len - 2] = lp[(steps - 1) * v + ext[s_len - 2]];
    }
    for t in (0..steps - 1).rev() {
        for s in 0..s_len {
            let next = &beta[(t + 1) * s_len..(t + 2) * s_len];
            let mut b = next[s];
            if s + 1 < s_len {
                b = log_add(b, next[s + 1]);
            }
            if s + 2 < s_len && ext[s] != 0 && ext[s + 2] != ext[s] {
                b = log_add(b, next[s + 2]);
            }
            beta[t * s_len + s] = if b == ninf { ninf } else { b + lp[t * v + ext[s]] };
        }
    }
    beta
}

fn total_log_prob<T: Scalar>(alpha: &[T], steps: usize, s_len: usize) -> T {
    let row = &alpha[(steps - 1) * s_len..];
    if s_len > 1 {
        log_add(row[s_len - 1], row[s_len - 2])
    } else {
        row[0]
    }
}

/// Negative log of the total probability of `label` over all alignments of
/// `log_probs[T, V]`. Infeasible labels yield `+∞` with `feasible == false`.
pub fn ctc_loss<T: Scalar>(log_probs: &Tensor<T>, label: &[usize]) -> Result<CtcLoss<T>> {
    if log_probs.rank() != 2 {
        return contract_err(format!("ctc expects [T, V] log-probs, got {:?}", log_probs.shape()));
    }
    let (steps, v) = (log_probs.shape()[0], log_probs.shape()[1]);
    validate(label, steps, v)?;
    let ext = extended(label);
    let alpha = forward_lattice(log_probs.data(), steps, v, &ext);
    let lp = total_log_prob(&alpha, steps, ext.len());
    Ok(CtcLoss {
        loss: -lp,
        feasible: lp > T::neg_infinity(),
    })
}

pub(crate) fn ctc_forward_backward<T: Scalar>(
    lp: &[T],
    steps: usize,
    v: usize,
    label: &[usize],
) -> Result<CtcOutcome<T>> {
    validate(label, steps, v)?;
    let ext = extended(label);
    let s_len = ext.len();
    let alpha = forward_lattice(lp, steps, v, &ext);
    let log_p = total_log_prob(&alpha, steps, s_len);
    let mut grad = vec![T::zero(); steps * v];
    if log_p == T::neg_infinity() {
        return Ok(CtcOutcome {
            loss: T::infinity(),
            feasible: false,
            grad,
        });
    }
    let beta = backward_lattice(lp, steps, v, &ext);
    let ninf = T::neg_infinity();
    let mut acc = vec![ninf; v];
    for t in 0..steps {
        acc.iter_mut().for_each(|a| *a = ninf);
        for s in 0..s_len {
            let (a, b) = (alpha[t * s_len + s], beta[t * s_len + s]);
            if a == ninf || b == ninf {
                continue;
            }
            let k = ext[s];
            acc[k] = log_add(acc[k], a + b - lp[t * v + k]);
        }
        for k in 0..v {
            if acc[k] != ninf {
                grad[t * v + k] = -(acc[k] - log_p).exp();
            }
        }
    }
    Ok(CtcOutcome {
        loss: -log_p,
        feasible: true,
        grad,
    })
}

/// Best-path decoding: per-frame argmax, merge repeats, drop blanks.
pub fn ctc_greedy_decode<T: Scalar>(scores: &Tensor<T>) -> Vec<usize> {
    let v = *scores.shape().last().unwrap_or(&1);
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for row in scores.data().chunks(v) {
        let best = row
            .iter()
            .enumerate()
            .fold((0, T::neg_infinity()), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
            .0;
        if best != prev && best != 0 {
            out.push(best);
        }
        prev = best;
    }
    out
}
