//! Scaled dot-product and multi-head attention, with optional prefix
//! key/value rows and low-rank projection updates.

use crate::adapters::lora::{lora_linear, LoraLayer};
use crate::adapters::prefix::{prefix_attention, PrefixIds};
use crate::adapters::Projection;
use crate::error::{contract_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ParamId, ParamStore, Tape, Var};

/// Output of an attention call together with its weight matrix.
#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    pub output: Var,
    /// `[B, h, T_q, T_k]`, rows summing to one.
    pub weights: Var,
}

/// `softmax(Q Kᵀ / √d_k) V` over `[B, h, T, d_k]` operands.
pub fn scaled_dot_attention<T: Scalar>(tape: &mut Tape<T>, q: Var, k: Var, v: Var) -> Result<AttentionOutput> {
    let (qs, ks, vs) = (tape.shape(q).to_vec(), tape.shape(k).to_vec(), tape.shape(v).to_vec());
    if qs.len() != 4 || ks.len() != 4 || ks != vs || qs[..2] != ks[..2] || qs[3] != ks[3] {
        return Err(Error::Dimension {
            op: "scaled_dot_attention",
            lhs: qs,
            rhs: ks,
        });
    }
    let d_k = qs[3];
    if ks[2] == 0 {
        return contract_err("attention over an empty key set");
    }
    let scores = tape.batch_matmul(q, k, true)?;
    let scaled = tape.scale(scores, T::one() / T::of(d_k as f64).sqrt())?;
    let weights = tape.softmax(scaled, 3)?;
    let output = tape.batch_matmul(weights, v, false)?;
    Ok(AttentionOutput { output, weights })
}

/// Projection weights of one attention block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionIds {
    pub w_q: ParamId,
    pub b_q: ParamId,
    pub w_k: ParamId,
    pub b_k: ParamId,
    pub w_v: ParamId,
    pub b_v: ParamId,
    pub w_o: ParamId,
    pub b_o: ParamId,
}

impl AttentionIds {
    pub fn projection(&self, p: Projection) -> (ParamId, ParamId) {
        match p {
            Projection::Q => (self.w_q, self.b_q),
            Projection::K => (self.w_k, self.b_k),
            Projection::V => (self.w_v, self.b_v),
            Projection::O => (self.w_o, self.b_o),
        }
    }
}

/// Adaptation state consulted by one attention call.
#[derive(Clone, Copy, Debug, Default)]
pub struct AttentionAdapters<'a> {
    pub prefix: Option<&'a PrefixIds>,
    pub lora: Option<&'a LoraLayer>,
}

fn project<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    ids: &AttentionIds,
    which: Projection,
    lora: Option<&LoraLayer>,
) -> Result<Var> {
    let (w, b) = ids.projection(which);
    let (w, b) = (tape.param(store, w), tape.param(store, b));
    match lora.and_then(|l| l.factors(which).map(|f| (l.scale, f))) {
        Some((scale, f)) => {
            let (down, up) = (tape.param(store, f.w_down), tape.param(store, f.w_up));
            lora_linear(tape, x, w, Some(b), down, up, T::of(scale))
        }
        None => tape.linear(x, w, Some(b)),
    }
}

/// `[B, T, d]` → `[B, h, T, d/h]`.
pub(crate) fn split_heads<T: Scalar>(tape: &mut Tape<T>, x: Var, n_heads: usize) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let r = tape.reshape(x, &[s[0], s[1], n_heads, s[2] / n_heads])?;
    tape.permute(r, &[0, 2, 1, 3])
}

/// `[B, h, T, d_k]` → `[B, T, h·d_k]`.
pub(crate) fn merge_heads<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let p = tape.permute(x, &[0, 2, 1, 3])?;
    tape.reshape(p, &[s[0], s[2], s[1] * s[3]])
}

/// Multi-head self-attention over `x[B, T, d_model]`.
pub fn multi_head_attention<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    ids: &AttentionIds,
    n_heads: usize,
    adapters: AttentionAdapters<'_>,
) -> Result<AttentionOutput> {
    let s = tape.shape(x).to_vec();
    if s.len() != 3 || s[2] % n_heads != 0 {
        return Err(Error::Dimension {
            op: "multi_head_attention",
            lhs: s,
            rhs: vec![n_heads],
        });
    }
    let q = project(tape, store, x, ids, Projection::Q, adapters.lora)?;
    let k = project(tape, store, x, ids, Projection::K, adapters.lora)?;
    let v = project(tape, store, x, ids, Projection::V, adapters.lora)?;
    let (q, k, v) = (
        split_heads(tape, q, n_heads)?,
        split_heads(tape, k, n_heads)?,
        split_heads(tape, v, n_heads)?,
    );
    let attn = match adapters.prefix {
        Some(prefix) => {
            let (pk, pv) = (tape.param(store, prefix.p_k), tape.param(store, prefix.p_v));
            prefix_attention(tape, q, k, v, pk, pv)?
        }
        None => scaled_dot_attention(tape, q, k, v)?,
    };
    let merged = merge_heads(tape, attn.output)?;
    let output = project(tape, store, merged, ids, Projection::O, adapters.lora)?;
    Ok(AttentionOutput {
        output,
        weights: attn.weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init::Init;
    use crate::tensor::Tensor;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn single_key_returns_value_row() {
        let mut init = Init::new(1);
        let mut tape = Tape::<f64>::new();
        let q = tape.constant(init.normal(&[1, 1, 3, 2], 1.0)).unwrap();
        let k = tape.constant(init.normal(&[1, 1, 1, 2], 1.0)).unwrap();
        let vv = init.normal::<f64>(&[1, 1, 1, 2], 1.0);
        let v = tape.constant(vv.clone()).unwrap();
        let out = scaled_dot_attention(&mut tape, q, k, v).unwrap();
        let o = tape.value(out.output);
        for row in o.data().chunks(2) {
            assert_eq!(row, vv.data());
        }
    }

    #[test]
    fn zero_query_averages_values() {
        let mut init = Init::new(2);
        let mut tape = Tape::<f64>::new();
        let q = tape.constant(Tensor::zeros(&[1, 1, 2, 3])).unwrap();
        let k = tape.constant(init.normal(&[1, 1, 4, 3], 1.0)).unwrap();
        let vv = init.normal::<f64>(&[1, 1, 4, 3], 1.0);
        let v = tape.constant(vv.clone()).unwrap();
        let out = scaled_dot_attention(&mut tape, q, k, v).unwrap();
        for j in 0..3 {
            let mean = (0..4).map(|r| vv.get(&[0, 0, r, j])).sum::<f64>() / 4.0;
            assert!((tape.value(out.output).get(&[0, 0, 1, j]) - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn two_by_two_matches_direct_formula() {
        let qd = vec![0.3, -1.2, 0.8, 0.5];
        let kd = vec![1.1, 0.4, -0.7, 0.9];
        let vd = vec![2.0, -1.0, 0.5, 3.0];
        let mut tape = Tape::<f64>::new();
        let q = tape.constant(t(&[1, 1, 2, 2], qd.clone())).unwrap();
        let k = tape.constant(t(&[1, 1, 2, 2], kd.clone())).unwrap();
        let v = tape.constant(t(&[1, 1, 2, 2], vd.clone())).unwrap();
        let out = scaled_dot_attention(&mut tape, q, k, v).unwrap();
        for i in 0..2 {
            let s: Vec<f64> = (0..2)
                .map(|j| (qd[i * 2] * kd[j * 2] + qd[i * 2 + 1] * kd[j * 2 + 1]) / 2f64.sqrt())
                .collect();
            let z = s[0].exp() + s[1].exp();
            let w = [s[0].exp() / z, s[1].exp() / z];
            for c in 0..2 {
                let want = w[0] * vd[c] + w[1] * vd[2 + c];
                assert!((tape.value(out.output).get(&[0, 0, i, c]) - want).abs() < 1e-15);
            }
        }
    }
}
