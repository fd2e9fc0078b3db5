//! Learnable key/value rows prepended to every head's attention.

use crate::error::{Error, Result};
use crate::model::attention::{scaled_dot_attention, AttentionOutput};
use crate::scalar::Scalar;
use crate::tensor::{ParamId, Tape, Var};

/// `P_K` and `P_V`, each `[n_heads, k, d_head]`.
#[derive(Clone, Copy, Debug)]
pub struct PrefixIds {
    pub p_k: ParamId,
    pub p_v: ParamId,
}

/// Attention with `p_k`/`p_v` (`[h, k, d_k]`) concatenated ahead of the keys and values.
pub fn prefix_attention<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    p_k: Var,
    p_v: Var,
) -> Result<AttentionOutput> {
    let ks = tape.shape(k).to_vec();
    let ps = tape.shape(p_k).to_vec();
    if ks.len() != 4 || ps.len() != 3 || ps[0] != ks[1] || ps[2] != ks[3] || tape.shape(p_v) != ps.as_slice() {
        return Err(Error::Dimension {
            op: "prefix_attention",
            lhs: ks,
            rhs: ps,
        });
    }
    let target = [ks[0], ps[0], ps[1], ps[2]];
    let (pk, pv) = (tape.broadcast_to(p_k, &target)?, tape.broadcast_to(p_v, &target)?);
    let keys = tape.concat(&[pk, k], 2)?;
    let values = tape.concat(&[pv, v], 2)?;
    scaled_dot_attention(tape, q, keys, values)
}
