//! Convolutional residual adapter: pointwise-down, norm, activation,
//! depthwise, squeeze-excite, pointwise-up.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::tape::Activation;
use crate::tensor::{ParamId, ParamStore, Tape, Var};

/// Channel gate `C → C/r → C`.
#[derive(Clone, Copy, Debug)]
pub struct SqueezeExciteIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct ConvAdapterIds {
    pub conv_in_w: ParamId,
    pub conv_in_b: ParamId,
    pub ln_gamma: ParamId,
    pub ln_beta: ParamId,
    pub depth_w: ParamId,
    pub depth_b: ParamId,
    pub se: SqueezeExciteIds,
    pub conv_out_w: ParamId,
    pub conv_out_b: ParamId,
    pub nonlinearity: Activation,
    pub ln_eps: f64,
}

/// Scales each channel of `h[B, C, T]` by `sigmoid(FC2(relu(FC1(mean_T h))))`.
pub fn squeeze_excite<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, h: Var, ids: &SqueezeExciteIds) -> Result<Var> {
    let s = tape.shape(h).to_vec();
    if s.len() != 3 {
        return Err(Error::Dimension {
            op: "squeeze_excite",
            lhs: s,
            rhs: vec![],
        });
    }
    let pooled = tape.mean_axis(h, 2)?;
    let (w1, b1) = (tape.param(store, ids.w1), tape.param(store, ids.b1));
    let z = tape.linear(pooled, w1, Some(b1))?;
    let z = tape.relu(z)?;
    let (w2, b2) = (tape.param(store, ids.w2), tape.param(store, ids.b2));
    let g = tape.linear(z, w2, Some(b2))?;
    let g = tape.sigmoid(g)?;
    let g = tape.reshape(g, &[s[0], s[1], 1])?;
    tape.mul(h, g)
}

/// Residual convolutional adapter over `h[B, T, d]`.
pub fn conv_adapter_forward<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, h: Var, ids: &ConvAdapterIds) -> Result<Var> {
    let x = tape.permute(h, &[0, 2, 1])?;
    let (w, b) = (tape.param(store, ids.conv_in_w), tape.param(store, ids.conv_in_b));
    let x = tape.conv1d(x, w, Some(b), 1)?;

    let x = tape.permute(x, &[0, 2, 1])?;
    let (g, be) = (tape.param(store, ids.ln_gamma), tape.param(store, ids.ln_beta));
    let x = tape.layer_norm(x, g, be, T::of(ids.ln_eps))?;
    let x = tape.activation(x, ids.nonlinearity)?;
    let x = tape.permute(x, &[0, 2, 1])?;

    let channels = tape.shape(x)[1];
    let (w, b) = (tape.param(store, ids.depth_w), tape.param(store, ids.depth_b));
    let x = tape.conv1d(x, w, Some(b), channels)?;
    let x = squeeze_excite(tape, store, x, &ids.se)?;
    let (w, b) = (tape.param(store, ids.conv_out_w), tape.param(store, ids.conv_out_b));
    let x = tape.conv1d(x, w, Some(b), 1)?;
    let x = tape.permute(x, &[0, 2, 1])?;
    tape.add(h, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Init;
    use crate::tensor::Tensor;

    fn se_store(c: usize, r: usize, init: &mut Init, zero: bool) -> (ParamStore<f64>, SqueezeExciteIds) {
        let mut s = ParamStore::new();
        let mut t = |shape: &[usize]| if zero { Tensor::zeros(shape) } else { init.normal(shape, 1.0) };
        let (w1, b1, w2, b2) = (t(&[c, c / r]), t(&[c / r]), t(&[c / r, c]), t(&[c]));
        let ids = SqueezeExciteIds {
            w1: s.add("se.W1", w1, true).unwrap(),
            b1: s.add("se.b1", b1, true).unwrap(),
            w2: s.add("se.W2", w2, true).unwrap(),
            b2: s.add("se.b2", b2, true).unwrap(),
        };
        (s, ids)
    }

    #[test]
    fn neutral_gate_halves() {
        let mut init = Init::new(1);
        let (s, ids) = se_store(4, 2, &mut init, true);
        let h = init.normal::<f64>(&[2, 4, 3], 1.0);
        let mut tape = Tape::new();
        let x = tape.constant(h.clone()).unwrap();
        let y = squeeze_excite(&mut tape, &s, x, &ids).unwrap();
        assert_eq!(tape.value(y), &h.map(|v| 0.5 * v));
    }

    #[test]
    fn seeded_gate_matches_direct_evaluation() {
        let mut init = Init::new(2);
        let (s, ids) = se_store(4, 2, &mut init, false);
        let h = init.normal::<f64>(&[1, 4, 3], 1.0);
        let mut tape = Tape::new();
        let x = tape.constant(h.clone()).unwrap();
        let y = squeeze_excite(&mut tape, &s, x, &ids).unwrap();
        let (w1, b1, w2, b2) = (s.value(ids.w1), s.value(ids.b1), s.value(ids.w2), s.value(ids.b2));
        let pooled: Vec<f64> = (0..4).map(|c| (0..3).map(|t| h.get(&[0, c, t])).sum::<f64>() / 3.0).collect();
        let z: Vec<f64> = (0..2)
            .map(|j| ((0..4).map(|c| pooled[c] * w1.get(&[c, j])).sum::<f64>() + b1.data()[j]).max(0.0))
            .collect();
        for c in 0..4 {
            let a = (0..2).map(|j| z[j] * w2.get(&[j, c])).sum::<f64>() + b2.data()[c];
            let gate = 1.0 / (1.0 + (-a).exp());
            for t in 0..3 {
                let got = tape.value(y).get(&[0, c, t]);
                assert!((got - gate * h.get(&[0, c, t])).abs() < 1e-14);
                assert!(got.abs() <= h.get(&[0, c, t]).abs());
            }
        }
    }
}
