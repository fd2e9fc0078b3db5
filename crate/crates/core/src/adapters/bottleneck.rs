//! Residual down-project / nonlinearity / up-project adapter.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::tape::Activation;
use crate::tensor::{ParamId, ParamStore, Tape, Var};

#[derive(Clone, Copy, Debug)]
pub struct BottleneckIds {
    pub w_down: ParamId,
    pub b_down: ParamId,
    pub w_up: ParamId,
    pub b_up: ParamId,
    pub nonlinearity: Activation,
}

/// `h + g(h·W_down + b_down)·W_up + b_up`.
pub fn bottleneck_forward<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    h: Var,
    ids: &BottleneckIds,
) -> Result<Var> {
    let (wd, bd) = (tape.param(store, ids.w_down), tape.param(store, ids.b_down));
    let (wu, bu) = (tape.param(store, ids.w_up), tape.param(store, ids.b_up));
    let down = tape.linear(h, wd, Some(bd))?;
    let act = tape.activation(down, ids.nonlinearity)?;
    let up = tape.linear(act, wu, Some(bu))?;
    tape.add(h, up)
}
