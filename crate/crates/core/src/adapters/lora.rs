//! Low-rank updates added in parallel to frozen projections.

use crate::adapters::Projection;
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{ParamId, Tape, Var};

/// `W_down [d, r]` and `W_up [r, d]` for one projection.
#[derive(Clone, Copy, Debug)]
pub struct LoraIds {
    pub w_down: ParamId,
    pub w_up: ParamId,
}

/// All low-rank factors of one layer, plus the shared scale `s`.
#[derive(Clone, Debug)]
pub struct LoraLayer {
    pub scale: f64,
    pub factors: Vec<(Projection, LoraIds)>,
}

impl LoraLayer {
    pub fn factors(&self, p: Projection) -> Option<&LoraIds> {
        self.factors.iter().find(|(q, _)| *q == p).map(|(_, ids)| ids)
    }
}

/// `x·W + b + s·x·W_down·W_up`.
pub fn lora_linear<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    w_down: Var,
    w_up: Var,
    s: T,
) -> Result<Var> {
    let base = tape.linear(x, w, b)?;
    let down = tape.linear(x, w_down, None)?;
    let up = tape.linear(down, w_up, None)?;
    let delta = tape.scale(up, s)?;
    tape.add(base, delta)
}
