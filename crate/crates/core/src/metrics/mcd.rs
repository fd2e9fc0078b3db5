//! Mel-cepstral distortion between aligned MCEP frame sequences.

use std::f64::consts::LN_10;

use crate::error::{contract_err, Error, Result};

pub const DEFAULT_MCEP_DIM: usize = 24;

/// Frames of mel-cepstral coefficients, each of dimension `dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct McepSequence {
    dim: usize,
    frames: Vec<Vec<f64>>,
}

impl McepSequence {
    pub fn new(dim: usize, frames: Vec<Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return contract_err("MCEP dimension must be positive");
        }
        for f in &frames {
            if f.len() != dim {
                return Err(Error::Dimension {
                    op: "mcep frame",
                    lhs: vec![dim],
                    rhs: vec![f.len()],
                });
            }
            if f.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { op: "mcep frame" });
            }
        }
        Ok(Self { dim, frames })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }
}

/// Mean per-frame distortion in dB over the first `min(len)` frames.
pub fn mcd(target: &McepSequence, reference: &McepSequence) -> Result<f64> {
    if target.dim != reference.dim {
        return Err(Error::Dimension {
            op: "mcd",
            lhs: vec![target.dim],
            rhs: vec![reference.dim],
        });
    }
    let n = target.frames.len().min(reference.frames.len());
    if n == 0 {
        return contract_err("mcd needs at least one aligned frame");
    }
    let k = 10.0 / LN_10;
    let total: f64 = target.frames[..n]
        .iter()
        .zip(&reference.frames[..n])
        .map(|(t, r)| {
            let sq: f64 = t.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum();
            k * (2.0 * sq).sqrt()
        })
        .sum();
    Ok(total / n as f64)
}
