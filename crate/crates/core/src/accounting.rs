//! Parameter counting, trainable fractions, and compression sweeps.

use serde::{Deserialize, Serialize};

use crate::adapters::{attach, AdapterSpec};
use crate::error::{config_err, contract_err, Result};
use crate::model::{EncoderConfig, Model, ParamGroup};
use crate::scalar::Scalar;
use crate::tensor::{ParamStore, Parameter};

/// Total element count of the parameters selected by `pred`.
pub fn count_params<T: Scalar>(store: &ParamStore<T>, pred: impl Fn(&Parameter<T>) -> bool) -> usize {
    store.iter().filter(|(_, p)| pred(p)).map(|(_, p)| p.numel()).sum()
}

/// `100·trainable/full` rounded half away from zero to two decimals.
///
/// Rounding is done on integers so that values such as `x.xx5` never fall
/// on the wrong side through binary representation error.
pub fn trainable_fraction(trainable: u64, full: u64) -> Result<f64> {
    if full == 0 {
        return contract_err("trainable fraction with a zero denominator");
    }
    let (t, f) = (trainable as u128, full as u128);
    let hundredths = (20_000 * t + f) / (2 * f);
    Ok(hundredths as f64 / 100.0)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCount {
    pub name: String,
    pub total: usize,
    pub trainable: usize,
}

/// Per-group counts and the trainable fraction against full fine-tuning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamReport {
    pub groups: Vec<GroupCount>,
    pub total: usize,
    pub trainable: usize,
    /// Parameter count of the unadapted model (the full fine-tuning budget).
    pub full: usize,
    /// `trainable / full`, unrounded.
    pub fraction: f64,
    /// `fraction` as a percentage, rounded to two decimals.
    pub percent: f64,
}

impl ParamReport {
    pub fn of<T: Scalar>(model: &Model<T>) -> Result<Self> {
        let groups: Vec<GroupCount> = [ParamGroup::Frontend, ParamGroup::Encoder, ParamGroup::Mechanism, ParamGroup::Head]
            .into_iter()
            .map(|g| GroupCount {
                name: g.label().to_string(),
                total: count_params(&model.params, |p| ParamGroup::of(&p.name) == g),
                trainable: count_params(&model.params, |p| p.trainable && ParamGroup::of(&p.name) == g),
            })
            .collect();
        let total = count_params(&model.params, |_| true);
        let trainable = count_params(&model.params, |p| p.trainable);
        let full = count_params(&model.params, |p| ParamGroup::of(&p.name) != ParamGroup::Mechanism);
        Ok(Self {
            groups,
            total,
            trainable,
            full,
            fraction: trainable as f64 / full as f64,
            percent: trainable_fraction(trainable as u64, full as u64)?,
        })
    }
}

/// Closed-form parameter counts of a configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClosedForm {
    pub frontend: usize,
    pub layers: usize,
    pub head: usize,
    /// Mechanism parameters in one transformer layer.
    pub mechanism_per_layer: usize,
    /// Mechanism parameters across all layers.
    pub mechanism: usize,
}

impl ClosedForm {
    /// Parameters of the unadapted model.
    pub fn backbone(&self) -> usize {
        self.frontend + self.layers + self.head
    }

    /// Parameters trained when the mechanism is attached (mechanism plus head).
    pub fn trainable(&self) -> usize {
        self.mechanism + self.head
    }
}

/// Mechanism parameters in one layer.
pub fn mechanism_per_layer(config: &EncoderConfig, spec: &AdapterSpec) -> Result<usize> {
    spec.validate(config)?;
    let d = config.d_model;
    Ok(match spec {
        AdapterSpec::None => 0,
        AdapterSpec::Bottleneck { compression, .. } => {
            let m = d / compression;
            d * m + m + m * d + d
        }
        AdapterSpec::Prefix { length } => 2 * length * d,
        AdapterSpec::Lora { rank, placements, .. } => placements.len() * rank * 2 * d,
        AdapterSpec::ConvAdapter {
            compression,
            k_point,
            k_depth,
            se_ratio,
            ..
        } => {
            let dc = d / compression;
            let ds = dc / se_ratio;
            let conv_in = k_point * d * dc + dc;
            let norm = 2 * dc;
            let depth = k_depth * dc + dc;
            let se = 2 * dc * ds + ds + dc;
            let conv_out = k_point * dc * d + d;
            conv_in + norm + depth + se + conv_out
        }
    })
}

pub fn closed_form_counts(config: &EncoderConfig, spec: &AdapterSpec) -> Result<ClosedForm> {
    config.validate()?;
    let (d, k) = (config.d_model, config.frontend_kernel);
    let frontend = (0..config.frontend_blocks)
        .map(|j| {
            let c_in = if j == 0 { config.input_dim } else { d };
            d * c_in * k + d
        })
        .sum();
    let attention = 4 * (d * d + d);
    let ff = d * config.d_ff + config.d_ff + config.d_ff * d + d;
    let norms = 2 * 2 * d;
    let out = config.head.out_dim();
    let per_layer = mechanism_per_layer(config, spec)?;
    Ok(ClosedForm {
        frontend,
        layers: config.n_layers * (attention + ff + norms),
        head: d * out + out,
        mechanism_per_layer: per_layer,
        mechanism: config.n_layers * per_layer,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: u32,
    pub compression: usize,
    /// Trainable parameters by enumeration of the built model.
    pub trainable: usize,
    pub closed_form: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedPoint {
    pub n: u32,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SizeSweep {
    pub points: Vec<SweepPoint>,
    pub skipped: Vec<SkippedPoint>,
}

impl SizeSweep {
    /// `(max − min) / max` of trainable counts over the evaluated points.
    pub fn relative_margin(&self) -> Option<f64> {
        let max = self.points.iter().map(|p| p.trainable).max()?;
        let min = self.points.iter().map(|p| p.trainable).min()?;
        Some((max - min) as f64 / max as f64)
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.points.windows(2).all(|w| w[1].trainable < w[0].trainable)
    }
}

/// Builds the model at compression `2^n` for each `n` and counts trainable parameters.
pub fn size_sweep(config: &EncoderConfig, spec: &AdapterSpec, n_values: &[u32], seed: u64) -> Result<SizeSweep> {
    if !matches!(spec, AdapterSpec::Bottleneck { .. } | AdapterSpec::ConvAdapter { .. }) {
        return config_err(format!("size sweep needs a bottleneck or conv adapter, got {}", spec.method()));
    }
    let mut out = SizeSweep::default();
    for &n in n_values {
        let c = match 1usize.checked_shl(n) {
            Some(c) if c <= config.d_model => c,
            _ => {
                out.skipped.push(SkippedPoint {
                    n,
                    reason: format!("2^{n} exceeds d_model {}", config.d_model),
                });
                continue;
            }
        };
        let spec_n = spec.with_compression(c).expect("compression-bearing spec");
        if let Err(e) = spec_n.validate(config) {
            out.skipped.push(SkippedPoint { n, reason: e.to_string() });
            continue;
        }
        let model = attach(Model::<f64>::new(config.clone(), seed)?, &spec_n, seed)?;
        out.points.push(SweepPoint {
            n,
            compression: c,
            trainable: count_params(&model.params, |p| p.trainable),
            closed_form: closed_form_counts(config, &spec_n)?.trainable(),
        });
    }
    Ok(out)
}
