use std::path::Path;

use crate::adapters::{
    AdapterSpec, BottleneckIds, ConvAdapterIds, LayerAdapter, LoraIds, LoraLayer, PrefixIds, SqueezeExciteIds,
};
use crate::error::{config_err, Result};
use crate::model::{Init, Model, ParamGroup};
use crate::scalar::Scalar;
use crate::tensor::serialize::save_params;
use crate::tensor::{ParamStore, Tensor};

/// Init stream reserved for mechanism weights, so adapters never perturb backbone draws.
const ADAPTER_STREAM: u64 = 0xADA;

/// Standard deviation of prefix key/value initialization.
pub const PREFIX_INIT_STD: f64 = 0.02;

/// Mechanism attached to a model, one entry per transformer layer.
#[derive(Clone, Debug)]
pub struct Attachment {
    pub spec: AdapterSpec,
    pub layers: Vec<LayerAdapter>,
}

/// Freezes every backbone parameter, keeps the head trainable, and inserts
/// the mechanism described by `spec` into each transformer layer.
pub fn attach<T: Scalar>(mut model: Model<T>, spec: &AdapterSpec, seed: u64) -> Result<Model<T>> {
    if model.attachment.is_some() {
        return config_err("model already has an adaptation mechanism attached");
    }
    spec.validate(&model.config)?;
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let head = ParamGroup::of(&model.params.get(id).name) == ParamGroup::Head;
        model.params.set_trainable(id, head);
    }

    let mut init = Init::stream(seed, ADAPTER_STREAM);
    let cfg = model.config.clone();
    let d = cfg.d_model;
    let store = &mut model.params;
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for i in 0..cfg.n_layers {
        let layer = match spec {
            AdapterSpec::None => LayerAdapter::Empty,
            AdapterSpec::Prefix { length: 0 } => LayerAdapter::Empty,
            AdapterSpec::Bottleneck {
                compression,
                nonlinearity,
            } => {
                let m = d / compression;
                let p = format!("layer.{i}.adapter");
                LayerAdapter::Bottleneck(BottleneckIds {
                    w_down: store.add(format!("{p}.W_down"), init.fan_in(&[d, m], d), true)?,
                    b_down: store.add(format!("{p}.b_down"), Tensor::zeros(&[m]), true)?,
                    w_up: store.add(format!("{p}.W_up"), Tensor::zeros(&[m, d]), true)?,
                    b_up: store.add(format!("{p}.b_up"), Tensor::zeros(&[d]), true)?,
                    nonlinearity: *nonlinearity,
                })
            }
            AdapterSpec::Prefix { length } => {
                let shape = [cfg.n_heads, *length, cfg.d_head()];
                LayerAdapter::Prefix(PrefixIds {
                    p_k: store.add(format!("layer.{i}.prefix.P_K"), init.normal(&shape, PREFIX_INIT_STD), true)?,
                    p_v: store.add(format!("layer.{i}.prefix.P_V"), init.normal(&shape, PREFIX_INIT_STD), true)?,
                })
            }
            AdapterSpec::Lora {
                rank,
                scale,
                placements,
            } => {
                let mut factors = Vec::with_capacity(placements.len());
                for &p in placements {
                    let n = format!("layer.{i}.lora.{}", p.label());
                    factors.push((
                        p,
                        LoraIds {
                            w_down: store.add(format!("{n}.W_down"), init.fan_in(&[d, *rank], d), true)?,
                            w_up: store.add(format!("{n}.W_up"), Tensor::zeros(&[*rank, d]), true)?,
                        },
                    ));
                }
                LayerAdapter::Lora(LoraLayer { scale: *scale, factors })
            }
            AdapterSpec::ConvAdapter {
                compression,
                k_point,
                k_depth,
                se_ratio,
                nonlinearity,
            } => {
                let dc = d / compression;
                let ds = dc / se_ratio;
                let n = format!("layer.{i}.conv_adapter");
                LayerAdapter::Conv(ConvAdapterIds {
                    conv_in_w: store.add(format!("{n}.conv_in.w"), init.fan_in(&[dc, d, *k_point], d * k_point), true)?,
                    conv_in_b: store.add(format!("{n}.conv_in.b"), Tensor::zeros(&[dc]), true)?,
                    ln_gamma: store.add(format!("{n}.ln.gamma"), Tensor::full(&[dc], T::one()), true)?,
                    ln_beta: store.add(format!("{n}.ln.beta"), Tensor::zeros(&[dc]), true)?,
                    depth_w: store.add(format!("{n}.depth.w"), init.fan_in(&[dc, 1, *k_depth], *k_depth), true)?,
                    depth_b: store.add(format!("{n}.depth.b"), Tensor::zeros(&[dc]), true)?,
                    se: SqueezeExciteIds {
                        w1: store.add(format!("{n}.se.W1"), init.fan_in(&[dc, ds], dc), true)?,
                        b1: store.add(format!("{n}.se.b1"), Tensor::zeros(&[ds]), true)?,
                        w2: store.add(format!("{n}.se.W2"), init.fan_in(&[ds, dc], ds), true)?,
                        b2: store.add(format!("{n}.se.b2"), Tensor::zeros(&[dc]), true)?,
                    },
                    conv_out_w: store.add(format!("{n}.conv_out.w"), Tensor::zeros(&[d, dc, *k_point]), true)?,
                    conv_out_b: store.add(format!("{n}.conv_out.b"), Tensor::zeros(&[d]), true)?,
                    nonlinearity: *nonlinearity,
                    ln_eps: cfg.ln_eps,
                })
            }
        };
        layers.push(layer);
    }
    model.attachment = Some(Attachment {
        spec: spec.clone(),
        layers,
    });
    Ok(model)
}

fn adapter_owned(name: &str) -> bool {
    matches!(ParamGroup::of(name), ParamGroup::Mechanism | ParamGroup::Head)
}

/// Writes only the mechanism and head parameters, so one backbone file can
/// pair with many small task files.
pub fn save_adapter<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    save_params(path, store, |p| adapter_owned(&p.name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::Projection;
    use crate::model::{EncoderConfig, HeadKind};
    use crate::tensor::serialize::{load_into, load_params};

    fn base() -> Model<f64> {
        Model::new(EncoderConfig::toy(8, HeadKind::Classification { n_classes: 4 }), 0).unwrap()
    }

    fn trainable_names(m: &Model<f64>) -> Vec<String> {
        m.params.iter().filter(|(_, p)| p.trainable).map(|(_, p)| p.name.clone()).collect()
    }

    #[test]
    fn none_leaves_head_only() {
        let m = attach(base(), &AdapterSpec::None, 1).unwrap();
        assert_eq!(trainable_names(&m), ["head.W", "head.b"]);
    }

    #[test]
    fn double_attach_is_rejected() {
        let m = attach(base(), &AdapterSpec::lora(4), 1).unwrap();
        assert!(matches!(attach(m, &AdapterSpec::None, 1), Err(crate::Error::Config(_))));
    }

    #[test]
    fn zero_length_prefix_adds_nothing() {
        let m = attach(base(), &AdapterSpec::prefix(0), 1).unwrap();
        assert_eq!(m.params.len(), base().params.len());
    }

    #[test]
    fn lora_names_follow_placements() {
        let spec = AdapterSpec::Lora {
            rank: 2,
            scale: 1.0,
            placements: vec![Projection::Q, Projection::V],
        };
        let m = attach(base(), &spec, 1).unwrap();
        assert!(m.params.id("layer.2.lora.W_V.W_up").is_some());
        assert!(m.params.id("layer.2.lora.W_K.W_up").is_none());
    }

    #[test]
    fn adapter_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("adapter.bin");
        let mut m = attach(base(), &AdapterSpec::bottleneck(4), 3).unwrap();
        let id = m.params.id("layer.0.adapter.W_up").unwrap();
        m.params.value_mut(id).data_mut()[0] = 0.25;
        save_adapter(&m.params, &path).unwrap();
        let records = load_params(&path).unwrap();
        assert!(records.iter().all(|r| r.name.contains(".adapter.") || r.name.starts_with("head.")));
        let mut fresh = attach(base(), &AdapterSpec::bottleneck(4), 3).unwrap();
        assert_eq!(load_into(&mut fresh.params, &records).unwrap(), records.len());
        assert_eq!(fresh.params.value(id).data()[0], 0.25);
    }
}
