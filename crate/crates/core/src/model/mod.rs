//! Toy transformer encoder standing in for a frozen speech backbone.
//!
//! Layout: a stack of same-padded convolution blocks turns `[B, T, input_dim]`
//! features into `[B, T, d_model]`, sinusoidal positions are added, and
//! `n_layers` post-norm transformer layers follow. A linear head reads the
//! final state.

pub mod attention;
pub mod config;
pub mod init;

use crate::adapters::{Attachment, LayerAdapter};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

pub use attention::{multi_head_attention, scaled_dot_attention, AttentionAdapters, AttentionIds, AttentionOutput};
pub use config::{EncoderConfig, HeadKind};
pub use init::Init;

/// Coarse ownership of a parameter, derived from its name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Frontend,
    Encoder,
    Mechanism,
    Head,
}

impl ParamGroup {
    pub fn of(name: &str) -> ParamGroup {
        if name.starts_with("frontend.") {
            ParamGroup::Frontend
        } else if name.starts_with("head.") {
            ParamGroup::Head
        } else if crate::adapters::MECHANISM_SEGMENTS.iter().any(|s| name.contains(s)) {
            ParamGroup::Mechanism
        } else {
            ParamGroup::Encoder
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ParamGroup::Frontend => "frontend",
            ParamGroup::Encoder => "layers",
            ParamGroup::Mechanism => "mechanism",
            ParamGroup::Head => "head",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvBlockIds {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct NormIds {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct LayerIds {
    pub attn: AttentionIds,
    pub ln1: NormIds,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub ln2: NormIds,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadIds {
    pub w: ParamId,
    pub b: ParamId,
}

/// Activations recorded by [`Model::encode`].
#[derive(Clone, Debug)]
pub struct HiddenStates {
    /// Frontend output plus positions, `[B, T, d_model]`.
    pub input: Var,
    /// Output of each transformer layer, `[B, T, d_model]`.
    pub layers: Vec<Var>,
    /// Attention weights of each layer, `[B, h, T, T + prefix]`.
    pub attention: Vec<Var>,
}

impl HiddenStates {
    pub fn last(&self) -> Var {
        *self.layers.last().unwrap_or(&self.input)
    }
}

#[derive(Clone, Debug)]
pub struct ModelOutput {
    pub hidden: HiddenStates,
    pub logits: Var,
}

/// Encoder, head, and (optionally) one attached adaptation mechanism.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: EncoderConfig,
    pub params: ParamStore<T>,
    pub(crate) frontend: Vec<ConvBlockIds>,
    pub(crate) layers: Vec<LayerIds>,
    pub(crate) head: HeadIds,
    pub(crate) attachment: Option<Attachment>,
}

impl<T: Scalar> Model<T> {
    /// Builds a randomly initialized, fully trainable model.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Init::new(seed);
        let mut params = ParamStore::new();
        let d = config.d_model;
        let k = config.frontend_kernel;

        let mut frontend = Vec::with_capacity(config.frontend_blocks);
        for j in 0..config.frontend_blocks {
            let c_in = if j == 0 { config.input_dim } else { d };
            frontend.push(ConvBlockIds {
                w: params.add(format!("frontend.{j}.conv.w"), init.fan_in(&[d, c_in, k], c_in * k), true)?,
                b: params.add(format!("frontend.{j}.conv.b"), Tensor::zeros(&[d]), true)?,
            });
        }

        let mut layers = Vec::with_capacity(config.n_layers);
        for i in 0..config.n_layers {
            let mut lin = |name: &str, fan_in: usize, fan_out: usize, init: &mut Init| -> Result<(ParamId, ParamId)> {
                let (wn, bn) = match name.rsplit_once('.') {
                    Some((scope, leaf)) => (format!("layer.{i}.{scope}.W_{leaf}"), format!("layer.{i}.{scope}.b_{leaf}")),
                    None => unreachable!("projection names are scoped"),
                };
                Ok((
                    params.add(wn, init.fan_in(&[fan_in, fan_out], fan_in), true)?,
                    params.add(bn, Tensor::zeros(&[fan_out]), true)?,
                ))
            };
            let (w_q, b_q) = lin("attn.Q", d, d, &mut init)?;
            let (w_k, b_k) = lin("attn.K", d, d, &mut init)?;
            let (w_v, b_v) = lin("attn.V", d, d, &mut init)?;
            let (w_o, b_o) = lin("attn.O", d, d, &mut init)?;
            let (w1, b1) = lin("ff.1", d, config.d_ff, &mut init)?;
            let (w2, b2) = lin("ff.2", config.d_ff, d, &mut init)?;
            let mut norm = |n: &str| -> Result<NormIds> {
                Ok(NormIds {
                    gamma: params.add(format!("layer.{i}.{n}.gamma"), Tensor::full(&[d], T::one()), true)?,
                    beta: params.add(format!("layer.{i}.{n}.beta"), Tensor::zeros(&[d]), true)?,
                })
            };
            let (ln1, ln2) = (norm("ln1")?, norm("ln2")?);
            layers.push(LayerIds {
                attn: AttentionIds {
                    w_q,
                    b_q,
                    w_k,
                    b_k,
                    w_v,
                    b_v,
                    w_o,
                    b_o,
                },
                ln1,
                w1,
                b1,
                w2,
                b2,
                ln2,
            });
        }

        let out = config.head.out_dim();
        let head = HeadIds {
            w: params.add("head.W", init.fan_in(&[d, out], d), true)?,
            b: params.add("head.b", Tensor::zeros(&[out]), true)?,
        };
        Ok(Self {
            config,
            params,
            frontend,
            layers,
            head,
            attachment: None,
        })
    }

    pub fn attachment(&self) -> Option<&Attachment> {
        self.attachment.as_ref()
    }

    pub fn layer_ids(&self, i: usize) -> &LayerIds {
        &self.layers[i]
    }

    pub fn head_ids(&self) -> HeadIds {
        self.head
    }

    pub fn frontend_ids(&self) -> &[ConvBlockIds] {
        &self.frontend
    }

    fn layer_adapter(&self, i: usize) -> Option<&LayerAdapter> {
        self.attachment.as_ref().map(|a| &a.layers[i])
    }

    /// Frontend convolutions plus positional signal: `[B, T, input_dim]` → `[B, T, d_model]`.
    pub fn frontend_forward(&self, tape: &mut Tape<T>, features: Var) -> Result<Var> {
        let s = tape.shape(features).to_vec();
        if s.len() != 3 || s[2] != self.config.input_dim {
            return Err(Error::Dimension {
                op: "encode",
                lhs: s,
                rhs: vec![self.config.input_dim],
            });
        }
        let mut h = features;
        if !self.frontend.is_empty() {
            h = tape.permute(h, &[0, 2, 1])?;
            for block in &self.frontend {
                let (w, b) = (tape.param(&self.params, block.w), tape.param(&self.params, block.b));
                let c = tape.conv1d(h, w, Some(b), 1)?;
                h = tape.gelu(c)?;
            }
            h = tape.permute(h, &[0, 2, 1])?;
        }
        let pos = tape.constant(init::sinusoidal_positions(s[1], self.config.d_model))?;
        tape.add(h, pos)
    }

    /// One post-norm transformer layer with whatever mechanism is attached to it.
    pub fn transformer_layer(&self, tape: &mut Tape<T>, x: Var, i: usize) -> Result<(Var, Var)> {
        let ids = &self.layers[i];
        let p = &self.params;
        let eps = T::of(self.config.ln_eps);
        let adapter = self.layer_adapter(i);
        let adapters = AttentionAdapters {
            prefix: adapter.and_then(LayerAdapter::prefix),
            lora: adapter.and_then(LayerAdapter::lora),
        };
        let attn = multi_head_attention(tape, p, x, &ids.attn, self.config.n_heads, adapters)?;
        let r1 = tape.add(x, attn.output)?;
        let (g1, be1) = (tape.param(p, ids.ln1.gamma), tape.param(p, ids.ln1.beta));
        let x1 = tape.layer_norm(r1, g1, be1, eps)?;

        let (w1, b1) = (tape.param(p, ids.w1), tape.param(p, ids.b1));
        let hidden = tape.linear(x1, w1, Some(b1))?;
        let hidden = tape.gelu(hidden)?;
        let (w2, b2) = (tape.param(p, ids.w2), tape.param(p, ids.b2));
        let mut ff = tape.linear(hidden, w2, Some(b2))?;
        if let Some(adapter) = adapter {
            ff = adapter.after_feed_forward(tape, p, ff)?;
        }
        let r2 = tape.add(x1, ff)?;
        let (g2, be2) = (tape.param(p, ids.ln2.gamma), tape.param(p, ids.ln2.beta));
        Ok((tape.layer_norm(r2, g2, be2, eps)?, attn.weights))
    }

    pub fn encode(&self, tape: &mut Tape<T>, features: Var) -> Result<HiddenStates> {
        let input = self.frontend_forward(tape, features)?;
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut attention = Vec::with_capacity(self.layers.len());
        let mut h = input;
        for i in 0..self.layers.len() {
            let (out, w) = self.transformer_layer(tape, h, i)?;
            layers.push(out);
            attention.push(w);
            h = out;
        }
        Ok(HiddenStates {
            input,
            layers,
            attention,
        })
    }

    /// Task logits from the final state: `[B, n_classes]` for classification,
    /// `[B, T, width]` otherwise.
    pub fn head_forward(&self, tape: &mut Tape<T>, state: Var) -> Result<Var> {
        let (w, b) = (tape.param(&self.params, self.head.w), tape.param(&self.params, self.head.b));
        match self.config.head {
            HeadKind::Classification { .. } => {
                let pooled = tape.mean_axis(state, 1)?;
                tape.linear(pooled, w, Some(b))
            }
            HeadKind::Ctc { .. } | HeadKind::Tagging { .. } => tape.linear(state, w, Some(b)),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, features: &Tensor<T>) -> Result<ModelOutput> {
        let x = tape.constant(features.clone())?;
        let hidden = self.encode(tape, x)?;
        let logits = self.head_forward(tape, hidden.last())?;
        Ok(ModelOutput { hidden, logits })
    }

    /// Inference-only logits.
    pub fn logits(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, features)?;
        Ok(tape.value(out.logits).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(head: HeadKind) -> EncoderConfig {
        EncoderConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            d_ff: 16,
            frontend_blocks: 1,
            frontend_kernel: 3,
            input_dim: 3,
            head,
            ln_eps: 1e-5,
        }
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut c = cfg(HeadKind::Classification { n_classes: 2 });
        c.n_heads = 3;
        assert!(matches!(Model::<f64>::new(c, 0), Err(Error::Config(_))));
    }

    #[test]
    fn time_axis_is_preserved() {
        for head in [HeadKind::Ctc { vocab_size: 3 }, HeadKind::Tagging { n_tags: 4 }] {
            let m = Model::<f64>::new(cfg(head.clone()), 1).unwrap();
            let x = Init::new(9).normal(&[2, 7, 3], 1.0);
            let mut tape = Tape::new();
            let out = m.forward(&mut tape, &x).unwrap();
            for &h in &out.hidden.layers {
                assert_eq!(tape.shape(h), &[2, 7, 8]);
            }
            assert_eq!(tape.shape(out.logits), &[2, 7, head.out_dim()]);
        }
    }

    #[test]
    fn partition_into_frontend_layers_head() {
        let m = Model::<f64>::new(cfg(HeadKind::Classification { n_classes: 5 }), 0).unwrap();
        for (_, p) in m.params.iter() {
            assert_ne!(ParamGroup::of(&p.name), ParamGroup::Mechanism, "{}", p.name);
        }
        assert!(m.params.id("layer.1.attn.W_Q").is_some());
        assert!(m.params.id("layer.0.ff.b_2").is_some());
        assert!(m.params.id("frontend.0.conv.w").is_some());
    }

    #[test]
    fn zero_head_gives_uniform_logits() {
        let mut m = Model::<f64>::new(cfg(HeadKind::Classification { n_classes: 4 }), 3).unwrap();
        let h = m.head_ids();
        *m.params.value_mut(h.w) = Tensor::zeros(&[8, 4]);
        let x = Init::new(1).normal(&[2, 5, 3], 1.0);
        let logits = m.logits(&x).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_same_weights() {
        let a = Model::<f64>::new(cfg(HeadKind::Tagging { n_tags: 2 }), 11).unwrap();
        let b = Model::<f64>::new(cfg(HeadKind::Tagging { n_tags: 2 }), 11).unwrap();
        for ((_, pa), (_, pb)) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(pa.value, pb.value);
        }
    }
}
