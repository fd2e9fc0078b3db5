//! Parameter-efficient fine-tuning toolkit.
//!
//! A small tape-based autodiff engine drives a toy transformer encoder onto
//! which one of four adaptation mechanisms can be attached: a bottleneck
//! adapter, prefix tuning, LoRA, or a convolutional adapter. Around that sit
//! parameter accounting, an early-stopping trainer, evaluation metrics,
//! synthetic tasks, and an experiment runner.
//!
//! The numeric core is generic over [`Scalar`]; the `*64` aliases below cover
//! the double-precision configuration used throughout the tests.

pub mod accounting;
pub mod adapters;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod tasks;
pub mod tensor;
pub mod training;

pub use adapters::{attach, AdapterSpec};
pub use error::{Error, Result};
pub use experiment::{emit_report, run_experiment, run_sweep, ExperimentConfig, RunResult, SweepAxis};
pub use model::{EncoderConfig, HeadKind, Model};
pub use scalar::Scalar;
pub use tensor::{Gradients, ParamId, ParamStore, Parameter, Tape, Tensor, Var};

pub type Tensor64 = Tensor<f64>;
pub type Tape64 = Tape<f64>;
pub type ParamStore64 = ParamStore<f64>;
pub type Model64 = Model<f64>;
