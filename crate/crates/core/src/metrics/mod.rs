//! Training losses and evaluation metrics.

pub mod classification;
pub mod ctc;
pub mod edit;
pub mod mcd;
pub mod report;
pub mod slot;

pub use classification::{accuracy_and_weighted_f1, cross_entropy, ClassificationScores};
pub use ctc::{ctc_greedy_decode, ctc_loss, CtcLoss};
pub use edit::{cer, edit_distance_rate, levenshtein, wer};
pub use mcd::{mcd, McepSequence};
pub use report::EvalReport;
pub use slot::{slot_f1, SlotScores, Span};
