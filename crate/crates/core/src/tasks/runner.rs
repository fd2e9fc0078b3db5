//! Glue between synthetic tasks, the model and the training loop.

use crate::error::{Error, Result};
use crate::metrics::{accuracy_and_weighted_f1, ctc_greedy_decode, levenshtein, slot_f1};
use crate::model::Model;
use crate::scalar::Scalar;
use crate::tasks::spans::spans_from_frames;
use crate::tasks::{Split, SyntheticTask, Target, TaskKind};
use crate::tensor::{Tape, Tensor, Var};
use crate::training::{Direction, TrainingTask};

const EVAL_CHUNK: usize = 64;

/// A task with its features converted to the model's scalar type.
pub struct TaskRunner<'a, T> {
    pub task: &'a SyntheticTask,
    train: Vec<Tensor<T>>,
    val: Vec<Tensor<T>>,
    test: Vec<Tensor<T>>,
}

/// Named test-split metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct TestScores {
    pub metrics: Vec<(String, f64)>,
    pub support: Option<Vec<usize>>,
}

impl TestScores {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

enum Predictions {
    Classes(Vec<usize>),
    Sequences(Vec<Vec<usize>>),
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, T::neg_infinity()), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

impl<'a, T: Scalar> TaskRunner<'a, T> {
    pub fn new(task: &'a SyntheticTask) -> Self {
        let conv = |s: &Split| s.examples.iter().map(|e| e.features.cast()).collect();
        Self {
            task,
            train: conv(&task.train),
            val: conv(&task.val),
            test: conv(&task.test),
        }
    }

    fn stack(features: &[Tensor<T>], indices: &[usize]) -> Result<Tensor<T>> {
        let first = features[indices[0]].shape().to_vec();
        let mut data = Vec::with_capacity(indices.len() * features[indices[0]].len());
        for &i in indices {
            data.extend_from_slice(features[i].data());
        }
        Tensor::new(vec![indices.len(), first[0], first[1]], data)
    }

    fn loss(&self, tape: &mut Tape<T>, logits: Var, split: &Split, indices: &[usize]) -> Result<Var> {
        match self.task.kind {
            TaskKind::Classification => {
                let labels: Vec<usize> = indices
                    .iter()
                    .map(|&i| match split.examples[i].target {
                        Target::Class(c) => Ok(c),
                        _ => Err(Error::Contract("classification task with non-class target".into())),
                    })
                    .collect::<Result<_>>()?;
                tape.cross_entropy(logits, &labels)
            }
            TaskKind::Transduction => {
                let labels: Vec<Vec<usize>> = indices
                    .iter()
                    .map(|&i| match &split.examples[i].target {
                        Target::Sequence(s) => Ok(s.clone()),
                        _ => Err(Error::Contract("transduction task with non-sequence target".into())),
                    })
                    .collect::<Result<_>>()?;
                let logp = tape.log_softmax(logits)?;
                tape.ctc_loss(logp, &labels)
            }
            TaskKind::Tagging => {
                let mut labels = Vec::new();
                for &i in indices {
                    match &split.examples[i].target {
                        Target::Tags(t) => labels.extend_from_slice(t),
                        _ => return Err(Error::Contract("tagging task with non-tag target".into())),
                    }
                }
                let s = tape.shape(logits).to_vec();
                let flat = tape.reshape(logits, &[s[0] * s[1], s[2]])?;
                tape.cross_entropy(flat, &labels)
            }
        }
    }

    fn predict(&self, model: &Model<T>, features: &[Tensor<T>]) -> Result<Predictions> {
        let mut classes = Vec::new();
        let mut seqs = Vec::new();
        let all: Vec<usize> = (0..features.len()).collect();
        for chunk in all.chunks(EVAL_CHUNK) {
            let logits = model.logits(&Self::stack(features, chunk)?)?;
            let width = *logits.shape().last().expect("logits have rank ≥ 2");
            match self.task.kind {
                TaskKind::Classification => classes.extend(logits.data().chunks(width).map(argmax)),
                TaskKind::Transduction => {
                    let steps = logits.shape()[1];
                    for row in logits.data().chunks(steps * width) {
                        let t = Tensor::new(vec![steps, width], row.to_vec())?;
                        seqs.push(ctc_greedy_decode(&t));
                    }
                }
                TaskKind::Tagging => {
                    let steps = logits.shape()[1];
                    for row in logits.data().chunks(steps * width) {
                        seqs.push(row.chunks(width).map(argmax).collect());
                    }
                }
            }
        }
        Ok(match self.task.kind {
            TaskKind::Classification => Predictions::Classes(classes),
            _ => Predictions::Sequences(seqs),
        })
    }

    fn scores(&self, model: &Model<T>, split: &Split, features: &[Tensor<T>]) -> Result<TestScores> {
        let preds = self.predict(model, features)?;
        match (preds, self.task.kind) {
            (Predictions::Classes(p), TaskKind::Classification) => {
                let labels: Vec<usize> = split
                    .examples
                    .iter()
                    .map(|e| if let Target::Class(c) = e.target { c } else { usize::MAX })
                    .collect();
                let s = accuracy_and_weighted_f1(&p, &labels, self.task.n_out)?;
                Ok(TestScores {
                    metrics: vec![("accuracy".into(), s.accuracy), ("weighted_f1".into(), s.weighted_f1)],
                    support: Some(s.support),
                })
            }
            (Predictions::Sequences(p), TaskKind::Transduction) => {
                let (mut edits, mut total) = (0usize, 0usize);
                for (hyp, e) in p.iter().zip(&split.examples) {
                    if let Target::Sequence(r) = &e.target {
                        edits += levenshtein(hyp, r);
                        total += r.len();
                    }
                }
                Ok(TestScores {
                    metrics: vec![("per".into(), edits as f64 / total.max(1) as f64)],
                    support: None,
                })
            }
            (Predictions::Sequences(p), TaskKind::Tagging) => {
                let (mut hit, mut frames) = (0usize, 0usize);
                let (mut pred_spans, mut gold_spans) = (Vec::new(), Vec::new());
                for (hyp, e) in p.iter().zip(&split.examples) {
                    if let Target::Tags(g) = &e.target {
                        hit += hyp.iter().zip(g).filter(|(a, b)| a == b).count();
                        frames += g.len();
                        pred_spans.push(spans_from_frames(hyp));
                        gold_spans.push(spans_from_frames(g));
                    }
                }
                Ok(TestScores {
                    metrics: vec![
                        ("slot_f1".into(), slot_f1(&pred_spans, &gold_spans).f1),
                        ("accuracy".into(), hit as f64 / frames.max(1) as f64),
                    ],
                    support: None,
                })
            }
            _ => Err(Error::Contract("prediction kind does not match task".into())),
        }
    }

    /// Metric tracked for early stopping, oriented so that larger is better.
    pub fn val_metric(&self, model: &Model<T>) -> Result<f64> {
        let s = self.scores(model, &self.task.val, &self.val)?;
        Ok(match self.task.kind {
            TaskKind::Transduction => -s.get("per").unwrap_or(f64::INFINITY),
            _ => s.get("accuracy").unwrap_or(0.0),
        })
    }

    pub fn val_metric_name(&self) -> &'static str {
        match self.task.kind {
            TaskKind::Transduction => "neg_per",
            _ => "accuracy",
        }
    }

    pub fn test_scores(&self, model: &Model<T>) -> Result<TestScores> {
        self.scores(model, &self.task.test, &self.test)
    }

    pub fn train_scores(&self, model: &Model<T>) -> Result<TestScores> {
        self.scores(model, &self.task.train, &self.train)
    }
}

impl<T: Scalar> TrainingTask<T> for TaskRunner<'_, T> {
    fn train_len(&self) -> usize {
        self.train.len()
    }

    fn val_len(&self) -> usize {
        self.val.len()
    }

    fn batch_loss(&self, model: &Model<T>, tape: &mut Tape<T>, indices: &[usize]) -> Result<Var> {
        let x = Self::stack(&self.train, indices)?;
        let out = model.forward(tape, &x)?;
        self.loss(tape, out.logits, &self.task.train, indices)
    }

    fn validate(&self, model: &Model<T>) -> Result<f64> {
        self.val_metric(model)
    }

    fn direction(&self) -> Direction {
        Direction::Maximize
    }
}
