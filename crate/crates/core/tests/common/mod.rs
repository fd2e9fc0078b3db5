//! Checks shared by the topic suites and the acceptance target.
#![allow(dead_code)]

use peft_core::accounting::closed_form_counts;
use peft_core::adapters::{attach, AdapterSpec, Projection};
use peft_core::metrics::ctc_loss;
use peft_core::model::{EncoderConfig, HeadKind, Init, Model};
use peft_core::tensor::{finite_diff_check, ParamStore, Tape, Tensor, Var};
use peft_core::tensor::tape::Activation;
use peft_core::training::{Adam, Direction, TrainConfig, TrainingTask};
use peft_core::Result;

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const FD_EPS: f64 = 1e-5;

/// `d_model = 8`, two layers, one frontend block; inputs are `[B, 6, 4]`.
pub fn small_config(head: HeadKind) -> EncoderConfig {
    EncoderConfig {
        d_model: 8,
        n_heads: 2,
        n_layers: 2,
        d_ff: 16,
        frontend_blocks: 1,
        frontend_kernel: 3,
        input_dim: 4,
        head,
        ln_eps: 1e-5,
    }
}

pub const STEPS: usize = 6;

pub fn mechanisms() -> Vec<(&'static str, AdapterSpec)> {
    vec![
        ("bottleneck", AdapterSpec::bottleneck(2)),
        ("prefix", AdapterSpec::prefix(3)),
        ("lora", AdapterSpec::lora(2)),
        ("conv_adapter", AdapterSpec::conv_adapter(2)),
    ]
}

/// Mechanisms whose output matrices start at zero.
pub fn zero_init_mechanisms() -> Vec<(&'static str, AdapterSpec)> {
    mechanisms().into_iter().filter(|(n, _)| *n != "prefix").collect()
}

pub fn features(seed: u64, batch: usize, cfg: &EncoderConfig) -> Tensor<f64> {
    Init::new(seed).normal(&[batch, STEPS, cfg.input_dim], 1.0)
}

/// Replaces every trainable value with seeded noise so no path is inert.
pub fn randomize_trainable(store: &mut ParamStore<f64>, seed: u64, std: f64) {
    let mut init = Init::new(seed);
    for id in store.trainable_ids() {
        let shape = store.value(id).shape().to_vec();
        *store.value_mut(id) = init.normal(&shape, std);
    }
}

fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let r = tape.constant(Init::new(seed).normal(&shape, 1.0))?;
    let p = tape.mul(y, r)?;
    tape.sum(p)
}

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

fn primitive(name: &'static str, shapes: &[&[usize]], f: Build) -> Result<(String, f64)> {
    let mut store = ParamStore::new();
    let mut init = Init::new(name.len() as u64 * 7 + shapes.len() as u64);
    let ids: Vec<_> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| store.add(format!("x{i}"), init.normal(s, 1.0), true))
        .collect::<Result<_>>()?;
    let err = finite_diff_check(&mut store, FD_EPS, |tape, s| {
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(s, id)).collect();
        let y = f(tape, &vars)?;
        if tape.value(y).is_scalar() {
            Ok(y)
        } else {
            weighted_sum(tape, y, 99)
        }
    })?;
    Ok((name.to_string(), err))
}

/// Worst relative finite-difference error of every differentiable primitive.
pub fn primitive_gradients() -> Result<Vec<(String, f64)>> {
    let act = |a: Activation| -> Build { Box::new(move |t, v| t.activation(v[0], a)) };
    let cases: Vec<(&'static str, Vec<&[usize]>, Build)> = vec![
        ("add", vec![&[2, 3], &[3]], Box::new(|t, v| t.add(v[0], v[1]))),
        ("mul", vec![&[2, 3], &[2, 1]], Box::new(|t, v| t.mul(v[0], v[1]))),
        ("scale", vec![&[4]], Box::new(|t, v| t.scale(v[0], -1.7))),
        ("relu", vec![&[5]], act(Activation::Relu)),
        ("gelu", vec![&[5]], act(Activation::Gelu)),
        ("sigmoid", vec![&[5]], act(Activation::Sigmoid)),
        ("tanh", vec![&[5]], act(Activation::Tanh)),
        ("matmul", vec![&[2, 3, 4], &[4, 2]], Box::new(|t, v| t.matmul(v[0], v[1]))),
        ("linear", vec![&[3, 4], &[4, 2], &[2]], Box::new(|t, v| t.linear(v[0], v[1], Some(v[2])))),
        ("batch_matmul", vec![&[2, 3, 4], &[2, 4, 2]], Box::new(|t, v| t.batch_matmul(v[0], v[1], false))),
        ("batch_matmul_t", vec![&[2, 3, 4], &[2, 5, 4]], Box::new(|t, v| t.batch_matmul(v[0], v[1], true))),
        ("softmax", vec![&[2, 3, 4]], Box::new(|t, v| t.softmax(v[0], 1))),
        ("log_softmax", vec![&[3, 4]], Box::new(|t, v| t.log_softmax(v[0]))),
        ("normalize", vec![&[3, 5]], Box::new(|t, v| t.normalize(v[0], 1e-5))),
        ("layer_norm", vec![&[2, 3, 4], &[4], &[4]], Box::new(|t, v| t.layer_norm(v[0], v[1], v[2], 1e-5))),
        ("conv1d", vec![&[2, 3, 5], &[4, 3, 3], &[4]], Box::new(|t, v| t.conv1d(v[0], v[1], Some(v[2]), 1))),
        ("conv1d_depthwise", vec![&[1, 4, 6], &[4, 1, 5], &[4]], Box::new(|t, v| t.conv1d(v[0], v[1], Some(v[2]), 4))),
        ("permute", vec![&[2, 3, 4]], Box::new(|t, v| t.permute(v[0], &[2, 0, 1]))),
        ("reshape", vec![&[2, 6]], Box::new(|t, v| t.reshape(v[0], &[3, 4]))),
        ("concat", vec![&[2, 1, 3], &[2, 2, 3]], Box::new(|t, v| t.concat(&[v[0], v[1]], 1))),
        ("broadcast_to", vec![&[3, 1]], Box::new(|t, v| t.broadcast_to(v[0], &[2, 3, 4]))),
        ("mean_axis", vec![&[2, 3, 4]], Box::new(|t, v| t.mean_axis(v[0], 1))),
        ("sum", vec![&[2, 3]], Box::new(|t, v| t.sum(v[0]))),
        ("nll", vec![&[3, 4]], Box::new(|t, v| {
            let lp = t.log_softmax(v[0])?;
            t.nll(lp, &[1, 0, 3])
        })),
        ("cross_entropy", vec![&[2, 3, 4]], Box::new(|t, v| t.cross_entropy(v[0], &[0, 1, 2, 3, 3, 2]))),
        ("ctc_loss", vec![&[2, 5, 4]], Box::new(|t, v| {
            let lp = t.log_softmax(v[0])?;
            t.ctc_loss(lp, &[vec![1, 2], vec![3, 3]])
        })),
    ];
    cases.into_iter().map(|(n, s, f)| primitive(n, &s, f)).collect()
}

fn model_loss(model: &Model<f64>, tape: &mut Tape<f64>, x: &Tensor<f64>, labels: &[usize]) -> Result<Var> {
    let out = model.forward(tape, x)?;
    tape.cross_entropy(out.logits, labels)
}

/// Gradient error of each mechanism with only its own parameters trainable.
pub fn mechanism_gradients() -> Result<Vec<(String, f64)>> {
    let cfg = small_config(HeadKind::Classification { n_classes: 3 });
    let x = features(5, 2, &cfg);
    let mut out = Vec::new();
    for (name, spec) in mechanisms() {
        let mut model = attach(Model::<f64>::new(cfg.clone(), 1)?, &spec, 1)?;
        for id in model.params.ids().collect::<Vec<_>>() {
            let is_mech = model.params.get(id).name.contains(&format!(".{name}."))
                || (name == "bottleneck" && model.params.get(id).name.contains(".adapter."));
            model.params.set_trainable(id, is_mech);
        }
        randomize_trainable(&mut model.params, 17, 0.5);
        let mut store = model.params.clone();
        let err = finite_diff_check(&mut store, FD_EPS, |tape, s| {
            let mut m = model.clone();
            m.params = s.clone();
            model_loss(&m, tape, &x, &[0, 2])
        })?;
        out.push((name.to_string(), err));
    }
    Ok(out)
}

/// Gradient error of the whole adapted model with every parameter trainable.
pub fn full_model_gradients() -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for (name, spec) in mechanisms() {
        let cfg = small_config(HeadKind::Ctc { vocab_size: 3 });
        let x = features(11, 2, &cfg);
        let mut model = attach(Model::<f64>::new(cfg, 2)?, &spec, 2)?;
        for id in model.params.ids().collect::<Vec<_>>() {
            model.params.set_trainable(id, true);
        }
        randomize_trainable(&mut model.params, 23, 0.4);
        let mut store = model.params.clone();
        let err = finite_diff_check(&mut store, FD_EPS, |tape, s| {
            let mut m = model.clone();
            m.params = s.clone();
            let logits = m.forward(tape, &x)?.logits;
            let lp = tape.log_softmax(logits)?;
            tape.ctc_loss(lp, &[vec![1, 2], vec![3]])
        })?;
        out.push((format!("model+{name}"), err));
    }
    Ok(out)
}

/// Largest `|adapted − frozen|` over `n_inputs` seeded batches, per zero-init mechanism.
pub fn identity_at_init(n_inputs: u64) -> Result<Vec<(String, f64)>> {
    let cfg = EncoderConfig::toy(8, HeadKind::Tagging { n_tags: 5 });
    let base = Model::<f64>::new(cfg.clone(), 3)?;
    let mut out = Vec::new();
    for (name, spec) in zero_init_mechanisms() {
        let adapted = attach(base.clone(), &spec, 4)?;
        let mut worst = 0.0f64;
        for s in 0..n_inputs {
            let x = Init::new(1000 + s).normal(&[1, 12, cfg.input_dim], 1.0);
            worst = worst.max(adapted.logits(&x)?.max_abs_diff(&base.logits(&x)?));
        }
        out.push((name.to_string(), worst));
    }
    Ok(out)
}

pub struct FreezeOutcome {
    pub method: String,
    pub frozen_unchanged: bool,
    pub trainable_changed: bool,
    pub trainable: usize,
    pub closed_form: usize,
}

/// Runs `steps` Adam updates under each mechanism and inspects every parameter.
pub fn freeze_invariant(steps: usize) -> Result<Vec<FreezeOutcome>> {
    let cfg = small_config(HeadKind::Classification { n_classes: 3 });
    let mut all = mechanisms();
    all.insert(0, ("probe", AdapterSpec::None));
    all.push(("lora_qv", AdapterSpec::Lora {
        rank: 2,
        scale: 0.5,
        placements: vec![Projection::Q, Projection::V],
    }));
    let mut out = Vec::new();
    for (name, spec) in all {
        let mut model = attach(Model::<f64>::new(cfg.clone(), 6)?, &spec, 6)?;
        let before = model.params.clone();
        let train = TrainConfig::new(1e-2, 4, 1);
        let mut adam = Adam::new(&train);
        for step in 0..steps {
            let x = features(step as u64, 4, &cfg);
            let mut tape = Tape::new();
            let loss = model_loss(&model, &mut tape, &x, &[0, 1, 2, 1])?;
            let grads = tape.backward(loss)?;
            adam.step(&mut model.params, &grads, train.lr)?;
        }
        let mut frozen_unchanged = true;
        let mut trainable_changed = false;
        for (id, p) in model.params.iter() {
            let old = before.get(id);
            let same = p.value.data().iter().zip(old.value.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            if p.trainable {
                trainable_changed |= !same;
            } else {
                frozen_unchanged &= same;
            }
        }
        out.push(FreezeOutcome {
            method: name.to_string(),
            frozen_unchanged,
            trainable_changed,
            trainable: model.params.iter().filter(|(_, p)| p.trainable).map(|(_, p)| p.numel()).sum(),
            closed_form: closed_form_counts(&cfg, &spec)?.trainable(),
        });
    }
    Ok(out)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &s in path {
        if Some(s) != prev && s != 0 {
            out.push(s);
        }
        prev = Some(s);
    }
    out
}

/// `−log Σ_paths Π p` by enumerating all `(V+1)^T` frame labelings.
pub fn ctc_brute_force(logp: &Tensor<f64>, label: &[usize]) -> f64 {
    let (steps, width) = (logp.shape()[0], logp.shape()[1]);
    let mut terms = Vec::new();
    let mut path = vec![0usize; steps];
    loop {
        if collapse(&path) == label {
            terms.push((0..steps).map(|t| logp.get(&[t, path[t]])).sum());
        }
        let mut i = 0;
        loop {
            if i == steps {
                return -log_sum_exp(&terms);
            }
            path[i] += 1;
            if path[i] < width {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

pub struct CtcGrid {
    pub cases: usize,
    pub feasible: usize,
    pub worst: f64,
}

/// Forward recursion against enumeration over `T ∈ 1..=6`, `|label| ∈ 1..=3`, `V ∈ 2..=4`.
pub fn ctc_grid() -> Result<CtcGrid> {
    let mut grid = CtcGrid {
        cases: 0,
        feasible: 0,
        worst: 0.0,
    };
    let mut seed = 0;
    for steps in 1..=6 {
        for len in 1..=3usize {
            for vocab in 2..=4usize {
                seed += 1;
                let mut init = Init::new(seed);
                let raw: Tensor<f64> = init.normal(&[steps, vocab + 1], 1.5);
                let logp = Tensor::new(
                    raw.shape().to_vec(),
                    raw.data()
                        .chunks(vocab + 1)
                        .flat_map(|row| {
                            let z = log_sum_exp(row);
                            row.iter().map(move |x| x - z).collect::<Vec<_>>()
                        })
                        .collect(),
                )?;
                // repeated symbols exercise the mandatory blank between them
                let label: Vec<usize> = (0..len).map(|i| if i == 1 { 1 } else { 1 + (i + seed as usize) % vocab }).collect();
                let fast = ctc_loss(&logp, &label)?;
                let slow = ctc_brute_force(&logp, &label);
                grid.cases += 1;
                if fast.feasible {
                    grid.feasible += 1;
                    grid.worst = grid.worst.max((fast.loss - slow).abs());
                } else if slow.is_finite() {
                    grid.worst = f64::INFINITY;
                }
            }
        }
    }
    Ok(grid)
}

/// A computed value next to its hand-derived expectation.
pub struct Golden {
    pub name: &'static str,
    pub got: f64,
    pub want: f64,
    pub tol: f64,
}

impl Golden {
    pub fn passes(&self) -> bool {
        (self.got - self.want).abs() <= self.tol
    }
}

/// Per-class F1 weighted by support, straight from a confusion matrix.
fn confusion_weighted_f1(preds: &[usize], labels: &[usize], n: usize) -> f64 {
    let mut m = vec![vec![0usize; n]; n];
    for (&p, &l) in preds.iter().zip(labels) {
        m[l][p] += 1;
    }
    let total = labels.len() as f64;
    (0..n)
        .map(|c| {
            let tp = m[c][c] as f64;
            let support: usize = m[c].iter().sum();
            let predicted: usize = (0..n).map(|r| m[r][c]).sum();
            let p = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
            let r = if support == 0 { 0.0 } else { tp / support as f64 };
            let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            f1 * support as f64 / total
        })
        .sum()
}

pub fn metric_goldens() -> Result<Vec<Golden>> {
    use peft_core::metrics::{accuracy_and_weighted_f1, cross_entropy, mcd, slot_f1, wer, McepSequence, Span};
    let mut out = Vec::new();
    let mut push = |name, got, want, tol| out.push(Golden { name, got, want, tol });

    push("wer one substitution", wer("a b c", "a x c")?, 1.0 / 3.0, 1e-15);
    push("wer empty hypothesis", wer("", "a b c")?, 1.0, 0.0);

    let delta = 0.37;
    let reference = McepSequence::new(24, vec![vec![0.25; 24]])?;
    let mut frame = vec![0.25; 24];
    frame[5] += delta;
    let target = McepSequence::new(24, vec![frame])?;
    let closed = 10.0 / std::f64::consts::LN_10 * 2f64.sqrt() * delta;
    push("mcd single coefficient", mcd(&target, &reference)?, closed, 1e-9);

    let labels: Vec<usize> = (0..10).map(|i| i % 2).collect();
    let s = accuracy_and_weighted_f1(&[0; 10], &labels, 2)?;
    push("one-class accuracy", s.accuracy, 0.5, 1e-15);
    push("one-class weighted f1", s.weighted_f1, 1.0 / 3.0, 1e-15);

    let mut init = Init::new(77);
    let noise: Tensor<f64> = init.normal(&[2, 40], 1.0);
    let to_class = |x: f64| ((x.abs() * 7.0) as usize) % 3;
    let preds: Vec<usize> = noise.data()[..40].iter().map(|&x| to_class(x)).collect();
    let truth: Vec<usize> = noise.data()[40..].iter().map(|&x| to_class(x)).collect();
    let s = accuracy_and_weighted_f1(&preds, &truth, 3)?;
    push("seeded weighted f1", s.weighted_f1, confusion_weighted_f1(&preds, &truth, 3), 1e-12);

    let logits: Tensor<f64> = init.normal(&[4, 3], 2.0);
    let ce_labels = [2, 0, 1, 1];
    let direct = logits
        .data()
        .chunks(3)
        .zip(ce_labels)
        .map(|(row, l)| row.iter().map(|z| z.exp()).sum::<f64>().ln() - row[l])
        .sum::<f64>()
        / 4.0;
    push("seeded cross entropy", cross_entropy(&logits, &ce_labels)?, direct, 1e-12);

    let uniform = Tensor::new(vec![1, 4], vec![0.0; 4])?;
    push("uniform cross entropy", cross_entropy(&uniform, &[3])?, 4f64.ln(), 1e-15);

    let p = [[0.6, 0.3, 0.1], [0.2, 0.5, 0.3]];
    let logp = Tensor::new(vec![2, 3], p.iter().flatten().map(|x: &f64| x.ln()).collect())?;
    let paths = p[0][1] * p[1][1] + p[0][0] * p[1][1] + p[0][1] * p[1][0];
    push("ctc two frames", ctc_loss(&logp, &[1])?.loss, -paths.ln(), 1e-12);

    let span = |tag, start, end| Span { tag, start, end };
    let gold = vec![vec![span(1, 0, 2), span(2, 3, 5)], vec![span(1, 1, 4)]];
    let pred = vec![vec![span(1, 0, 2), span(2, 3, 6)], vec![span(1, 1, 4)]];
    let sc = slot_f1(&pred, &gold);
    push("slot precision", sc.precision, 2.0 / 3.0, 1e-15);
    push("slot recall", sc.recall, 2.0 / 3.0, 1e-15);
    push("slot f1", sc.f1, 2.0 / 3.0, 1e-15);
    Ok(out)
}

pub const FULL_FINE_TUNE: u64 = 315_703_947;

/// Full-scale trainable counts beside their printed percentages.
pub const PUBLISHED_FRACTIONS: [(&str, u64, f64); 4] = [
    ("adapter", 25_467_915, 8.08),
    ("prefix", 1_739_787, 0.55),
    ("lora", 3_804_171, 1.20),
    ("conv_adapter", 2_952_539, 0.94),
];

/// Bottleneck and ConvAdapter trainable counts at `c = 2^n`, `n ∈ 1..=4`, on the toy profile.
pub fn toy_size_sweeps() -> Result<(peft_core::accounting::SizeSweep, peft_core::accounting::SizeSweep)> {
    use peft_core::accounting::size_sweep;
    let cfg = EncoderConfig::toy(8, HeadKind::Classification { n_classes: 4 });
    let n = [1, 2, 3, 4];
    Ok((
        size_sweep(&cfg, &AdapterSpec::bottleneck(2), &n, 0)?,
        size_sweep(&cfg, &AdapterSpec::conv_adapter(2), &n, 0)?,
    ))
}

/// Two-class task on a one-layer `d_model = 16` backbone; trains in milliseconds.
pub fn tiny_experiment(adapter: Option<AdapterSpec>) -> peft_core::ExperimentConfig {
    use peft_core::experiment::BackboneConfig;
    use peft_core::tasks::TaskSpec;
    let task = TaskSpec::Classification {
        n_classes: 2,
        samples_per_class: 6,
        seq_len: 6,
        input_dim: 4,
        difficulty: 1.0,
        seed: None,
    };
    let mut c = peft_core::ExperimentConfig::new(task, adapter, TrainConfig::new(1e-2, 4, 2));
    c.model = BackboneConfig {
        d_model: 16,
        n_heads: 2,
        n_layers: 1,
        d_ff: 32,
        frontend_blocks: 1,
        frontend_kernel: 3,
        ln_eps: 1e-5,
    };
    c
}

/// Trains on real data but reports a fixed validation curve, remembering the
/// weights seen at every epoch.
pub struct Scripted {
    pub x: Tensor<f64>,
    pub labels: Vec<usize>,
    pub curve: Vec<f64>,
    pub seen: std::cell::RefCell<Vec<Vec<Vec<f64>>>>,
}

pub fn weights(model: &Model<f64>) -> Vec<Vec<f64>> {
    model.params.iter().map(|(_, p)| p.value.data().to_vec()).collect()
}

impl TrainingTask<f64> for Scripted {
    fn train_len(&self) -> usize {
        self.labels.len()
    }

    fn val_len(&self) -> usize {
        1
    }

    fn batch_loss(&self, model: &Model<f64>, tape: &mut Tape<f64>, indices: &[usize]) -> Result<Var> {
        let width: usize = self.x.shape()[1..].iter().product();
        let mut data = Vec::new();
        for &i in indices {
            data.extend_from_slice(&self.x.data()[i * width..(i + 1) * width]);
        }
        let mut shape = self.x.shape().to_vec();
        shape[0] = indices.len();
        let out = model.forward(tape, &Tensor::new(shape, data)?)?;
        let labels: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        tape.cross_entropy(out.logits, &labels)
    }

    fn validate(&self, model: &Model<f64>) -> Result<f64> {
        let mut seen = self.seen.borrow_mut();
        let metric = self.curve[seen.len()];
        seen.push(weights(model));
        Ok(metric)
    }

    fn direction(&self) -> Direction {
        Direction::Maximize
    }
}

pub struct EarlyStopContract {
    pub stopped_early: bool,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub weights_moved_after_best: bool,
    /// Epoch whose weights equal the restored model, if any.
    pub restored_epoch: Option<usize>,
    /// The injected metric of that epoch.
    pub restored_metric: Option<f64>,
}

/// Patience 5 on the curve `[0.5, 0.6 × 6, 0.9, ...]`.
pub fn early_stopping_contract() -> Result<EarlyStopContract> {
    use peft_core::training::train_with_early_stopping;
    let cfg = small_config(HeadKind::Classification { n_classes: 2 });
    let mut model = attach(Model::<f64>::new(cfg.clone(), 3)?, &AdapterSpec::bottleneck(2), 3)?;
    let task = Scripted {
        x: features(11, 8, &cfg),
        labels: (0..8).map(|i| i % 2).collect(),
        curve: vec![0.5, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6, 0.9, 0.9, 0.9],
        seen: std::cell::RefCell::new(Vec::new()),
    };
    let mut config = TrainConfig::new(1e-2, 4, 10);
    config.patience = 5;
    let out = train_with_early_stopping(&mut model, &task, &config)?;
    let seen = task.seen.borrow();
    let restored = weights(&model);
    let restored_epoch = seen.iter().position(|w| *w == restored).map(|i| i + 1);
    Ok(EarlyStopContract {
        stopped_early: out.stopped_early,
        epochs_run: out.curve.len(),
        best_epoch: out.best.epoch,
        weights_moved_after_best: seen.len() > 2 && seen[1] != seen[seen.len() - 1],
        restored_epoch,
        restored_metric: restored_epoch.map(|e| task.curve[e - 1]),
    })
}
