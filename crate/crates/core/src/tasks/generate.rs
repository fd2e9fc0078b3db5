use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{config_err, Result};
use crate::metrics::Span;
use crate::tasks::spans::frames_from_spans;
use crate::tasks::{check_positive, Example, Split, SyntheticTask, Target, TaskKind};
use crate::tensor::Tensor;

/// Shape of the classification generator.
///
/// The pooled mean of a sample is `difficulty·mean_scale·e_c + nuisance`,
/// with the nuisance bounded by `nuisance + noise` per coordinate, so at
/// difficulty 1 class means sit farther apart than any nuisance can move
/// them. On top of that, each class has a zero-mean wave whose direction
/// over time carries the label independently of the pooled mean.
#[derive(Clone, Copy, Debug)]
pub struct ClassShape {
    pub mean_scale: f64,
    pub nuisance: f64,
    pub noise: f64,
    pub wave_amp: f64,
}

pub const CLASS_SHAPE: ClassShape = ClassShape {
    mean_scale: 2.4,
    nuisance: 1.0,
    noise: 0.1,
    wave_amp: 2.5,
};

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// 60/20/20 split of each class's samples, then a seeded shuffle of each split.
fn stratified(per_class: Vec<Vec<Example>>, rng: &mut ChaCha8Rng) -> (Split, Split, Split) {
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for mut group in per_class {
        let n = group.len();
        let (n_train, n_val) = (n * 3 / 5, n / 5);
        let rest = group.split_off(n_train);
        train.extend(group);
        let mut rest = rest;
        let tail = rest.split_off(n_val);
        val.extend(rest);
        test.extend(tail);
    }
    for s in [&mut train, &mut val, &mut test] {
        s.shuffle(rng);
    }
    (Split { examples: train }, Split { examples: val }, Split { examples: test })
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let n = Normal::new(0.0, 1.0).expect("valid normal");
    let v: Vec<f64> = (0..dim).map(|_| n.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / norm).collect()
}

/// Class-conditional sequences: a static class offset plus a class-specific
/// zero-mean temporal wave, under a per-sample constant nuisance and
/// per-frame noise.
pub fn gen_classification(
    seed: u64,
    n_classes: usize,
    samples_per_class: usize,
    seq_len: usize,
    input_dim: usize,
    difficulty: f64,
) -> Result<SyntheticTask> {
    gen_classification_with(seed, n_classes, samples_per_class, seq_len, input_dim, difficulty, CLASS_SHAPE)
}

pub fn gen_classification_with(
    seed: u64,
    n_classes: usize,
    samples_per_class: usize,
    seq_len: usize,
    input_dim: usize,
    difficulty: f64,
    shape: ClassShape,
) -> Result<SyntheticTask> {
    check_positive(&[("n_classes", n_classes), ("seq_len", seq_len), ("input_dim", input_dim)])?;
    if !(difficulty > 0.0 && difficulty <= 1.0) {
        return config_err(format!("difficulty {difficulty} must lie in (0, 1]"));
    }
    if n_classes < 2 || n_classes > 2 * input_dim {
        return config_err(format!("n_classes {n_classes} must lie in 2..={}", 2 * input_dim));
    }
    if samples_per_class < 5 {
        return config_err("samples_per_class must be at least 5 for a 60/20/20 split");
    }
    if seq_len < 3 {
        return config_err("seq_len must be at least 3");
    }
    let mut rng = rng_for(seed, 0);
    let waves: Vec<(Vec<f64>, f64, f64)> = (0..n_classes)
        .map(|c| {
            let dir = unit_vector(&mut rng, input_dim);
            let freq = (1 + c % 2) as f64;
            let phase = rng.random_range(0.0..2.0 * PI);
            (dir, freq, phase)
        })
        .collect();

    let mut per_class = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let mut group = Vec::with_capacity(samples_per_class);
        let sign = if c < input_dim { 1.0 } else { -1.0 };
        let axis = c % input_dim;
        let (dir, freq, phase) = &waves[c];
        for _ in 0..samples_per_class {
            let offset: Vec<f64> = (0..input_dim)
                .map(|_| if rng.random_bool(0.5) { shape.nuisance } else { -shape.nuisance })
                .collect();
            let mut data = vec![0.0; seq_len * input_dim];
            for t in 0..seq_len {
                let w = shape.wave_amp * (2.0 * PI * freq * t as f64 / seq_len as f64 + phase).sin();
                for i in 0..input_dim {
                    let mean = if i == axis { sign * difficulty * shape.mean_scale } else { 0.0 };
                    let noise = rng.random_range(-shape.noise..=shape.noise);
                    data[t * input_dim + i] = mean + offset[i] + w * dir[i] + noise;
                }
            }
            group.push(Example {
                features: Tensor::new(vec![seq_len, input_dim], data)?,
                target: Target::Class(c),
            });
        }
        per_class.push(group);
    }
    let (train, val, test) = stratified(per_class, &mut rng);
    Ok(SyntheticTask {
        kind: TaskKind::Classification,
        seed,
        seq_len,
        input_dim,
        n_out: n_classes,
        train,
        val,
        test,
    })
}

const SYMBOL_NOISE: f64 = 0.3;

/// Symbol sequences rendered as template segments separated by silence.
pub fn gen_transduction(
    seed: u64,
    vocab: usize,
    max_label_len: usize,
    n_samples: usize,
    seq_len: usize,
    input_dim: usize,
) -> Result<SyntheticTask> {
    check_positive(&[
        ("vocab", vocab),
        ("max_label_len", max_label_len),
        ("seq_len", seq_len),
        ("input_dim", input_dim),
    ])?;
    if seq_len < 2 * max_label_len + 1 {
        return config_err(format!(
            "seq_len {seq_len} is below 2·max_label_len + 1 = {}",
            2 * max_label_len + 1
        ));
    }
    if n_samples < 5 {
        return config_err("n_samples must be at least 5 for a 60/20/20 split");
    }
    let mut rng = rng_for(seed, 0);
    let templates: Vec<Vec<f64>> = (0..vocab)
        .map(|_| unit_vector(&mut rng, input_dim).into_iter().map(|x| 2.0 * x).collect())
        .collect();
    let noise = Normal::new(0.0, SYMBOL_NOISE).expect("valid normal");
    let mut examples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let len = rng.random_range(1..=max_label_len);
        let label: Vec<usize> = (0..len).map(|_| rng.random_range(1..=vocab)).collect();
        // slots alternate silence, symbol, silence, ..., silence
        let mut widths = vec![1usize; 2 * len + 1];
        for _ in 0..seq_len - (2 * len + 1) {
            let slot = rng.random_range(0..widths.len());
            widths[slot] += 1;
        }
        let mut data = Vec::with_capacity(seq_len * input_dim);
        for (slot, &w) in widths.iter().enumerate() {
            for _ in 0..w {
                for i in 0..input_dim {
                    let base = if slot % 2 == 1 { templates[label[slot / 2] - 1][i] } else { 0.0 };
                    data.push(base + noise.sample(&mut rng));
                }
            }
        }
        examples.push(Example {
            features: Tensor::new(vec![seq_len, input_dim], data)?,
            target: Target::Sequence(label),
        });
    }
    let (train, val, test) = ordered_split(examples);
    Ok(SyntheticTask {
        kind: TaskKind::Transduction,
        seed,
        seq_len,
        input_dim,
        n_out: vocab,
        train,
        val,
        test,
    })
}

fn ordered_split(mut all: Vec<Example>) -> (Split, Split, Split) {
    let n = all.len();
    let (n_train, n_val) = (n * 3 / 5, n / 5);
    let mut rest = all.split_off(n_train);
    let test = rest.split_off(n_val);
    (Split { examples: all }, Split { examples: rest }, Split { examples: test })
}

const MAX_SPAN: usize = 4;
const TAG_NOISE: f64 = 0.3;

/// Frame-tagged sequences with contiguous spans separated by background.
pub fn gen_tagging(
    seed: u64,
    n_tags: usize,
    n_samples: usize,
    seq_len: usize,
    input_dim: usize,
    span_density: f64,
) -> Result<SyntheticTask> {
    check_positive(&[("seq_len", seq_len), ("input_dim", input_dim)])?;
    if n_tags < 2 {
        return config_err("n_tags counts the background tag and must be at least 2");
    }
    if !(span_density > 0.0 && span_density < 1.0) {
        return config_err(format!("span_density {span_density} must lie in (0, 1)"));
    }
    if n_samples < 5 {
        return config_err("n_samples must be at least 5 for a 60/20/20 split");
    }
    let mut rng = rng_for(seed, 0);
    let templates: Vec<Vec<f64>> = (1..n_tags)
        .map(|_| unit_vector(&mut rng, input_dim).into_iter().map(|x| 2.0 * x).collect())
        .collect();
    let mean_len = (1 + MAX_SPAN) as f64 / 2.0;
    let p_start = (span_density / (mean_len * (1.0 - span_density))).min(1.0);
    let noise = Normal::new(0.0, TAG_NOISE).expect("valid normal");
    let mut examples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let mut spans = Vec::new();
        let mut t = 0;
        while t < seq_len {
            if rng.random_bool(p_start) {
                let len = rng.random_range(1..=MAX_SPAN).min(seq_len - t);
                let tag = rng.random_range(1..n_tags);
                spans.push(Span { tag, start: t, end: t + len });
                t += len + 1;
            } else {
                t += 1;
            }
        }
        let tags = frames_from_spans(&spans, seq_len);
        let mut data = Vec::with_capacity(seq_len * input_dim);
        for &tag in &tags {
            for i in 0..input_dim {
                let base = if tag > 0 { templates[tag - 1][i] } else { 0.0 };
                data.push(base + noise.sample(&mut rng));
            }
        }
        examples.push(Example {
            features: Tensor::new(vec![seq_len, input_dim], data)?,
            target: Target::Tags(tags),
        });
    }
    let (train, val, test) = ordered_split(examples);
    Ok(SyntheticTask {
        kind: TaskKind::Tagging,
        seed,
        seq_len,
        input_dim,
        n_out: n_tags,
        train,
        val,
        test,
    })
}
