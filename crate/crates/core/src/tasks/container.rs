//! Binary task container: header, then per split a count and
//! `(target, raw f64 features)` records, all little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tasks::{Example, Split, SyntheticTask, Target, TaskKind};
use crate::tensor::Tensor;

pub const TASK_MAGIC: &[u8; 8] = b"PEFTTASK";
pub const TASK_VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn kind_byte(k: TaskKind) -> u8 {
    match k {
        TaskKind::Classification => 0,
        TaskKind::Transduction => 1,
        TaskKind::Tagging => 2,
    }
}

pub fn write_task(task: &SyntheticTask, mut w: impl Write) -> Result<()> {
    w.write_all(TASK_MAGIC)?;
    w.write_all(&TASK_VERSION.to_le_bytes())?;
    w.write_all(&[kind_byte(task.kind)])?;
    w.write_all(&task.seed.to_le_bytes())?;
    put_u32(&mut w, task.seq_len)?;
    put_u32(&mut w, task.input_dim)?;
    put_u32(&mut w, task.n_out)?;
    for split in [&task.train, &task.val, &task.test] {
        put_u32(&mut w, split.len())?;
        for e in &split.examples {
            match &e.target {
                Target::Class(c) => put_u32(&mut w, *c)?,
                Target::Sequence(s) | Target::Tags(s) => {
                    put_u32(&mut w, s.len())?;
                    for &x in s {
                        put_u32(&mut w, x)?;
                    }
                }
            }
            for x in e.features.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| Error::Format(format!("truncated task file: {e}")))?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }
}

pub fn read_task(r: impl Read) -> Result<SyntheticTask> {
    let mut r = Reader { inner: r };
    if &r.bytes::<8>()? != TASK_MAGIC {
        return Err(Error::Format("not a task container".into()));
    }
    let version = r.u32()? as u32;
    if version != TASK_VERSION {
        return Err(Error::Format(format!("unsupported task version {version}")));
    }
    let kind = match r.bytes::<1>()?[0] {
        0 => TaskKind::Classification,
        1 => TaskKind::Transduction,
        2 => TaskKind::Tagging,
        b => return Err(Error::Format(format!("unknown task kind {b}"))),
    };
    let seed = u64::from_le_bytes(r.bytes()?);
    let (seq_len, input_dim, n_out) = (r.u32()?, r.u32()?, r.u32()?);
    let mut splits = Vec::with_capacity(3);
    for _ in 0..3 {
        let n = r.u32()?;
        let mut examples = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let target = match kind {
                TaskKind::Classification => Target::Class(r.u32()?),
                TaskKind::Transduction | TaskKind::Tagging => {
                    let len = r.u32()?;
                    let seq = (0..len).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                    if kind == TaskKind::Tagging {
                        Target::Tags(seq)
                    } else {
                        Target::Sequence(seq)
                    }
                }
            };
            let data = (0..seq_len * input_dim)
                .map(|_| r.bytes().map(f64::from_le_bytes))
                .collect::<Result<Vec<_>>>()?;
            examples.push(Example {
                features: Tensor::new(vec![seq_len, input_dim], data)?,
                target,
            });
        }
        splits.push(Split { examples });
    }
    let mut it = splits.into_iter();
    let (train, val, test) = (it.next().unwrap_or_default(), it.next().unwrap_or_default(), it.next().unwrap_or_default());
    Ok(SyntheticTask {
        kind,
        seed,
        seq_len,
        input_dim,
        n_out,
        train,
        val,
        test,
    })
}

pub fn save_task(task: &SyntheticTask, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_task(task, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_task(path: &Path) -> Result<SyntheticTask> {
    read_task(fs::File::open(path)?)
}
