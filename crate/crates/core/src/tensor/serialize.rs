//! Flat named-parameter file.
//!
//! Layout (little-endian): magic `PEFTPARM`, `u32` version, `u32` record count,
//! then per record: `u32` name length, UTF-8 name, `u8` trainable flag,
//! `u32` rank, `u64` per dimension, and the values as `f64`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::params::{ParamStore, Parameter};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const PARAM_MAGIC: &[u8; 8] = b"PEFTPARM";
pub const PARAM_VERSION: u32 = 1;

/// One parameter as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub data: Vec<f64>,
}

pub fn write_params<T: Scalar, W: Write>(
    store: &ParamStore<T>,
    keep: impl Fn(&Parameter<T>) -> bool,
    mut w: W,
) -> Result<()> {
    let selected: Vec<_> = store.iter().filter(|(_, p)| keep(p)).collect();
    w.write_all(PARAM_MAGIC)?;
    w.write_all(&PARAM_VERSION.to_le_bytes())?;
    w.write_all(&(selected.len() as u32).to_le_bytes())?;
    for (_, p) in selected {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[u8::from(p.trainable)])?;
        w.write_all(&(p.value.rank() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in p.value.data() {
            w.write_all(&x.as_f64().to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated parameter file: {e}")))?;
    Ok(buf)
}

pub fn read_params<R: Read>(mut r: R) -> Result<Vec<ParamRecord>> {
    if &read_exact::<8, _>(&mut r)? != PARAM_MAGIC {
        return Err(Error::Format("bad parameter file magic".into()));
    }
    let version = u32::from_le_bytes(read_exact(&mut r)?);
    if version != PARAM_VERSION {
        return Err(Error::Format(format!("unsupported parameter file version {version}")));
    }
    let count = u32::from_le_bytes(read_exact(&mut r)?) as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = u32::from_le_bytes(read_exact(&mut r)?) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Format(format!("truncated parameter name: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let trainable = read_exact::<1, _>(&mut r)?[0] != 0;
        let rank = u32::from_le_bytes(read_exact(&mut r)?) as usize;
        let shape = (0..rank)
            .map(|_| Ok(u64::from_le_bytes(read_exact(&mut r)?) as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| Ok(f64::from_le_bytes(read_exact(&mut r)?)))
            .collect::<Result<Vec<_>>>()?;
        out.push(ParamRecord {
            name,
            shape,
            trainable,
            data,
        });
    }
    Ok(out)
}

/// Copies record values into same-named parameters; returns how many were loaded.
pub fn load_into<T: Scalar>(store: &mut ParamStore<T>, records: &[ParamRecord]) -> Result<usize> {
    for rec in records {
        let id = store
            .id(&rec.name)
            .ok_or_else(|| Error::Format(format!("unknown parameter {}", rec.name)))?;
        let p = store.get_mut(id);
        if p.value.shape() != rec.shape.as_slice() {
            return Err(Error::Dimension {
                op: "load parameter",
                lhs: p.value.shape().to_vec(),
                rhs: rec.shape.clone(),
            });
        }
        p.value = Tensor::from_f64(rec.shape.clone(), &rec.data)?;
    }
    Ok(records.len())
}

pub fn save_params<T: Scalar>(
    path: &Path,
    store: &ParamStore<T>,
    keep: impl Fn(&Parameter<T>) -> bool,
) -> Result<()> {
    let mut buf = Vec::new();
    write_params(store, keep, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<Vec<ParamRecord>> {
    read_params(fs::File::open(path)?)
}
