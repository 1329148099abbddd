//! Checkpoint file format.
//!
//! Layout: magic `OCPT`, u8 version, u32 parameter count, then per
//! parameter: u16 name length, name bytes, u8 rank, u32 extents, raw
//! little-endian f32 values. Footer: u64 optimizer step, f64 beta, f64
//! moving-average reconstruction error. Round trips are byte-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{Array, El, ParamStore};

const MAGIC: &[u8; 4] = b"OCPT";
const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint magic: expected \"OCPT\", found {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    BadVersion(u8),
    #[error("truncated checkpoint: needed {expected} more bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
}

/// Trainer state carried in the checkpoint footer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footer {
    pub step: u64,
    pub geco_beta: f64,
    pub geco_ema: f64,
}

pub fn save<T: El>(
    path: &Path,
    store: &ParamStore<T>,
    footer: &Footer,
) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, param) in store.iter() {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        let shape = param.value.shape();
        w.write_all(&[shape.len() as u8])?;
        for &e in shape {
            w.write_all(&(e as u32).to_le_bytes())?;
        }
        for v in param.value.data() {
            w.write_all(&(v.to_f64() as f32).to_le_bytes())?;
        }
    }
    w.write_all(&footer.step.to_le_bytes())?;
    w.write_all(&footer.geco_beta.to_le_bytes())?;
    w.write_all(&footer.geco_ema.to_le_bytes())?;
    w.flush()?;
    Ok(())
}

#[derive(Debug)]
pub struct LoadedCheckpoint {
    pub params: Vec<(String, Vec<usize>, Vec<f32>)>,
    pub footer: Footer,
}

impl LoadedCheckpoint {
    /// Install loaded values into an existing store with matching names.
    pub fn install<T: El>(&self, store: &mut ParamStore<T>) {
        for (name, shape, values) in &self.params {
            let data: Vec<T> = values.iter().map(|&v| T::from_f64(v as f64)).collect();
            store.set_value(name, Array::new(shape.clone(), data));
        }
        store.set_step(self.footer.step);
    }
}

pub fn load(path: &Path) -> Result<LoadedCheckpoint, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = read_u8(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let count = read_u32(&mut r)? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u16(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        read_exact(&mut r, &mut name)?;
        let name = String::from_utf8_lossy(&name).into_owned();
        let rank = read_u8(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0u8; 4];
            read_exact(&mut r, &mut b)?;
            values.push(f32::from_le_bytes(b));
        }
        params.push((name, shape, values));
    }
    let mut b8 = [0u8; 8];
    read_exact(&mut r, &mut b8)?;
    let step = u64::from_le_bytes(b8);
    read_exact(&mut r, &mut b8)?;
    let geco_beta = f64::from_le_bytes(b8);
    read_exact(&mut r, &mut b8)?;
    let geco_ema = f64::from_le_bytes(b8);
    Ok(LoadedCheckpoint {
        params,
        footer: Footer {
            step,
            geco_beta,
            geco_ema,
        },
    })
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), CheckpointError> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            return Err(CheckpointError::Truncated {
                expected: buf.len() - filled,
                actual: 0,
            });
        }
        filled += n;
    }
    Ok(())
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8, CheckpointError> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b)?;
    Ok(b[0])
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16, CheckpointError> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}
