//! Flat little-endian parameter files.
//!
//! Layout: magic `NSAP`, u32 version, u32 layer count, then per layer u32
//! rows, u32 cols, rows×cols f64 weights (row-major) and rows f64 biases.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Dense, ModelParams};
use crate::error::{Error, Result};

pub const PARAMS_MAGIC: [u8; 4] = *b"NSAP";
pub const PARAMS_VERSION: u32 = 1;

pub fn write_params<W: Write>(params: &ModelParams, mut w: W) -> Result<()> {
    w.write_all(&PARAMS_MAGIC)?;
    w.write_all(&PARAMS_VERSION.to_le_bytes())?;
    w.write_all(&(params.layers.len() as u32).to_le_bytes())?;
    for l in &params.layers {
        w.write_all(&(l.outputs() as u32).to_le_bytes())?;
        w.write_all(&(l.inputs() as u32).to_le_bytes())?;
        for v in l.weight.iter().chain(l.bias.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn read_params<R: Read>(mut r: R) -> Result<ModelParams> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != PARAMS_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != PARAMS_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let weight = Array2::from_shape_vec((rows, cols), read_f64s(&mut r, rows * cols)?)
            .map_err(|e| Error::Format(e.to_string()))?;
        let bias = Array1::from(read_f64s(&mut r, rows)?);
        layers.push(Dense { weight, bias });
    }
    let params = ModelParams { layers };
    if !params.is_finite() {
        return Err(Error::Format("non-finite parameter".into()));
    }
    Ok(params)
}

pub fn save_params(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    write_params(params, BufWriter::new(File::create(path)?))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ModelParams> {
    read_params(BufReader::new(File::open(path)?))
}
