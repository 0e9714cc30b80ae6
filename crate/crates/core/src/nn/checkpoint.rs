//! Binary model checkpoints.
//!
//! Layout (little endian): magic `PCILMDL\0`, `u32` version, `u32` layer
//! count (extractor layers + head), then per layer `u32 in`, `u32 out`,
//! `u8` activation (0 relu, 1 identity), `out*in` weights row-major and
//! `out` biases as `f64`. The last layer is the head.

use std::io::{Read, Write};
use std::path::Path;

use super::matrix::Matrix;
use super::model::{Activation, Dense, Model};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PCILMDL\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_model<W: Write>(model: &Model, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let layers: Vec<&Dense> = model
        .extractor()
        .iter()
        .chain(std::iter::once(model.head()))
        .collect();
    w.write_all(&(layers.len() as u32).to_le_bytes())?;
    for l in layers {
        w.write_all(&(l.input_dim() as u32).to_le_bytes())?;
        w.write_all(&(l.output_dim() as u32).to_le_bytes())?;
        w.write_all(&[match l.activation {
            Activation::Relu => 0u8,
            Activation::Identity => 1u8,
        }])?;
        for v in l.weights.as_slice().iter().chain(&l.bias) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn parse_err(message: impl Into<String>) -> Error {
    Error::Parse {
        location: "model checkpoint".into(),
        message: message.into(),
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

pub fn read_model<R: Read>(mut r: R) -> Result<Model> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(parse_err("bad magic"));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(parse_err(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    if count == 0 {
        return Err(parse_err("no layers"));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let input = read_u32(&mut r)? as usize;
        let output = read_u32(&mut r)? as usize;
        let mut act = [0u8; 1];
        r.read_exact(&mut act)?;
        let activation = match act[0] {
            0 => Activation::Relu,
            1 => Activation::Identity,
            other => return Err(parse_err(format!("unknown activation tag {other}"))),
        };
        let weights = Matrix::from_vec(output, input, read_f64s(&mut r, input * output)?)?;
        let bias = read_f64s(&mut r, output)?;
        layers.push(Dense::new(weights, bias, activation)?);
    }
    let head = layers.pop().expect("count > 0");
    Model::new(layers, head)
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_model(model, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    read_model(std::fs::File::open(path)?)
}
