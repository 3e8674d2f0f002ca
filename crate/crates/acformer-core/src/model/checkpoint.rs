//! Flat binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "ACFM" | version u32
//! input_len pred_len channels kernel_len stride heads gate_kernel_len
//!   layers ff_width  (u32 each)
//! use_gate use_attention revin_affine per_channel_projection conv_bias
//!   (u32 0/1 each)
//! seed u64
//! tensor_count u32
//! per tensor: name_len u32 | name bytes | rank u32 | dims u32×rank | f64 data
//! ```
//!
//! The round trip is bit-exact: floats are stored as raw IEEE-754 bits.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::config::AcformerConfig;
use super::params::ModelParams;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"ACFM";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] io::Error),
    #[error("not an ACFormer checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint does not match model structure: {0}")]
    StructureMismatch(String),
}

fn write_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_flag(w: &mut impl Write, v: bool) -> io::Result<()> {
    write_u32(w, v as u32)
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64, CheckpointError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_flag(r: &mut impl Read, what: &str) -> Result<bool, CheckpointError> {
    match read_u32(r)? {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(CheckpointError::Corrupt(format!(
            "flag {what} must be 0 or 1, got {other}"
        ))),
    }
}

pub fn save(params: &ModelParams, path: &Path) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    let cfg = &params.config;
    w.write_all(MAGIC)?;
    write_u32(&mut w, VERSION)?;
    for v in [
        cfg.input_len,
        cfg.pred_len,
        cfg.channels,
        cfg.kernel_len,
        cfg.stride,
        cfg.heads,
        cfg.gate_kernel_len,
        cfg.layers,
        cfg.ff_width(),
    ] {
        write_u32(&mut w, v as u32)?;
    }
    for f in [
        cfg.use_gate,
        cfg.use_attention,
        cfg.revin_affine,
        cfg.per_channel_projection,
        cfg.conv_bias,
    ] {
        write_flag(&mut w, f)?;
    }
    w.write_all(&cfg.seed.to_le_bytes())?;

    let tensors = params.visit();
    write_u32(&mut w, tensors.len() as u32)?;
    for (name, t) in tensors {
        write_u32(&mut w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        write_u32(&mut w, t.shape().len() as u32)?;
        for &d in t.shape() {
            write_u32(&mut w, d as u32)?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelParams, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let mut dims = [0usize; 9];
    for d in dims.iter_mut() {
        *d = read_u32(&mut r)? as usize;
    }
    let cfg = AcformerConfig {
        input_len: dims[0],
        pred_len: dims[1],
        channels: dims[2],
        kernel_len: dims[3],
        stride: dims[4],
        heads: dims[5],
        gate_kernel_len: dims[6],
        layers: dims[7],
        ff_hidden: Some(dims[8]),
        use_gate: read_flag(&mut r, "use_gate")?,
        use_attention: read_flag(&mut r, "use_attention")?,
        revin_affine: read_flag(&mut r, "revin_affine")?,
        per_channel_projection: read_flag(&mut r, "per_channel_projection")?,
        conv_bias: read_flag(&mut r, "conv_bias")?,
        seed: read_u64(&mut r)?,
    };
    cfg.validate()
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;

    let mut params = ModelParams::init(&cfg);
    let count = read_u32(&mut r)? as usize;
    let mut expected = params.visit_mut();
    if count != expected.len() {
        return Err(CheckpointError::StructureMismatch(format!(
            "checkpoint holds {count} tensors, model expects {}",
            expected.len()
        )));
    }
    for (expected_name, tensor) in expected.iter_mut() {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 4096 {
            return Err(CheckpointError::Corrupt(format!(
                "tensor name of {name_len} bytes"
            )));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| CheckpointError::Corrupt("tensor name is not UTF-8".into()))?;
        if &name != expected_name {
            return Err(CheckpointError::StructureMismatch(format!(
                "expected tensor '{expected_name}', found '{name}'"
            )));
        }
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        if shape != tensor.shape() {
            return Err(CheckpointError::StructureMismatch(format!(
                "tensor '{name}' has shape {shape:?}, model expects {:?}",
                tensor.shape()
            )));
        }
        let mut buf = [0u8; 8];
        for v in tensor.data_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(CheckpointError::Corrupt(
            "trailing bytes after last tensor".into(),
        ));
    }
    Ok(params)
}
