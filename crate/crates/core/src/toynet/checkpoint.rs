//! Binary parameter files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "TTRKCKPT"
//! version  u32      1
//! config   u32 length, then UTF-8 `key = value` lines
//! count    u32      number of tensors
//! table    per tensor: u32 name length, name, u64 rows, u64 cols
//! data     every tensor's entries, row-major, as f64
//! ```

use super::model::{ModelConfig, ModelParams};
use super::tape::Mat;
use super::ToyNetError;
use std::io::{Read, Write};

pub const MAGIC: &[u8; 8] = b"TTRKCKPT";
pub const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> ToyNetError {
    ToyNetError::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(params: &ModelParams, mut out: W) -> Result<(), ToyNetError> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    let cfg = params.config.to_text();
    out.write_all(&(cfg.len() as u32).to_le_bytes())?;
    out.write_all(cfg.as_bytes())?;
    out.write_all(&(params.tensors.len() as u32).to_le_bytes())?;
    for (name, t) in params.names().iter().zip(&params.tensors) {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.nrows() as u64).to_le_bytes())?;
        out.write_all(&(t.ncols() as u64).to_le_bytes())?;
    }
    for t in &params.tensors {
        for v in t.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, ToyNetError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, ToyNetError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R, max: usize) -> Result<String, ToyNetError> {
    let len = read_u32(r)? as usize;
    if len > max {
        return Err(bad(format!("string of {len} bytes exceeds {max}")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| bad("string is not UTF-8"))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModelParams, ToyNetError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let config = ModelConfig::parse(&read_string(&mut r, 1 << 16)?)?;
    let count = read_u32(&mut r)? as usize;
    if count > 1 << 16 {
        return Err(bad(format!("{count} tensors is implausible")));
    }
    let mut table = Vec::with_capacity(count);
    for _ in 0..count {
        let name = read_string(&mut r, 1 << 10)?;
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        if rows.saturating_mul(cols) > 1 << 28 {
            return Err(bad(format!("tensor {name} is {rows}x{cols}")));
        }
        table.push((name, rows, cols));
    }
    let mut named = Vec::with_capacity(count);
    for (name, rows, cols) in table {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        let m = Mat::from_shape_vec((rows, cols), data).map_err(|e| bad(e.to_string()))?;
        named.push((name, m));
    }
    ModelParams::from_tensors(config, named)
}

pub fn to_bytes(params: &ModelParams) -> Vec<u8> {
    let mut buf = Vec::new();
    write_checkpoint(params, &mut buf).expect("writing to memory cannot fail");
    buf
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams, ToyNetError> {
    read_checkpoint(bytes)
}

pub fn save(params: &ModelParams, path: &std::path::Path) -> Result<(), ToyNetError> {
    std::fs::write(path, to_bytes(params))?;
    Ok(())
}

pub fn load(path: &std::path::Path) -> Result<ModelParams, ToyNetError> {
    from_bytes(&std::fs::read(path)?)
}
