//! Versioned binary model checkpoints.
//!
//! Byte layout (all integers little-endian):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 8    | magic `VAXCKPT1`                        |
//! | 8      | 4    | format version, u32 (currently 1)       |
//! | 12     | 4    | config JSON byte length, u32            |
//! | 16     | L    | config echo: ModelConfig as JSON        |
//! | 16+L   | 4    | tensor count, u32                       |
//! | …      | 8    | tensor 0 element count, u64             |
//! | …      | 4·n  | tensor 0 payload, f32 little-endian     |
//! | …      |      | (repeat count + payload per tensor)     |
//!
//! Tensors appear in the model's canonical order (conv weights/bias per
//! layer, dense weights/bias, output weights/bias). Payloads are always
//! f32; an f32 model therefore reloads bit-identically.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::model::{Model, ModelConfig};
use super::tensor::Scalar;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"VAXCKPT1";
pub const VERSION: u32 = 1;

pub fn save_checkpoint<S: Scalar>(path: &Path, model: &Model<S>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let config_json = serde_json::to_vec(model.config())?;
    w.write_all(&(config_json.len() as u32).to_le_bytes())?;
    w.write_all(&config_json)?;
    w.write_all(&(model.tensor_count() as u32).to_le_bytes())?;
    for t in 0..model.tensor_count() {
        let tensor = model.tensor(t);
        w.write_all(&(tensor.len() as u64).to_le_bytes())?;
        for &v in tensor {
            w.write_all(&(v.to_f64() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact_or_bad(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == ErrorKind::UnexpectedEof {
            Error::BadCheckpoint(format!("truncated while reading {what}"))
        } else {
            Error::Io(e)
        }
    })
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<Model<S>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    read_exact_or_bad(&mut r, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(Error::BadCheckpoint(format!(
            "bad magic {:02x?}, expected {:02x?}",
            magic, MAGIC
        )));
    }
    let mut u32buf = [0u8; 4];
    read_exact_or_bad(&mut r, &mut u32buf, "version")?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::BadCheckpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    read_exact_or_bad(&mut r, &mut u32buf, "config length")?;
    let config_len = u32::from_le_bytes(u32buf) as usize;
    let mut config_json = vec![0u8; config_len];
    read_exact_or_bad(&mut r, &mut config_json, "config echo")?;
    let config: ModelConfig = serde_json::from_slice(&config_json)
        .map_err(|e| Error::BadCheckpoint(format!("config echo does not parse: {e}")))?;
    let mut model: Model<S> = Model::zeros(&config)
        .map_err(|e| Error::BadCheckpoint(format!("config echo invalid: {e}")))?;

    read_exact_or_bad(&mut r, &mut u32buf, "tensor count")?;
    let count = u32::from_le_bytes(u32buf) as usize;
    if count != model.tensor_count() {
        return Err(Error::BadCheckpoint(format!(
            "tensor count {count} does not match config ({})",
            model.tensor_count()
        )));
    }
    let mut u64buf = [0u8; 8];
    for t in 0..count {
        read_exact_or_bad(&mut r, &mut u64buf, "tensor length")?;
        let n = u64::from_le_bytes(u64buf) as usize;
        if n != model.tensor(t).len() {
            return Err(Error::BadCheckpoint(format!(
                "tensor {t} has {n} elements, config implies {}",
                model.tensor(t).len()
            )));
        }
        let mut payload = vec![0u8; 4 * n];
        read_exact_or_bad(&mut r, &mut payload, "tensor payload")?;
        let dst = model.tensor_mut(t);
        for (i, chunk) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
            dst[i] = S::from_f64(v as f64);
        }
    }
    // trailing garbage means the file is not what we think it is
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(model),
        _ => Err(Error::BadCheckpoint("trailing bytes after payload".into())),
    }
}
