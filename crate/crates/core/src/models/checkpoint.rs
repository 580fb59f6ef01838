//! Checkpoint format, all integers little-endian:
//!
//! ```text
//! "DBKD"  u16 version
//! u32 config length, config as UTF-8 TOML
//! u64 init seed
//! u32 parameter count
//! per parameter: u32 rank, rank x u32 dims, f64 values
//! u32 CRC-32 of everything before it
//! ```

use std::fs;
use std::path::Path;

use super::config::ModelConfig;
use super::network::Model;
use crate::autograd::Tensor;
use crate::binio::{put_f64, put_u16, put_u32, put_u64, to_u32, Reader};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DBKD";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn encode_checkpoint(model: &Model) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u16(&mut out, CHECKPOINT_VERSION);
    let text = model.config().to_toml_string()?;
    put_u32(&mut out, to_u32(text.len(), "config length")?);
    out.extend_from_slice(text.as_bytes());
    put_u64(&mut out, model.seed());
    put_u32(&mut out, to_u32(model.params().len(), "parameter count")?);
    for p in model.params() {
        put_u32(&mut out, to_u32(p.rank(), "rank")?);
        for &d in p.shape() {
            put_u32(&mut out, to_u32(d, "dimension")?);
        }
        for &v in p.data() {
            put_f64(&mut out, v);
        }
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32("config length")? as usize;
    let text = std::str::from_utf8(r.take(len, "config text")?)
        .map_err(|e| Error::Format(format!("config text is not UTF-8: {e}")))?;
    let config = ModelConfig::from_toml_str(text).map_err(|e| Error::Format(e.to_string()))?;
    let seed = r.u64("seed")?;
    let count = r.u32("parameter count")? as usize;
    let mut params = Vec::with_capacity(count);
    for i in 0..count {
        let rank = r.u32(&format!("parameter {i} rank"))? as usize;
        let dims = (0..rank)
            .map(|_| r.u32(&format!("parameter {i} dims")).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let region = format!("parameter {i} values");
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("parameter too large".into()))?, &region)?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        params.push((region, dims, data));
    }
    let body_end = r.position();
    let stored = r.u32("trailing CRC-32")?;
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} unexpected bytes after CRC", r.remaining())));
    }
    let actual = crc32fast::hash(&bytes[..body_end]);
    if stored != actual {
        return Err(Error::Format(format!("CRC mismatch: stored {stored:08x}, computed {actual:08x}")));
    }
    let params = params
        .into_iter()
        .map(|(region, dims, data)| Tensor::new(dims, data).map_err(|e| Error::Format(format!("{region}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    Model::from_parts(config, seed, params)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    decode_checkpoint(&fs::read(path)?)
}
