//! Versioned binary checkpoint container.
//!
//! Byte layout (all integers little-endian, all floats f64 LE bit patterns):
//!
//! ```text
//! magic      8 bytes  b"GRDIFF01"
//! config     u32 byte length, then UTF-8 JSON echo of the run config
//! step       u64 training step counter
//! rng_seed   32 bytes ChaCha seed
//! rng_pos    u128 ChaCha word position
//! params     u32 tensor count, then per tensor:
//!              u16 name length, UTF-8 name,
//!              u8 rank, u64 per dimension,
//!              f64 data (row-major)
//! ema        u32 tensor count (0 when EMA disabled), same tensor encoding
//! ```
//!
//! Round-tripping a checkpoint through save/load is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::CheckpointError;

const MAGIC: &[u8; 8] = b"GRDIFF01";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config_json: String,
    pub step: u64,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
    pub params: Vec<(String, Tensor)>,
    pub ema: Vec<(String, Tensor)>,
}

fn write_tensors(out: &mut Vec<u8>, tensors: &[(String, Tensor)]) {
    out.extend((tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend((name.len() as u16).to_le_bytes());
        out.extend(name.as_bytes());
        out.push(t.shape().len() as u8);
        for d in t.shape() {
            out.extend((*d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend(v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::Corrupt("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128, CheckpointError> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }
}

fn read_tensors(r: &mut Reader) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| CheckpointError::Corrupt("tensor name not utf-8".into()))?;
        let rank = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let bytes = r.take(numel * 8)?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::from_parts(shape, data, None)));
    }
    Ok(out)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend((ckpt.config_json.len() as u32).to_le_bytes());
    out.extend(ckpt.config_json.as_bytes());
    out.extend(ckpt.step.to_le_bytes());
    out.extend(ckpt.rng_seed);
    out.extend(ckpt.rng_word_pos.to_le_bytes());
    write_tensors(&mut out, &ckpt.params);
    write_tensors(&mut out, &ckpt.ema);
    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(CheckpointError::Corrupt("bad magic".into()));
    }
    let cfg_len = r.u32()? as usize;
    let config_json = String::from_utf8(r.take(cfg_len)?.to_vec())
        .map_err(|_| CheckpointError::Corrupt("config not utf-8".into()))?;
    let step = r.u64()?;
    let rng_seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let rng_word_pos = r.u128()?;
    let params = read_tensors(&mut r)?;
    let ema = read_tensors(&mut r)?;
    if r.pos != buf.len() {
        return Err(CheckpointError::Corrupt("trailing bytes".into()));
    }
    Ok(Checkpoint { config_json, step, rng_seed, rng_word_pos, params, ema })
}
