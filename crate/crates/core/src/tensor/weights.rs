//! `TCWT` named-tensor container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic      b"TCWT"
//! version    u16            (currently 1)
//! count      u32            number of tensors
//! per tensor:
//!   name_len u16, name      UTF-8 bytes
//!   rank     u8
//!   extents  u32 × rank
//!   data     f32 × product(extents)
//! ```

use std::path::Path;

use super::{Real, Tensor};
use crate::binio::{read_file, write_atomic, Reader, Writer};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TCWT";
pub const VERSION: u16 = 1;

pub fn encode<T: Real>(tensors: &[(String, Tensor<T>)]) -> Result<Vec<u8>> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u16(VERSION);
    w.u32(u32::try_from(tensors.len()).map_err(|_| Error::Format("too many tensors".into()))?);
    for (name, t) in tensors {
        w.str(name)?;
        let rank = u8::try_from(t.rank()).map_err(|_| Error::Format(format!("rank of {name:?} too large")))?;
        w.u8(rank);
        for &e in t.shape() {
            w.u32(u32::try_from(e).map_err(|_| Error::Format(format!("extent of {name:?} too large")))?);
        }
        for &v in t.data() {
            w.f32(v.to_f32().unwrap_or(f32::NAN));
        }
    }
    Ok(w.into_bytes())
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    r.version("TCWT", VERSION)?;
    let count = r.u32("tensor count")? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name = r.str("tensor name")?;
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("extent")? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e)).ok_or_else(|| Error::Format(format!("extents of {name:?} overflow")))?;
        let data = r.f32s(n, &format!("data of {name:?}"))?;
        out.push((name, Tensor::from_vec(&shape, data)?));
    }
    r.finish("TCWT")?;
    Ok(out)
}

pub fn save<T: Real>(path: &Path, tensors: &[(String, Tensor<T>)]) -> Result<()> {
    write_atomic(path, &encode(tensors)?)
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    decode(&read_file(path)?)
}
