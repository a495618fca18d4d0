//! Named-tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "MVRPTNSR"
//! version  u32      1
//! header   u32 length + UTF-8 bytes (free-form, e.g. a JSON model config)
//! count    u32
//! entries  count x { u32 name length, name bytes,
//!                    u32 rank, rank x u64 dims,
//!                    numel x f64 values (row-major) }
//! ```

use std::io::{Read, Write};

use super::{AutodiffError, Tensor};

pub const MAGIC: &[u8; 8] = b"MVRPTNSR";
pub const FORMAT_VERSION: u32 = 1;

fn io(e: std::io::Error) -> AutodiffError {
    AutodiffError::Checkpoint(e.to_string())
}

fn read_u32(r: &mut impl Read) -> Result<u32, AutodiffError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, AutodiffError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(io)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string(r: &mut impl Read) -> Result<String, AutodiffError> {
    let len = read_u32(r)? as usize;
    let mut b = vec![0u8; len];
    r.read_exact(&mut b).map_err(io)?;
    String::from_utf8(b).map_err(|e| AutodiffError::Checkpoint(e.to_string()))
}

fn write_string(w: &mut impl Write, s: &str) -> Result<(), AutodiffError> {
    w.write_all(&(s.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(s.as_bytes()).map_err(io)
}

pub fn write_tensors(w: &mut impl Write, header: &str, tensors: &[(&str, &Tensor)]) -> Result<(), AutodiffError> {
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    write_string(w, header)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes()).map_err(io)?;
    for (name, t) in tensors {
        write_string(w, name)?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes()).map_err(io)?;
        for d in t.shape() {
            w.write_all(&(*d as u64).to_le_bytes()).map_err(io)?;
        }
        for x in t.data() {
            w.write_all(&x.to_le_bytes()).map_err(io)?;
        }
    }
    Ok(())
}

pub fn read_tensors(r: &mut impl Read) -> Result<(String, Vec<(String, Tensor)>), AutodiffError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(AutodiffError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(AutodiffError::Checkpoint(format!("unsupported version {version}")));
    }
    let header = read_string(r)?;
    let count = read_u32(r)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name = read_string(r)?;
        let rank = read_u32(r)?;
        let shape = (0..rank)
            .map(|_| read_u64(r).map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut b = [0u8; 8];
        for _ in 0..numel {
            r.read_exact(&mut b).map_err(io)?;
            data.push(f64::from_le_bytes(b));
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok((header, out))
}
