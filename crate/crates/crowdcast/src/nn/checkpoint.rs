//! "CKPT" parameter checkpoint format.
//!
//! Layout: magic `CKPT`, u32 version = 1, u32 param count, then per
//! parameter: u16 name length, name bytes, u8 rank, u32 per-dimension sizes,
//! float32 little-endian data. Integers little-endian. Values are stored as
//! f32 regardless of the compute type.

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::param::ParamSet;
use super::tensor::{Real, Tensor};

const MAGIC: &[u8; 4] = b"CKPT";
const VERSION: u32 = 1;

pub fn save_checkpoint<F: Real, W: Write>(w: &mut W, set: &ParamSet<F>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(set.len() as u32).to_le_bytes())?;
    for p in set.params() {
        let name = p.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(Error::InvalidConfig(format!("parameter name too long: {:?}", p.name)));
        }
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[p.value.shape().len() as u8])?;
        for &d in p.value.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in p.value.data() {
            w.write_all(&(v.into_f64() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Loads values into an existing parameter set. Unknown names, missing
/// parameters, and shape mismatches are rejected.
pub fn load_checkpoint<F: Real, R: Read>(r: &mut R, set: &mut ParamSet<F>) -> Result<()> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected \"CKPT\"")));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported CKPT version {version}")));
    }
    r.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    if count != set.len() {
        return Err(Error::Format(format!(
            "checkpoint has {count} parameters, model expects {}",
            set.len()
        )));
    }

    for _ in 0..count {
        let mut u16buf = [0u8; 2];
        r.read_exact(&mut u16buf)?;
        let name_len = u16::from_le_bytes(u16buf) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Format(format!("bad parameter name: {e}")))?;

        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            r.read_exact(&mut u32buf)?;
            shape.push(u32::from_le_bytes(u32buf) as usize);
        }

        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut u32buf)?;
            data.push(F::from_f64(f32::from_le_bytes(u32buf) as f64));
        }

        let p = set.get_mut(&name).map_err(|_| Error::Format(format!("unknown parameter {name:?} in checkpoint")))?;
        if p.value.shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?} for {name:?}", p.value.shape()),
                got: format!("{shape:?}"),
            });
        }
        p.value = Tensor::from_vec(&shape, data)?;
    }
    Ok(())
}
