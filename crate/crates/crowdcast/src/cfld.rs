//! "CFLD" field tensor binary format.
//!
//! Layout: magic bytes `CFLD`, u32 version = 1, u32 T, H, W, d = 4, then
//! float32 little-endian values in `[t][row][col][channel]` order with
//! channels (rho, vx, vy, sigma2). All integers little-endian.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::grid::{CrowdField, FieldSequence, GridSpec};

const MAGIC: &[u8; 4] = b"CFLD";
const VERSION: u32 = 1;
pub const CHANNELS: usize = 4;

pub fn write_cfld<W: Write>(w: &mut W, seq: &FieldSequence) -> Result<()> {
    w.write_all(MAGIC)?;
    for v in [
        VERSION,
        seq.frames.len() as u32,
        seq.spec.height as u32,
        seq.spec.width as u32,
        CHANNELS as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for frame in &seq.frames {
        for cell in &frame.cells {
            for v in [cell.rho, cell.mu_v[0], cell.mu_v[1], cell.sigma2_v] {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Reads a CFLD tensor, adopting grid geometry and timing from `spec`
/// (the format itself carries only the tensor shape). Frames are indexed
/// from 0 at time `t0`.
pub fn read_cfld<R: Read>(r: &mut R, spec: &GridSpec, t0: f64) -> Result<FieldSequence> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected \"CFLD\"")));
    }
    let mut u32s = [0u32; 5];
    for v in &mut u32s {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        *v = u32::from_le_bytes(b);
    }
    let [version, t, h, w, d] = u32s;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported CFLD version {version}")));
    }
    if d as usize != CHANNELS {
        return Err(Error::Format(format!("expected {CHANNELS} channels, file has {d}")));
    }
    if h as usize != spec.height || w as usize != spec.width {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{} grid", spec.height, spec.width),
            got: format!("{h}x{w} grid"),
        });
    }

    let mut frames = Vec::with_capacity(t as usize);
    let mut buf = vec![0u8; spec.height * spec.width * CHANNELS * 4];
    for fi in 0..t {
        r.read_exact(&mut buf).map_err(|_| Error::Format(format!("truncated CFLD data at frame {fi}")))?;
        let mut frame = CrowdField::zeros(spec.clone(), fi as i64);
        for (cell, chunk) in frame.cells.iter_mut().zip(buf.chunks_exact(CHANNELS * 4)) {
            let f = |k: usize| f32::from_le_bytes(chunk[k * 4..k * 4 + 4].try_into().unwrap()) as f64;
            cell.rho = f(0);
            cell.mu_v = [f(1), f(2)];
            cell.sigma2_v = f(3);
        }
        frames.push(frame);
    }
    FieldSequence::new(spec.clone(), frames, t0)
}
