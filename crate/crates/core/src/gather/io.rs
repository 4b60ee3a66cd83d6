//! Binary gather files.
//!
//! Little-endian layout: magic `FBG1`, `u32 T`, `u32 N`, `f64 dt_ms`,
//! `u8 polarity` (0 = peak, 1 = trough), `N × f64` offsets in metres,
//! `N × i32` first-break sample indices, then `T × N × f32` amplitudes in
//! time-major row order.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{Gather, Polarity};
use crate::error::{FbError, Result};

pub const GATHER_MAGIC: &[u8; 4] = b"FBG1";
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 1;

pub fn encode_gather(g: &Gather) -> Vec<u8> {
    let (t, n) = (g.samples(), g.traces());
    let mut out = Vec::with_capacity(HEADER_LEN + n * 12 + t * n * 4);
    out.extend_from_slice(GATHER_MAGIC);
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&g.dt_ms().to_le_bytes());
    out.push(match g.polarity() {
        Polarity::Peak => 0,
        Polarity::Trough => 1,
    });
    for d in g.offsets() {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for l in g.fb_labels() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    for v in g.amplitudes().iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn format_err(field: &str, msg: impl Into<String>) -> FbError {
    FbError::Format {
        field: field.to_string(),
        msg: msg.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format_err(field, "file ends early")),
        }
    }

    fn array<const K: usize>(&mut self, field: &str) -> Result<[u8; K]> {
        Ok(self.take(K, field)?.try_into().expect("length checked"))
    }
}

/// Survey id is not stored in the file; the result carries an empty id.
pub fn decode_gather(bytes: &[u8]) -> Result<Gather> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != GATHER_MAGIC {
        return Err(format_err("magic", "expected \"FBG1\""));
    }
    let t = u32::from_le_bytes(r.array("T")?) as usize;
    let n = u32::from_le_bytes(r.array("N")?) as usize;
    if t == 0 || n == 0 {
        return Err(format_err(if t == 0 { "T" } else { "N" }, "must be at least 1"));
    }
    let expected = t
        .checked_mul(n)
        .and_then(|tn| tn.checked_mul(4))
        .and_then(|b| b.checked_add(HEADER_LEN + n * 12));
    match expected {
        Some(len) if len == bytes.len() => {}
        Some(len) => {
            return Err(format_err(
                "length",
                format!("{} bytes, header implies {len}", bytes.len()),
            ))
        }
        None => return Err(format_err("T", "T×N overflows")),
    }
    let dt = f64::from_le_bytes(r.array("dt_ms")?);
    let polarity = match r.array::<1>("polarity")?[0] {
        0 => Polarity::Peak,
        1 => Polarity::Trough,
        other => return Err(format_err("polarity", format!("byte {other} is neither 0 nor 1"))),
    };
    let offsets = (0..n)
        .map(|_| r.array("offsets").map(f64::from_le_bytes))
        .collect::<Result<Vec<_>>>()?;
    let labels = (0..n)
        .map(|_| r.array("fb_labels").map(i32::from_le_bytes))
        .collect::<Result<Vec<_>>>()?;
    let amps = r
        .take(t * n * 4, "amplitudes")?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let amplitudes = Array2::from_shape_vec((t, n), amps).expect("length checked");
    Gather::new(amplitudes, dt, offsets, labels, polarity, "")
}

pub fn save_gather(g: &Gather, path: &Path) -> Result<()> {
    fs::write(path, encode_gather(g))?;
    Ok(())
}

pub fn load_gather(path: &Path) -> Result<Gather> {
    decode_gather(&fs::read(path)?)
}
