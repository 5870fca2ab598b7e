//! Binary PGM (P5) frames and the raw f32 dump used for golden vectors.
//!
//! Raw dump layout (little-endian): `u32` width, `u32` height, then
//! `width × height` f32 values row by row.

use std::fs;
use std::path::Path;

use super::{Pixels, ThermalFrame};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmDepth {
    Eight,
    Sixteen,
}

impl PgmDepth {
    fn maxval(self) -> u16 {
        match self {
            PgmDepth::Eight => 255,
            PgmDepth::Sixteen => 65535,
        }
    }
}

fn data_err(offset: usize, msg: impl std::fmt::Display) -> Error {
    Error::Data(format!("PGM byte {offset}: {msg}"))
}

/// Parses a binary PGM. 8-bit and 16-bit (big-endian) payloads are kept as
/// raw counts with their `maxval`.
pub fn decode_pgm(bytes: &[u8]) -> Result<ThermalFrame> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(data_err(0, "missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (k, field) in fields.iter_mut().enumerate() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        let name = ["width", "height", "maxval"][k];
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| data_err(start, format!("expected {name}")))?;
    }
    match bytes.get(pos) {
        Some(c) if c.is_ascii_whitespace() => pos += 1,
        _ => return Err(data_err(pos, "expected whitespace after maxval")),
    }
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 {
        return Err(data_err(pos, format!("empty image {w}x{h}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(data_err(pos, format!("maxval {maxval} outside 1..=65535")));
    }
    let bpp = if maxval < 256 { 1 } else { 2 };
    let need = w * h * bpp;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(data_err(
            bytes.len(),
            format!("payload truncated: need {need} bytes, have {}", payload.len()),
        ));
    }
    if payload.len() > need {
        return Err(data_err(pos + need, format!("{} trailing bytes", payload.len() - need)));
    }
    let data: Vec<u16> = if bpp == 1 {
        payload.iter().map(|&b| b as u16).collect()
    } else {
        payload.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    };
    ThermalFrame::from_raw(w, h, data, maxval as u16)
}

/// Writes a binary PGM. Normalized frames are quantised to the depth's
/// range; raw frames keep their counts.
pub fn encode_pgm(frame: &ThermalFrame, depth: PgmDepth) -> Result<Vec<u8>> {
    let (counts, maxval): (Vec<u16>, u16) = match &frame.pixels {
        Pixels::Normalized(v) => {
            let m = depth.maxval();
            (v.iter().map(|&x| (x as f64 * m as f64).round() as u16).collect(), m)
        }
        Pixels::Raw { data, maxval } => {
            if depth == PgmDepth::Eight && *maxval > 255 {
                return Err(Error::Validation(format!(
                    "raw frame with maxval {maxval} does not fit an 8-bit PGM"
                )));
            }
            let m = match depth {
                PgmDepth::Eight => (*maxval).min(255),
                PgmDepth::Sixteen => (*maxval).max(256),
            };
            (data.clone(), m)
        }
    };
    let mut out = format!("P5\n{} {}\n{}\n", frame.width, frame.height, maxval).into_bytes();
    if maxval < 256 {
        out.extend(counts.iter().map(|&c| c as u8));
    } else {
        for c in counts {
            out.extend_from_slice(&c.to_be_bytes());
        }
    }
    Ok(out)
}

pub fn encode_raw_f32(frame: &ThermalFrame) -> Vec<u8> {
    let values = frame.values();
    let mut out = Vec::with_capacity(8 + values.len() * 4);
    out.extend_from_slice(&(frame.width as u32).to_le_bytes());
    out.extend_from_slice(&(frame.height as u32).to_le_bytes());
    for v in values.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_raw_f32(bytes: &[u8]) -> Result<ThermalFrame> {
    if bytes.len() < 8 {
        return Err(Error::Data("raw frame shorter than its 8-byte header".into()));
    }
    let w = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let h = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let need = 8 + w * h * 4;
    if bytes.len() != need {
        return Err(Error::Data(format!(
            "raw frame {w}x{h} needs {need} bytes, file has {}",
            bytes.len()
        )));
    }
    let data = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    ThermalFrame::from_normalized(w, h, data).map_err(|e| Error::Data(e.to_string()))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn located(path: &Path, e: Error) -> Error {
    match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    }
}

pub fn read_pgm(path: &Path) -> Result<ThermalFrame> {
    Ok(decode_pgm(&read_bytes(path)?).map_err(|e| located(path, e))?.with_source(stem(path)))
}

pub fn write_pgm(path: &Path, frame: &ThermalFrame, depth: PgmDepth) -> Result<()> {
    fs::write(path, encode_pgm(frame, depth)?).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_raw_f32(path: &Path) -> Result<ThermalFrame> {
    Ok(decode_raw_f32(&read_bytes(path)?).map_err(|e| located(path, e))?.with_source(stem(path)))
}

pub fn write_raw_f32(path: &Path, frame: &ThermalFrame) -> Result<()> {
    fs::write(path, encode_raw_f32(frame)).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a `.pgm` or raw `.f32` frame, chosen by extension.
pub fn read_frame(path: &Path) -> Result<ThermalFrame> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => read_pgm(path),
        Some("f32") | Some("raw") => read_raw_f32(path),
        _ => Err(Error::Data(format!(
            "{}: unsupported frame format (expected .pgm or .f32)",
            path.display()
        ))),
    }
}
