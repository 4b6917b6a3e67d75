//! Dataset container, all integers and reals little-endian:
//!
//! ```text
//! header   magic "SSLD" | version u16 | C u32 | T u32 | M u32 | count u64
//! record   subject_id i32 | s u8 | has_label u8 | label i32 (-1 if absent) | C·T × f64
//! ```
//!
//! `s` is 1 for the labeled pool and 0 for the unlabeled pool; samples are
//! row-major `[channel][time]`. Nothing may follow the last record.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{Dataset, SensorWindow};
use crate::error::{Error, FormatError, Result};
use crate::model::Domain;
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 4] = b"SSLD";
pub const DATASET_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 4 + 8;
const RECORD_FIXED: usize = 4 + 1 + 1 + 4;

pub fn encode_dataset(data: &Dataset) -> Vec<u8> {
    let ct = data.channels * data.window_len;
    let mut out = Vec::with_capacity(HEADER_LEN + data.len() * (RECORD_FIXED + 8 * ct));
    out.extend_from_slice(DATASET_MAGIC);
    // Writes into a Vec cannot fail.
    out.write_u16::<LE>(DATASET_VERSION).unwrap();
    out.write_u32::<LE>(data.channels as u32).unwrap();
    out.write_u32::<LE>(data.window_len as u32).unwrap();
    out.write_u32::<LE>(data.n_classes as u32).unwrap();
    out.write_u64::<LE>(data.len() as u64).unwrap();
    for w in &data.windows {
        out.write_i32::<LE>(w.subject_id).unwrap();
        out.write_u8(u8::from(w.s == Domain::Labeled)).unwrap();
        out.write_u8(u8::from(w.label.is_some())).unwrap();
        out.write_i32::<LE>(w.label.map_or(-1, |y| y as i32))
            .unwrap();
        for &v in w.x.data() {
            out.write_f64::<LE>(v).unwrap();
        }
    }
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset, FormatError> {
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::CorruptHeader(format!(
            "{} bytes is shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[..4] != DATASET_MAGIC {
        return Err(FormatError::CorruptHeader(format!(
            "bad magic {:?}",
            &bytes[..4]
        )));
    }
    let mut cur = Cursor::new(&bytes[4..]);
    let header = |r: std::io::Result<u64>| r.map_err(|e| FormatError::CorruptHeader(e.to_string()));
    let version = header(cur.read_u16::<LE>().map(u64::from))? as u16;
    if version != DATASET_VERSION {
        return Err(FormatError::UnsupportedVersion {
            found: version,
            expected: DATASET_VERSION,
        });
    }
    let c = header(cur.read_u32::<LE>().map(u64::from))?;
    let t = header(cur.read_u32::<LE>().map(u64::from))?;
    let m = header(cur.read_u32::<LE>().map(u64::from))?;
    let count = header(cur.read_u64::<LE>())?;
    if c == 0 || t == 0 {
        return Err(FormatError::CorruptHeader(format!(
            "zero window dimension C={c} T={t}"
        )));
    }
    if m < 2 || m > i32::MAX as u64 {
        return Err(FormatError::CorruptHeader(format!(
            "class count {m} outside [2, {}]",
            i32::MAX
        )));
    }
    let overflow = || {
        FormatError::DimensionOverflow(format!(
            "C={c} T={t} count={count} exceeds addressable size"
        ))
    };
    let ct = c
        .checked_mul(t)
        .filter(|&v| v <= (isize::MAX as u64) / 8)
        .ok_or_else(overflow)?;
    let record_len = ct
        .checked_mul(8)
        .and_then(|v| v.checked_add(RECORD_FIXED as u64))
        .ok_or_else(overflow)?;
    let payload = count
        .checked_mul(record_len)
        .filter(|&v| v <= isize::MAX as u64 - HEADER_LEN as u64)
        .ok_or_else(overflow)?;
    let available = (bytes.len() - HEADER_LEN) as u64;
    if available < payload {
        return Err(FormatError::TruncatedPayload(format!(
            "header promises {count} records ({payload} bytes) but only {available} bytes follow"
        )));
    }
    if available > payload {
        return Err(FormatError::InvalidRecord(format!(
            "{} trailing bytes after the last record",
            available - payload
        )));
    }

    let (c, t, m, ct) = (c as usize, t as usize, m as usize, ct as usize);
    let mut cur = Cursor::new(&bytes[HEADER_LEN..]);
    let mut windows = Vec::with_capacity(count as usize);
    let mut buf = vec![0u8; 8 * ct];
    // Lengths were checked above, so the reads below cannot run short.
    for i in 0..count as usize {
        let subject_id = cur.read_i32::<LE>().unwrap();
        let s = cur.read_u8().unwrap();
        let has_label = cur.read_u8().unwrap();
        let label = cur.read_i32::<LE>().unwrap();
        cur.read_exact(&mut buf).unwrap();
        let bad = |why: String| FormatError::InvalidRecord(format!("record {i}: {why}"));
        let s = match s {
            1 => Domain::Labeled,
            0 => Domain::Unlabeled,
            other => return Err(bad(format!("domain flag {other} is not 0 or 1"))),
        };
        let label = match (has_label, label) {
            (0, -1) => None,
            (0, other) => return Err(bad(format!("label {other} present on an unlabeled record"))),
            (1, y) if y >= 0 && (y as usize) < m => Some(y as usize),
            (1, y) => return Err(bad(format!("label {y} outside [0, {m})"))),
            (other, _) => return Err(bad(format!("has_label flag {other} is not 0 or 1"))),
        };
        if s == Domain::Labeled && label.is_none() {
            return Err(bad("labeled-pool record without a label".into()));
        }
        let x: Vec<f64> = buf
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite sample".into()));
        }
        windows.push(SensorWindow {
            subject_id,
            s,
            x: Tensor::new(vec![c, t], x).map_err(|e| bad(e.to_string()))?,
            label,
        });
    }
    Ok(Dataset {
        channels: c,
        window_len: t,
        n_classes: m,
        windows,
    })
}

pub fn save_dataset(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_dataset(data)).map_err(|e| Error::io(path, e))
}

/// Reads and validates a dataset file; any defect fails the whole load.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes).map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })
}
