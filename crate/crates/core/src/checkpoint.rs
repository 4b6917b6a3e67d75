//! Parameter checkpoint container, all integers and reals little-endian:
//!
//! ```text
//! header   magic "SSLC" | version u16
//! config   channels, window_len, conv_filters, kernel_len, pool_w,
//!          latent_dim, n_classes, disc_hidden: u32 each | keep_prob f64 | seed u64
//! tensors  count u32, then per tensor:
//!          name_len u16 | name (UTF-8) | rank u8 | dims u32 × rank | values f64 × product(dims)
//! ```
//!
//! Every learnable tensor is stored under its parameter name, plus the
//! batchnorm running statistics as `enc.bn_running_mean` / `enc.bn_running_var`.
//! The optional `input.mean` / `input.std` pair carries the per-channel
//! standardization fitted at training time. Optimizer state is not stored.

use std::collections::BTreeMap;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, FormatError, Result};
use crate::model::{init_params, ModelConfig, ModelParams};
use crate::shiftdata::{Dataset, Standardizer};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SSLC";
pub const CHECKPOINT_VERSION: u16 = 1;
const RUNNING_MEAN: &str = "enc.bn_running_mean";
const RUNNING_VAR: &str = "enc.bn_running_var";
const INPUT_MEAN: &str = "input.mean";
const INPUT_STD: &str = "input.std";

/// Trained parameters plus the input standardization they expect.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub standardizer: Option<Standardizer>,
}

impl Checkpoint {
    /// `data` in the input space the parameters were trained on.
    pub fn prepare(&self, data: &Dataset) -> Result<Dataset> {
        match &self.standardizer {
            Some(s) => s.apply(data),
            None => Ok(data.clone()),
        }
    }
}

fn named_tensors(ck: &Checkpoint) -> Vec<(String, Tensor)> {
    let p = &ck.params;
    let mut out: Vec<(String, Tensor)> = p
        .all_params()
        .into_iter()
        .map(|q| (q.name.clone(), q.value.clone()))
        .collect();
    out.push((
        RUNNING_MEAN.into(),
        Tensor::from_vec(p.enc.bn_running.mean.clone()),
    ));
    out.push((
        RUNNING_VAR.into(),
        Tensor::from_vec(p.enc.bn_running.var.clone()),
    ));
    if let Some(s) = &ck.standardizer {
        out.push((INPUT_MEAN.into(), Tensor::from_vec(s.mean.clone())));
        out.push((INPUT_STD.into(), Tensor::from_vec(s.std.clone())));
    }
    out
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let c = &ck.params.config;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    // Writes into a Vec cannot fail.
    out.write_u16::<LE>(CHECKPOINT_VERSION).unwrap();
    for v in [
        c.channels,
        c.window_len,
        c.conv_filters,
        c.kernel_len,
        c.pool_w,
        c.latent_dim,
        c.n_classes,
        c.disc_hidden,
    ] {
        out.write_u32::<LE>(v as u32).unwrap();
    }
    out.write_f64::<LE>(c.keep_prob).unwrap();
    out.write_u64::<LE>(c.seed).unwrap();
    let tensors = named_tensors(ck);
    out.write_u32::<LE>(tensors.len() as u32).unwrap();
    for (name, t) in tensors {
        out.write_u16::<LE>(name.len() as u16).unwrap();
        out.extend_from_slice(name.as_bytes());
        out.write_u8(t.rank() as u8).unwrap();
        for &d in t.shape() {
            out.write_u32::<LE>(d as u32).unwrap();
        }
        for &v in t.data() {
            out.write_f64::<LE>(v).unwrap();
        }
    }
    out
}

fn truncated(what: &str) -> impl Fn(std::io::Error) -> FormatError + '_ {
    move |_| FormatError::TruncatedPayload(format!("file ends inside {what}"))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, FormatError> {
    if bytes.len() < 6 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(FormatError::CorruptHeader("missing SSLC magic".into()));
    }
    let mut cur = Cursor::new(&bytes[4..]);
    let version = cur.read_u16::<LE>().map_err(truncated("header"))?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::UnsupportedVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut dims = [0usize; 8];
    for d in dims.iter_mut() {
        *d = cur.read_u32::<LE>().map_err(truncated("config"))? as usize;
    }
    let config = ModelConfig {
        channels: dims[0],
        window_len: dims[1],
        conv_filters: dims[2],
        kernel_len: dims[3],
        pool_w: dims[4],
        latent_dim: dims[5],
        n_classes: dims[6],
        disc_hidden: dims[7],
        keep_prob: cur.read_f64::<LE>().map_err(truncated("config"))?,
        seed: cur.read_u64::<LE>().map_err(truncated("config"))?,
    };
    config
        .validate()
        .map_err(|e| FormatError::CorruptHeader(e.to_string()))?;
    let mut params = init_params(&config).map_err(|e| FormatError::CorruptHeader(e.to_string()))?;

    let count = cur.read_u32::<LE>().map_err(truncated("tensor count"))?;
    let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
    for _ in 0..count {
        let len = cur.read_u16::<LE>().map_err(truncated("tensor name"))? as usize;
        let mut name = vec![0u8; len];
        cur.read_exact(&mut name)
            .map_err(truncated("tensor name"))?;
        let name = String::from_utf8(name)
            .map_err(|_| FormatError::InvalidRecord("tensor name is not UTF-8".into()))?;
        let rank = cur.read_u8().map_err(truncated(&name))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.read_u32::<LE>().map_err(truncated(&name))? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= bytes.len()))
            .ok_or_else(|| FormatError::DimensionOverflow(format!("{name}: shape {shape:?}")))?;
        let mut data = vec![0.0; n];
        cur.read_f64_into::<LE>(&mut data)
            .map_err(truncated(&name))?;
        let t = Tensor::new(shape, data)
            .map_err(|e| FormatError::InvalidRecord(format!("{name}: {e}")))?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(FormatError::InvalidRecord(format!(
                "duplicate tensor {name}"
            )));
        }
    }
    if (cur.position() as usize) != bytes.len() - 4 {
        return Err(FormatError::InvalidRecord(
            "trailing bytes after the last tensor".into(),
        ));
    }

    fn take(
        tensors: &mut BTreeMap<String, Tensor>,
        name: &str,
        shape: &[usize],
    ) -> Result<Tensor, FormatError> {
        let t = tensors
            .remove(name)
            .ok_or_else(|| FormatError::InvalidRecord(format!("missing tensor {name}")))?;
        if t.shape() != shape {
            return Err(FormatError::InvalidRecord(format!(
                "{name}: expected shape {shape:?}, found {:?}",
                t.shape()
            )));
        }
        if !t.all_finite() {
            return Err(FormatError::InvalidRecord(format!(
                "{name}: non-finite value"
            )));
        }
        Ok(t)
    }
    for p in params.all_params_mut() {
        let shape = p.value.shape().to_vec();
        p.value = take(&mut tensors, &p.name, &shape)?;
    }
    let f = config.conv_filters;
    params.enc.bn_running.mean = take(&mut tensors, RUNNING_MEAN, &[f])?.into_data();
    params.enc.bn_running.var = take(&mut tensors, RUNNING_VAR, &[f])?.into_data();
    let standardizer = if tensors.contains_key(INPUT_MEAN) || tensors.contains_key(INPUT_STD) {
        let c = config.channels;
        Some(Standardizer {
            mean: take(&mut tensors, INPUT_MEAN, &[c])?.into_data(),
            std: take(&mut tensors, INPUT_STD, &[c])?.into_data(),
            clamped: Vec::new(),
        })
    } else {
        None
    };
    if let Some(extra) = tensors.keys().next() {
        return Err(FormatError::InvalidRecord(format!(
            "unknown tensor {extra}"
        )));
    }
    Ok(Checkpoint {
        params,
        standardizer,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(ck)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Part;

    fn sample() -> Checkpoint {
        let mut params = init_params(&ModelConfig::tiny()).unwrap();
        params.enc.bn_running.mean = vec![0.25, -1.5];
        params.enc.bn_running.var = vec![2.0, 0.5];
        Checkpoint {
            params,
            standardizer: Some(Standardizer {
                mean: vec![1.0, 2.0],
                std: vec![0.5, 3.0],
                clamped: vec![],
            }),
        }
    }

    #[test]
    fn round_trip_preserves_every_tensor() {
        let ck = sample();
        let bytes = encode_checkpoint(&ck);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(encode_checkpoint(&back), bytes);
        for part in Part::ALL {
            assert_eq!(back.params.part_hash(part), ck.params.part_hash(part));
        }
        assert_eq!(back.params.enc.bn_running, ck.params.enc.bn_running);
        assert_eq!(back.standardizer.unwrap().std, vec![0.5, 3.0]);
    }

    #[test]
    fn truncation_and_garbage_fail_closed() {
        let bytes = encode_checkpoint(&sample());
        for cut in [0, 5, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(decode_checkpoint(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(1);
        assert_eq!(decode_checkpoint(&extra).unwrap_err().code(), 14);
        let mut bad = bytes;
        bad[4] = 7;
        assert_eq!(decode_checkpoint(&bad).unwrap_err().code(), 11);
    }
}
