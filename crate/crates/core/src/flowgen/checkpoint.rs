//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic            8 bytes  "FAIRGENC"
//! format version   u32      1
//! vocab hash       u64      FNV-1a of the vocabulary's canonical text
//! sample dim       u64
//! condition dim    u64
//! layer count      u32      number of entries in layer_dims
//! layer dims       u64 * layer count
//! echo length      u32
//! config echo      UTF-8, echo length bytes
//! parameter count  u64
//! parameters       f64 * parameter count, per layer: weights [out, in] row-major, then bias
//! ```

use super::model::{VelocityField, VelocityModel};
use crate::cohort::AttributeVocabulary;
use crate::numkit::{parameter_count, MlpNetwork, Tensor};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FAIRGENC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub vocab_hash: u64,
    pub sample_dim: usize,
    pub condition_dim: usize,
    pub layer_dims: Vec<usize>,
    pub config_echo: String,
}

pub fn encode_checkpoint(
    model: &VelocityModel,
    vocab: &AttributeVocabulary,
    config_echo: &str,
) -> Vec<u8> {
    let net = model.network();
    let mut out = Vec::with_capacity(64 + config_echo.len() + 8 * net.parameter_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&vocab.hash().to_le_bytes());
    out.extend_from_slice(&(model.sample_dim() as u64).to_le_bytes());
    out.extend_from_slice(&(model.condition_dim() as u64).to_le_bytes());
    out.extend_from_slice(&(net.layer_dims().len() as u32).to_le_bytes());
    for &d in net.layer_dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(&(config_echo.len() as u32).to_le_bytes());
    out.extend_from_slice(config_echo.as_bytes());
    out.extend_from_slice(&(net.parameter_count() as u64).to_le_bytes());
    for p in net.params() {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::format("checkpoint", format!("truncated at byte {}", self.pos))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?)
            .map_err(|_| Error::format("checkpoint", "dimension overflows usize"))
    }
}

pub fn read_checkpoint_header(bytes: &[u8]) -> Result<CheckpointHeader> {
    decode(bytes).map(|(h, _)| h)
}

fn decode(bytes: &[u8]) -> Result<(CheckpointHeader, usize)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Compatibility(format!(
            "checkpoint format version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let vocab_hash = r.u64()?;
    let sample_dim = r.usize()?;
    let condition_dim = r.usize()?;
    let n_dims = r.u32()? as usize;
    if n_dims > 64 {
        return Err(Error::format(
            "checkpoint",
            format!("{n_dims} layers is implausible"),
        ));
    }
    let layer_dims = (0..n_dims).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let echo_len = r.u32()? as usize;
    let config_echo = String::from_utf8(r.take(echo_len)?.to_vec())
        .map_err(|_| Error::format("checkpoint", "config echo is not UTF-8"))?;
    Ok((
        CheckpointHeader {
            version,
            vocab_hash,
            sample_dim,
            condition_dim,
            layer_dims,
            config_echo,
        },
        r.pos,
    ))
}

/// Decodes a checkpoint and checks it was trained on `vocab`.
pub fn decode_checkpoint(
    bytes: &[u8],
    vocab: &AttributeVocabulary,
) -> Result<(VelocityModel, CheckpointHeader)> {
    let (header, pos) = decode(bytes)?;
    if header.vocab_hash != vocab.hash() {
        return Err(Error::Compatibility(format!(
            "checkpoint vocabulary hash {:016x} does not match active vocabulary {}",
            header.vocab_hash,
            vocab.hash_hex()
        )));
    }
    let mut r = Reader { bytes, pos };
    let count = r.usize()?;
    if header.layer_dims.len() < 2 || count != parameter_count(&header.layer_dims) {
        return Err(Error::format(
            "checkpoint",
            format!(
                "{count} parameters do not fit layer dims {:?}",
                header.layer_dims
            ),
        ));
    }
    let mut params = Vec::with_capacity(2 * (header.layer_dims.len() - 1));
    for w in header.layer_dims.windows(2) {
        for shape in [vec![w[1], w[0]], vec![w[1]]] {
            let n: usize = shape.iter().product();
            let raw = r.take(8 * n)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params.push(Tensor::from_vec(&shape, values)?);
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::format(
            "checkpoint",
            format!("{} trailing bytes", bytes.len() - r.pos),
        ));
    }
    let net = MlpNetwork::from_params(&header.layer_dims, params)?;
    let model = VelocityModel::from_network(net, header.sample_dim, header.condition_dim)?;
    Ok((model, header))
}
