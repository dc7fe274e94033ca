//! Binary model checkpoints.
//!
//! Layout (little-endian): magic `LDFT`, `u32` format version, `u32`
//! encoder widths ×4, `u32` squeeze width, `u32` interaction count, `u32`
//! tensor count, then per tensor four `u64` dimensions followed by the
//! values as `f64`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::net::model::{ModelConfig, ToyFinModel};
use crate::net::tensor::Tensor4;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"LDFT";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_checkpoint<T: Scalar>(model: &ToyFinModel<T>) -> Vec<u8> {
    let c = model.config();
    let mut out = Vec::with_capacity(64 + 8 * model.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in c.encoder_widths.iter().chain([&c.squeeze, &c.n_interactions]) {
        out.extend_from_slice(&(*v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for p in model.params() {
        for d in p.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.data() {
            out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        if self.bytes.len() < N {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let (head, rest) = self.bytes.split_at(N);
        self.bytes = rest;
        Ok(head.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take()?) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        usize::try_from(u64::from_le_bytes(self.take()?)).map_err(|_| Error::Checkpoint("dimension overflow".into()))
    }
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<ToyFinModel<T>> {
    let mut r = Reader { bytes };
    if &r.take::<4>()? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let encoder_widths = [r.u32()?, r.u32()?, r.u32()?, r.u32()?];
    let config = ModelConfig {
        encoder_widths,
        squeeze: r.u32()?,
        n_interactions: r.u32()?,
    };
    let count = r.u32()?;
    let mut params = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let shape = [r.u64()?, r.u64()?, r.u64()?, r.u64()?];
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= r.bytes.len()))
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let data = (0..n)
            .map(|_| Ok(T::c(f64::from_le_bytes(r.take()?))))
            .collect::<Result<Vec<T>>>()?;
        params.push(Tensor4::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?);
    }
    if !r.bytes.is_empty() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    ToyFinModel::from_params(config, params).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save_checkpoint<T: Scalar>(model: &ToyFinModel<T>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_checkpoint(model))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<ToyFinModel<T>> {
    decode_checkpoint(&std::fs::read(path)?)
}
