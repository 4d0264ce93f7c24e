//! Binary checkpoint container.
//!
//! ```text
//! b"SRUNETCK" | u32 major | u32 minor | u64 header_len | JSON header | payload
//! ```
//!
//! All integers and payload scalars are little-endian. The header lists each
//! tensor's name, shape and byte offset into the payload. Readers accept any
//! minor version of their major version and ignore unknown header fields.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use srunet_tensor::{Scalar, Tensor};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SRUNETCK";
pub const FORMAT_MAJOR: u32 = 1;
pub const FORMAT_MINOR: u32 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn of<T: Scalar>() -> Self {
        if std::mem::size_of::<T>() == 4 {
            Dtype::F32
        } else {
            Dtype::F64
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: Value,
    step: u64,
    epoch: u64,
    #[serde(default)]
    meta: Value,
    dtype: Dtype,
    tensors: Vec<TensorRecord>,
}

/// Named tensors plus the configuration and progress that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub config: Value,
    pub step: u64,
    pub epoch: u64,
    /// Free-form extras such as the recorded validation score.
    pub meta: Value,
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let dtype = Dtype::of::<T>();
        let mut offset = 0;
        let records = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let r = TensorRecord {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += t.numel() * dtype.width();
                r
            })
            .collect();
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            step: self.step,
            epoch: self.epoch,
            meta: self.meta.clone(),
            dtype,
            tensors: records,
        })?;
        let mut out = Vec::with_capacity(24 + header.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_MAJOR.to_le_bytes());
        out.extend_from_slice(&FORMAT_MINOR.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &self.tensors {
            for &v in t.data() {
                match dtype {
                    Dtype::F32 => out.extend_from_slice(&v.to_f32().expect("f32").to_le_bytes()),
                    Dtype::F64 => out.extend_from_slice(&v.to_f64_lossy().to_le_bytes()),
                }
            }
        }
        Ok(out)
    }

    /// Parses a checkpoint, converting stored scalars to `T`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 24 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let major = u32_at(8);
        if major != FORMAT_MAJOR {
            return Err(Error::Checkpoint(format!(
                "format major version {major}, this build reads {FORMAT_MAJOR}"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes")) as usize;
        let header_end = 24usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[24..header_end])?;
        let payload = &bytes[header_end..];
        let width = header.dtype.width();
        let tensors = header
            .tensors
            .into_iter()
            .map(|r| {
                let n: usize = r.shape.iter().product();
                let chunk = payload
                    .get(r.offset..r.offset + n * width)
                    .ok_or_else(|| Error::Checkpoint(format!("tensor {} out of bounds", r.name)))?;
                let data: Vec<T> = chunk
                    .chunks_exact(width)
                    .map(|c| match header.dtype {
                        Dtype::F32 => T::lit(f32::from_le_bytes(c.try_into().expect("4")) as f64),
                        Dtype::F64 => T::lit(f64::from_le_bytes(c.try_into().expect("8"))),
                    })
                    .collect();
                Ok((r.name, Tensor::from_vec(&r.shape, data)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Checkpoint {
            config: header.config,
            step: header.step,
            epoch: header.epoch,
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
