//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DTTNCKPT"            8-byte magic
//! version: u32          currently 1
//! header_len: u64
//! header: UTF-8 TOML    [model] config echo, [meta] training metadata
//! count: u64
//! count × array:
//!     name_len: u32, name: UTF-8
//!     dtype: u8 (0 = f32, 1 = f64), ndim: u8, dims: ndim × u64
//!     data: product(dims) elements
//! sha256: 32 bytes      over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::float::{DType, Float};

use super::config::ModelConfig;
use super::net::DttNet;

pub const MAGIC: &[u8; 8] = b"DTTNCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingMeta {
    pub epoch: usize,
    pub step: u64,
    pub best_usdr: Option<f64>,
    pub best_epoch: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    meta: TrainingMeta,
    model: ModelConfig,
}

/// Named arrays plus the model config and training metadata. Arrays whose
/// names are not model parameters (optimizer moments) ride along in `extra`.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    pub meta: TrainingMeta,
    pub params: Vec<(String, ArrayD<T>)>,
    pub extra: Vec<(String, ArrayD<T>)>,
}

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

const EXTRA_PREFIX: &str = "extra/";

impl<T: Float> Checkpoint<T> {
    pub fn from_net(net: &DttNet<T>, meta: TrainingMeta) -> Self {
        Self {
            config: net.config().clone(),
            meta,
            params: net.params().iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
            extra: Vec::new(),
        }
    }

    /// Rebuilds the network and installs the stored parameters.
    pub fn to_net(&self) -> Result<DttNet<T>> {
        let mut net = DttNet::<T>::new(self.config.clone())?;
        let store = net.params_mut();
        if store.len() != self.params.len() {
            return Err(Error::Checkpoint {
                path: Default::default(),
                reason: format!(
                    "checkpoint has {} parameter arrays, model has {}",
                    self.params.len(),
                    store.len()
                ),
            });
        }
        for (name, value) in &self.params {
            let id = store.id_of(name).ok_or_else(|| Error::Checkpoint {
                path: Default::default(),
                reason: format!("unknown parameter {name}"),
            })?;
            let dst = store.get_mut(id);
            if dst.shape() != value.shape() {
                return Err(Error::Checkpoint {
                    path: Default::default(),
                    reason: format!("{name}: shape {:?} does not match model {:?}", value.shape(), dst.shape()),
                });
            }
            dst.assign(value);
        }
        Ok(net)
    }

    fn encode_arrays(&self, out: &mut Vec<u8>) {
        let all: Vec<(String, &ArrayD<T>)> = self
            .params
            .iter()
            .map(|(n, a)| (n.clone(), a))
            .chain(self.extra.iter().map(|(n, a)| (format!("{EXTRA_PREFIX}{n}"), a)))
            .collect();
        out.extend_from_slice(&(all.len() as u64).to_le_bytes());
        for (name, a) in all {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(T::DTYPE.tag());
            out.push(a.ndim() as u8);
            for &d in a.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in a.iter() {
                v.write_le(out);
            }
        }
    }

    /// The array section exactly as written to disk.
    pub fn payload_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_arrays(&mut out);
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = toml::to_string(&Header {
            meta: self.meta.clone(),
            model: self.config.clone(),
        })
        .map_err(|e| Error::config(format!("cannot serialize checkpoint header: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        self.encode_arrays(&mut out);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    /// Writes atomically via a sibling temporary file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("ckpt.tmp");
        fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint { reason, .. } => corrupt(path, reason),
            other => other,
        })
    }

    /// Loads and requires the stored model config to equal `expected`.
    pub fn load_expecting(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Self> {
        let path = path.as_ref();
        let ck = Self::load(path)?;
        if &ck.config != expected {
            return Err(corrupt(path, "stored model config differs from the requested one"));
        }
        Ok(ck)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |r: &str| corrupt(Path::new(""), r);
        if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}, expected {VERSION}")));
        }
        let header_len = r.u64()? as usize;
        let header = std::str::from_utf8(r.take(header_len)?).map_err(|_| bad("header is not UTF-8"))?;
        let header: Header = toml::from_str(header).map_err(|e| bad(&format!("bad header: {e}")))?;
        let count = r.u64()? as usize;
        let mut params = Vec::new();
        let mut extra = Vec::new();
        for _ in 0..count {
            let name_len = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| bad("array name is not UTF-8"))?;
            let tag = r.take(1)?[0];
            let dtype = DType::from_tag(tag).ok_or_else(|| bad(&format!("unknown dtype tag {tag}")))?;
            if dtype != T::DTYPE {
                return Err(bad(&format!("{name} is stored as {dtype:?}, requested {:?}", T::DTYPE)));
            }
            let ndim = r.take(1)?[0] as usize;
            let dims = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let raw = r.take(n * dtype.size())?;
            let data: Vec<T> = raw.chunks_exact(dtype.size()).map(T::read_le).collect();
            let array = ArrayD::from_shape_vec(IxDyn(&dims), data).expect("length matches dims");
            match name.strip_prefix(EXTRA_PREFIX) {
                Some(rest) => extra.push((rest.to_string(), array)),
                None => params.push((name, array)),
            }
        }
        if r.pos != body.len() {
            return Err(bad("trailing bytes after the last array"));
        }
        Ok(Self {
            config: header.model,
            meta: header.meta,
            params,
            extra,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(corrupt(Path::new(""), "truncated file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
