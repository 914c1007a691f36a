//! Binary checkpoint container.
//!
//! ```text
//! b"NATLAB01"
//! u32 LE  header length in bytes
//! header  UTF-8 `key=value` lines: step, params, moments, config (JSON), meta.* entries
//! per parameter, in store order:
//!     u32 LE name length, name bytes (UTF-8)
//!     u32 LE rank, rank x u64 LE dims
//!     prod(dims) x f64 LE values
//! if moments=1: per parameter, first-moment then second-moment values (f64 LE)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::tensor::Tensor;

use super::{Model, ModelConfig, ModelError, ParamStore};

const MAGIC: &[u8; 8] = b"NATLAB01";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Optimizer moment estimates, shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: u64,
    pub params: ParamStore,
    pub moments: Option<Moments>,
    /// Free-form string annotations, e.g. the training config.
    pub meta: BTreeMap<String, String>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Format(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| CheckpointError::Format("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn from_model(model: &Model, step: u64) -> Self {
        Checkpoint {
            config: model.config().clone(),
            step,
            params: model.params().clone(),
            moments: None,
            meta: BTreeMap::new(),
        }
    }

    /// Rebuild the model, checking parameter names and shapes against the config.
    pub fn model(&self) -> Result<Model, ModelError> {
        Model::from_params(self.config.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!(
            "step={}\nparams={}\nmoments={}\nconfig={}\n",
            self.step,
            self.params.len(),
            u8::from(self.moments.is_some()),
            serde_json::to_string(&self.config).expect("config serializes"),
        );
        for (k, v) in &self.meta {
            header.push_str(&format!("meta.{k}={}\n", v.replace('\n', " ")));
        }
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            put_f64s(&mut out, t.data());
        }
        if let Some(m) = &self.moments {
            for (a, b) in m.first.iter().zip(&m.second) {
                put_f64s(&mut out, a.data());
                put_f64s(&mut out, b.data());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, CheckpointError> {
        let fmt = |m: String| CheckpointError::Format(m);
        if buf.len() < 8 || &buf[..8] != MAGIC {
            return Err(fmt("missing NATLAB01 magic".into()));
        }
        let mut r = Reader { buf, pos: 8 };
        let header_len = r.u32()? as usize;
        let header = std::str::from_utf8(r.take(header_len)?).map_err(|e| fmt(format!("header: {e}")))?;
        let mut fields = BTreeMap::new();
        let mut meta = BTreeMap::new();
        for line in header.lines() {
            let (k, v) = line.split_once('=').ok_or_else(|| fmt(format!("header line {line:?}")))?;
            match k.strip_prefix("meta.") {
                Some(key) => meta.insert(key.to_string(), v.to_string()),
                None => fields.insert(k.to_string(), v.to_string()),
            };
        }
        let field = |k: &str| fields.get(k).ok_or_else(|| fmt(format!("header lacks {k}")));
        let num = |k: &str| -> Result<u64, CheckpointError> {
            field(k)?.parse().map_err(|e| fmt(format!("{k}: {e}")))
        };
        let step = num("step")?;
        let count = num("params")? as usize;
        let has_moments = num("moments")? == 1;
        let config: ModelConfig = serde_json::from_str(field("config")?).map_err(|e| fmt(format!("config: {e}")))?;

        let mut params = ParamStore::default();
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|e| fmt(format!("parameter name: {e}")))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let data = r.f64s(shape.iter().product())?;
            params.insert(name, Tensor::new(shape, data).map_err(|e| fmt(e.to_string()))?);
        }
        let moments = if has_moments {
            let (mut first, mut second) = (Vec::new(), Vec::new());
            for t in params.values() {
                first.push(Tensor::new(t.shape().to_vec(), r.f64s(t.len())?).expect("shape from parameter"));
                second.push(Tensor::new(t.shape().to_vec(), r.f64s(t.len())?).expect("shape from parameter"));
            }
            Some(Moments { first, second })
        } else {
            None
        };
        if r.pos != buf.len() {
            return Err(fmt(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Checkpoint {
            config,
            step,
            params,
            moments,
            meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let path = path.as_ref();
        let buf = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Checkpoint::from_bytes(&buf)
    }
}
