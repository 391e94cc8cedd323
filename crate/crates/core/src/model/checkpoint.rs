//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `DPCKPT01`, a little-endian `u64` header length,
//! a JSON [`CheckpointHeader`], then every parameter matrix as row-major
//! little-endian `f64` in header order, then (when the header says so) the
//! Adam first moments and second moments in the same order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::optim::{AdamW, OptimConfig};
use super::params::{Group, ParamStore};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DPCKPT01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub shape: [usize; 2],
    pub group: Group,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerInfo {
    pub config: OptimConfig,
    pub t: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// `seq2seq` or `detector`.
    pub kind: String,
    pub config: serde_json::Value,
    pub tokenizer_sha256: String,
    pub step: u64,
    pub params: Vec<ParamInfo>,
    pub optimizer: Option<OptimizerInfo>,
    /// Free-form run metadata (plan kind, coref usage, ...).
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<Array2<f64>>,
    /// Adam moments `(m, v)` when optimizer state was saved.
    pub moments: Option<(Vec<Array2<f64>>, Vec<Array2<f64>>)>,
}

impl Checkpoint {
    pub fn new(
        kind: &str,
        config: serde_json::Value,
        tokenizer_sha256: &str,
        params: &ParamStore,
        opt: Option<&AdamW>,
        extra: serde_json::Value,
    ) -> Self {
        let infos = (0..params.len())
            .map(|i| {
                let (r, c) = params.value(i).dim();
                ParamInfo {
                    name: params.name(i).to_string(),
                    shape: [r, c],
                    group: params.group(i),
                }
            })
            .collect();
        Checkpoint {
            header: CheckpointHeader {
                kind: kind.to_string(),
                config,
                tokenizer_sha256: tokenizer_sha256.to_string(),
                step: opt.map_or(0, |o| o.t),
                params: infos,
                optimizer: opt.map(|o| OptimizerInfo {
                    config: o.config.clone(),
                    t: o.t,
                }),
                extra,
            },
            params: params.values().to_vec(),
            moments: opt.map(|o| (o.m.clone(), o.v.clone())),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        let header = serde_json::to_vec(&self.header)?;
        let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
        write(MAGIC)?;
        write(&(header.len() as u64).to_le_bytes())?;
        write(&header)?;
        let mut blocks: Vec<&Array2<f64>> = self.params.iter().collect();
        if let Some((m, v)) = &self.moments {
            blocks.extend(m.iter());
            blocks.extend(v.iter());
        }
        for a in blocks {
            let mut buf = Vec::with_capacity(a.len() * 8);
            for x in a.iter() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            write(&buf)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(f);
        let mut read = |buf: &mut [u8]| r.read_exact(buf).map_err(|e| Error::io(path, e));
        let mut magic = [0u8; 8];
        read(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!("{} is not a checkpoint (bad magic)", path.display())));
        }
        let mut len = [0u8; 8];
        read(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        if len > 1 << 30 {
            return Err(Error::Checkpoint(format!("implausible header length {len}")));
        }
        let mut hbuf = vec![0u8; len];
        read(&mut hbuf)?;
        let header: CheckpointHeader = serde_json::from_slice(&hbuf)?;
        let mut block = |info: &ParamInfo| -> Result<Array2<f64>> {
            let [rows, cols] = info.shape;
            let mut buf = vec![0u8; rows * cols * 8];
            read(&mut buf)?;
            let vals = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            Array2::from_shape_vec((rows, cols), vals).map_err(|e| Error::Checkpoint(e.to_string()))
        };
        let params = header.params.iter().map(&mut block).collect::<Result<Vec<_>>>()?;
        let moments = if header.optimizer.is_some() {
            let m = header.params.iter().map(&mut block).collect::<Result<Vec<_>>>()?;
            let v = header.params.iter().map(&mut block).collect::<Result<Vec<_>>>()?;
            Some((m, v))
        } else {
            None
        };
        Ok(Checkpoint {
            header,
            params,
            moments,
        })
    }

    /// Copies stored values into `store`, which must have the same layout.
    pub fn restore_params(&self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameter matrices, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for (i, (info, value)) in self.header.params.iter().zip(&self.params).enumerate() {
            if store.name(i) != info.name || store.value(i).dim() != value.dim() {
                return Err(Error::Checkpoint(format!(
                    "parameter {i} is {} {:?} in the checkpoint but {} {:?} in the model",
                    info.name,
                    value.dim(),
                    store.name(i),
                    store.value(i).dim()
                )));
            }
            store.value_mut(i).assign(value);
        }
        if !store.all_finite() {
            return Err(Error::Checkpoint("non-finite parameter values".into()));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> Option<AdamW> {
        let info = self.header.optimizer.as_ref()?;
        let (m, v) = self.moments.clone()?;
        Some(AdamW {
            config: info.config.clone(),
            m,
            v,
            t: info.t,
        })
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.header.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind} checkpoint, found {}",
                self.header.kind
            )));
        }
        Ok(())
    }
}
