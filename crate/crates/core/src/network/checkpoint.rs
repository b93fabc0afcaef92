//! Checkpoint container: `LKA3D\0`, a version byte, a length-prefixed JSON
//! header, then named little-endian tensor blobs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::blocks::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::norm::BatchNormState;
use crate::tensor::Real;

pub const MAGIC: &[u8; 6] = b"LKA3D\0";
pub const VERSION: u8 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub name: String,
    pub shape: Vec<usize>,
    /// 0 = f32, 1 = f64 on disk.
    pub dtype: u8,
    pub data: Vec<f64>,
}

impl Blob {
    pub fn from_real<F: Real>(name: impl Into<String>, shape: Vec<usize>, data: &[F]) -> Self {
        Blob { name: name.into(), shape, dtype: F::DTYPE_CODE, data: data.iter().map(|v| v.as_f64()).collect() }
    }

    pub fn to_real<F: Real>(&self) -> Vec<F> {
        self.data.iter().map(|&v| F::lit(v)).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    meta: serde_json::Value,
    blob_count: usize,
}

#[derive(Clone, Debug)]
pub struct CheckpointFile {
    pub config: ModelConfig,
    pub meta: serde_json::Value,
    pub blobs: Vec<Blob>,
}

pub fn write(path: &Path, ck: &CheckpointFile) -> Result<()> {
    let io = |e| Error::io(path, e);
    let header = serde_json::to_vec(&Header { config: ck.config.clone(), meta: ck.meta.clone(), blob_count: ck.blobs.len() })?;
    // Write to a sibling file first so an interrupted save never truncates
    // an existing checkpoint.
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp).map_err(io)?);
        w.write_all(MAGIC).map_err(io)?;
        w.write_u8(VERSION).map_err(io)?;
        w.write_u32::<LittleEndian>(header.len() as u32).map_err(io)?;
        w.write_all(&header).map_err(io)?;
        for b in &ck.blobs {
            let expected: usize = b.shape.iter().product();
            if expected != b.data.len() {
                return Err(Error::shape(format!("blob {}: {} values for shape {:?}", b.name, b.data.len(), b.shape)));
            }
            w.write_u16::<LittleEndian>(b.name.len() as u16).map_err(io)?;
            w.write_all(b.name.as_bytes()).map_err(io)?;
            w.write_u8(b.dtype).map_err(io)?;
            w.write_u8(b.shape.len() as u8).map_err(io)?;
            for &d in &b.shape {
                w.write_u64::<LittleEndian>(d as u64).map_err(io)?;
            }
            match b.dtype {
                DTYPE_F32 => b.data.iter().try_for_each(|&v| w.write_f32::<LittleEndian>(v as f32)).map_err(io)?,
                DTYPE_F64 => b.data.iter().try_for_each(|&v| w.write_f64::<LittleEndian>(v)).map_err(io)?,
                d => return Err(Error::format(path, format!("unsupported dtype {d}"))),
            }
        }
        w.flush().map_err(io)?;
    }
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn read(path: &Path) -> Result<CheckpointFile> {
    let io = |e| Error::io(path, e);
    let bad = |reason: String| Error::format(path, reason);
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic).map_err(|_| bad("file too short".into()))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let version = r.read_u8().map_err(io)?;
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let hlen = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let mut hbuf = vec![0u8; hlen];
    r.read_exact(&mut hbuf).map_err(|_| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&hbuf).map_err(|e| bad(format!("header: {e}")))?;
    let mut blobs = Vec::with_capacity(header.blob_count);
    for i in 0..header.blob_count {
        let trunc = |_| bad(format!("truncated at blob {i}"));
        let nlen = r.read_u16::<LittleEndian>().map_err(trunc)? as usize;
        let mut name = vec![0u8; nlen];
        r.read_exact(&mut name).map_err(trunc)?;
        let name = String::from_utf8(name).map_err(|_| bad(format!("blob {i} name is not UTF-8")))?;
        let dtype = r.read_u8().map_err(trunc)?;
        let ndim = r.read_u8().map_err(trunc)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.read_u64::<LittleEndian>().map_err(trunc)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(match dtype {
                DTYPE_F32 => r.read_f32::<LittleEndian>().map_err(trunc)? as f64,
                DTYPE_F64 => r.read_f64::<LittleEndian>().map_err(trunc)?,
                d => return Err(bad(format!("blob {name}: unsupported dtype {d}"))),
            });
        }
        blobs.push(Blob { name, shape, dtype, data });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io)? != 0 {
        return Err(bad("trailing bytes after last blob".into()));
    }
    Ok(CheckpointFile { config: header.config, meta: header.meta, blobs })
}

pub const PARAM_PREFIX: &str = "p:";
pub const BN_MEAN_PREFIX: &str = "bn.mean:";
pub const BN_VAR_PREFIX: &str = "bn.var:";

impl<F: Real> Model<F> {
    pub fn to_blobs(&self) -> Vec<Blob> {
        let mut out = Vec::new();
        for (name, p) in &self.params.params {
            out.push(Blob::from_real(format!("{PARAM_PREFIX}{name}"), p.shape.clone(), &p.data));
        }
        for (name, s) in &self.params.batch_norms {
            let c = vec![s.channels()];
            out.push(Blob::from_real(format!("{BN_MEAN_PREFIX}{name}"), c.clone(), &s.running_mean));
            out.push(Blob::from_real(format!("{BN_VAR_PREFIX}{name}"), c, &s.running_var));
        }
        out
    }

    /// Rebuilds a model from a config and blobs. Returns the blobs that do
    /// not belong to the model (e.g. optimizer state).
    pub fn from_blobs(config: &ModelConfig, blobs: Vec<Blob>) -> Result<(Self, Vec<Blob>)> {
        let mut model = Model::<F>::build(config, 0)?;
        let mut seen_p = BTreeMap::new();
        let mut means = BTreeMap::new();
        let mut vars = BTreeMap::new();
        let mut rest = Vec::new();
        for b in blobs {
            if let Some(n) = b.name.strip_prefix(PARAM_PREFIX) {
                seen_p.insert(n.to_string(), b);
            } else if let Some(n) = b.name.strip_prefix(BN_MEAN_PREFIX) {
                means.insert(n.to_string(), b);
            } else if let Some(n) = b.name.strip_prefix(BN_VAR_PREFIX) {
                vars.insert(n.to_string(), b);
            } else {
                rest.push(b);
            }
        }
        let store: &mut ParamStore<F> = &mut model.params;
        for (name, p) in store.params.iter_mut() {
            let b = seen_p.remove(name).ok_or_else(|| Error::Config(format!("checkpoint lacks parameter {name}")))?;
            if b.shape != p.shape {
                return Err(Error::shape(format!("{name}: checkpoint shape {:?}, model {:?}", b.shape, p.shape)));
            }
            p.data = Arc::new(b.to_real());
        }
        if let Some(extra) = seen_p.keys().next() {
            return Err(Error::Config(format!("checkpoint parameter {extra} is not part of the model")));
        }
        for (name, s) in store.batch_norms.iter_mut() {
            let missing = || Error::Config(format!("checkpoint lacks batch-norm state {name}"));
            let m = means.remove(name).ok_or_else(missing)?;
            let v = vars.remove(name).ok_or_else(missing)?;
            if m.data.len() != s.channels() || v.data.len() != s.channels() {
                return Err(Error::shape(format!("{name}: batch-norm state has wrong channel count")));
            }
            *s = BatchNormState { running_mean: m.to_real(), running_var: v.to_real() };
        }
        Ok((model, rest))
    }

    pub fn save(&self, path: &Path, meta: serde_json::Value, extra: Vec<Blob>) -> Result<()> {
        let mut blobs = self.to_blobs();
        blobs.extend(extra);
        write(path, &CheckpointFile { config: self.config().clone(), meta, blobs })
    }

    /// Loads a model; returns it with the header metadata and unclaimed blobs.
    pub fn load(path: &Path) -> Result<(Self, serde_json::Value, Vec<Blob>)> {
        let ck = read(path)?;
        let (model, rest) = Model::from_blobs(&ck.config, ck.blobs)?;
        Ok((model, ck.meta, rest))
    }
}
