//! Checkpoint archive: a single file holding a text manifest (parameter
//! names, shapes, dtypes), the run configuration, the iteration counter, and
//! the raw little-endian arrays.
//!
//! Saving then loading reproduces every array bit-exactly, and loading then
//! saving reproduces the file byte-exactly.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Tensor};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::params::ParamRegistry;

const MAGIC: &[u8; 8] = b"CMSKCKP1";

/// One stored array.
#[derive(Debug, Clone)]
pub struct StoredTensor {
    pub dtype: DType,
    pub dims: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl StoredTensor {
    pub fn to_tensor(&self, device: &candle_core::Device) -> Result<Tensor> {
        let n: usize = self.dims.iter().product();
        match self.dtype {
            DType::F32 => {
                let mut v = Vec::with_capacity(n);
                for chunk in self.bytes.chunks_exact(4) {
                    v.push(f32::from_le_bytes(chunk.try_into().unwrap()));
                }
                Ok(Tensor::from_vec(v, self.dims.as_slice(), device)?)
            }
            DType::F64 => {
                let mut v = Vec::with_capacity(n);
                for chunk in self.bytes.chunks_exact(8) {
                    v.push(f64::from_le_bytes(chunk.try_into().unwrap()));
                }
                Ok(Tensor::from_vec(v, self.dims.as_slice(), device)?)
            }
            other => Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
        }
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let dims = t.dims().to_vec();
        let flat = t.flatten_all()?;
        let (bytes, dtype) = match t.dtype() {
            DType::F32 => {
                let v = flat.to_vec1::<f32>()?;
                let mut b = Vec::with_capacity(v.len() * 4);
                for x in &v {
                    if !x.is_finite() {
                        return Err(Error::Checkpoint("non-finite parameter value".into()));
                    }
                    b.extend_from_slice(&x.to_le_bytes());
                }
                (b, DType::F32)
            }
            DType::F64 => {
                let v = flat.to_vec1::<f64>()?;
                let mut b = Vec::with_capacity(v.len() * 8);
                for x in &v {
                    if !x.is_finite() {
                        return Err(Error::Checkpoint("non-finite parameter value".into()));
                    }
                    b.extend_from_slice(&x.to_le_bytes());
                }
                (b, DType::F64)
            }
            other => return Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
        };
        Ok(Self { dtype, dims, bytes })
    }
}

/// In-memory checkpoint contents.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub iteration: usize,
    pub config: RunConfig,
    pub tensors: BTreeMap<String, StoredTensor>,
}

fn dtype_name(d: DType) -> &'static str {
    match d {
        DType::F32 => "f32",
        DType::F64 => "f64",
        _ => "other",
    }
}

fn dtype_from_name(s: &str) -> Result<DType> {
    match s {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        other => Err(Error::Checkpoint(format!("unknown dtype `{other}`"))),
    }
}

impl Checkpoint {
    pub fn from_registry(reg: &ParamRegistry, config: &RunConfig, iteration: usize) -> Result<Self> {
        let mut tensors = BTreeMap::new();
        for (name, var) in reg.sorted_entries() {
            tensors.insert(name, StoredTensor::from_tensor(var.as_tensor())?);
        }
        Ok(Self {
            iteration,
            config: config.clone(),
            tensors,
        })
    }

    /// Serialize to the archive byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut manifest = String::new();
        manifest.push_str(&format!("iteration = {}\n", self.iteration));
        manifest.push_str("config_begin\n");
        manifest.push_str(&self.config.to_text());
        manifest.push_str("config_end\n");
        manifest.push_str("tensors\n");
        for (name, t) in &self.tensors {
            let dims = t
                .dims
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x");
            manifest.push_str(&format!(
                "{name} {} {dims} {}\n",
                dtype_name(t.dtype),
                t.bytes.len()
            ));
        }
        let mbytes = manifest.into_bytes();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(mbytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&mbytes);
        for t in self.tensors.values() {
            out.extend_from_slice(&t.bytes);
        }
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let fail = |msg: &str| Error::Checkpoint(msg.to_string());
        if data.len() < 16 || &data[..8] != MAGIC {
            return Err(fail("not a checkpoint file (bad magic)"));
        }
        let mlen = u64::from_le_bytes(data[8..16].try_into().unwrap()) as usize;
        if data.len() < 16 + mlen {
            return Err(fail("truncated checkpoint (manifest cut short)"));
        }
        let manifest = std::str::from_utf8(&data[16..16 + mlen])
            .map_err(|_| fail("manifest is not valid UTF-8"))?;

        let mut lines = manifest.lines();
        let iter_line = lines.next().ok_or_else(|| fail("empty manifest"))?;
        let iteration: usize = iter_line
            .strip_prefix("iteration = ")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| fail("malformed iteration line"))?;
        if lines.next() != Some("config_begin") {
            return Err(fail("missing config section"));
        }
        let mut config_text = String::new();
        for line in lines.by_ref() {
            if line == "config_end" {
                break;
            }
            config_text.push_str(line);
            config_text.push('\n');
        }
        let config = RunConfig::from_str_cfg(&config_text)?;
        if lines.next() != Some("tensors") {
            return Err(fail("missing tensors section"));
        }

        let mut tensors = BTreeMap::new();
        let mut offset = 16 + mlen;
        for line in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 4 {
                return Err(fail(&format!("malformed tensor line `{line}`")));
            }
            let name = parts[0].to_string();
            let dtype = dtype_from_name(parts[1])?;
            let dims: Vec<usize> = if parts[2].is_empty() {
                vec![]
            } else {
                parts[2]
                    .split('x')
                    .map(|d| {
                        d.parse()
                            .map_err(|_| fail(&format!("bad dims for `{name}`")))
                    })
                    .collect::<Result<_>>()?
            };
            let nbytes: usize = parts[3]
                .parse()
                .map_err(|_| fail(&format!("bad byte length for `{name}`")))?;
            let elem = match dtype {
                DType::F32 => 4,
                DType::F64 => 8,
                _ => unreachable!(),
            };
            let expected: usize = dims.iter().product::<usize>() * elem;
            if expected != nbytes {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for `{name}`: manifest says {nbytes} bytes but shape {dims:?} needs {expected}"
                )));
            }
            if offset + nbytes > data.len() {
                return Err(fail(&format!(
                    "truncated checkpoint (array data cut short at `{name}`)"
                )));
            }
            let bytes = data[offset..offset + nbytes].to_vec();
            offset += nbytes;
            tensors.insert(name, StoredTensor { dtype, dims, bytes });
        }
        if offset != data.len() {
            return Err(fail("trailing bytes after declared arrays"));
        }
        Ok(Self {
            iteration,
            config,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let data = std::fs::read(path)?;
        Self::from_bytes(&data)
    }

    /// Copy every stored tensor into `reg`, strictly: all names must match
    /// both ways and every shape must agree. Nothing is written unless the
    /// whole checkpoint validates.
    pub fn load_into(&self, reg: &ParamRegistry) -> Result<()> {
        for (name, stored) in &self.tensors {
            let var = reg.get(name).ok_or_else(|| {
                Error::Checkpoint(format!("checkpoint has unknown parameter `{name}`"))
            })?;
            if var.dims() != stored.dims.as_slice() {
                return Err(Error::ShapeMismatch {
                    name: name.clone(),
                    expected: var.dims().to_vec(),
                    got: stored.dims.clone(),
                });
            }
        }
        for (name, _) in reg.sorted_entries() {
            if !self.tensors.contains_key(&name) {
                return Err(Error::Checkpoint(format!(
                    "checkpoint is missing parameter `{name}`"
                )));
            }
        }
        for (name, stored) in &self.tensors {
            reg.set(name, &stored.to_tensor(reg.device())?)?;
        }
        Ok(())
    }
}
