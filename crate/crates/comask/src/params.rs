//! Named parameter storage shared by the model, optimizer, EMA teacher, and
//! checkpoints.
//!
//! Every learnable tensor (and every normalization buffer) is registered
//! under a dotted name like `depth_encoder.stage2.block0.conv1.weight`. The
//! optimizer selects parameter groups by prefix, the teacher mirrors the full
//! registry by name, and checkpoints serialize it in sorted-name order.

use candle_core::{DType, Device, Tensor, Var};
use indexmap::IndexMap;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{normal_draw, StreamRng};

/// How a parameter is initialized.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal(0, sqrt(2 / fan_in)); the usual choice for conv weights
    /// feeding a ReLU.
    KaimingNormal { fan_in: usize },
    /// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    XavierUniform { fan_in: usize, fan_out: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer (unless its module is frozen).
    Param,
    /// Updated inside forward passes (e.g. running statistics); never
    /// optimized but checkpointed and mirrored into the teacher.
    Buffer,
}

struct Entry {
    var: Var,
    kind: ParamKind,
}

/// Ordered name -> tensor registry.
pub struct ParamRegistry {
    device: Device,
    dtype: DType,
    entries: IndexMap<String, Entry>,
}

impl ParamRegistry {
    pub fn new(device: Device, dtype: DType) -> Self {
        Self {
            device,
            dtype,
            entries: IndexMap::new(),
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    fn init_values(&self, init: Init, n: usize, rng: &mut StreamRng) -> Vec<f64> {
        match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::KaimingNormal { fan_in } => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| normal_draw(rng) * std).collect()
            }
            Init::XavierUniform { fan_in, fan_out } => {
                let a = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-a..a)).collect()
            }
        }
    }

    /// Register (or fail on duplicate) a learnable parameter.
    pub fn param(
        &mut self,
        name: &str,
        dims: &[usize],
        init: Init,
        rng: &mut StreamRng,
    ) -> Result<Var> {
        self.register(name, dims, init, rng, ParamKind::Param)
    }

    /// Register a non-optimized buffer.
    pub fn buffer(&mut self, name: &str, dims: &[usize], init: Init) -> Result<Var> {
        let mut throwaway = crate::rng::seeded_rng(0, "buffer-init");
        self.register(name, dims, init, &mut throwaway, ParamKind::Buffer)
    }

    fn register(
        &mut self,
        name: &str,
        dims: &[usize],
        init: Init,
        rng: &mut StreamRng,
        kind: ParamKind,
    ) -> Result<Var> {
        if self.entries.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let n: usize = dims.iter().product();
        let values = self.init_values(init, n, rng);
        let t = Tensor::from_vec(values, dims, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.entries.insert(
            name.to_string(),
            Entry {
                var: var.clone(),
                kind,
            },
        );
        Ok(var)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.entries.get(name).map(|e| &e.var)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// All entries (params and buffers) in sorted-name order.
    pub fn sorted_entries(&self) -> Vec<(String, Var)> {
        let mut names: Vec<&String> = self.entries.keys().collect();
        names.sort();
        names
            .into_iter()
            .map(|n| (n.clone(), self.entries[n].var.clone()))
            .collect()
    }

    /// Learnable parameters whose name starts with any of `prefixes`,
    /// excluding buffers.
    pub fn params_with_prefix(&self, prefixes: &[&str]) -> Vec<(String, Var)> {
        let mut out: Vec<(String, Var)> = self
            .entries
            .iter()
            .filter(|(name, e)| {
                e.kind == ParamKind::Param && prefixes.iter().any(|p| name.starts_with(p))
            })
            .map(|(n, e)| (n.clone(), e.var.clone()))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub fn kind(&self, name: &str) -> Option<ParamKind> {
        self.entries.get(name).map(|e| e.kind)
    }

    /// Overwrite one entry, checking shape and dtype.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let entry = self
            .entries
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("no parameter named `{name}`")))?;
        if entry.var.dims() != value.dims() {
            return Err(Error::ShapeMismatch {
                name: name.to_string(),
                expected: entry.var.dims().to_vec(),
                got: value.dims().to_vec(),
            });
        }
        let value = if value.dtype() != self.dtype {
            value.to_dtype(self.dtype)?
        } else {
            value.clone()
        };
        entry.var.set(&value)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
