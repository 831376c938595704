//! Small layer toolbox on top of candle: convolution, batch normalization,
//! token projections, bilinear resampling, and the segmentation loss.
//!
//! Layers hold [`Var`] handles from the registry. Forward passes take a
//! `tracked` flag: tracked reads participate in autograd, untracked reads are
//! detached so frozen modules and the EMA teacher cost nothing at backward.

use candle_core::{DType, Device, Tensor, Var};

use crate::error::{Error, Result};
use crate::params::{Init, ParamRegistry};
use crate::rng::StreamRng;
use crate::types::IGNORE_LABEL;

fn read(var: &Var, tracked: bool) -> Tensor {
    if tracked {
        var.as_tensor().clone()
    } else {
        var.as_tensor().detach()
    }
}

/// 2D convolution with optional bias.
pub struct Conv2d {
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        reg: &mut ParamRegistry,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        zero_init: bool,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        let init = if zero_init {
            Init::Zeros
        } else {
            Init::KaimingNormal {
                fan_in: in_c * kernel * kernel,
            }
        };
        let weight = reg.param(
            &format!("{name}.weight"),
            &[out_c, in_c, kernel, kernel],
            init,
            rng,
        )?;
        let bias = Some(reg.param(&format!("{name}.bias"), &[out_c], Init::Zeros, rng)?);
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor, tracked: bool) -> Result<Tensor> {
        let w = read(&self.weight, tracked);
        let mut y = x.conv2d(&w, self.padding, self.stride, 1, 1)?;
        if let Some(b) = &self.bias {
            let b = read(b, tracked);
            let c = b.dims1()?;
            y = y.broadcast_add(&b.reshape((1, c, 1, 1))?)?;
        }
        Ok(y)
    }
}

/// Batch normalization over (N, H, W) per channel with running statistics.
pub struct Norm2d {
    gamma: Var,
    beta: Var,
    running_mean: Var,
    running_var: Var,
    momentum: f64,
    eps: f64,
}

impl Norm2d {
    pub fn new(
        reg: &mut ParamRegistry,
        name: &str,
        channels: usize,
        momentum: f64,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        let gamma = reg.param(&format!("{name}.gamma"), &[channels], Init::Ones, rng)?;
        let beta = reg.param(&format!("{name}.beta"), &[channels], Init::Zeros, rng)?;
        let running_mean = reg.buffer(&format!("{name}.running_mean"), &[channels], Init::Zeros)?;
        let running_var = reg.buffer(&format!("{name}.running_var"), &[channels], Init::Ones)?;
        Ok(Self {
            gamma,
            beta,
            running_mean,
            running_var,
            momentum,
            eps: 1e-5,
        })
    }

    /// `train` selects batch statistics (and updates the running buffers);
    /// eval uses the running statistics.
    pub fn forward(&self, x: &Tensor, train: bool, tracked: bool) -> Result<Tensor> {
        let (_, c, _, _) = x.dims4()?;
        let gamma = read(&self.gamma, tracked).reshape((1, c, 1, 1))?;
        let beta = read(&self.beta, tracked).reshape((1, c, 1, 1))?;
        let (mean, var) = if train {
            let mean = x.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
            let centered = x.broadcast_sub(&mean)?;
            let var = centered
                .sqr()?
                .mean_keepdim(0)?
                .mean_keepdim(2)?
                .mean_keepdim(3)?;
            self.update_running(&mean, &var, c)?;
            (mean, var)
        } else {
            let rm = self.running_mean.as_tensor().detach().reshape((1, c, 1, 1))?;
            let rv = self.running_var.as_tensor().detach().reshape((1, c, 1, 1))?;
            (rm, rv)
        };
        let std = (var + self.eps)?.sqrt()?;
        let normed = x.broadcast_sub(&mean)?.broadcast_div(&std)?;
        Ok(normed.broadcast_mul(&gamma)?.broadcast_add(&beta)?)
    }

    fn update_running(&self, mean: &Tensor, var: &Tensor, c: usize) -> Result<()> {
        let m = self.momentum;
        let mean = mean.detach().reshape(c)?;
        let var = var.detach().reshape(c)?;
        let new_mean = (self.running_mean.as_tensor().detach() * (1.0 - m))?
            .add(&(mean * m)?)?;
        let new_var = (self.running_var.as_tensor().detach() * (1.0 - m))?.add(&(var * m)?)?;
        self.running_mean.set(&new_mean)?;
        self.running_var.set(&new_var)?;
        Ok(())
    }
}

/// Bias-free token projection: `[B, N, in] @ [in, out]`.
pub struct Projection {
    weight: Var,
}

impl Projection {
    pub fn new(
        reg: &mut ParamRegistry,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        let weight = reg.param(
            &format!("{name}.weight"),
            &[in_dim, out_dim],
            Init::XavierUniform {
                fan_in: in_dim,
                fan_out: out_dim,
            },
            rng,
        )?;
        Ok(Self { weight })
    }

    pub fn forward(&self, x: &Tensor, tracked: bool) -> Result<Tensor> {
        Ok(x.broadcast_matmul(&read(&self.weight, tracked))?)
    }
}

/// Interpolation matrix for 1D bilinear resampling without corner alignment.
///
/// Row `o` holds the two-tap weights that produce output sample `o` from the
/// input samples, so `M @ signal` resamples a length-`in_len` signal to
/// `out_len`.
pub fn interp_matrix(
    out_len: usize,
    in_len: usize,
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let mut w = vec![0.0f64; out_len * in_len];
    let scale = in_len as f64 / out_len as f64;
    for o in 0..out_len {
        let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(in_len - 1);
        let frac = src - i0 as f64;
        w[o * in_len + i0] += 1.0 - frac;
        w[o * in_len + i1] += frac;
    }
    Ok(Tensor::from_vec(w, (out_len, in_len), device)?.to_dtype(dtype)?)
}

/// Bilinear resize of `[B, C, H, W]` to `(out_h, out_w)`, differentiable.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if out_h == h && out_w == w {
        return Ok(x.clone());
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidTensor {
            name: "resize".into(),
            reason: "zero output size".into(),
        });
    }
    let mut y = x.reshape((b * c, h, w))?;
    if out_h != h {
        let mh = interp_matrix(out_h, h, x.dtype(), x.device())?.unsqueeze(0)?;
        y = mh.broadcast_matmul(&y)?;
    }
    if out_w != w {
        let mw = interp_matrix(out_w, w, x.dtype(), x.device())?.t()?;
        y = y.broadcast_matmul(&mw)?;
    }
    Ok(y.reshape((b, c, out_h, out_w))?)
}

/// Mean cross-entropy over pixels whose label is not [`IGNORE_LABEL`].
///
/// Returns the scalar loss and the number of contributing pixels; with zero
/// valid pixels the loss is exactly zero.
pub fn cross_entropy_ignore(logits: &Tensor, labels: &Tensor) -> Result<Tensor> {
    let (b, k, h, w) = logits.dims4()?;
    let n = h * w;
    let lsm = candle_nn::ops::log_softmax(logits, 1)?;
    let lsm = lsm.reshape((b, k, n))?.transpose(1, 2)?.contiguous()?; // [B, N, K]
    let labels = labels.reshape((b, n))?;
    let valid = labels.ne(IGNORE_LABEL)?; // u8
    let zeros = labels.zeros_like()?;
    let clamped = valid.where_cond(&labels, &zeros)?;
    let picked = lsm
        .gather(&clamped.unsqueeze(2)?, 2)?
        .squeeze(2)?; // [B, N]
    let validf = valid.to_dtype(logits.dtype())?;
    let count = validf.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if count == 0.0 {
        return Ok(Tensor::zeros((), logits.dtype(), logits.device())?);
    }
    let total = picked.mul(&validf)?.sum_all()?;
    Ok(total.affine(-1.0 / count, 0.0)?)
}
