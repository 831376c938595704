//! Depth-to-RGB feature refinement, applied independently per pyramid level.
//!
//! Three pieces per level:
//! - a global branch: cross-attention whose queries and keys come from the
//!   (bilinearly pooled) depth features while the values are the pooled RGB
//!   features, so RGB information is aggregated by depth similarity;
//! - a local branch: a sigmoid gate from one 3x3 convolution multiplying the
//!   refinement of a second 3x3 convolution, both on unpooled depth features;
//! - a residual fuse: concat(global, local) -> 1x1 conv -> norm -> ReLU,
//!   added onto the original RGB features.
//!
//! The refinement is uni-directional: depth features are read, never
//! written.

use candle_core::{Tensor, D};

use crate::config::FusionMode;
use crate::error::{Error, Result};
use crate::nn::{resize_bilinear, Conv2d, Norm2d, Projection};
use crate::params::ParamRegistry;
use crate::rng::StreamRng;
use crate::types::{FeaturePyramid, PyramidLevel};

struct LevelFusion {
    channels: usize,
    query: Option<Projection>,
    key: Option<Projection>,
    value: Option<Projection>,
    out: Option<Projection>,
    gate: Option<Conv2d>,
    refine: Option<Conv2d>,
    fuse: Conv2d,
    norm: Norm2d,
}

/// The per-level refinement stack plus its pooling policy.
pub struct FusionModule {
    levels: Vec<LevelFusion>,
    mode: FusionMode,
    pool_train: [usize; 4],
    pool_eval: [usize; 4],
}

impl FusionModule {
    pub fn new(
        reg: &mut ParamRegistry,
        prefix: &str,
        widths: &[usize; 4],
        mode: FusionMode,
        pool_train: [usize; 4],
        pool_eval: [usize; 4],
        norm_momentum: f64,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        if mode == FusionMode::None {
            return Err(Error::Config(
                "fusion module cannot be constructed with fusion_mode = none".into(),
            ));
        }
        let mut levels = Vec::with_capacity(4);
        for (i, &c) in widths.iter().enumerate() {
            let p = format!("{prefix}.level{i}");
            let (query, key, value, out) = if mode.has_global() {
                (
                    Some(Projection::new(reg, &format!("{p}.query"), c, c, rng)?),
                    Some(Projection::new(reg, &format!("{p}.key"), c, c, rng)?),
                    Some(Projection::new(reg, &format!("{p}.value"), c, c, rng)?),
                    Some(Projection::new(reg, &format!("{p}.out"), c, c, rng)?),
                )
            } else {
                (None, None, None, None)
            };
            let (gate, refine) = if mode.has_local() {
                (
                    Some(Conv2d::new(reg, &format!("{p}.gate"), c, c, 3, 1, 1, false, rng)?),
                    Some(Conv2d::new(reg, &format!("{p}.refine"), c, c, 3, 1, 1, false, rng)?),
                )
            } else {
                (None, None)
            };
            let branches = (mode.has_global() as usize) + (mode.has_local() as usize);
            // The residual branch starts at zero so a freshly-plugged module
            // leaves the pretrained RGB pathway untouched.
            let fuse = Conv2d::new(reg, &format!("{p}.fuse"), branches * c, c, 1, 1, 0, true, rng)?;
            let norm = Norm2d::new(reg, &format!("{p}.norm"), c, norm_momentum, rng)?;
            levels.push(LevelFusion {
                channels: c,
                query,
                key,
                value,
                out,
                gate,
                refine,
                fuse,
                norm,
            });
        }
        Ok(Self {
            levels,
            mode,
            pool_train,
            pool_eval,
        })
    }

    pub fn mode(&self) -> FusionMode {
        self.mode
    }

    pub fn pool_factors(&self, train: bool) -> [usize; 4] {
        if train {
            self.pool_train
        } else {
            self.pool_eval
        }
    }

    fn pooled_hw(h: usize, w: usize, pool: usize) -> Result<(usize, usize)> {
        let (hp, wp) = (h / pool, w / pool);
        if hp == 0 || wp == 0 {
            return Err(Error::PoolTooLarge { factor: pool, h, w });
        }
        Ok((hp, wp))
    }

    /// Attention weights of the global branch at one level: `[B, N, N]`
    /// rows summing to one, with N the pooled token count.
    pub fn attention_weights(
        &self,
        level: usize,
        f_depth: &Tensor,
        pool: usize,
        tracked: bool,
    ) -> Result<Tensor> {
        let lf = &self.levels[level];
        let (query, key) = match (&lf.query, &lf.key) {
            (Some(q), Some(k)) => (q, k),
            _ => {
                return Err(Error::Config(
                    "global branch is disabled in this fusion mode".into(),
                ))
            }
        };
        let (b, c, h, w) = f_depth.dims4()?;
        let (hp, wp) = Self::pooled_hw(h, w, pool)?;
        let pooled = resize_bilinear(f_depth, hp, wp)?;
        let tokens = pooled.reshape((b, c, hp * wp))?.transpose(1, 2)?;
        let q = query.forward(&tokens, tracked)?;
        let k = key.forward(&tokens, tracked)?;
        let scale = 1.0 / (lf.channels as f64).sqrt();
        let scores = q.matmul(&k.transpose(1, 2)?)?.affine(scale, 0.0)?;
        Ok(candle_nn::ops::softmax(&scores, D::Minus1)?)
    }

    /// Global depth-guided cross-attention at one level.
    pub fn global_branch(
        &self,
        level: usize,
        f_depth: &Tensor,
        f_rgb: &Tensor,
        pool: usize,
        tracked: bool,
    ) -> Result<Tensor> {
        let lf = &self.levels[level];
        let (value, out) = match (&lf.value, &lf.out) {
            (Some(v), Some(o)) => (v, o),
            _ => {
                return Err(Error::Config(
                    "global branch is disabled in this fusion mode".into(),
                ))
            }
        };
        let (b, c, h, w) = f_rgb.dims4()?;
        let (hp, wp) = Self::pooled_hw(h, w, pool)?;
        let attn = self.attention_weights(level, f_depth, pool, tracked)?;
        let rgb_pooled = resize_bilinear(f_rgb, hp, wp)?;
        let rgb_tokens = rgb_pooled.reshape((b, c, hp * wp))?.transpose(1, 2)?;
        let v = value.forward(&rgb_tokens, tracked)?;
        let aggregated = attn.matmul(&v)?;
        let projected = out.forward(&aggregated, tracked)?;
        let spatial = projected
            .transpose(1, 2)?
            .reshape((b, lf.channels, hp, wp))?;
        resize_bilinear(&spatial, h, w)
    }

    /// Sigmoid-gated local refinement of depth features; no pooling.
    pub fn local_branch(&self, level: usize, f_depth: &Tensor, tracked: bool) -> Result<Tensor> {
        let lf = &self.levels[level];
        let (gate, refine) = match (&lf.gate, &lf.refine) {
            (Some(g), Some(r)) => (g, r),
            _ => {
                return Err(Error::Config(
                    "local branch is disabled in this fusion mode".into(),
                ))
            }
        };
        let g = candle_nn::ops::sigmoid(&gate.forward(f_depth, tracked)?)?;
        let r = refine.forward(f_depth, tracked)?;
        Ok(g.mul(&r)?)
    }

    /// concat -> 1x1 conv -> norm -> ReLU -> add onto the RGB features.
    pub fn residual_fuse(
        &self,
        level: usize,
        f_rgb: &Tensor,
        branches: &[Tensor],
        train: bool,
        tracked: bool,
    ) -> Result<Tensor> {
        let lf = &self.levels[level];
        let cat = if branches.len() == 1 {
            branches[0].clone()
        } else {
            Tensor::cat(branches, 1)?
        };
        let fused = lf.fuse.forward(&cat, tracked)?;
        let normed = lf.norm.forward(&fused, train, tracked)?;
        Ok(f_rgb.add(&normed.relu()?)?)
    }

    fn refine_level(
        &self,
        level: usize,
        f_rgb: &Tensor,
        f_depth: &Tensor,
        pool: usize,
        train: bool,
        tracked: bool,
    ) -> Result<Tensor> {
        let mut branches = Vec::new();
        if self.mode.has_global() {
            branches.push(self.global_branch(level, f_depth, f_rgb, pool, tracked)?);
        }
        if self.mode.has_local() {
            branches.push(self.local_branch(level, f_depth, tracked)?);
        }
        self.residual_fuse(level, f_rgb, &branches, train, tracked)
    }

    /// Refine the RGB pyramid with the depth pyramid, level by level.
    pub fn forward(
        &self,
        f_rgb: &FeaturePyramid,
        f_depth: &FeaturePyramid,
        train: bool,
    ) -> Result<FeaturePyramid> {
        if f_rgb.levels.len() != self.levels.len() || f_depth.levels.len() != self.levels.len() {
            return Err(Error::Config("pyramid/fusion level count mismatch".into()));
        }
        let pools = self.pool_factors(train);
        let mut refined = Vec::with_capacity(self.levels.len());
        for (i, (lr, ld)) in f_rgb.levels.iter().zip(f_depth.levels.iter()).enumerate() {
            if lr.feat.dims() != ld.feat.dims() {
                return Err(Error::ShapeMismatch {
                    name: format!("fusion level {i}"),
                    expected: lr.feat.dims().to_vec(),
                    got: ld.feat.dims().to_vec(),
                });
            }
            let feat = self.refine_level(i, &lr.feat, &ld.feat, pools[i], train, train)?;
            refined.push(PyramidLevel {
                feat,
                stride: lr.stride,
            });
        }
        Ok(FeaturePyramid { levels: refined })
    }
}
