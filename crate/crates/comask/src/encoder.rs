//! Hierarchical 4-stage encoder emitting a feature pyramid at strides
//! {4, 8, 16, 32}.
//!
//! A small convolutional stand-in for the transformer backbones used at full
//! scale: each stage is a strided patch-embedding convolution followed by
//! residual conv blocks. Stage widths and depths come from [`EncoderSpec`],
//! so heavier hierarchies can plug in behind the same pyramid contract.

use candle_core::Tensor;

use crate::error::Result;
use crate::nn::{Conv2d, Norm2d};
use crate::params::ParamRegistry;
use crate::rng::StreamRng;
use crate::types::{FeaturePyramid, PyramidLevel, PYRAMID_STRIDES};

/// Architecture description for one encoder.
#[derive(Debug, Clone)]
pub struct EncoderSpec {
    pub in_channels: usize,
    pub widths: [usize; 4],
    pub stage_depths: [usize; 4],
    pub trainable: bool,
}

struct Block {
    conv1: Conv2d,
    norm1: Norm2d,
    conv2: Conv2d,
    norm2: Norm2d,
}

impl Block {
    fn forward(&self, x: &Tensor, train: bool, tracked: bool) -> Result<Tensor> {
        let y = self.conv1.forward(x, tracked)?;
        let y = self.norm1.forward(&y, train, tracked)?.relu()?;
        let y = self.conv2.forward(&y, tracked)?;
        let y = self.norm2.forward(&y, train, tracked)?;
        Ok(x.add(&y)?.relu()?)
    }
}

struct Stage {
    embed: Conv2d,
    embed_norm: Norm2d,
    blocks: Vec<Block>,
}

/// The encoder itself; `trainable` gates whether its parameters enter the
/// autograd graph during training.
pub struct HierEncoder {
    stages: Vec<Stage>,
    pub trainable: bool,
}

impl HierEncoder {
    pub fn new(
        reg: &mut ParamRegistry,
        prefix: &str,
        spec: &EncoderSpec,
        norm_momentum: f64,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        let mut stages = Vec::with_capacity(4);
        let mut in_c = spec.in_channels;
        for (i, &width) in spec.widths.iter().enumerate() {
            let p = format!("{prefix}.stage{i}");
            // stage 0 embeds at stride 4 with a 7x7 kernel, later stages
            // halve the resolution with 3x3 kernels
            let (kernel, stride, padding) = if i == 0 { (7, 4, 3) } else { (3, 2, 1) };
            let embed = Conv2d::new(
                reg,
                &format!("{p}.embed"),
                in_c,
                width,
                kernel,
                stride,
                padding,
                false,
                rng,
            )?;
            let embed_norm = Norm2d::new(reg, &format!("{p}.embed_norm"), width, norm_momentum, rng)?;
            let mut blocks = Vec::new();
            for b in 0..spec.stage_depths[i] {
                let bp = format!("{p}.block{b}");
                blocks.push(Block {
                    conv1: Conv2d::new(reg, &format!("{bp}.conv1"), width, width, 3, 1, 1, false, rng)?,
                    norm1: Norm2d::new(reg, &format!("{bp}.norm1"), width, norm_momentum, rng)?,
                    conv2: Conv2d::new(reg, &format!("{bp}.conv2"), width, width, 3, 1, 1, false, rng)?,
                    norm2: Norm2d::new(reg, &format!("{bp}.norm2"), width, norm_momentum, rng)?,
                });
            }
            stages.push(Stage {
                embed,
                embed_norm,
                blocks,
            });
            in_c = width;
        }
        Ok(Self {
            stages,
            trainable: spec.trainable,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<FeaturePyramid> {
        let tracked = train && self.trainable;
        let (_, _, h, w) = x.dims4()?;
        let mut levels = Vec::with_capacity(4);
        let mut cur = x.clone();
        for (stage, &stride) in self.stages.iter().zip(PYRAMID_STRIDES.iter()) {
            let mut y = stage.embed.forward(&cur, tracked)?;
            y = stage.embed_norm.forward(&y, train, tracked)?.relu()?;
            for block in &stage.blocks {
                y = block.forward(&y, train, tracked)?;
            }
            levels.push(PyramidLevel {
                feat: y.clone(),
                stride,
            });
            cur = y;
        }
        FeaturePyramid::new(levels, (h, w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use candle_core::{DType, Device};

    #[test]
    fn pyramid_contract_for_divisible_inputs() {
        let mut reg = ParamRegistry::new(Device::Cpu, DType::F32);
        let mut rng = seeded_rng(0, "init");
        let spec = EncoderSpec {
            in_channels: 3,
            widths: [8, 16, 32, 64],
            stage_depths: [1, 1, 1, 1],
            trainable: true,
        };
        let enc = HierEncoder::new(&mut reg, "rgb_encoder", &spec, 0.1, &mut rng).unwrap();
        for size in [64usize, 96, 128] {
            let x = Tensor::zeros((1, 3, size, size), DType::F32, &Device::Cpu).unwrap();
            let pyr = enc.forward(&x, false).unwrap();
            assert_eq!(pyr.strides(), vec![4, 8, 16, 32]);
            for (lvl, s) in pyr.levels.iter().zip([4usize, 8, 16, 32]) {
                let d = lvl.feat.dims();
                assert_eq!(d[2], size / s);
                assert_eq!(d[3], size / s);
            }
        }
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let mut reg = ParamRegistry::new(Device::Cpu, DType::F32);
        let mut rng = seeded_rng(1, "init");
        let spec = EncoderSpec {
            in_channels: 1,
            widths: [4, 8, 16, 32],
            stage_depths: [1, 1, 1, 1],
            trainable: true,
        };
        let enc = HierEncoder::new(&mut reg, "depth_encoder", &spec, 0.1, &mut rng).unwrap();
        let x = Tensor::rand(0f32, 1f32, (2, 1, 64, 64), &Device::Cpu).unwrap();
        let a = enc.forward(&x, false).unwrap();
        let b = enc.forward(&x, false).unwrap();
        for i in 0..4 {
            let d = a.levels[i]
                .feat
                .sub(&b.levels[i].feat)
                .unwrap()
                .abs()
                .unwrap()
                .max_all()
                .unwrap()
                .to_scalar::<f32>()
                .unwrap();
            assert_eq!(d, 0.0);
        }
    }
}
