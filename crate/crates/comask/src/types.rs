//! Shared domain types: images, label maps, and feature pyramids.

use candle_core::{Device, Tensor};
use ndarray::{Array3, Array4};

use crate::error::{Error, Result};

/// Sentinel label excluded from losses and metrics.
pub const IGNORE_LABEL: u32 = 255;

/// Pyramid strides emitted by the hierarchical encoders, relative to the
/// network input.
pub const PYRAMID_STRIDES: [usize; 4] = [4, 8, 16, 32];

/// A batch of images in `[batch, channels, height, width]` layout.
///
/// RGB data lives in `[0, 1]`; depth is a single channel of normalized
/// inverse depth, also in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct ImageTensor {
    pub data: Array4<f32>,
}

impl ImageTensor {
    pub fn new(data: Array4<f32>) -> Result<Self> {
        let (_, _, h, w) = data.dim();
        if h == 0 || w == 0 {
            return Err(Error::InvalidTensor {
                name: "image".into(),
                reason: "zero spatial size".into(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTensor {
                name: "image".into(),
                reason: "contains NaN or Inf".into(),
            });
        }
        Ok(Self { data })
    }

    pub fn batch(&self) -> usize {
        self.data.dim().0
    }

    pub fn channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn hw(&self) -> (usize, usize) {
        let (_, _, h, w) = self.data.dim();
        (h, w)
    }

    pub fn to_tensor(&self, device: &Device) -> Result<Tensor> {
        let (b, c, h, w) = self.data.dim();
        let flat: Vec<f32> = self.data.iter().copied().collect();
        Ok(Tensor::from_vec(flat, (b, c, h, w), device)?)
    }
}

/// Per-pixel integer class labels in `[batch, height, width]` layout.
///
/// Values are either `< num_classes` or [`IGNORE_LABEL`].
#[derive(Debug, Clone)]
pub struct LabelMap {
    pub data: Array3<u32>,
    pub num_classes: usize,
}

impl LabelMap {
    pub fn new(data: Array3<u32>, num_classes: usize) -> Result<Self> {
        if let Some(&bad) = data
            .iter()
            .find(|&&v| v != IGNORE_LABEL && v as usize >= num_classes)
        {
            return Err(Error::InvalidTensor {
                name: "labels".into(),
                reason: format!("label {bad} >= num_classes {num_classes}"),
            });
        }
        Ok(Self { data, num_classes })
    }

    pub fn hw(&self) -> (usize, usize) {
        let (_, h, w) = self.data.dim();
        (h, w)
    }

    pub fn to_tensor(&self, device: &Device) -> Result<Tensor> {
        let (b, h, w) = self.data.dim();
        let flat: Vec<u32> = self.data.iter().copied().collect();
        Ok(Tensor::from_vec(flat, (b, h, w), device)?)
    }
}

/// One level of a feature pyramid.
#[derive(Debug, Clone)]
pub struct PyramidLevel {
    pub feat: Tensor,
    pub stride: usize,
}

/// Multi-resolution encoder output at strides {4, 8, 16, 32}.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub levels: Vec<PyramidLevel>,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<PyramidLevel>, input_hw: (usize, usize)) -> Result<Self> {
        if levels.len() != PYRAMID_STRIDES.len() {
            return Err(Error::InvalidTensor {
                name: "pyramid".into(),
                reason: format!("expected 4 levels, got {}", levels.len()),
            });
        }
        for (level, &stride) in levels.iter().zip(PYRAMID_STRIDES.iter()) {
            if level.stride != stride {
                return Err(Error::InvalidTensor {
                    name: "pyramid".into(),
                    reason: format!("expected stride {stride}, got {}", level.stride),
                });
            }
            let dims = level.feat.dims();
            let (eh, ew) = (
                input_hw.0.div_ceil(stride),
                input_hw.1.div_ceil(stride),
            );
            if dims.len() != 4 || dims[2] != eh || dims[3] != ew {
                return Err(Error::ShapeMismatch {
                    name: format!("pyramid level stride {stride}"),
                    expected: vec![dims[0], dims[1], eh, ew],
                    got: dims.to_vec(),
                });
            }
        }
        Ok(Self { levels })
    }

    pub fn strides(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.stride).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn image_rejects_nan() {
        let mut a = Array4::<f32>::zeros((1, 3, 4, 4));
        a[[0, 0, 0, 0]] = f32::NAN;
        assert!(ImageTensor::new(a).is_err());
    }

    #[test]
    fn label_rejects_out_of_range() {
        let mut a = Array3::<u32>::zeros((1, 2, 2));
        a[[0, 0, 0]] = 6;
        assert!(LabelMap::new(a.clone(), 6).is_err());
        a[[0, 0, 0]] = IGNORE_LABEL;
        assert!(LabelMap::new(a, 6).is_ok());
    }

    #[test]
    fn pyramid_checks_strides_and_shapes() {
        let dev = Device::Cpu;
        let mk = |h: usize, w: usize| PyramidLevel {
            feat: Tensor::zeros((1, 2, h, w), candle_core::DType::F32, &dev).unwrap(),
            stride: 0,
        };
        let mut levels: Vec<PyramidLevel> = [(4usize, 16usize), (8, 8), (16, 4), (32, 2)]
            .iter()
            .map(|&(s, hw)| {
                let mut l = mk(hw, hw);
                l.stride = s;
                l
            })
            .collect();
        assert!(FeaturePyramid::new(levels.clone(), (64, 64)).is_ok());
        levels[1].stride = 7;
        assert!(FeaturePyramid::new(levels, (64, 64)).is_err());
    }
}
