//! Complementary blockwise feature masking.
//!
//! Masks are sampled once per step on a coarse block grid over the input
//! image, then projected to every pyramid level so that the masked spatial
//! regions align across resolutions. RGB features are multiplied by the
//! mask, depth features by its complement, which forces the decoder to pull
//! the missing information from the other modality.

use candle_core::Tensor;
use ndarray::Array3;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::types::{FeaturePyramid, PyramidLevel};

/// Binary keep/drop decisions on the base block grid.
///
/// `blocks[b, u, v] == 1.0` keeps the RGB features of block `(u, v)` in
/// batch element `b`; `0.0` drops them.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskGrid {
    pub blocks: Array3<f32>,
    pub block_size_px: usize,
    pub input_hw: (usize, usize),
}

impl MaskGrid {
    pub fn batch(&self) -> usize {
        self.blocks.dim().0
    }

    pub fn grid_hw(&self) -> (usize, usize) {
        let (_, gh, gw) = self.blocks.dim();
        (gh, gw)
    }

    /// Fraction of kept blocks.
    pub fn kept_fraction(&self) -> f64 {
        let total = self.blocks.len() as f64;
        let kept: f64 = self.blocks.iter().map(|&v| v as f64).sum();
        kept / total
    }
}

/// Sample a block grid where each block is kept with probability
/// `1 - ratio`: block = [gamma > ratio], gamma ~ Uniform(0, 1).
pub fn sample_mask(
    batch: usize,
    input_hw: (usize, usize),
    block_size_px: usize,
    ratio: f64,
    rng: &mut StreamRng,
) -> MaskGrid {
    assert!(block_size_px >= 1, "block_size_px must be >= 1");
    assert!((0.0..=1.0).contains(&ratio), "ratio must be in [0, 1]");
    let gh = input_hw.0.div_ceil(block_size_px);
    let gw = input_hw.1.div_ceil(block_size_px);
    let mut blocks = Array3::<f32>::zeros((batch, gh, gw));
    for v in blocks.iter_mut() {
        let gamma: f64 = rng.gen();
        *v = if gamma > ratio { 1.0 } else { 0.0 };
    }
    MaskGrid {
        blocks,
        block_size_px,
        input_hw,
    }
}

/// Elementwise `1 - blocks`.
pub fn complement(mask: &MaskGrid) -> MaskGrid {
    MaskGrid {
        blocks: mask.blocks.mapv(|v| 1.0 - v),
        block_size_px: mask.block_size_px,
        input_hw: mask.input_hw,
    }
}

/// Linear masking-ratio schedule over training iterations.
#[derive(Debug, Clone, Copy)]
pub struct MaskSchedule {
    pub ratio_start: f64,
    pub ratio_end: f64,
    pub total_iters: usize,
}

impl MaskSchedule {
    pub fn new(ratio_start: f64, ratio_end: f64, total_iters: usize) -> Self {
        Self {
            ratio_start,
            ratio_end,
            total_iters,
        }
    }

    /// Ratio at iteration `t`; exact at both endpoints.
    pub fn ratio_at(&self, t: usize) -> Result<f64> {
        if t > self.total_iters {
            return Err(Error::IterOutOfRange {
                t,
                total: self.total_iters,
            });
        }
        let f = t as f64 / self.total_iters.max(1) as f64;
        Ok(self.ratio_start * (1.0 - f) + self.ratio_end * f)
    }
}

/// Project the grid to one pyramid level: each feature cell inherits the
/// value of the base block covering its center pixel.
///
/// When the block size is smaller than the level stride, consistent masking
/// across scales is impossible and masking at that level is omitted (the
/// projection is all ones).
pub fn project_mask(mask: &MaskGrid, level_stride: usize, level_hw: (usize, usize)) -> Array3<f32> {
    let batch = mask.batch();
    let (lh, lw) = level_hw;
    if mask.block_size_px < level_stride {
        return Array3::<f32>::ones((batch, lh, lw));
    }
    let (gh, gw) = mask.grid_hw();
    let (ih, iw) = mask.input_hw;
    let mut out = Array3::<f32>::zeros((batch, lh, lw));
    for b in 0..batch {
        for i in 0..lh {
            let cy = (i * level_stride + level_stride / 2).min(ih.saturating_sub(1));
            let u = (cy / mask.block_size_px).min(gh - 1);
            for j in 0..lw {
                let cx = (j * level_stride + level_stride / 2).min(iw.saturating_sub(1));
                let v = (cx / mask.block_size_px).min(gw - 1);
                out[[b, i, j]] = mask.blocks[[b, u, v]];
            }
        }
    }
    out
}

fn level_mask_tensor(
    mask: &MaskGrid,
    level: &PyramidLevel,
    like: &Tensor,
) -> Result<Tensor> {
    let dims = level.feat.dims();
    let (b, h, w) = (dims[0], dims[2], dims[3]);
    if b != mask.batch() {
        return Err(Error::ShapeMismatch {
            name: "mask batch".into(),
            expected: vec![b],
            got: vec![mask.batch()],
        });
    }
    let proj = project_mask(mask, level.stride, (h, w));
    let flat: Vec<f32> = proj.iter().copied().collect();
    let t = Tensor::from_vec(flat, (b, 1, h, w), like.device())?.to_dtype(like.dtype())?;
    Ok(t)
}

/// Multiply RGB features by the projected mask and depth features by the
/// projected complement, at every level of both pyramids.
pub fn apply_complementary(
    f_rgb: &FeaturePyramid,
    f_depth: &FeaturePyramid,
    mask: &MaskGrid,
) -> Result<(FeaturePyramid, FeaturePyramid)> {
    let comp = complement(mask);
    let masked_rgb = apply_mask(f_rgb, mask)?;
    let masked_depth = apply_mask(f_depth, &comp)?;
    Ok((masked_rgb, masked_depth))
}

/// Multiply every level of a pyramid by the projected mask.
pub fn apply_mask(pyr: &FeaturePyramid, mask: &MaskGrid) -> Result<FeaturePyramid> {
    let mut levels = Vec::with_capacity(pyr.levels.len());
    for level in &pyr.levels {
        let m = level_mask_tensor(mask, level, &level.feat)?;
        levels.push(PyramidLevel {
            feat: level.feat.broadcast_mul(&m)?,
            stride: level.stride,
        });
    }
    Ok(FeaturePyramid { levels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use candle_core::{DType, Device};
    use ndarray::Array3;

    #[test]
    fn ratio_zero_keeps_all_and_one_drops_all() {
        let mut rng = seeded_rng(0, "mask");
        let m0 = sample_mask(2, (512, 512), 64, 0.0, &mut rng);
        assert!(m0.blocks.iter().all(|&v| v == 1.0));
        let m1 = sample_mask(2, (512, 512), 64, 1.0, &mut rng);
        assert!(m1.blocks.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kept_fraction_statistics() {
        // 512x512, block 64 -> 8x8 grid; Monte Carlo over 10_000 draws.
        let mut rng = seeded_rng(0, "mask");
        let mut kept = 0u64;
        let mut total = 0u64;
        for _ in 0..10_000 {
            let m = sample_mask(1, (512, 512), 64, 0.5, &mut rng);
            kept += m.blocks.iter().filter(|&&v| v == 1.0).count() as u64;
            total += m.blocks.len() as u64;
        }
        let frac = kept as f64 / total as f64;
        assert!((frac - 0.5).abs() < 0.02, "kept fraction {frac}");
    }

    #[test]
    fn grid_uses_ceiling_division() {
        let mut rng = seeded_rng(0, "mask");
        let m = sample_mask(1, (130, 70), 64, 0.5, &mut rng);
        assert_eq!(m.grid_hw(), (3, 2));
    }

    #[test]
    fn complement_is_involutive_and_partitions() {
        let mut rng = seeded_rng(1, "mask");
        let m = sample_mask(1, (512, 512), 64, 0.5, &mut rng);
        let c = complement(&m);
        assert_eq!(complement(&c), m);
        for (a, b) in m.blocks.iter().zip(c.blocks.iter()) {
            assert_eq!(a + b, 1.0);
            assert_eq!(*b, 1.0 - *a);
        }
        let ones = MaskGrid {
            blocks: Array3::ones((1, 8, 8)),
            block_size_px: 64,
            input_hw: (512, 512),
        };
        assert!(complement(&ones).blocks.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let s = MaskSchedule::new(0.7, 0.3, 1000);
        assert_eq!(s.ratio_at(0).unwrap(), 0.7);
        assert_eq!(s.ratio_at(1000).unwrap(), 0.3);
        let mid = s.ratio_at(500).unwrap();
        assert!((mid - 0.5).abs() < 1e-12);
        assert!(s.ratio_at(1001).is_err());
    }

    #[test]
    fn projection_tiles_blocks_uniformly() {
        // 256x256 input, block 64 -> 4x4 grid; stride 4 -> 64x64 features
        // with 16x16 feature cells per block.
        let mut blocks = Array3::<f32>::zeros((1, 4, 4));
        blocks[[0, 1, 2]] = 1.0;
        let m = MaskGrid {
            blocks,
            block_size_px: 64,
            input_hw: (256, 256),
        };
        let p = project_mask(&m, 4, (64, 64));
        for i in 0..64 {
            for j in 0..64 {
                let expect = if (16..32).contains(&i) && (32..48).contains(&j) {
                    1.0
                } else {
                    0.0
                };
                assert_eq!(p[[0, i, j]], expect, "({i},{j})");
            }
        }
        // block equal to the stride: projection reproduces the grid itself.
        let mut rng = seeded_rng(2, "mask");
        let m32 = sample_mask(1, (256, 256), 32, 0.5, &mut rng);
        let p32 = project_mask(&m32, 32, (8, 8));
        assert_eq!(p32, m32.blocks);
    }

    #[test]
    fn bottleneck_masking_is_omitted_when_block_smaller_than_stride() {
        let mut rng = seeded_rng(3, "mask");
        let m = sample_mask(2, (256, 256), 16, 0.9, &mut rng);
        let p = project_mask(&m, 32, (8, 8));
        assert!(p.iter().all(|&v| v == 1.0));
        // the finer levels are still masked
        let p16 = project_mask(&m, 16, (16, 16));
        assert_eq!(p16, m.blocks);
    }

    fn toy_pyramid(input: usize, phase: usize) -> FeaturePyramid {
        let dev = Device::Cpu;
        let mut levels = Vec::new();
        for stride in [4usize, 8, 16, 32] {
            let h = input / stride;
            let n = 2 * 3 * h * h;
            let vals: Vec<f32> = (0..n).map(|k| ((k + phase) as f32 * 0.37).sin()).collect();
            levels.push(PyramidLevel {
                feat: Tensor::from_vec(vals, (2, 3, h, h), &dev).unwrap(),
                stride,
            });
        }
        FeaturePyramid::new(levels, (input, input)).unwrap()
    }

    fn max_abs_diff(a: &Tensor, b: &Tensor) -> f32 {
        a.sub(b)
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f32>()
            .unwrap()
    }

    #[test]
    fn apply_complementary_partitions_features() {
        let rgb = toy_pyramid(64, 0);
        let depth = toy_pyramid(64, 11);
        let mut rng = seeded_rng(4, "mask");
        let mask = sample_mask(2, (64, 64), 32, 0.5, &mut rng);

        let (m_rgb, m_depth) = apply_complementary(&rgb, &depth, &mask).unwrap();
        let comp = complement(&mask);
        let rgb_rest = apply_mask(&rgb, &comp).unwrap();
        for i in 0..4 {
            // masked_rgb + rgb (.) complement reconstructs rgb exactly
            let sum = m_rgb.levels[i]
                .feat
                .add(&rgb_rest.levels[i].feat)
                .unwrap();
            assert_eq!(max_abs_diff(&sum, &rgb.levels[i].feat), 0.0, "level {i}");
            // depth is masked with the complement: where rgb kept, depth zero
            let prod = m_rgb.levels[i]
                .feat
                .mul(&m_depth.levels[i].feat)
                .unwrap()
                .abs()
                .unwrap();
            // cellwise product of masks is zero, so features never overlap
            // except where a channel value was already zero
            let proj = project_mask(&mask, rgb.levels[i].stride, {
                let d = rgb.levels[i].feat.dims();
                (d[2], d[3])
            });
            let projc = project_mask(&comp, rgb.levels[i].stride, {
                let d = rgb.levels[i].feat.dims();
                (d[2], d[3])
            });
            for (a, b) in proj.iter().zip(projc.iter()) {
                assert_eq!(a + b, 1.0);
            }
            let _ = prod;
        }

        // all-ones mask: rgb untouched, depth fully zeroed
        let ones = MaskGrid {
            blocks: Array3::ones((2, 2, 2)),
            block_size_px: 32,
            input_hw: (64, 64),
        };
        let (r2, d2) = apply_complementary(&rgb, &depth, &ones).unwrap();
        for i in 0..4 {
            assert_eq!(max_abs_diff(&r2.levels[i].feat, &rgb.levels[i].feat), 0.0);
            assert_eq!(
                d2.levels[i].feat.abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn apply_rejects_batch_mismatch() {
        let rgb = toy_pyramid(64, 0);
        let depth = toy_pyramid(64, 5);
        let mask = MaskGrid {
            blocks: Array3::ones((3, 1, 1)),
            block_size_px: 64,
            input_hw: (64, 64),
        };
        assert!(apply_complementary(&rgb, &depth, &mask).is_err());
    }

    #[test]
    fn cross_level_alignment_property() {
        // nearest-upsampling a coarser projected mask reproduces the finer
        // one when the block size covers both strides
        let mut rng = seeded_rng(9, "mask");
        for &(input, block) in &[(128usize, 64usize), (256, 64), (96, 32), (128, 32)] {
            let m = sample_mask(1, (input, input), block, 0.5, &mut rng);
            for w in [(4usize, 8usize), (8, 16), (16, 32)] {
                let (fine_s, coarse_s) = w;
                if block < coarse_s {
                    continue;
                }
                let fh = input / fine_s;
                let ch = input / coarse_s;
                let fine = project_mask(&m, fine_s, (fh, fh));
                let coarse = project_mask(&m, coarse_s, (ch, ch));
                for i in 0..fh {
                    for j in 0..fh {
                        let up = coarse[[0, (i * ch) / fh, (j * ch) / fh]];
                        assert_eq!(fine[[0, i, j]], up, "input {input} block {block} strides {w:?} at ({i},{j})");
                    }
                }
            }
        }
    }
}
