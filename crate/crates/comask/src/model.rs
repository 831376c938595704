//! The dual-encoder segmentation model: a (typically frozen, pretrained)
//! RGB encoder, a light-weight trainable depth encoder, the fusion module,
//! and a multi-level decode head producing per-pixel class logits.

use candle_core::{DType, Device, Tensor};

use crate::checkpoint::Checkpoint;
use crate::config::{FusionMode, RunConfig};
use crate::encoder::{EncoderSpec, HierEncoder};
use crate::error::{Error, Result};
use crate::fusion::FusionModule;
use crate::masking::{apply_mask, complement, MaskGrid};
use crate::nn::{resize_bilinear, Conv2d, Norm2d};
use crate::params::{ParamKind, ParamRegistry};
use crate::rng::{seeded_rng, StreamRng};
use crate::types::FeaturePyramid;

/// Lightweight all-level decode head: per-level 1x1 projection to a common
/// width, bilinear upsampling to stride 4, concatenation, 1x1 classifier.
pub struct DecodeHead {
    projections: Vec<(Conv2d, Norm2d)>,
    classifier: Conv2d,
}

impl DecodeHead {
    pub fn new(
        reg: &mut ParamRegistry,
        prefix: &str,
        widths: &[usize; 4],
        common: usize,
        num_classes: usize,
        norm_momentum: f64,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        let mut projections = Vec::with_capacity(4);
        for (i, &c) in widths.iter().enumerate() {
            let conv = Conv2d::new(reg, &format!("{prefix}.proj{i}"), c, common, 1, 1, 0, false, rng)?;
            let norm = Norm2d::new(reg, &format!("{prefix}.proj{i}_norm"), common, norm_momentum, rng)?;
            projections.push((conv, norm));
        }
        let classifier = Conv2d::new(
            reg,
            &format!("{prefix}.classifier"),
            common * 4,
            num_classes,
            1,
            1,
            0,
            false,
            rng,
        )?;
        Ok(Self {
            projections,
            classifier,
        })
    }

    /// Logits at stride-4 resolution.
    pub fn forward(&self, pyr: &FeaturePyramid, train: bool, tracked: bool) -> Result<Tensor> {
        let dims0 = pyr.levels[0].feat.dims();
        let (h4, w4) = (dims0[2], dims0[3]);
        let mut feats = Vec::with_capacity(4);
        for ((conv, norm), level) in self.projections.iter().zip(pyr.levels.iter()) {
            let y = conv.forward(&level.feat, tracked)?;
            let y = norm.forward(&y, train, tracked)?.relu()?;
            feats.push(resize_bilinear(&y, h4, w4)?);
        }
        let cat = Tensor::cat(&feats, 1)?;
        self.classifier.forward(&cat, tracked)
    }
}

/// Outcome of loading external RGB weights.
#[derive(Debug, Default)]
pub struct LoadReport {
    pub loaded: Vec<String>,
    pub missing: Vec<String>,
    pub unexpected: Vec<String>,
}

/// The full segmentation network plus its parameter registry.
pub struct SegModel {
    pub registry: ParamRegistry,
    rgb_encoder: HierEncoder,
    depth_encoder: Option<HierEncoder>,
    fusion: Option<FusionModule>,
    head: DecodeHead,
    num_classes: usize,
}

impl SegModel {
    /// Build a model from the run configuration. `init_seed` drives
    /// parameter initialization (stream `"init"`).
    pub fn new(cfg: &RunConfig, device: &Device, dtype: DType, init_seed: u64) -> Result<Self> {
        let mut registry = ParamRegistry::new(device.clone(), dtype);
        let mut rng = seeded_rng(init_seed, "init");

        let rgb_spec = EncoderSpec {
            in_channels: 3,
            widths: cfg.enc_widths,
            stage_depths: cfg.rgb_stage_depths,
            trainable: !cfg.freeze_rgb,
        };
        let rgb_encoder =
            HierEncoder::new(&mut registry, "rgb_encoder", &rgb_spec, cfg.norm_momentum, &mut rng)?;

        let (depth_encoder, fusion) = if cfg.fusion_mode == FusionMode::None {
            (None, None)
        } else {
            let depth_spec = EncoderSpec {
                in_channels: 1,
                widths: cfg.enc_widths,
                stage_depths: cfg.depth_stage_depths,
                trainable: true,
            };
            let enc = HierEncoder::new(
                &mut registry,
                "depth_encoder",
                &depth_spec,
                cfg.norm_momentum,
                &mut rng,
            )?;
            let fusion = FusionModule::new(
                &mut registry,
                "fusion",
                &cfg.enc_widths,
                cfg.fusion_mode,
                cfg.pool_factors_train,
                cfg.pool_factors_eval,
                cfg.norm_momentum,
                &mut rng,
            )?;
            (Some(enc), Some(fusion))
        };

        let head = DecodeHead::new(
            &mut registry,
            "head",
            &cfg.enc_widths,
            cfg.head_width,
            cfg.num_classes,
            cfg.norm_momentum,
            &mut rng,
        )?;

        Ok(Self {
            registry,
            rgb_encoder,
            depth_encoder,
            fusion,
            head,
            num_classes: cfg.num_classes,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn has_depth_path(&self) -> bool {
        self.depth_encoder.is_some()
    }

    pub fn fusion(&self) -> Option<&FusionModule> {
        self.fusion.as_ref()
    }

    pub fn rgb_frozen(&self) -> bool {
        !self.rgb_encoder.trainable
    }

    pub fn set_rgb_frozen(&mut self, frozen: bool) {
        self.rgb_encoder.trainable = !frozen;
    }

    /// Forward pass with complementary masking when `mask` is given.
    ///
    /// Masking is a training-only operation; passing a mask in eval mode is
    /// an error.
    pub fn forward(
        &self,
        rgb: &Tensor,
        depth: Option<&Tensor>,
        mask: Option<&MaskGrid>,
        train: bool,
    ) -> Result<Tensor> {
        match mask {
            Some(m) => {
                let comp = complement(m);
                self.forward_with_masks(rgb, depth, Some(m), Some(&comp), train)
            }
            None => self.forward_with_masks(rgb, depth, None, None, train),
        }
    }

    /// Forward pass with independent per-modality masks (used for the
    /// masking-strategy ablations; `forward` wires the complementary pair).
    pub fn forward_with_masks(
        &self,
        rgb: &Tensor,
        depth: Option<&Tensor>,
        rgb_mask: Option<&MaskGrid>,
        depth_mask: Option<&MaskGrid>,
        train: bool,
    ) -> Result<Tensor> {
        if !train && (rgb_mask.is_some() || depth_mask.is_some()) {
            return Err(Error::MaskInEval);
        }
        let (_, _, h, w) = rgb.dims4()?;
        let mut rgb_pyr = self.rgb_encoder.forward(rgb, train)?;
        if let Some(m) = rgb_mask {
            rgb_pyr = apply_mask(&rgb_pyr, m)?;
        }

        let feed = match (&self.depth_encoder, &self.fusion, depth) {
            (Some(enc), Some(fusion), Some(d)) => {
                let mut depth_pyr = enc.forward(d, train)?;
                if let Some(m) = depth_mask {
                    depth_pyr = apply_mask(&depth_pyr, m)?;
                }
                fusion.forward(&rgb_pyr, &depth_pyr, train)?
            }
            (Some(_), Some(_), None) => {
                return Err(Error::Config(
                    "model has a depth path but no depth input was given".into(),
                ))
            }
            _ => rgb_pyr,
        };

        let logits4 = self.head.forward(&feed, train, train)?;
        resize_bilinear(&logits4, h, w)
    }

    /// Names of all parameters that the optimizer may update, honoring the
    /// frozen RGB encoder.
    pub fn trainable_parameters(&self) -> Vec<(String, candle_core::Var)> {
        let mut prefixes: Vec<&str> = vec!["head."];
        if self.depth_encoder.is_some() {
            prefixes.push("depth_encoder.");
            prefixes.push("fusion.");
        }
        if self.rgb_encoder.trainable {
            prefixes.push("rgb_encoder.");
        }
        self.registry.params_with_prefix(&prefixes)
    }

    /// Load matching tensors (by name and shape) from a checkpoint into this
    /// model, then freeze the RGB encoder.
    ///
    /// Missing entries are model tensors absent from the checkpoint;
    /// unexpected entries are checkpoint tensors unknown to the model. In
    /// strict mode any missing/unexpected/mismatched tensor is an error.
    pub fn load_rgb_weights(&mut self, ckpt: &Checkpoint, strict: bool) -> Result<LoadReport> {
        let mut report = LoadReport::default();
        let model_names: Vec<(String, candle_core::Var)> = self.registry.sorted_entries();
        for (name, var) in &model_names {
            match ckpt.tensors.get(name) {
                Some(stored) => {
                    if stored.dims.as_slice() != var.dims() {
                        if strict {
                            return Err(Error::ShapeMismatch {
                                name: name.clone(),
                                expected: var.dims().to_vec(),
                                got: stored.dims.clone(),
                            });
                        }
                        report.missing.push(name.clone());
                        continue;
                    }
                    let t = stored.to_tensor(self.registry.device())?;
                    self.registry.set(name, &t)?;
                    report.loaded.push(name.clone());
                }
                None => report.missing.push(name.clone()),
            }
        }
        for name in ckpt.tensors.keys() {
            if !self.registry.contains(name) {
                report.unexpected.push(name.clone());
            }
        }
        if strict && (!report.missing.is_empty() || !report.unexpected.is_empty()) {
            return Err(Error::Checkpoint(format!(
                "strict load failed: missing {:?}, unexpected {:?}",
                report.missing, report.unexpected
            )));
        }
        self.set_rgb_frozen(true);
        Ok(report)
    }

    /// Count of parameters (not buffers) under a prefix.
    pub fn param_count(&self, prefix: &str) -> usize {
        self.registry
            .params_with_prefix(&[prefix])
            .iter()
            .map(|(_, v)| v.dims().iter().product::<usize>())
            .sum()
    }

    /// Snapshot of every parameter value under a prefix, for exact-equality
    /// assertions in tests.
    pub fn dump_prefix(&self, prefix: &str) -> Vec<(String, Vec<f32>)> {
        self.registry
            .sorted_entries()
            .into_iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(n, v)| {
                let vals = v
                    .as_tensor()
                    .flatten_all()
                    .unwrap()
                    .to_dtype(DType::F32)
                    .unwrap()
                    .to_vec1::<f32>()
                    .unwrap();
                (n, vals)
            })
            .collect()
    }

    pub fn buffer_names(&self) -> Vec<String> {
        self.registry
            .sorted_entries()
            .into_iter()
            .filter(|(n, _)| self.registry.kind(n) == Some(ParamKind::Buffer))
            .map(|(n, _)| n)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MaskingMode;
    use crate::masking::sample_mask;

    fn small_cfg(fusion_mode: FusionMode) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.input_size = 64;
        cfg.enc_widths = [4, 8, 12, 16];
        cfg.head_width = 8;
        cfg.num_classes = 5;
        cfg.fusion_mode = fusion_mode;
        cfg.masking_mode = MaskingMode::Complementary;
        cfg
    }

    fn rand_input(b: usize, c: usize, s: usize, seed: u64) -> Tensor {
        use rand::Rng;
        let mut rng = seeded_rng(seed, "data");
        let v: Vec<f32> = (0..b * c * s * s).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::from_vec(v, (b, c, s, s), &Device::Cpu).unwrap()
    }

    #[test]
    fn logits_shape_contract() {
        let cfg = small_cfg(FusionMode::LocalGlobal);
        let model = SegModel::new(&cfg, &Device::Cpu, DType::F32, 0).unwrap();
        let rgb = rand_input(2, 3, 64, 1);
        let depth = rand_input(2, 1, 64, 2);
        let logits = model.forward(&rgb, Some(&depth), None, false).unwrap();
        assert_eq!(logits.dims(), &[2, 5, 64, 64]);
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let cfg = small_cfg(FusionMode::LocalGlobal);
        let model = SegModel::new(&cfg, &Device::Cpu, DType::F32, 0).unwrap();
        let rgb = rand_input(1, 3, 64, 3);
        let depth = rand_input(1, 1, 64, 4);
        let a = model.forward(&rgb, Some(&depth), None, false).unwrap();
        let b = model.forward(&rgb, Some(&depth), None, false).unwrap();
        let d = a.sub(&b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(d < 1e-6);
    }

    #[test]
    fn mask_in_eval_mode_is_rejected() {
        let cfg = small_cfg(FusionMode::LocalGlobal);
        let model = SegModel::new(&cfg, &Device::Cpu, DType::F32, 0).unwrap();
        let rgb = rand_input(1, 3, 64, 5);
        let depth = rand_input(1, 1, 64, 6);
        let mut rng = seeded_rng(0, "mask");
        let mask = sample_mask(1, (64, 64), 32, 0.5, &mut rng);
        match model.forward(&rgb, Some(&depth), Some(&mask), false) {
            Err(Error::MaskInEval) => {}
            other => panic!("expected MaskInEval, got {other:?}"),
        }
    }

    #[test]
    fn zero_fusion_matches_rgb_only_model() {
        // fusion's fuse convolutions are zero-initialized, so a fresh full
        // model must produce the same logits as an RGB-only model sharing
        // the rgb encoder and head weights
        let cfg = small_cfg(FusionMode::LocalGlobal);
        let full = SegModel::new(&cfg, &Device::Cpu, DType::F32, 7).unwrap();

        let mut rgb_cfg = cfg.clone();
        rgb_cfg.fusion_mode = FusionMode::None;
        let mut rgb_only = SegModel::new(&rgb_cfg, &Device::Cpu, DType::F32, 123).unwrap();
        // copy rgb encoder + head from the full model
        for (name, var) in full.registry.sorted_entries() {
            if name.starts_with("rgb_encoder.") || name.starts_with("head.") {
                rgb_only.registry.set(&name, var.as_tensor()).unwrap();
            }
        }
        let rgb = rand_input(2, 3, 64, 8);
        let depth = rand_input(2, 1, 64, 9);
        let a = full.forward(&rgb, Some(&depth), None, false).unwrap();
        let b = rgb_only.forward(&rgb, None, None, false).unwrap();
        let d = a.sub(&b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(d < 1e-6, "max diff {d}");
    }

    #[test]
    fn trainable_parameters_exclude_frozen_rgb() {
        let mut cfg = small_cfg(FusionMode::LocalGlobal);
        cfg.freeze_rgb = true;
        let model = SegModel::new(&cfg, &Device::Cpu, DType::F32, 0).unwrap();
        let names: Vec<String> = model
            .trainable_parameters()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        assert!(names.iter().all(|n| !n.starts_with("rgb_encoder.")));
        assert!(names.iter().any(|n| n.starts_with("depth_encoder.")));
        assert!(names.iter().any(|n| n.starts_with("fusion.")));
        assert!(names.iter().any(|n| n.starts_with("head.")));
        // buffers are never trainable
        assert!(names.iter().all(|n| !n.ends_with("running_mean")));

        let mut cfg2 = small_cfg(FusionMode::LocalGlobal);
        cfg2.freeze_rgb = false;
        let model2 = SegModel::new(&cfg2, &Device::Cpu, DType::F32, 0).unwrap();
        let names2: Vec<String> = model2
            .trainable_parameters()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        assert!(names2.iter().any(|n| n.starts_with("rgb_encoder.")));
        assert!(names2.len() > names.len());
    }

    #[test]
    fn load_rgb_weights_reports_and_freezes() {
        let mut cfg = small_cfg(FusionMode::None);
        cfg.freeze_rgb = false;
        let src = SegModel::new(&cfg, &Device::Cpu, DType::F32, 1).unwrap();
        let ckpt = Checkpoint::from_registry(&src.registry, &cfg, 100).unwrap();

        // full model: depth/fusion params are missing from the checkpoint
        let full_cfg = small_cfg(FusionMode::LocalGlobal);
        let mut full = SegModel::new(&full_cfg, &Device::Cpu, DType::F32, 2).unwrap();
        assert!(!full.rgb_frozen() || full_cfg.freeze_rgb);
        let report = full.load_rgb_weights(&ckpt, false).unwrap();
        assert!(report.loaded.iter().any(|n| n.starts_with("rgb_encoder.")));
        assert!(report.loaded.iter().any(|n| n.starts_with("head.")));
        assert!(report.missing.iter().all(|n| n.starts_with("depth_encoder.")
            || n.starts_with("fusion.")));
        assert!(report.unexpected.is_empty());
        assert!(full.rgb_frozen());

        // strict load into an identical architecture succeeds with empty lists
        let mut same = SegModel::new(&cfg, &Device::Cpu, DType::F32, 3).unwrap();
        let report = same.load_rgb_weights(&ckpt, true).unwrap();
        assert!(report.missing.is_empty());
        assert!(report.unexpected.is_empty());

        // shape mismatch in strict mode names the tensor
        let mut wide_cfg = small_cfg(FusionMode::None);
        wide_cfg.head_width = 16;
        let mut wide = SegModel::new(&wide_cfg, &Device::Cpu, DType::F32, 4).unwrap();
        match wide.load_rgb_weights(&ckpt, true) {
            Err(Error::ShapeMismatch { name, .. }) => {
                assert!(name.starts_with("head."), "{name}")
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }
}
