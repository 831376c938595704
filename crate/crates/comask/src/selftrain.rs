//! Mean-teacher self-training across the domain gap: EMA teacher updates,
//! pseudo-labeling with a confidence weight, cross-domain class mixing, and
//! the per-iteration optimization step combining unmasked and masked
//! forward passes.

use candle_core::{DType, Device, Tensor};
use ndarray::{Array2, Array3, Array4, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::augment::{strong_augment, AugmentParams};
use crate::checkpoint::Checkpoint;
use crate::config::{MaskingMode, RunConfig};
use crate::data::DatasetAdapter;
use crate::error::{Error, Result};
use crate::masking::{complement, sample_mask, MaskGrid, MaskSchedule};
use crate::metrics::{BoundaryConfig, MetricReport};
use crate::model::SegModel;
use crate::nn::cross_entropy_ignore;
use crate::optim::{AdamW, LrSchedule};
use crate::params::ParamRegistry;
use crate::rng::{seeded_rng, StreamRng};
use crate::types::{ImageTensor, LabelMap, IGNORE_LABEL};

/// Teacher = alpha * teacher + (1 - alpha) * student, exactly, for every
/// registry entry (parameters and buffers).
pub fn ema_update(teacher: &ParamRegistry, student: &ParamRegistry, alpha: f64) -> Result<()> {
    let t_entries = teacher.sorted_entries();
    let s_entries = student.sorted_entries();
    if t_entries.len() != s_entries.len() {
        return Err(Error::Config(format!(
            "teacher/student registries differ: {} vs {} entries",
            t_entries.len(),
            s_entries.len()
        )));
    }
    for ((tn, tv), (sn, sv)) in t_entries.iter().zip(s_entries.iter()) {
        if tn != sn {
            return Err(Error::Config(format!(
                "teacher/student parameter mismatch: `{tn}` vs `{sn}`"
            )));
        }
        if tv.dims() != sv.dims() {
            return Err(Error::ShapeMismatch {
                name: tn.clone(),
                expected: tv.dims().to_vec(),
                got: sv.dims().to_vec(),
            });
        }
        let new = ((tv.as_tensor().detach() * alpha)?
            + (sv.as_tensor().detach() * (1.0 - alpha))?)?;
        tv.set(&new)?;
    }
    Ok(())
}

/// Teacher prediction on a weakly-augmented target batch: per-pixel argmax
/// labels plus the fraction of pixels whose max softmax probability exceeds
/// `tau` (used as a scalar loss weight).
pub fn pseudo_label(
    teacher: &SegModel,
    rgb: &Tensor,
    depth: Option<&Tensor>,
    tau: f64,
) -> Result<(LabelMap, f64)> {
    let logits = teacher.forward(rgb, depth, None, false)?;
    let (b, _k, h, w) = logits.dims4()?;
    let probs = candle_nn::ops::softmax(&logits, 1)?;
    let maxp = probs.max(1)?;
    let labels = probs.argmax(1)?;
    let labels_v = labels.flatten_all()?.to_vec1::<u32>()?;
    let maxp_v = maxp.flatten_all()?.to_vec1::<f32>()?;
    let confident = maxp_v.iter().filter(|&&p| p as f64 > tau).count();
    let weight = confident as f64 / maxp_v.len() as f64;
    let arr = Array3::from_shape_vec((b, h, w), labels_v).expect("argmax shape");
    Ok((LabelMap::new(arr, teacher.num_classes())?, weight))
}

/// Classes present in one label map, ignoring the sentinel.
pub fn classes_present(labels: &Array2<u32>) -> Vec<u32> {
    let mut seen = std::collections::BTreeSet::new();
    for &v in labels.iter() {
        if v != IGNORE_LABEL {
            seen.insert(v);
        }
    }
    seen.into_iter().collect()
}

/// Composite source over target wherever the source label belongs to
/// `classes`. Operates on one batch element.
pub fn mix_with_classes(
    src_rgb: &Array3<f32>,
    src_depth: &Array3<f32>,
    src_labels: &Array2<u32>,
    tgt_rgb: &Array3<f32>,
    tgt_depth: &Array3<f32>,
    pseudo: &Array2<u32>,
    classes: &[u32],
) -> (Array3<f32>, Array3<f32>, Array2<u32>) {
    let (h, w) = src_labels.dim();
    let mut rgb = tgt_rgb.clone();
    let mut depth = tgt_depth.clone();
    let mut labels = pseudo.clone();
    for y in 0..h {
        for x in 0..w {
            let sl = src_labels[[y, x]];
            if classes.contains(&sl) {
                for c in 0..rgb.dim().0 {
                    rgb[[c, y, x]] = src_rgb[[c, y, x]];
                }
                depth[[0, y, x]] = src_depth[[0, y, x]];
                labels[[y, x]] = sl;
            }
        }
    }
    (rgb, depth, labels)
}

/// Cross-domain class mix: per batch element, paste a random half of the
/// classes present in the source labels onto the target image, compositing
/// RGB, depth, and labels alike.
#[allow(clippy::too_many_arguments)]
pub fn class_mix(
    src_rgb: &ImageTensor,
    src_depth: &ImageTensor,
    src_labels: &LabelMap,
    tgt_rgb: &ImageTensor,
    tgt_depth: &ImageTensor,
    pseudo: &LabelMap,
    rng: &mut StreamRng,
) -> Result<(ImageTensor, ImageTensor, LabelMap)> {
    let b = src_rgb.batch();
    let (h, w) = src_rgb.hw();
    let mut rgb = Array4::<f32>::zeros((b, 3, h, w));
    let mut depth = Array4::<f32>::zeros((b, 1, h, w));
    let mut labels = Array3::<u32>::zeros((b, h, w));
    for bi in 0..b {
        let sl = src_labels.data.index_axis(Axis(0), bi).to_owned();
        let present = classes_present(&sl);
        let k = present.len().div_ceil(2);
        let chosen: Vec<u32> = present
            .choose_multiple(rng, k)
            .copied()
            .collect();
        let (r, d, l) = mix_with_classes(
            &src_rgb.data.index_axis(Axis(0), bi).to_owned(),
            &src_depth.data.index_axis(Axis(0), bi).to_owned(),
            &sl,
            &tgt_rgb.data.index_axis(Axis(0), bi).to_owned(),
            &tgt_depth.data.index_axis(Axis(0), bi).to_owned(),
            &pseudo.data.index_axis(Axis(0), bi).to_owned(),
            &chosen,
        );
        rgb.index_axis_mut(Axis(0), bi).assign(&r);
        depth.index_axis_mut(Axis(0), bi).assign(&d);
        labels.index_axis_mut(Axis(0), bi).assign(&l);
    }
    Ok((
        ImageTensor::new(rgb)?,
        ImageTensor::new(depth)?,
        LabelMap::new(labels, src_labels.num_classes)?,
    ))
}

/// Per-step diagnostics, serialized to the JSONL metrics stream.
#[derive(Debug, Clone, Serialize)]
pub struct StepStats {
    pub iter: usize,
    pub loss_total: f64,
    pub loss_source: f64,
    pub loss_mixed: f64,
    pub loss_masked_source: f64,
    pub loss_masked_mixed: f64,
    pub conf_weight: f64,
    pub mask_ratio: f64,
    pub lr_depth: f64,
    pub lr_head: f64,
    pub lr_rgb: f64,
}

/// The training loop state.
pub struct Trainer {
    pub cfg: RunConfig,
    pub device: Device,
    pub student: SegModel,
    pub teacher: SegModel,
    optimizer: AdamW,
    mask_schedule: MaskSchedule,
    aug: AugmentParams,
    rng_data: StreamRng,
    rng_mix: StreamRng,
    rng_aug: StreamRng,
    rng_mask: StreamRng,
    source: DatasetAdapter,
    target: DatasetAdapter,
    pub iter: usize,
}

impl Trainer {
    pub fn new(cfg: &RunConfig, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let source = DatasetAdapter::open(&cfg.source_dir, "train", cfg.num_classes, None)?;
        let target = DatasetAdapter::open(&cfg.target_dir, "train", cfg.num_classes, None)?;
        if source.is_empty() || target.is_empty() {
            return Err(Error::Config(
                "source and target training splits must be non-empty".into(),
            ));
        }
        if !source.has_labels() {
            return Err(Error::Config("source split must be labeled".into()));
        }

        let mut student = SegModel::new(cfg, device, DType::F32, cfg.seed)?;
        if !cfg.rgb_init.is_empty() {
            let ckpt = Checkpoint::load(&cfg.rgb_init)?;
            student.load_rgb_weights(&ckpt, false)?;
        }

        // teacher starts as an exact copy of the student
        let teacher = SegModel::new(cfg, device, DType::F32, cfg.seed)?;
        for (name, var) in student.registry.sorted_entries() {
            teacher.registry.set(&name, var.as_tensor())?;
        }

        let schedule = |base: f64| LrSchedule {
            base_lr: base,
            warmup_iters: cfg.warmup_iters,
            poly_power: cfg.poly_power,
            total_iters: cfg.total_iters,
        };
        let mut groups = vec![
            (
                student.registry.params_with_prefix(&["depth_encoder."]),
                schedule(cfg.lr_depth),
            ),
            (
                student.registry.params_with_prefix(&["fusion.", "head."]),
                schedule(cfg.lr_head),
            ),
        ];
        if !student.rgb_frozen() {
            groups.push((
                student.registry.params_with_prefix(&["rgb_encoder."]),
                schedule(cfg.lr_rgb),
            ));
        }
        let optimizer = AdamW::new(groups, cfg.weight_decay)?;

        Ok(Self {
            mask_schedule: MaskSchedule::new(cfg.ratio_start, cfg.ratio_end, cfg.total_iters),
            aug: AugmentParams::from_config(cfg),
            rng_data: seeded_rng(cfg.seed, "data"),
            rng_mix: seeded_rng(cfg.seed, "mix"),
            rng_aug: seeded_rng(cfg.seed, "aug"),
            rng_mask: seeded_rng(cfg.seed, "mask"),
            cfg: cfg.clone(),
            device: device.clone(),
            student,
            teacher,
            optimizer,
            source,
            target,
            iter: 0,
        })
    }

    fn draw_indices(rng: &mut StreamRng, n: usize, batch: usize) -> Vec<usize> {
        (0..batch).map(|_| rng.gen_range(0..n)).collect()
    }

    fn masks_for_mode(&mut self, batch: usize, ratio: f64) -> (Option<MaskGrid>, Option<MaskGrid>) {
        let hw = (self.cfg.input_size, self.cfg.input_size);
        let block = self.cfg.block_size_px;
        match self.cfg.masking_mode {
            MaskingMode::Complementary => {
                let m = sample_mask(batch, hw, block, ratio, &mut self.rng_mask);
                let c = complement(&m);
                (Some(m), Some(c))
            }
            MaskingMode::Independent => {
                let m_rgb = sample_mask(batch, hw, block, ratio, &mut self.rng_mask);
                let m_depth = sample_mask(batch, hw, block, 1.0 - ratio, &mut self.rng_mask);
                (Some(m_rgb), Some(m_depth))
            }
            MaskingMode::RgbOnly => {
                let m = sample_mask(batch, hw, block, ratio, &mut self.rng_mask);
                (Some(m), None)
            }
            MaskingMode::None => (None, None),
        }
    }

    /// One optimization step; returns the per-term losses.
    pub fn step(&mut self) -> Result<StepStats> {
        let t = self.iter;
        let cfg = self.cfg.clone();
        let ratio = self.mask_schedule.ratio_at(t.min(cfg.total_iters))?;

        let src_idx = Self::draw_indices(&mut self.rng_data, self.source.len(), cfg.batch_size);
        let tgt_idx = Self::draw_indices(&mut self.rng_data, self.target.len(), cfg.batch_size);
        let (src_rgb, src_depth, src_labels) = self.source.load_batch(&src_idx)?;
        let src_labels = src_labels.ok_or_else(|| Error::Config("unlabeled source batch".into()))?;
        let (tgt_rgb, tgt_depth, _) = self.target.load_batch(&tgt_idx)?;

        // teacher pseudo-labels on the weak (un-augmented) target view
        let tgt_rgb_t = tgt_rgb.to_tensor(&self.device)?;
        let tgt_depth_t = tgt_depth.to_tensor(&self.device)?;
        let depth_arg = self.teacher.has_depth_path().then_some(&tgt_depth_t);
        let (pseudo, conf_weight) =
            pseudo_label(&self.teacher, &tgt_rgb_t, depth_arg, cfg.conf_threshold)?;
        let w_conf = if cfg.conf_weighting { conf_weight } else { 1.0 };

        let (mut mix_rgb, mix_depth, mix_labels) = class_mix(
            &src_rgb,
            &src_depth,
            &src_labels,
            &tgt_rgb,
            &tgt_depth,
            &pseudo,
            &mut self.rng_mix,
        )?;
        strong_augment(&mut mix_rgb.data, &self.aug, &mut self.rng_aug);

        let dev = &self.device;
        let src_rgb_t = src_rgb.to_tensor(dev)?;
        let src_depth_t = src_depth.to_tensor(dev)?;
        let src_labels_t = src_labels.to_tensor(dev)?;
        let mix_rgb_t = mix_rgb.to_tensor(dev)?;
        let mix_depth_t = mix_depth.to_tensor(dev)?;
        let mix_labels_t = mix_labels.to_tensor(dev)?;
        let has_depth = self.student.has_depth_path();

        let mut total: Option<Tensor> = None;
        let add = |acc: &mut Option<Tensor>, term: Tensor| -> Result<()> {
            *acc = Some(match acc.take() {
                Some(a) => a.add(&term)?,
                None => term,
            });
            Ok(())
        };

        let mut loss_source = 0.0;
        let mut loss_mixed = 0.0;
        let mut loss_masked_source = 0.0;
        let mut loss_masked_mixed = 0.0;

        if cfg.use_full_batch {
            let logits = self.student.forward(
                &src_rgb_t,
                has_depth.then_some(&src_depth_t),
                None,
                true,
            )?;
            let l = cross_entropy_ignore(&logits, &src_labels_t)?;
            loss_source = l.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            add(&mut total, l)?;

            let logits = self.student.forward(
                &mix_rgb_t,
                has_depth.then_some(&mix_depth_t),
                None,
                true,
            )?;
            let l = cross_entropy_ignore(&logits, &mix_labels_t)?.affine(w_conf, 0.0)?;
            loss_mixed = l.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            add(&mut total, l)?;
        }

        if cfg.mask_source {
            let (m_rgb, m_depth) = self.masks_for_mode(cfg.batch_size, ratio);
            let logits = self.student.forward_with_masks(
                &src_rgb_t,
                has_depth.then_some(&src_depth_t),
                m_rgb.as_ref(),
                m_depth.as_ref(),
                true,
            )?;
            let l = cross_entropy_ignore(&logits, &src_labels_t)?
                .affine(cfg.masked_loss_weight, 0.0)?;
            loss_masked_source = l.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            add(&mut total, l)?;
        }

        if cfg.mask_mixed {
            let (m_rgb, m_depth) = self.masks_for_mode(cfg.batch_size, ratio);
            let logits = self.student.forward_with_masks(
                &mix_rgb_t,
                has_depth.then_some(&mix_depth_t),
                m_rgb.as_ref(),
                m_depth.as_ref(),
                true,
            )?;
            let l = cross_entropy_ignore(&logits, &mix_labels_t)?
                .affine(cfg.masked_loss_weight * w_conf, 0.0)?;
            loss_masked_mixed = l.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            add(&mut total, l)?;
        }

        let total = total.ok_or_else(|| {
            Error::Config("no loss terms enabled (check batch composition flags)".into())
        })?;
        let loss_total = total.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !loss_total.is_finite() {
            return Err(Error::NonFiniteLoss {
                iter: t,
                detail: format!(
                    "src={loss_source} mix={loss_mixed} masked_src={loss_masked_source} masked_mix={loss_masked_mixed}"
                ),
            });
        }

        let grads = total.backward()?;
        self.optimizer.step(&grads, t)?;
        ema_update(
            &self.teacher.registry,
            &self.student.registry,
            cfg.ema_momentum,
        )?;
        self.iter += 1;

        Ok(StepStats {
            iter: t,
            loss_total,
            loss_source,
            loss_mixed,
            loss_masked_source,
            loss_masked_mixed,
            conf_weight,
            mask_ratio: ratio,
            lr_depth: self.optimizer.lr_at(0, t),
            lr_head: self.optimizer.lr_at(1, t),
            lr_rgb: if self.student.rgb_frozen() {
                0.0
            } else {
                self.optimizer.lr_at(2, t)
            },
        })
    }

    /// Run the remaining iterations, invoking `on_log` every `log_every`
    /// steps and once at the end.
    pub fn run(&mut self, mut on_log: impl FnMut(&StepStats)) -> Result<()> {
        while self.iter < self.cfg.total_iters {
            let stats = self.step()?;
            if stats.iter % self.cfg.log_every.max(1) == 0 || self.iter == self.cfg.total_iters {
                on_log(&stats);
            }
        }
        Ok(())
    }

    pub fn save_checkpoint(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        Checkpoint::from_registry(&self.student.registry, &self.cfg, self.iter)?.save(path)
    }

    /// Evaluate the student on a labeled split.
    pub fn evaluate(&self, adapter: &DatasetAdapter, boundary_d: f64) -> Result<MetricReport> {
        evaluate_model(&self.student, adapter, &self.device, boundary_d)
    }
}

/// Evaluate any model on a labeled adapter split.
pub fn evaluate_model(
    model: &SegModel,
    adapter: &DatasetAdapter,
    device: &Device,
    boundary_d: f64,
) -> Result<MetricReport> {
    if !adapter.has_labels() {
        return Err(Error::Config(format!(
            "split `{}` has no labels to evaluate against",
            adapter.split
        )));
    }
    let mut report: Option<MetricReport> = None;
    for idx in 0..adapter.len() {
        let (rgb, depth, labels) = adapter.load_batch(&[idx])?;
        let labels = labels.expect("checked has_labels");
        let rgb_t = rgb.to_tensor(device)?;
        let depth_t = depth.to_tensor(device)?;
        let logits = model.forward(
            &rgb_t,
            model.has_depth_path().then_some(&depth_t),
            None,
            false,
        )?;
        let pred = logits.argmax(1)?;
        let (b, h, w) = pred.dims3()?;
        let pred_v = pred.flatten_all()?.to_vec1::<u32>()?;
        let pred_map = LabelMap::new(
            Array3::from_shape_vec((b, h, w), pred_v).expect("argmax shape"),
            model.num_classes(),
        )?;
        let r = report.get_or_insert_with(|| {
            MetricReport::new(
                model.num_classes(),
                BoundaryConfig::from_dilation(boundary_d, (h, w)),
            )
        });
        r.update(&pred_map, &labels)?;
    }
    report.ok_or_else(|| Error::Config("empty evaluation split".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Init;

    #[test]
    fn ema_formula_is_exact() {
        let dev = Device::Cpu;
        let mut t_reg = ParamRegistry::new(dev.clone(), DType::F32);
        let mut s_reg = ParamRegistry::new(dev.clone(), DType::F32);
        let mut rng_t = seeded_rng(0, "init");
        let mut rng_s = seeded_rng(1, "init");
        t_reg
            .param("w", &[16], Init::KaimingNormal { fan_in: 4 }, &mut rng_t)
            .unwrap();
        s_reg
            .param("w", &[16], Init::KaimingNormal { fan_in: 4 }, &mut rng_s)
            .unwrap();

        let t0: Vec<f32> = t_reg.get("w").unwrap().as_tensor().to_vec1().unwrap();
        let s0: Vec<f32> = s_reg.get("w").unwrap().as_tensor().to_vec1().unwrap();

        // alpha = 1: unchanged; alpha = 0: equals student
        ema_update(&t_reg, &s_reg, 1.0).unwrap();
        assert_eq!(
            t_reg.get("w").unwrap().as_tensor().to_vec1::<f32>().unwrap(),
            t0
        );
        ema_update(&t_reg, &s_reg, 0.0).unwrap();
        assert_eq!(
            t_reg.get("w").unwrap().as_tensor().to_vec1::<f32>().unwrap(),
            s0
        );

        // scalar case forced by the formula
        t_reg.set("w", &Tensor::ones((16,), DType::F32, &dev).unwrap()).unwrap();
        s_reg.set("w", &Tensor::zeros((16,), DType::F32, &dev).unwrap()).unwrap();
        ema_update(&t_reg, &s_reg, 0.999).unwrap();
        for v in t_reg.get("w").unwrap().as_tensor().to_vec1::<f32>().unwrap() {
            assert_eq!(v, 0.999f32);
        }
    }

    #[test]
    fn ema_rejects_misaligned_registries() {
        let dev = Device::Cpu;
        let mut t_reg = ParamRegistry::new(dev.clone(), DType::F32);
        let mut s_reg = ParamRegistry::new(dev, DType::F32);
        let mut rng = seeded_rng(0, "init");
        t_reg.param("a", &[2], Init::Zeros, &mut rng).unwrap();
        s_reg.param("b", &[2], Init::Zeros, &mut rng).unwrap();
        assert!(ema_update(&t_reg, &s_reg, 0.5).is_err());

        let mut s2 = ParamRegistry::new(Device::Cpu, DType::F32);
        s2.param("a", &[3], Init::Zeros, &mut rng).unwrap();
        assert!(ema_update(&t_reg, &s2, 0.5).is_err());
    }

    #[test]
    fn classes_present_skips_ignore() {
        let mut l = Array2::<u32>::zeros((4, 4));
        l[[0, 0]] = 3;
        l[[1, 1]] = IGNORE_LABEL;
        assert_eq!(classes_present(&l), vec![0, 3]);
    }

    #[test]
    fn mix_with_all_or_none_classes() {
        let (h, w) = (6, 6);
        let src_rgb = Array3::<f32>::from_elem((3, h, w), 0.2);
        let src_depth = Array3::<f32>::from_elem((1, h, w), 0.8);
        let mut src_labels = Array2::<u32>::zeros((h, w));
        for y in 0..3 {
            for x in 0..w {
                src_labels[[y, x]] = 1;
            }
        }
        let tgt_rgb = Array3::<f32>::from_elem((3, h, w), 0.9);
        let tgt_depth = Array3::<f32>::from_elem((1, h, w), 0.1);
        let pseudo = Array2::<u32>::from_elem((h, w), 4);

        // no classes chosen -> target triple
        let (r, d, l) = mix_with_classes(
            &src_rgb, &src_depth, &src_labels, &tgt_rgb, &tgt_depth, &pseudo, &[],
        );
        assert_eq!(r, tgt_rgb);
        assert_eq!(d, tgt_depth);
        assert_eq!(l, pseudo);

        // all classes chosen -> source everywhere (no ignore present)
        let (r, d, l) = mix_with_classes(
            &src_rgb, &src_depth, &src_labels, &tgt_rgb, &tgt_depth, &pseudo, &[0, 1],
        );
        assert_eq!(r, src_rgb);
        assert_eq!(d, src_depth);
        assert_eq!(l, src_labels);

        // one class chosen -> compositing matches a direct where-mask oracle
        let (r, d, l) = mix_with_classes(
            &src_rgb, &src_depth, &src_labels, &tgt_rgb, &tgt_depth, &pseudo, &[1],
        );
        for y in 0..h {
            for x in 0..w {
                let inside = src_labels[[y, x]] == 1;
                assert_eq!(r[[0, y, x]], if inside { 0.2 } else { 0.9 });
                assert_eq!(d[[0, y, x]], if inside { 0.8 } else { 0.1 });
                assert_eq!(l[[y, x]], if inside { 1 } else { 4 });
            }
        }
    }

    #[test]
    fn class_mix_selects_half_rounded_up() {
        // with four classes present, exactly two are pasted
        let (h, w) = (8, 8);
        let mut src_labels = Array2::<u32>::zeros((h, w));
        for (i, cls) in [1u32, 2, 3].iter().enumerate() {
            src_labels[[i, 0]] = *cls;
        }
        let src = ImageTensor::new(Array4::<f32>::zeros((1, 3, h, w))).unwrap();
        let srcd = ImageTensor::new(Array4::<f32>::zeros((1, 1, h, w))).unwrap();
        let labels = LabelMap::new(src_labels.insert_axis(Axis(0)).to_owned(), 6).unwrap();
        let tgt = ImageTensor::new(Array4::<f32>::ones((1, 3, h, w))).unwrap();
        let tgtd = ImageTensor::new(Array4::<f32>::ones((1, 1, h, w))).unwrap();
        let pseudo = LabelMap::new(Array3::<u32>::from_elem((1, h, w), 5), 6).unwrap();
        let mut rng = seeded_rng(0, "mix");
        let (_, _, mixed) = class_mix(&src, &srcd, &labels, &tgt, &tgtd, &pseudo, &mut rng).unwrap();
        // classes present = {0,1,2,3} -> 2 chosen; pasted pixels carry
        // source labels, others pseudo label 5
        let pasted: std::collections::BTreeSet<u32> = mixed
            .data
            .iter()
            .filter(|&&v| v != 5)
            .copied()
            .collect();
        assert_eq!(pasted.len(), 2, "pasted classes: {pasted:?}");
    }
}
