//! End-to-end benchmark on the synthetic domain-shifted dataset: trains the
//! RGB-only baseline, plugs its weights into the depth-fusion variants, and
//! reports target-domain metrics per variant and seed.

use std::path::{Path, PathBuf};

use candle_core::Device;
use serde::{Deserialize, Serialize};

use crate::config::{FusionMode, MaskingMode, RunConfig};
use crate::data::{generate_toy, DatasetAdapter, Domain, ToySpec, CLASS_POLE};
use crate::error::Result;
use crate::selftrain::Trainer;

/// Named training variants of the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// No depth path at all; also produces the pretrained RGB weights the
    /// plugin variants start from.
    RgbOnly,
    /// Depth + fusion, no feature masking.
    DepthNoMask,
    /// Depth + fusion + complementary masking (the full method).
    Full,
    /// Depth + fusion with independently drawn RGB/depth masks.
    IndependentMask,
    /// Complementary masking but local-attention-only fusion.
    LocalOnly,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::RgbOnly => "rgb_only",
            Variant::DepthNoMask => "depth_no_mask",
            Variant::Full => "full",
            Variant::IndependentMask => "independent_mask",
            Variant::LocalOnly => "local_only",
        }
    }

    pub fn all() -> [Variant; 5] {
        [
            Variant::RgbOnly,
            Variant::DepthNoMask,
            Variant::Full,
            Variant::IndependentMask,
            Variant::LocalOnly,
        ]
    }

    /// Specialize a base configuration for this variant.
    pub fn apply(&self, base: &RunConfig, rgb_init: &Path) -> RunConfig {
        let mut cfg = base.clone();
        match self {
            Variant::RgbOnly => {
                cfg.fusion_mode = FusionMode::None;
                cfg.masking_mode = MaskingMode::None;
                cfg.mask_mixed = false;
                cfg.freeze_rgb = false;
                cfg.rgb_init = String::new();
                // trained from scratch: the encoder needs the head-level rate
                cfg.lr_rgb = cfg.lr_head;
            }
            Variant::DepthNoMask => {
                cfg.fusion_mode = FusionMode::LocalGlobal;
                cfg.masking_mode = MaskingMode::None;
                cfg.mask_mixed = false;
                cfg.freeze_rgb = true;
                cfg.rgb_init = rgb_init.to_string_lossy().into_owned();
            }
            Variant::Full => {
                cfg.fusion_mode = FusionMode::LocalGlobal;
                cfg.masking_mode = MaskingMode::Complementary;
                cfg.mask_mixed = true;
                cfg.freeze_rgb = true;
                cfg.rgb_init = rgb_init.to_string_lossy().into_owned();
            }
            Variant::IndependentMask => {
                cfg.fusion_mode = FusionMode::LocalGlobal;
                cfg.masking_mode = MaskingMode::Independent;
                cfg.mask_mixed = true;
                cfg.freeze_rgb = true;
                cfg.rgb_init = rgb_init.to_string_lossy().into_owned();
            }
            Variant::LocalOnly => {
                cfg.fusion_mode = FusionMode::LocalOnly;
                cfg.masking_mode = MaskingMode::Complementary;
                cfg.mask_mixed = true;
                cfg.freeze_rgb = true;
                cfg.rgb_init = rgb_init.to_string_lossy().into_owned();
            }
        }
        cfg
    }
}

/// Metrics of one trained run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: Variant,
    pub seed: u64,
    pub miou: f64,
    pub per_class_iou: Vec<Option<f64>>,
    pub boundary_miou: f64,
    pub pole_boundary_iou: Option<f64>,
    pub final_loss: f64,
}

/// Aggregated benchmark report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub seeds: Vec<u64>,
    pub iters: usize,
    pub runs: Vec<RunResult>,
}

impl BenchReport {
    pub fn mean_miou(&self, variant: Variant) -> f64 {
        let vals: Vec<f64> = self
            .runs
            .iter()
            .filter(|r| r.variant == variant)
            .map(|r| r.miou)
            .collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    }

    pub fn mean_pole_boundary(&self, variant: Variant) -> f64 {
        let vals: Vec<f64> = self
            .runs
            .iter()
            .filter(|r| r.variant == variant)
            .map(|r| r.pole_boundary_iou.unwrap_or(0.0))
            .collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    }
}

/// Benchmark options.
#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub base: RunConfig,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub data_dir: PathBuf,
    pub work_dir: PathBuf,
    pub boundary_d: f64,
    pub n_source: usize,
    pub n_target: usize,
    pub n_val: usize,
    pub data_seed: u64,
}

impl BenchOptions {
    pub fn new(data_dir: impl Into<PathBuf>, work_dir: impl Into<PathBuf>) -> Self {
        let mut base = RunConfig::default();
        base.total_iters = 2000;
        Self {
            base,
            seeds: vec![0, 1, 2],
            variants: Variant::all().to_vec(),
            data_dir: data_dir.into(),
            work_dir: work_dir.into(),
            boundary_d: 0.005,
            n_source: 40,
            n_target: 40,
            n_val: 24,
            data_seed: 1234,
        }
    }
}

/// Generate the benchmark datasets under `data_dir` unless already present.
pub fn ensure_toy_data(opts: &BenchOptions) -> Result<(PathBuf, PathBuf)> {
    let source_dir = opts.data_dir.join("source");
    let target_dir = opts.data_dir.join("target");
    let spec = ToySpec {
        size: opts.base.input_size,
        seed: opts.data_seed,
        ..ToySpec::default()
    };
    let have = |dir: &Path, split: &str, n: usize| -> bool {
        DatasetAdapter::open(dir, split, spec.class_count, None)
            .map(|a| a.len() == n)
            .unwrap_or(false)
    };
    if !have(&source_dir, "train", opts.n_source) {
        generate_toy(&spec, opts.n_source, Domain::Source, "train", &source_dir)?;
    }
    if !have(&target_dir, "train", opts.n_target) {
        generate_toy(&spec, opts.n_target, Domain::Target, "train", &target_dir)?;
    }
    if !have(&target_dir, "val", opts.n_val) {
        generate_toy(&spec, opts.n_val, Domain::Target, "val", &target_dir)?;
    }
    Ok((source_dir, target_dir))
}

/// Train one variant for one seed and evaluate it on the target validation
/// split.
pub fn run_variant(
    opts: &BenchOptions,
    variant: Variant,
    seed: u64,
    rgb_init: &Path,
    device: &Device,
    mut on_log: impl FnMut(&crate::selftrain::StepStats),
) -> Result<(RunResult, PathBuf)> {
    let (source_dir, target_dir) = ensure_toy_data(opts)?;
    let mut cfg = variant.apply(&opts.base, rgb_init);
    cfg.seed = seed;
    cfg.source_dir = source_dir.to_string_lossy().into_owned();
    cfg.target_dir = target_dir.to_string_lossy().into_owned();

    let mut trainer = Trainer::new(&cfg, device)?;
    let mut final_loss = 0.0;
    trainer.run(|s| {
        final_loss = s.loss_total;
        on_log(s);
    })?;

    std::fs::create_dir_all(&opts.work_dir)?;
    let ckpt_path = opts
        .work_dir
        .join(format!("{}_seed{seed}.ckpt", variant.name()));
    trainer.save_checkpoint(&ckpt_path)?;

    let val = DatasetAdapter::open(&target_dir, "val", cfg.num_classes, None)?;
    let report = trainer.evaluate(&val, opts.boundary_d)?;
    let summary = report.summary();
    let pole = summary
        .per_class_boundary_iou
        .get(CLASS_POLE as usize)
        .copied()
        .flatten();
    Ok((
        RunResult {
            variant,
            seed,
            miou: summary.miou,
            per_class_iou: summary.per_class_iou,
            boundary_miou: summary.boundary_miou,
            pole_boundary_iou: pole,
            final_loss,
        },
        ckpt_path,
    ))
}

/// Run every requested variant for every seed. The RGB-only baseline of a
/// seed is trained first; its checkpoint seeds the other variants.
pub fn run_benchmark(
    opts: &BenchOptions,
    device: &Device,
    mut progress: impl FnMut(&str),
) -> Result<BenchReport> {
    let mut runs = Vec::new();
    for &seed in &opts.seeds {
        progress(&format!("seed {seed}: training rgb_only baseline"));
        let (baseline, ckpt) = run_variant(
            opts,
            Variant::RgbOnly,
            seed,
            Path::new(""),
            device,
            |_| {},
        )?;
        progress(&format!(
            "seed {seed}: rgb_only mIoU {:.4}",
            baseline.miou
        ));
        if opts.variants.contains(&Variant::RgbOnly) {
            runs.push(baseline);
        }
        for &variant in &opts.variants {
            if variant == Variant::RgbOnly {
                continue;
            }
            progress(&format!("seed {seed}: training {}", variant.name()));
            let (result, _) = run_variant(opts, variant, seed, &ckpt, device, |_| {})?;
            progress(&format!(
                "seed {seed}: {} mIoU {:.4}",
                variant.name(),
                result.miou
            ));
            runs.push(result);
        }
    }
    Ok(BenchReport {
        seeds: opts.seeds.clone(),
        iters: opts.base.total_iters,
        runs,
    })
}
