//! Run configuration: a flat `key = value` text format with typed accessors.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which modalities are masked during the masked forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskingMode {
    /// RGB blocks dropped, depth keeps exactly the complementary blocks.
    Complementary,
    /// RGB and depth masked with independent draws.
    Independent,
    /// Only RGB features are masked.
    RgbOnly,
    /// No feature masking at all.
    None,
}

impl FromStr for MaskingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complementary" => Ok(Self::Complementary),
            "independent" => Ok(Self::Independent),
            "rgb_only" => Ok(Self::RgbOnly),
            "none" => Ok(Self::None),
            other => Err(Error::Config(format!(
                "unknown masking_mode `{other}` (complementary|independent|rgb_only|none)"
            ))),
        }
    }
}

impl MaskingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Complementary => "complementary",
            Self::Independent => "independent",
            Self::RgbOnly => "rgb_only",
            Self::None => "none",
        }
    }
}

/// Which branches of the refinement block are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    LocalGlobal,
    LocalOnly,
    GlobalOnly,
    /// No depth encoder and no fusion: the RGB-only model.
    None,
}

impl FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local_global" => Ok(Self::LocalGlobal),
            "local_only" => Ok(Self::LocalOnly),
            "global_only" => Ok(Self::GlobalOnly),
            "none" => Ok(Self::None),
            other => Err(Error::Config(format!(
                "unknown fusion_mode `{other}` (local_global|local_only|global_only|none)"
            ))),
        }
    }
}

impl FusionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::LocalGlobal => "local_global",
            Self::LocalOnly => "local_only",
            Self::GlobalOnly => "global_only",
            Self::None => "none",
        }
    }

    pub fn has_global(&self) -> bool {
        matches!(self, Self::LocalGlobal | Self::GlobalOnly)
    }

    pub fn has_local(&self) -> bool {
        matches!(self, Self::LocalGlobal | Self::LocalOnly)
    }
}

/// Full training/eval configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub num_classes: usize,
    pub input_size: usize,
    pub block_size_px: usize,
    pub ratio_start: f64,
    pub ratio_end: f64,
    pub pool_factors_train: [usize; 4],
    pub pool_factors_eval: [usize; 4],
    pub ema_momentum: f64,
    pub lr_rgb: f64,
    pub lr_depth: f64,
    pub lr_head: f64,
    pub warmup_iters: usize,
    pub poly_power: f64,
    pub total_iters: usize,
    pub batch_size: usize,
    pub seed: u64,

    pub masking_mode: MaskingMode,
    pub fusion_mode: FusionMode,
    pub freeze_rgb: bool,
    pub use_full_batch: bool,
    pub mask_source: bool,
    pub mask_mixed: bool,
    pub masked_loss_weight: f64,
    pub conf_threshold: f64,
    pub conf_weighting: bool,
    pub weight_decay: f64,
    pub norm_momentum: f64,
    pub jitter_strength: f64,
    pub blur_sigma_min: f64,
    pub blur_sigma_max: f64,

    pub enc_widths: [usize; 4],
    pub rgb_stage_depths: [usize; 4],
    pub depth_stage_depths: [usize; 4],
    pub head_width: usize,
    pub log_every: usize,

    pub source_dir: String,
    pub target_dir: String,
    pub out_dir: String,
    pub rgb_init: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            num_classes: 6,
            input_size: 128,
            block_size_px: 64,
            ratio_start: 0.7,
            ratio_end: 0.3,
            pool_factors_train: [4, 2, 1, 1],
            pool_factors_eval: [2, 1, 1, 1],
            ema_momentum: 0.999,
            lr_rgb: 6e-5,
            lr_depth: 6e-5,
            lr_head: 6e-4,
            warmup_iters: 1500,
            poly_power: 0.9,
            total_iters: 2000,
            batch_size: 2,
            seed: 0,
            masking_mode: MaskingMode::Complementary,
            fusion_mode: FusionMode::LocalGlobal,
            freeze_rgb: true,
            use_full_batch: true,
            mask_source: false,
            mask_mixed: true,
            masked_loss_weight: 1.0,
            conf_threshold: 0.968,
            conf_weighting: true,
            weight_decay: 0.01,
            norm_momentum: 0.1,
            jitter_strength: 0.2,
            blur_sigma_min: 0.15,
            blur_sigma_max: 1.15,
            enc_widths: [16, 32, 64, 128],
            rgb_stage_depths: [1, 1, 1, 1],
            depth_stage_depths: [1, 1, 1, 1],
            head_width: 48,
            log_every: 100,
            source_dir: String::new(),
            target_dir: String::new(),
            out_dir: String::new(),
            rgb_init: String::new(),
        }
    }
}

const KEYS: &[&str] = &[
    "num_classes",
    "input_size",
    "block_size_px",
    "ratio_start",
    "ratio_end",
    "pool_factors_train",
    "pool_factors_eval",
    "ema_momentum",
    "lr_rgb",
    "lr_depth",
    "lr_head",
    "warmup_iters",
    "poly_power",
    "total_iters",
    "batch_size",
    "seed",
    "masking_mode",
    "fusion_mode",
    "freeze_rgb",
    "use_full_batch",
    "mask_source",
    "mask_mixed",
    "masked_loss_weight",
    "conf_threshold",
    "conf_weighting",
    "weight_decay",
    "norm_momentum",
    "jitter_strength",
    "blur_sigma_min",
    "blur_sigma_max",
    "enc_widths",
    "rgb_stage_depths",
    "depth_stage_depths",
    "head_width",
    "log_every",
    "source_dir",
    "target_dir",
    "out_dir",
    "rgb_init",
];

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value `{v}` for key `{key}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid boolean `{v}` for key `{key}`"
        ))),
    }
}

fn parse_list4(key: &str, v: &str) -> Result<[usize; 4]> {
    let parts: Vec<usize> = v
        .split(',')
        .map(|p| parse_num(key, p.trim()))
        .collect::<Result<_>>()?;
    parts
        .try_into()
        .map_err(|_| Error::Config(format!("key `{key}` needs exactly 4 comma-separated values")))
}

fn fmt_list4(v: &[usize; 4]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_cfg(&text)
    }

    pub fn from_str_cfg(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "num_classes" => self.num_classes = parse_num(key, value)?,
            "input_size" => self.input_size = parse_num(key, value)?,
            "block_size_px" => self.block_size_px = parse_num(key, value)?,
            "ratio_start" => self.ratio_start = parse_num(key, value)?,
            "ratio_end" => self.ratio_end = parse_num(key, value)?,
            "pool_factors_train" => self.pool_factors_train = parse_list4(key, value)?,
            "pool_factors_eval" => self.pool_factors_eval = parse_list4(key, value)?,
            "ema_momentum" => self.ema_momentum = parse_num(key, value)?,
            "lr_rgb" => self.lr_rgb = parse_num(key, value)?,
            "lr_depth" => self.lr_depth = parse_num(key, value)?,
            "lr_head" => self.lr_head = parse_num(key, value)?,
            "warmup_iters" => self.warmup_iters = parse_num(key, value)?,
            "poly_power" => self.poly_power = parse_num(key, value)?,
            "total_iters" => self.total_iters = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "masking_mode" => self.masking_mode = value.parse()?,
            "fusion_mode" => self.fusion_mode = value.parse()?,
            "freeze_rgb" => self.freeze_rgb = parse_bool(key, value)?,
            "use_full_batch" => self.use_full_batch = parse_bool(key, value)?,
            "mask_source" => self.mask_source = parse_bool(key, value)?,
            "mask_mixed" => self.mask_mixed = parse_bool(key, value)?,
            "masked_loss_weight" => self.masked_loss_weight = parse_num(key, value)?,
            "conf_threshold" => self.conf_threshold = parse_num(key, value)?,
            "conf_weighting" => self.conf_weighting = parse_bool(key, value)?,
            "weight_decay" => self.weight_decay = parse_num(key, value)?,
            "norm_momentum" => self.norm_momentum = parse_num(key, value)?,
            "jitter_strength" => self.jitter_strength = parse_num(key, value)?,
            "blur_sigma_min" => self.blur_sigma_min = parse_num(key, value)?,
            "blur_sigma_max" => self.blur_sigma_max = parse_num(key, value)?,
            "enc_widths" => self.enc_widths = parse_list4(key, value)?,
            "rgb_stage_depths" => self.rgb_stage_depths = parse_list4(key, value)?,
            "depth_stage_depths" => self.depth_stage_depths = parse_list4(key, value)?,
            "head_width" => self.head_width = parse_num(key, value)?,
            "log_every" => self.log_every = parse_num(key, value)?,
            "source_dir" => self.source_dir = value.to_string(),
            "target_dir" => self.target_dir = value.to_string(),
            "out_dir" => self.out_dir = value.to_string(),
            "rgb_init" => self.rgb_init = value.to_string(),
            _ => {
                return Err(Error::UnknownConfigKey {
                    key: key.to_string(),
                    valid: KEYS.join(", "),
                })
            }
        }
        Ok(())
    }

    /// Apply a `key=value` override string (CLI `--set`).
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| -> Result<()> {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
            Ok(())
        };
        unit("ratio_start", self.ratio_start)?;
        unit("ratio_end", self.ratio_end)?;
        unit("ema_momentum", self.ema_momentum)?;
        unit("conf_threshold", self.conf_threshold)?;
        unit("norm_momentum", self.norm_momentum)?;
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return Err(Error::Config(format!(
                "input_size must be a positive multiple of 32, got {}",
                self.input_size
            )));
        }
        if self.block_size_px == 0 {
            return Err(Error::Config("block_size_px must be >= 1".into()));
        }
        if self.batch_size == 0 || self.total_iters == 0 {
            return Err(Error::Config(
                "batch_size and total_iters must be >= 1".into(),
            ));
        }
        if self.warmup_iters > self.total_iters {
            return Err(Error::Config(format!(
                "warmup_iters {} exceeds total_iters {}",
                self.warmup_iters, self.total_iters
            )));
        }
        for (name, lr) in [
            ("lr_rgb", self.lr_rgb),
            ("lr_depth", self.lr_depth),
            ("lr_head", self.lr_head),
        ] {
            if lr < 0.0 || !lr.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        for p in self
            .pool_factors_train
            .iter()
            .chain(self.pool_factors_eval.iter())
        {
            if *p == 0 {
                return Err(Error::Config("pool factors must be >= 1".into()));
            }
        }
        if self.num_classes == 0 || self.num_classes > 255 {
            return Err(Error::Config("num_classes must be in [1, 255]".into()));
        }
        Ok(())
    }

    /// Canonical text form; parsing it back yields an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("num_classes", self.num_classes.to_string());
        put("input_size", self.input_size.to_string());
        put("block_size_px", self.block_size_px.to_string());
        put("ratio_start", self.ratio_start.to_string());
        put("ratio_end", self.ratio_end.to_string());
        put("pool_factors_train", fmt_list4(&self.pool_factors_train));
        put("pool_factors_eval", fmt_list4(&self.pool_factors_eval));
        put("ema_momentum", self.ema_momentum.to_string());
        put("lr_rgb", self.lr_rgb.to_string());
        put("lr_depth", self.lr_depth.to_string());
        put("lr_head", self.lr_head.to_string());
        put("warmup_iters", self.warmup_iters.to_string());
        put("poly_power", self.poly_power.to_string());
        put("total_iters", self.total_iters.to_string());
        put("batch_size", self.batch_size.to_string());
        put("seed", self.seed.to_string());
        put("masking_mode", self.masking_mode.as_str().to_string());
        put("fusion_mode", self.fusion_mode.as_str().to_string());
        put("freeze_rgb", self.freeze_rgb.to_string());
        put("use_full_batch", self.use_full_batch.to_string());
        put("mask_source", self.mask_source.to_string());
        put("mask_mixed", self.mask_mixed.to_string());
        put("masked_loss_weight", self.masked_loss_weight.to_string());
        put("conf_threshold", self.conf_threshold.to_string());
        put("conf_weighting", self.conf_weighting.to_string());
        put("weight_decay", self.weight_decay.to_string());
        put("norm_momentum", self.norm_momentum.to_string());
        put("jitter_strength", self.jitter_strength.to_string());
        put("blur_sigma_min", self.blur_sigma_min.to_string());
        put("blur_sigma_max", self.blur_sigma_max.to_string());
        put("enc_widths", fmt_list4(&self.enc_widths));
        put("rgb_stage_depths", fmt_list4(&self.rgb_stage_depths));
        put("depth_stage_depths", fmt_list4(&self.depth_stage_depths));
        put("head_width", self.head_width.to_string());
        put("log_every", self.log_every.to_string());
        put("source_dir", self.source_dir.clone());
        put("target_dir", self.target_dir.clone());
        put("out_dir", self.out_dir.clone());
        put("rgb_init", self.rgb_init.clone());
        s
    }
}
