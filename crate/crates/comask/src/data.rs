//! Dataset ingestion and the synthetic domain-shifted RGB-D benchmark.
//!
//! The generator renders layered scenes of simple shapes. Labels, RGB, and
//! inverse depth share the same silhouettes by construction. The target
//! domain uses a shifted palette plus additive noise, and its depth maps are
//! slightly blurred to mimic estimated depth. Two class pairs are nearly
//! indistinguishable by color in the target palette (box/wall, and the thin
//! pole against the background) while their depth layers stay well
//! separated, so depth genuinely carries class information across the
//! domain gap.
//!
//! On-disk layout: `root/{rgb,depth,label}/{split}/*.png` plus a
//! `manifest.txt` of tab-separated `split rgb depth label` rows (`-` when a
//! label file is absent). RGB is 8-bit, depth is 16-bit inverse depth scaled
//! to [0, 65535], labels are 8-bit class ids.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use ndarray::{Array2, Array3, Array4, Axis};
use rand::Rng;

use crate::augment::gaussian_blur;
use crate::error::{Error, Result};
use crate::rng::{normal_draw, seeded_rng};
use crate::types::{ImageTensor, LabelMap, IGNORE_LABEL};

pub const CLASS_NAMES: [&str; 6] = ["background", "box", "pole", "disk", "wall", "stripe"];
pub const CLASS_POLE: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(&self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(Error::Config(format!(
                "unknown domain `{other}` (source|target)"
            ))),
        }
    }
}

/// Parameters of the synthetic benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySpec {
    pub size: usize,
    pub class_count: usize,
    pub shapes_min: usize,
    pub shapes_max: usize,
    pub noise_level: f64,
    pub depth_blur_sigma: f64,
    pub min_depth_gap: f64,
    pub seed: u64,
    pub palette_source: [[f32; 3]; 6],
    pub palette_target: [[f32; 3]; 6],
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            size: 128,
            class_count: 6,
            shapes_min: 4,
            shapes_max: 8,
            noise_level: 0.05,
            depth_blur_sigma: 0.6,
            min_depth_gap: 0.3,
            seed: 0,
            palette_source: [
                hex("303438"),
                hex("c03a2e"),
                hex("e8c33a"),
                hex("2e64c0"),
                hex("3a9e4e"),
                hex("b43ac0"),
            ],
            palette_target: [
                hex("8a98a6"),
                hex("7a6f52"),
                hex("97a2ad"),
                hex("2a8f8f"),
                hex("6f6a50"),
                hex("6a4a9e"),
            ],
        }
    }
}

fn hex(s: &str) -> [f32; 3] {
    let v = u32::from_str_radix(s, 16).expect("valid hex literal");
    [
        ((v >> 16) & 0xff) as f32 / 255.0,
        ((v >> 8) & 0xff) as f32 / 255.0,
        (v & 0xff) as f32 / 255.0,
    ]
}

fn parse_palette(key: &str, v: &str) -> Result<[[f32; 3]; 6]> {
    let parts: Vec<&str> = v.split(',').map(|p| p.trim()).collect();
    if parts.len() != 6 {
        return Err(Error::Config(format!(
            "key `{key}` needs 6 comma-separated hex colors"
        )));
    }
    let mut out = [[0.0f32; 3]; 6];
    for (i, p) in parts.iter().enumerate() {
        let raw = u32::from_str_radix(p, 16)
            .map_err(|_| Error::Config(format!("bad hex color `{p}` in `{key}`")))?;
        out[i] = [
            ((raw >> 16) & 0xff) as f32 / 255.0,
            ((raw >> 8) & 0xff) as f32 / 255.0,
            (raw & 0xff) as f32 / 255.0,
        ];
    }
    Ok(out)
}

const TOY_KEYS: &[&str] = &[
    "size",
    "class_count",
    "shapes_min",
    "shapes_max",
    "noise_level",
    "depth_blur_sigma",
    "min_depth_gap",
    "seed",
    "palette_source",
    "palette_target",
];

impl ToySpec {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_str_cfg(&std::fs::read_to_string(path)?)
    }

    pub fn from_str_cfg(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "size" => spec.size = parse(key, value)?,
                "class_count" => spec.class_count = parse(key, value)?,
                "shapes_min" => spec.shapes_min = parse(key, value)?,
                "shapes_max" => spec.shapes_max = parse(key, value)?,
                "noise_level" => spec.noise_level = parse(key, value)?,
                "depth_blur_sigma" => spec.depth_blur_sigma = parse(key, value)?,
                "min_depth_gap" => spec.min_depth_gap = parse(key, value)?,
                "seed" => spec.seed = parse(key, value)?,
                "palette_source" => spec.palette_source = parse_palette(key, value)?,
                "palette_target" => spec.palette_target = parse_palette(key, value)?,
                _ => {
                    return Err(Error::UnknownConfigKey {
                        key: key.to_string(),
                        valid: TOY_KEYS.join(", "),
                    })
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 32 {
            return Err(Error::Config("toy size must be >= 32".into()));
        }
        if !(2..=6).contains(&self.class_count) {
            return Err(Error::Config("class_count must be in [2, 6]".into()));
        }
        if self.shapes_min > self.shapes_max {
            return Err(Error::Config("shapes_min must be <= shapes_max".into()));
        }
        if !(0.0..=0.7).contains(&self.min_depth_gap) {
            return Err(Error::Config("min_depth_gap must be in [0, 0.7]".into()));
        }
        Ok(())
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value `{v}` for key `{key}`")))
}

// inverse-depth bands per class; background stays below BG_MAX
const BG_MIN: f32 = 0.05;
const BG_MAX: f32 = 0.15;

fn depth_band(class: u32, min_gap: f32) -> (f32, f32) {
    match class {
        4 => (0.18, 0.28),                                  // wall
        5 => (0.30, 0.38),                                  // stripe
        1 => (0.42, 0.54),                                  // box
        3 => (0.58, 0.68),                                  // disk
        2 => ((BG_MAX + min_gap).max(0.74), 0.90),          // pole
        _ => (BG_MIN, BG_MAX),
    }
}

enum Geom {
    Rect { x0: i32, y0: i32, x1: i32, y1: i32 },
    Disk { cx: f32, cy: f32, r: f32 },
    Stripe { slope: f32, intercept: f32, half_t: f32, x0: i32, x1: i32 },
}

struct ShapeInst {
    class: u32,
    inv_depth: f32,
    brightness: f32,
    geom: Geom,
}

impl ShapeInst {
    fn covers(&self, x: usize, y: usize) -> bool {
        let (xf, yf) = (x as f32, y as f32);
        match &self.geom {
            Geom::Rect { x0, y0, x1, y1 } => {
                (x as i32) >= *x0 && (x as i32) < *x1 && (y as i32) >= *y0 && (y as i32) < *y1
            }
            Geom::Disk { cx, cy, r } => {
                let dx = xf - cx;
                let dy = yf - cy;
                dx * dx + dy * dy <= r * r
            }
            Geom::Stripe {
                slope,
                intercept,
                half_t,
                x0,
                x1,
            } => {
                let xi = x as i32;
                xi >= *x0 && xi < *x1 && (yf - (slope * xf + intercept)).abs() <= *half_t
            }
        }
    }
}

struct RenderedScene {
    rgb: Array3<f32>,   // [3, H, W]
    depth: Array2<f32>, // [H, W] inverse depth
    label: Array2<u32>, // [H, W]
}

fn render_scene(spec: &ToySpec, domain: Domain, rng: &mut crate::rng::StreamRng) -> RenderedScene {
    let s = spec.size;
    let scale = s as f32 / 128.0;
    let palette = match domain {
        Domain::Source => &spec.palette_source,
        Domain::Target => &spec.palette_target,
    };

    let mut rgb = Array3::<f32>::zeros((3, s, s));
    let mut depth = Array2::<f32>::zeros((s, s));
    let mut label = Array2::<u32>::zeros((s, s));
    for y in 0..s {
        let ramp = y as f32 / (s - 1) as f32;
        let d = BG_MIN + (BG_MAX - BG_MIN) * ramp;
        let shade = 0.9 + 0.2 * ramp;
        for x in 0..s {
            depth[[y, x]] = d;
            for c in 0..3 {
                rgb[[c, y, x]] = (palette[0][c] * shade).clamp(0.0, 1.0);
            }
        }
    }

    let n_shapes = rng.gen_range(spec.shapes_min..=spec.shapes_max);
    let mut shapes = Vec::with_capacity(n_shapes);
    for _ in 0..n_shapes {
        let class = rng.gen_range(1..spec.class_count as u32);
        let (d_lo, d_hi) = depth_band(class, spec.min_depth_gap as f32);
        let inv_depth = rng.gen_range(d_lo..d_hi);
        let brightness = rng.gen_range(0.92..1.08f32);
        fn dim(rng: &mut crate::rng::StreamRng, scale: f32, lo: f32, hi: f32) -> f32 {
            rng.gen_range(lo * scale..hi * scale)
        }
        let geom = match class {
            1 => {
                // box
                let w = dim(rng, scale, 14.0, 36.0);
                let h = dim(rng, scale, 14.0, 36.0);
                let x0 = rng.gen_range(0.0..(s as f32 - w)) as i32;
                let y0 = rng.gen_range(0.0..(s as f32 - h)) as i32;
                Geom::Rect { x0, y0, x1: x0 + w as i32, y1: y0 + h as i32 }
            }
            2 => {
                // pole: thin vertical bar, 2-4 px wide at 128
                let w = rng.gen_range(2..=4).max((2.0 * scale) as i32);
                let h = dim(rng, scale, 36.0, 88.0);
                let x0 = rng.gen_range(0.0..(s as f32 - w as f32)) as i32;
                let y0 = rng.gen_range(0.0..(s as f32 - h)) as i32;
                Geom::Rect { x0, y0, x1: x0 + w, y1: y0 + h as i32 }
            }
            3 => {
                // disk
                let r = dim(rng, scale, 7.0, 18.0);
                let cx = rng.gen_range(r..s as f32 - r);
                let cy = rng.gen_range(r..s as f32 - r);
                Geom::Disk { cx, cy, r }
            }
            4 => {
                // wall: wide low slab
                let w = dim(rng, scale, 56.0, 110.0).min(s as f32 - 2.0);
                let h = dim(rng, scale, 10.0, 22.0);
                let x0 = rng.gen_range(0.0..(s as f32 - w)) as i32;
                let y0 = rng.gen_range(0.0..(s as f32 - h)) as i32;
                Geom::Rect { x0, y0, x1: x0 + w as i32, y1: y0 + h as i32 }
            }
            _ => {
                // stripe: diagonal band
                let slope = rng.gen_range(0.3..1.4) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let intercept = rng.gen_range(0.0..s as f32);
                let half_t = dim(rng, scale, 2.5, 5.0);
                let x0 = rng.gen_range(0..(s / 2) as i32);
                let x1 = rng.gen_range((s / 2) as i32..s as i32);
                Geom::Stripe { slope, intercept, half_t, x0, x1 }
            }
        };
        shapes.push(ShapeInst {
            class,
            inv_depth,
            brightness,
            geom,
        });
    }
    // painter's algorithm: far shapes first, nearer overwrite
    shapes.sort_by(|a, b| a.inv_depth.partial_cmp(&b.inv_depth).unwrap());

    for shape in &shapes {
        let color = palette[shape.class as usize];
        for y in 0..s {
            for x in 0..s {
                if shape.covers(x, y) {
                    label[[y, x]] = shape.class;
                    depth[[y, x]] = shape.inv_depth;
                    for c in 0..3 {
                        rgb[[c, y, x]] = (color[c] * shape.brightness).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }

    if domain == Domain::Target {
        if spec.noise_level > 0.0 {
            for v in rgb.iter_mut() {
                *v = (*v + (normal_draw(rng) * spec.noise_level) as f32).clamp(0.0, 1.0);
            }
        }
        if spec.depth_blur_sigma > 0.0 {
            let mut d4 = Array4::<f32>::zeros((1, 1, s, s));
            d4.index_axis_mut(Axis(0), 0)
                .index_axis_mut(Axis(0), 0)
                .assign(&depth);
            let mut view = d4.index_axis_mut(Axis(0), 0);
            gaussian_blur(&mut view, spec.depth_blur_sigma);
            depth.assign(&d4.index_axis(Axis(0), 0).index_axis(Axis(0), 0));
        }
    }

    RenderedScene { rgb, depth, label }
}

fn write_png_rgb(path: &Path, rgb: &Array3<f32>) -> Result<()> {
    let (_, h, w) = rgb.dim();
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                (rgb[[0, y, x]] * 255.0).round() as u8,
                (rgb[[1, y, x]] * 255.0).round() as u8,
                (rgb[[2, y, x]] * 255.0).round() as u8,
            ];
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save(path)?;
    Ok(())
}

fn write_png_depth(path: &Path, depth: &Array2<f32>) -> Result<()> {
    let (h, w) = depth.dim();
    let mut buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = (depth[[y, x]].clamp(0.0, 1.0) * 65535.0).round() as u16;
            buf.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
    }
    buf.save(path)?;
    Ok(())
}

fn write_png_label(path: &Path, label: &Array2<u32>) -> Result<()> {
    let (h, w) = label.dim();
    let mut buf = image::GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            buf.put_pixel(x as u32, y as u32, image::Luma([label[[y, x]] as u8]));
        }
    }
    buf.save(path)?;
    Ok(())
}

/// One manifest row.
#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub split: String,
    pub rgb: PathBuf,
    pub depth: PathBuf,
    pub label: Option<PathBuf>,
}

fn manifest_path(root: &Path) -> PathBuf {
    root.join("manifest.txt")
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestEntry>> {
    let path = manifest_path(root);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Data {
        path: path.clone(),
        reason: format!("cannot read manifest: {e}"),
    })?;
    let mut entries = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 4 {
            return Err(Error::Data {
                path: path.clone(),
                reason: format!("malformed manifest line `{line}`"),
            });
        }
        entries.push(ManifestEntry {
            split: parts[0].to_string(),
            rgb: root.join(parts[1]),
            depth: root.join(parts[2]),
            label: if parts[3] == "-" {
                None
            } else {
                Some(root.join(parts[3]))
            },
        });
    }
    Ok(entries)
}

fn write_manifest(root: &Path, split: &str, rows: &[(String, String, Option<String>)]) -> Result<()> {
    // keep rows of other splits, replace rows of this split
    let path = manifest_path(root);
    let mut kept: Vec<String> = Vec::new();
    if path.exists() {
        for line in std::fs::read_to_string(&path)?.lines() {
            if let Some((s, _)) = line.split_once('\t') {
                if s != split {
                    kept.push(line.to_string());
                }
            }
        }
    }
    for (rgb, depth, label) in rows {
        kept.push(format!(
            "{split}\t{rgb}\t{depth}\t{}",
            label.as_deref().unwrap_or("-")
        ));
    }
    kept.sort();
    let mut text = kept.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    std::fs::write(&path, text)?;
    Ok(())
}

/// Generate `n_images` synthetic images into `root` for one domain and
/// split. Labels are written for the source domain and for any `val` split.
pub fn generate_toy(
    spec: &ToySpec,
    n_images: usize,
    domain: Domain,
    split: &str,
    root: &Path,
) -> Result<usize> {
    spec.validate()?;
    let with_labels = domain == Domain::Source || split == "val";
    for sub in ["rgb", "depth", "label"] {
        std::fs::create_dir_all(root.join(sub).join(split))?;
    }
    let mut rows = Vec::with_capacity(n_images);
    for idx in 0..n_images {
        let mut rng = seeded_rng(
            spec.seed,
            &format!("toy/{}/{split}/{idx}", domain.as_str()),
        );
        let scene = render_scene(spec, domain, &mut rng);
        let name = format!("{idx:05}.png");
        let rgb_rel = format!("rgb/{split}/{name}");
        let depth_rel = format!("depth/{split}/{name}");
        write_png_rgb(&root.join(&rgb_rel), &scene.rgb)?;
        write_png_depth(&root.join(&depth_rel), &scene.depth)?;
        let label_rel = if with_labels {
            let rel = format!("label/{split}/{name}");
            write_png_label(&root.join(&rel), &scene.label)?;
            Some(rel)
        } else {
            None
        };
        rows.push((rgb_rel, depth_rel, label_rel));
    }
    write_manifest(root, split, &rows)?;
    Ok(n_images)
}

/// One decoded sample.
pub struct Sample {
    pub rgb: Array3<f32>,          // [3, H, W] in [0, 1]
    pub depth: Array3<f32>,        // [1, H, W] inverse depth in [0, 1]
    pub label: Option<Array2<u32>>, // [H, W]
}

/// Reads triples listed in a dataset manifest, with optional label
/// remapping and an in-memory decode cache.
pub struct DatasetAdapter {
    pub root: PathBuf,
    pub split: String,
    pub num_classes: usize,
    remap: Option<BTreeMap<u32, u32>>,
    entries: Vec<ManifestEntry>,
    cache: Mutex<HashMap<usize, Arc<Sample>>>,
}

impl DatasetAdapter {
    pub fn open(
        root: impl Into<PathBuf>,
        split: &str,
        num_classes: usize,
        remap: Option<BTreeMap<u32, u32>>,
    ) -> Result<Self> {
        let root = root.into();
        let entries: Vec<ManifestEntry> = read_manifest(&root)?
            .into_iter()
            .filter(|e| e.split == split)
            .collect();
        Ok(Self {
            root,
            split: split.to_string(),
            num_classes,
            remap,
            entries,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn has_labels(&self) -> bool {
        !self.entries.is_empty() && self.entries.iter().all(|e| e.label.is_some())
    }

    fn remap_label(&self, raw: u32) -> u32 {
        match &self.remap {
            Some(table) => *table.get(&raw).unwrap_or(&IGNORE_LABEL),
            None => {
                if (raw as usize) < self.num_classes {
                    raw
                } else {
                    IGNORE_LABEL
                }
            }
        }
    }

    pub fn load_sample(&self, idx: usize) -> Result<Arc<Sample>> {
        if let Some(s) = self.cache.lock().unwrap().get(&idx) {
            return Ok(s.clone());
        }
        let entry = self.entries.get(idx).ok_or_else(|| Error::Data {
            path: self.root.clone(),
            reason: format!("index {idx} out of range ({} entries)", self.entries.len()),
        })?;
        let open = |path: &Path| -> Result<image::DynamicImage> {
            image::open(path).map_err(|e| Error::Data {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })
        };

        let rgb_img = open(&entry.rgb)?.to_rgb8();
        let (w, h) = rgb_img.dimensions();
        let mut rgb = Array3::<f32>::zeros((3, h as usize, w as usize));
        for (x, y, px) in rgb_img.enumerate_pixels() {
            for c in 0..3 {
                rgb[[c, y as usize, x as usize]] = px.0[c] as f32 / 255.0;
            }
        }

        let depth_img = open(&entry.depth)?.to_luma16();
        if depth_img.dimensions() != (w, h) {
            return Err(Error::Data {
                path: entry.depth.clone(),
                reason: format!(
                    "depth size {:?} does not match rgb size {:?}",
                    depth_img.dimensions(),
                    (w, h)
                ),
            });
        }
        let mut depth = Array3::<f32>::zeros((1, h as usize, w as usize));
        for (x, y, px) in depth_img.enumerate_pixels() {
            depth[[0, y as usize, x as usize]] = px.0[0] as f32 / 65535.0;
        }

        let label = match &entry.label {
            Some(path) => {
                let img = open(path)?.to_luma8();
                if img.dimensions() != (w, h) {
                    return Err(Error::Data {
                        path: path.clone(),
                        reason: "label size does not match rgb size".into(),
                    });
                }
                let mut lab = Array2::<u32>::zeros((h as usize, w as usize));
                for (x, y, px) in img.enumerate_pixels() {
                    lab[[y as usize, x as usize]] = self.remap_label(px.0[0] as u32);
                }
                Some(lab)
            }
            None => None,
        };

        let sample = Arc::new(Sample { rgb, depth, label });
        self.cache.lock().unwrap().insert(idx, sample.clone());
        Ok(sample)
    }

    /// Stack `indices` into batched tensors. Labels are returned only when
    /// every requested sample has one.
    pub fn load_batch(
        &self,
        indices: &[usize],
    ) -> Result<(ImageTensor, ImageTensor, Option<LabelMap>)> {
        if indices.is_empty() {
            return Err(Error::Data {
                path: self.root.clone(),
                reason: "empty batch".into(),
            });
        }
        let samples: Vec<Arc<Sample>> = indices
            .iter()
            .map(|&i| self.load_sample(i))
            .collect::<Result<_>>()?;
        let (_, h, w) = samples[0].rgb.dim();
        let b = samples.len();
        let mut rgb = Array4::<f32>::zeros((b, 3, h, w));
        let mut depth = Array4::<f32>::zeros((b, 1, h, w));
        let all_labeled = samples.iter().all(|s| s.label.is_some());
        let mut labels = if all_labeled {
            Some(ndarray::Array3::<u32>::zeros((b, h, w)))
        } else {
            None
        };
        for (bi, s) in samples.iter().enumerate() {
            if s.rgb.dim() != (3, h, w) {
                return Err(Error::Data {
                    path: self.root.clone(),
                    reason: "inconsistent image sizes in batch".into(),
                });
            }
            rgb.index_axis_mut(Axis(0), bi).assign(&s.rgb);
            depth.index_axis_mut(Axis(0), bi).assign(&s.depth);
            if let (Some(ls), Some(arr)) = (&s.label, labels.as_mut()) {
                arr.index_axis_mut(Axis(0), bi).assign(ls);
            }
        }
        let labels = match labels {
            Some(arr) => Some(LabelMap::new(arr, self.num_classes)?),
            None => None,
        };
        Ok((ImageTensor::new(rgb)?, ImageTensor::new(depth)?, labels))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn generation_is_deterministic() {
        let spec = ToySpec {
            size: 64,
            ..ToySpec::default()
        };
        let d1 = tempdir().unwrap();
        let d2 = tempdir().unwrap();
        generate_toy(&spec, 3, Domain::Target, "train", d1.path()).unwrap();
        generate_toy(&spec, 3, Domain::Target, "train", d2.path()).unwrap();
        for rel in ["rgb/train/00001.png", "depth/train/00002.png", "manifest.txt"] {
            let a = std::fs::read(d1.path().join(rel)).unwrap();
            let b = std::fs::read(d2.path().join(rel)).unwrap();
            assert_eq!(a, b, "{rel}");
        }
    }

    #[test]
    fn empty_dataset_has_valid_manifest() {
        let dir = tempdir().unwrap();
        generate_toy(&ToySpec::default(), 0, Domain::Source, "train", dir.path()).unwrap();
        let entries = read_manifest(dir.path()).unwrap();
        assert!(entries.is_empty());
        let adapter = DatasetAdapter::open(dir.path(), "train", 6, None).unwrap();
        assert_eq!(adapter.len(), 0);
    }

    #[test]
    fn target_train_has_no_labels_but_val_does() {
        let dir = tempdir().unwrap();
        let spec = ToySpec {
            size: 64,
            ..ToySpec::default()
        };
        generate_toy(&spec, 2, Domain::Target, "train", dir.path()).unwrap();
        generate_toy(&spec, 2, Domain::Target, "val", dir.path()).unwrap();
        let train = DatasetAdapter::open(dir.path(), "train", 6, None).unwrap();
        let val = DatasetAdapter::open(dir.path(), "val", 6, None).unwrap();
        assert!(!train.has_labels());
        assert!(val.has_labels());
        assert_eq!(train.len(), 2);
        assert_eq!(val.len(), 2);
    }

    #[test]
    fn pole_depth_gap_oracle() {
        // every pole pixel with a horizontal background neighbor at +-2 px
        // keeps at least min_depth_gap of inverse-depth separation
        let dir = tempdir().unwrap();
        let spec = ToySpec::default();
        generate_toy(&spec, 6, Domain::Source, "train", dir.path()).unwrap();
        let adapter = DatasetAdapter::open(dir.path(), "train", 6, None).unwrap();
        let mut pole_pixels = 0usize;
        let mut checked = 0usize;
        for i in 0..adapter.len() {
            let s = adapter.load_sample(i).unwrap();
            let label = s.label.as_ref().unwrap();
            let (h, w) = label.dim();
            for y in 0..h {
                for x in 0..w {
                    if label[[y, x]] != CLASS_POLE {
                        continue;
                    }
                    pole_pixels += 1;
                    for nx in [x.wrapping_sub(2), x + 2] {
                        if nx >= w {
                            continue;
                        }
                        if label[[y, nx]] == 0 {
                            let gap = s.depth[[0, y, x]] - s.depth[[0, y, nx]];
                            assert!(
                                gap >= spec.min_depth_gap as f32 - 1e-3,
                                "gap {gap} at ({y},{x})"
                            );
                            checked += 1;
                        }
                    }
                }
            }
        }
        assert!(pole_pixels > 0, "scenes should contain poles");
        assert!(checked > 0, "some pole pixels should border background");
    }

    #[test]
    fn silhouettes_consistent_across_modalities() {
        // off-background label pixels are exactly the pixels whose depth
        // left the background ramp (source domain, no blur)
        let dir = tempdir().unwrap();
        let spec = ToySpec::default();
        generate_toy(&spec, 4, Domain::Source, "train", dir.path()).unwrap();
        let adapter = DatasetAdapter::open(dir.path(), "train", 6, None).unwrap();
        for i in 0..adapter.len() {
            let s = adapter.load_sample(i).unwrap();
            let label = s.label.as_ref().unwrap();
            let (h, w) = label.dim();
            for y in 0..h {
                let ramp = BG_MIN + (BG_MAX - BG_MIN) * y as f32 / (h - 1) as f32;
                for x in 0..w {
                    let d = s.depth[[0, y, x]];
                    let on_shape = label[[y, x]] != 0;
                    let off_ramp = (d - ramp).abs() > 2.0 / 65535.0 + 1e-6;
                    assert_eq!(on_shape, off_ramp, "({y},{x}): d={d} ramp={ramp}");
                }
            }
        }
    }

    #[test]
    fn loader_normalizes_known_fixture_exactly() {
        // hand-built 2x2 PNGs with known raw values
        let dir = tempdir().unwrap();
        for sub in ["rgb/train", "depth/train", "label/train"] {
            std::fs::create_dir_all(dir.path().join(sub)).unwrap();
        }
        let mut rgb = image::RgbImage::new(2, 2);
        rgb.put_pixel(0, 0, image::Rgb([0, 127, 255]));
        rgb.put_pixel(1, 0, image::Rgb([64, 64, 64]));
        rgb.put_pixel(0, 1, image::Rgb([255, 0, 0]));
        rgb.put_pixel(1, 1, image::Rgb([1, 2, 3]));
        rgb.save(dir.path().join("rgb/train/0.png")).unwrap();
        let mut depth = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(2, 2);
        depth.put_pixel(0, 0, image::Luma([0]));
        depth.put_pixel(1, 0, image::Luma([65535]));
        depth.put_pixel(0, 1, image::Luma([32768]));
        depth.put_pixel(1, 1, image::Luma([257]));
        depth.save(dir.path().join("depth/train/0.png")).unwrap();
        let mut label = image::GrayImage::new(2, 2);
        label.put_pixel(0, 0, image::Luma([0]));
        label.put_pixel(1, 0, image::Luma([5]));
        label.put_pixel(0, 1, image::Luma([9])); // outside remap -> IGNORE
        label.put_pixel(1, 1, image::Luma([1]));
        label.save(dir.path().join("label/train/0.png")).unwrap();
        std::fs::write(
            dir.path().join("manifest.txt"),
            "train\trgb/train/0.png\tdepth/train/0.png\tlabel/train/0.png\n",
        )
        .unwrap();

        let adapter = DatasetAdapter::open(dir.path(), "train", 6, None).unwrap();
        let (rgb_t, depth_t, labels) = adapter.load_batch(&[0]).unwrap();
        assert_eq!(rgb_t.data[[0, 0, 0, 0]], 0.0);
        assert_eq!(rgb_t.data[[0, 1, 0, 0]], 127.0 / 255.0);
        assert_eq!(rgb_t.data[[0, 2, 0, 0]], 1.0);
        assert_eq!(rgb_t.data[[0, 0, 1, 1]], 1.0 / 255.0);
        assert_eq!(depth_t.data[[0, 0, 0, 0]], 0.0);
        assert_eq!(depth_t.data[[0, 0, 0, 1]], 1.0);
        assert_eq!(depth_t.data[[0, 0, 1, 1]], 257.0 / 65535.0);
        let labels = labels.unwrap();
        assert_eq!(labels.data[[0, 0, 0]], 0);
        assert_eq!(labels.data[[0, 0, 1]], 5);
        assert_eq!(labels.data[[0, 1, 0]], IGNORE_LABEL);
        assert_eq!(labels.data[[0, 1, 1]], 1);
    }

    #[test]
    fn missing_file_error_names_path() {
        let dir = tempdir().unwrap();
        std::fs::write(
            dir.path().join("manifest.txt"),
            "train\trgb/train/missing.png\tdepth/train/missing.png\t-\n",
        )
        .unwrap();
        let adapter = DatasetAdapter::open(dir.path(), "train", 6, None).unwrap();
        match adapter.load_batch(&[0]) {
            Err(Error::Data { path, .. }) => {
                assert!(path.to_string_lossy().contains("missing.png"))
            }
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn remap_table_applies() {
        let dir = tempdir().unwrap();
        let spec = ToySpec {
            size: 64,
            ..ToySpec::default()
        };
        generate_toy(&spec, 1, Domain::Source, "train", dir.path()).unwrap();
        let mut table = BTreeMap::new();
        table.insert(0u32, 1u32); // background becomes class 1, all else IGNORE
        let adapter = DatasetAdapter::open(dir.path(), "train", 6, Some(table)).unwrap();
        let s = adapter.load_sample(0).unwrap();
        for &v in s.label.as_ref().unwrap().iter() {
            assert!(v == 1 || v == IGNORE_LABEL);
        }
    }

    #[test]
    fn toyspec_parsing_rejects_unknown_keys() {
        assert!(ToySpec::from_str_cfg("size = 64\nseed = 3").is_ok());
        let err = ToySpec::from_str_cfg("sizee = 64").unwrap_err();
        assert!(err.to_string().contains("min_depth_gap"));
    }
}
