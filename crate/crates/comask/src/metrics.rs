//! Segmentation metrics: classwise IoU / mIoU from an accumulated confusion
//! matrix, and boundary IoU restricted to a band around mask contours.
//!
//! The boundary band of a mask is the mask minus its morphological erosion
//! by a Chebyshev ball of radius `r = max(1, round(d * image diagonal))`,
//! with pixels outside the image treated as background. Ground-truth pixels
//! labeled [`IGNORE_LABEL`] are excluded from every count.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{LabelMap, IGNORE_LABEL};

/// Boundary-band parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct BoundaryConfig {
    pub dilation: f64,
    pub radius: usize,
}

impl BoundaryConfig {
    /// Radius from a dilation factor relative to the image diagonal.
    pub fn from_dilation(d: f64, hw: (usize, usize)) -> Self {
        let diag = ((hw.0 * hw.0 + hw.1 * hw.1) as f64).sqrt();
        Self {
            dilation: d,
            radius: ((d * diag).round() as usize).max(1),
        }
    }
}

/// Row = ground truth class, column = predicted class.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn update(&mut self, pred: &Array2<u32>, gt: &Array2<u32>) -> Result<()> {
        if pred.dim() != gt.dim() {
            return Err(Error::ShapeMismatch {
                name: "confusion update".into(),
                expected: vec![gt.dim().0, gt.dim().1],
                got: vec![pred.dim().0, pred.dim().1],
            });
        }
        for (&p, &g) in pred.iter().zip(gt.iter()) {
            if g == IGNORE_LABEL {
                continue;
            }
            debug_assert!((g as usize) < self.k && (p as usize) < self.k);
            self.counts[g as usize * self.k + p as usize] += 1;
        }
        Ok(())
    }

    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.k + pred]
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.k, other.k);
        for (a, b) in self.counts.iter_mut().zip(other.counts.iter()) {
            *a += b;
        }
    }

    /// IoU per class; `None` for classes absent from both prediction and
    /// ground truth (excluded from the mean).
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|c| {
                let tp = self.count(c, c);
                let fp: u64 = (0..self.k).filter(|&g| g != c).map(|g| self.count(g, c)).sum();
                let fn_: u64 = (0..self.k).filter(|&p| p != c).map(|p| self.count(c, p)).sum();
                let denom = tp + fp + fn_;
                if denom == 0 {
                    None
                } else {
                    Some(tp as f64 / denom as f64)
                }
            })
            .collect()
    }

    pub fn miou(&self) -> f64 {
        mean_of_present(&self.per_class_iou())
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        (0..self.k)
            .map(|g| (0..self.k).map(|p| self.count(g, p)).collect())
            .collect()
    }
}

fn mean_of_present(values: &[Option<f64>]) -> f64 {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

/// Erode a binary mask by a Chebyshev ball of radius `r`; pixels outside
/// the image count as background.
fn erode(mask: &Array2<bool>, r: usize) -> Array2<bool> {
    let (h, w) = mask.dim();
    let mut cur = mask.clone();
    for _ in 0..r {
        let mut next = Array2::<bool>::default((h, w));
        for y in 0..h {
            for x in 0..w {
                if !cur[[y, x]] {
                    continue;
                }
                let mut keep = true;
                'outer: for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                        if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                            keep = false;
                            break 'outer;
                        }
                        if !cur[[ny as usize, nx as usize]] {
                            keep = false;
                            break 'outer;
                        }
                    }
                }
                next[[y, x]] = keep;
            }
        }
        cur = next;
        if cur.iter().all(|v| !v) {
            break;
        }
    }
    cur
}

/// Boundary band: mask minus its erosion.
fn boundary_band(mask: &Array2<bool>, r: usize) -> Array2<bool> {
    let eroded = erode(mask, r);
    let mut band = mask.clone();
    band.zip_mut_with(&eroded, |b, &e| *b = *b && !e);
    band
}

/// Streaming per-class boundary intersection/union counts.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryAccumulator {
    k: usize,
    pub config: BoundaryConfig,
    inter: Vec<u64>,
    union: Vec<u64>,
}

impl BoundaryAccumulator {
    pub fn new(k: usize, config: BoundaryConfig) -> Self {
        Self {
            k,
            config,
            inter: vec![0; k],
            union: vec![0; k],
        }
    }

    pub fn update(&mut self, pred: &Array2<u32>, gt: &Array2<u32>) -> Result<()> {
        if pred.dim() != gt.dim() {
            return Err(Error::ShapeMismatch {
                name: "boundary update".into(),
                expected: vec![gt.dim().0, gt.dim().1],
                got: vec![pred.dim().0, pred.dim().1],
            });
        }
        let valid = gt.mapv(|g| g != IGNORE_LABEL);
        for c in 0..self.k {
            let gt_mask = gt.mapv(|g| g == c as u32);
            let pred_mask =
                Array2::from_shape_fn(pred.dim(), |ix| pred[ix] == c as u32 && valid[ix]);
            if !gt_mask.iter().any(|&v| v) && !pred_mask.iter().any(|&v| v) {
                continue;
            }
            let gt_band = boundary_band(&gt_mask, self.config.radius);
            let pred_band = boundary_band(&pred_mask, self.config.radius);
            for ((&g, &p), &v) in gt_band.iter().zip(pred_band.iter()).zip(valid.iter()) {
                if !v {
                    continue;
                }
                if g && p {
                    self.inter[c] += 1;
                }
                if g || p {
                    self.union[c] += 1;
                }
            }
        }
        Ok(())
    }

    pub fn per_class(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|c| {
                if self.union[c] == 0 {
                    None
                } else {
                    Some(self.inter[c] as f64 / self.union[c] as f64)
                }
            })
            .collect()
    }

    pub fn mean(&self) -> f64 {
        mean_of_present(&self.per_class())
    }
}

/// Per-class boundary IoU of a single prediction/ground-truth pair.
pub fn boundary_iou(pred: &LabelMap, gt: &LabelMap, d: f64) -> Result<Vec<Option<f64>>> {
    let (h, w) = gt.hw();
    let mut acc = BoundaryAccumulator::new(gt.num_classes, BoundaryConfig::from_dilation(d, (h, w)));
    let b = gt.data.dim().0;
    for bi in 0..b {
        acc.update(
            &pred.data.index_axis(ndarray::Axis(0), bi).to_owned(),
            &gt.data.index_axis(ndarray::Axis(0), bi).to_owned(),
        )?;
    }
    Ok(acc.per_class())
}

/// Accumulating report combining both metric families.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub num_classes: usize,
    pub confusion: ConfusionMatrix,
    pub boundary: BoundaryAccumulator,
}

impl MetricReport {
    pub fn new(num_classes: usize, boundary: BoundaryConfig) -> Self {
        Self {
            num_classes,
            confusion: ConfusionMatrix::new(num_classes),
            boundary: BoundaryAccumulator::new(num_classes, boundary),
        }
    }

    pub fn update(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        let b = gt.data.dim().0;
        if pred.data.dim() != gt.data.dim() {
            return Err(Error::ShapeMismatch {
                name: "metric update".into(),
                expected: gt.data.shape().to_vec(),
                got: pred.data.shape().to_vec(),
            });
        }
        for bi in 0..b {
            let p = pred.data.index_axis(ndarray::Axis(0), bi).to_owned();
            let g = gt.data.index_axis(ndarray::Axis(0), bi).to_owned();
            self.confusion.update(&p, &g)?;
            self.boundary.update(&p, &g)?;
        }
        Ok(())
    }

    pub fn summary(&self) -> MetricSummary {
        MetricSummary {
            num_classes: self.num_classes,
            confusion: self.confusion.rows(),
            per_class_iou: self.confusion.per_class_iou(),
            miou: self.confusion.miou(),
            per_class_boundary_iou: self.boundary.per_class(),
            boundary_miou: self.boundary.mean(),
            boundary: self.boundary.config,
        }
    }
}

/// Serializable snapshot of a [`MetricReport`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricSummary {
    pub num_classes: usize,
    pub confusion: Vec<Vec<u64>>,
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub per_class_boundary_iou: Vec<Option<f64>>,
    pub boundary_miou: f64,
    pub boundary: BoundaryConfig,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::Rng;

    fn label_map(arr: Array2<u32>, k: usize) -> LabelMap {
        LabelMap::new(arr.insert_axis(ndarray::Axis(0)), k).unwrap()
    }

    #[test]
    fn perfect_prediction_is_unit_miou() {
        let mut gt = Array2::<u32>::zeros((8, 8));
        for y in 0..4 {
            for x in 0..4 {
                gt[[y, x]] = 2;
            }
        }
        let mut report = MetricReport::new(4, BoundaryConfig { dilation: 0.005, radius: 1 });
        let gt_map = label_map(gt.clone(), 4);
        report.update(&gt_map, &gt_map).unwrap();
        assert_eq!(report.confusion.miou(), 1.0);
        assert_eq!(report.boundary.mean(), 1.0);
        // absent classes are excluded, not counted as zero
        let ious = report.confusion.per_class_iou();
        assert_eq!(ious[1], None);
        assert_eq!(ious[3], None);
        assert_eq!(ious[0], Some(1.0));
        assert_eq!(ious[2], Some(1.0));
    }

    #[test]
    fn disjoint_predictions_score_zero() {
        let gt = Array2::<u32>::zeros((4, 4));
        let pred = Array2::<u32>::ones((4, 4));
        let mut cm = ConfusionMatrix::new(2);
        cm.update(&pred, &gt).unwrap();
        let ious = cm.per_class_iou();
        assert_eq!(ious[0], Some(0.0));
        assert_eq!(ious[1], Some(0.0));
        assert_eq!(cm.miou(), 0.0);
    }

    #[test]
    fn confusion_matches_brute_force_sets() {
        let mut rng = crate::rng::seeded_rng(0, "metrics");
        for trial in 0..20 {
            let k = 4;
            let gen = |rng: &mut crate::rng::StreamRng| {
                Array2::<u32>::from_shape_fn((8, 8), |_| {
                    let v = rng.gen_range(0..k + 1) as u32;
                    if v == k as u32 {
                        IGNORE_LABEL
                    } else {
                        v
                    }
                })
            };
            let gt = gen(&mut rng);
            let pred = Array2::<u32>::from_shape_fn((8, 8), |_| rng.gen_range(0..k) as u32);
            let mut cm = ConfusionMatrix::new(k);
            cm.update(&pred, &gt).unwrap();
            let ious = cm.per_class_iou();
            for c in 0..k {
                let mut inter = 0usize;
                let mut uni = 0usize;
                for (p, g) in pred.iter().zip(gt.iter()) {
                    if *g == IGNORE_LABEL {
                        continue;
                    }
                    let in_p = *p == c as u32;
                    let in_g = *g == c as u32;
                    if in_p && in_g {
                        inter += 1;
                    }
                    if in_p || in_g {
                        uni += 1;
                    }
                }
                let expect = if uni == 0 {
                    None
                } else {
                    Some(inter as f64 / uni as f64)
                };
                assert_eq!(ious[c], expect, "trial {trial} class {c}");
            }
        }
    }

    #[test]
    fn boundary_band_matches_chebyshev_oracle() {
        // 16x16 single square, r = 1, against a direct distance-scan oracle
        let mut mask = Array2::<bool>::default((16, 16));
        for y in 4..12 {
            for x in 4..12 {
                mask[[y, x]] = true;
            }
        }
        for r in [1usize, 2, 3] {
            let band = boundary_band(&mask, r);
            for y in 0..16i64 {
                for x in 0..16i64 {
                    let inside = mask[[y as usize, x as usize]];
                    // oracle: within Chebyshev distance r of a background
                    // pixel (or the image border)
                    let mut near_bg = false;
                    for dy in -(r as i64)..=r as i64 {
                        for dx in -(r as i64)..=r as i64 {
                            let (ny, nx) = (y + dy, x + dx);
                            if ny < 0 || nx < 0 || ny >= 16 || nx >= 16 {
                                near_bg = true;
                            } else if !mask[[ny as usize, nx as usize]] {
                                near_bg = true;
                            }
                        }
                    }
                    let expect = inside && near_bg;
                    assert_eq!(band[[y as usize, x as usize]], expect, "r={r} ({y},{x})");
                }
            }
        }
    }

    #[test]
    fn full_diagonal_radius_equals_plain_iou() {
        let mut rng = crate::rng::seeded_rng(1, "metrics");
        for _ in 0..5 {
            let k = 3;
            let gt = Array2::<u32>::from_shape_fn((10, 12), |_| rng.gen_range(0..k) as u32);
            let pred = Array2::<u32>::from_shape_fn((10, 12), |_| rng.gen_range(0..k) as u32);
            let mut cm = ConfusionMatrix::new(k);
            cm.update(&pred, &gt).unwrap();
            let mut acc = BoundaryAccumulator::new(
                k,
                BoundaryConfig {
                    dilation: 1.0,
                    radius: 16, // >= diagonal of 10x12
                },
            );
            acc.update(&pred, &gt).unwrap();
            let plain = cm.per_class_iou();
            let band = acc.per_class();
            for c in 0..k {
                match (plain[c], band[c]) {
                    (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12, "class {c}: {a} vs {b}"),
                    (None, None) => {}
                    other => panic!("presence mismatch for class {c}: {other:?}"),
                }
            }
        }
    }

    #[test]
    fn streaming_equals_concatenated() {
        let mut rng = crate::rng::seeded_rng(2, "metrics");
        let k = 4;
        let imgs: Vec<(Array2<u32>, Array2<u32>)> = (0..6)
            .map(|_| {
                (
                    Array2::<u32>::from_shape_fn((6, 6), |_| rng.gen_range(0..k) as u32),
                    Array2::<u32>::from_shape_fn((6, 6), |_| rng.gen_range(0..k) as u32),
                )
            })
            .collect();
        let mut streaming = ConfusionMatrix::new(k);
        for (p, g) in &imgs {
            streaming.update(p, g).unwrap();
        }
        // concatenation: one tall image
        let mut pred = Array2::<u32>::zeros((36, 6));
        let mut gt = Array2::<u32>::zeros((36, 6));
        for (i, (p, g)) in imgs.iter().enumerate() {
            pred.slice_mut(ndarray::s![i * 6..(i + 1) * 6, ..]).assign(p);
            gt.slice_mut(ndarray::s![i * 6..(i + 1) * 6, ..]).assign(g);
        }
        let mut batch = ConfusionMatrix::new(k);
        batch.update(&pred, &gt).unwrap();
        assert_eq!(streaming.miou(), batch.miou());
        assert_eq!(streaming.rows(), batch.rows());
    }

    #[test]
    fn report_json_roundtrip() {
        let mut report = MetricReport::new(3, BoundaryConfig { dilation: 0.005, radius: 1 });
        let gt = label_map(
            Array2::from_shape_fn((8, 8), |(y, x)| ((y + x) % 3) as u32),
            3,
        );
        let pred = label_map(
            Array2::from_shape_fn((8, 8), |(y, x)| ((y * x) % 3) as u32),
            3,
        );
        report.update(&pred, &gt).unwrap();
        let summary = report.summary();
        let json = serde_json::to_string(&summary).unwrap();
        let back: MetricSummary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, summary);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let a = label_map(Array2::<u32>::zeros((4, 4)), 2);
        let b = label_map(Array2::<u32>::zeros((4, 5)), 2);
        let mut report = MetricReport::new(2, BoundaryConfig { dilation: 0.005, radius: 1 });
        assert!(report.update(&a, &b).is_err());
    }

    #[test]
    fn labelmap_boundary_wrapper() {
        let gt = label_map(
            Array2::from_shape_fn((16, 16), |(y, x)| u32::from(y >= 4 && y < 12 && x >= 4 && x < 12)),
            2,
        );
        let per_class = boundary_iou(&gt, &gt, 0.005).unwrap();
        assert_eq!(per_class[0], Some(1.0));
        assert_eq!(per_class[1], Some(1.0));
    }
}
