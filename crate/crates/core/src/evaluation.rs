//! COCO-protocol box mAP.
//!
//! Single category, single area range, no crowd handling. Per image, the top
//! `max_detections` detections by score are greedily matched to ground truth
//! at each IoU threshold; AP is the mean of the interpolated precision sampled
//! at `recall_points` evenly spaced recall levels in `[0, 1]`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{DetectionDataset, DetectionResults};
use crate::error::{Error, Result};
use crate::geometry::{iou_union, BBox, ScoredBox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "EvalConfig::default_thresholds")]
    pub iou_thresholds: Vec<f64>,
    #[serde(default = "EvalConfig::default_max_detections")]
    pub max_detections: usize,
    #[serde(default = "EvalConfig::default_recall_points")]
    pub recall_points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: Self::default_thresholds(),
            max_detections: Self::default_max_detections(),
            recall_points: Self::default_recall_points(),
        }
    }
}

impl EvalConfig {
    /// 0.50, 0.55, ..., 0.95.
    pub fn default_thresholds() -> Vec<f64> {
        (0..10).map(|k| f64::from(50 + 5 * k) / 100.0).collect()
    }

    pub fn default_max_detections() -> usize {
        300
    }

    pub fn default_recall_points() -> usize {
        101
    }

    pub fn validate(&self) -> Result<()> {
        if self.iou_thresholds.is_empty() {
            return Err(Error::InvalidConfig("iou_thresholds is empty".into()));
        }
        for w in self.iou_thresholds.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidConfig(format!(
                    "iou_thresholds must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        if let Some(t) = self.iou_thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return Err(Error::InvalidConfig(format!("iou threshold {t} outside (0, 1]")));
        }
        if self.max_detections == 0 {
            return Err(Error::InvalidConfig("max_detections must be positive".into()));
        }
        if self.recall_points < 2 {
            return Err(Error::InvalidConfig("recall_points must be at least 2".into()));
        }
        Ok(())
    }
}

/// Greedy COCO matching for one image at one threshold.
///
/// Detections are visited by descending score (ties by input index). Each
/// takes the still-unmatched ground truth with the highest IoU that is at
/// least `iou_threshold`, ties going to the lower ground-truth index. Returns
/// `(detection index, matched gt index)` pairs in visiting order.
pub fn match_image(gt: &[BBox], dets: &[ScoredBox], iou_threshold: f64) -> Vec<(usize, Option<usize>)> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score().total_cmp(&dets[a].score()).then(a.cmp(&b)));
    let mut taken = vec![false; gt.len()];
    order
        .into_iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt_box) in gt.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let iou = iou_union(dets[d].bbox(), gt_box);
                if iou < iou_threshold {
                    continue;
                }
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            let matched = best.map(|(g, _)| g);
            if let Some(g) = matched {
                taken[g] = true;
            }
            (d, matched)
        })
        .collect()
}

/// One evaluated detection, pooled across images for AP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredMatch {
    pub score: f64,
    pub image_id: u64,
    /// Position of the detection in its image's score order.
    pub rank: usize,
    pub true_positive: bool,
}

/// Interpolated precision at `recall_points` evenly spaced recall levels.
///
/// Detections are ranked by descending score, then image id, then in-image
/// rank. Precision at recall `r` is the best precision reached at any recall
/// `>= r`; levels never reached get 0.
pub fn interpolated_precision(matches: &[ScoredMatch], total_gt: usize, recall_points: usize) -> Vec<f64> {
    if total_gt == 0 || matches.is_empty() {
        return vec![0.0; recall_points];
    }
    let mut ranked: Vec<&ScoredMatch> = matches.iter().collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.image_id.cmp(&b.image_id))
            .then(a.rank.cmp(&b.rank))
    });

    let mut recall = Vec::with_capacity(ranked.len());
    let mut precision = Vec::with_capacity(ranked.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for m in ranked {
        if m.true_positive {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / total_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        if precision[i] < precision[i + 1] {
            precision[i] = precision[i + 1];
        }
    }

    let last = (recall_points - 1) as f64;
    let mut out = Vec::with_capacity(recall_points);
    let mut i = 0;
    for k in 0..recall_points {
        let level = k as f64 / last;
        while i < recall.len() && recall[i] < level {
            i += 1;
        }
        out.push(if i < recall.len() { precision[i] } else { 0.0 });
    }
    out
}

pub fn average_precision(matches: &[ScoredMatch], total_gt: usize, recall_points: usize) -> f64 {
    let curve = interpolated_precision(matches, total_gt, recall_points);
    curve.iter().sum::<f64>() / curve.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub iou_thresholds: Vec<f64>,
    /// AP for each entry of `iou_thresholds`.
    pub ap: Vec<f64>,
    pub map: f64,
    /// Interpolated precision curve for each threshold.
    pub precision: Vec<Vec<f64>>,
    pub total_gt: usize,
    /// Detections that took part in matching, after per-image truncation.
    pub total_detections: usize,
    /// Matched pairs for each threshold.
    pub matched: Vec<usize>,
}

/// Threshold label used as a document key: two decimals when exact.
pub fn threshold_key(t: f64) -> String {
    let short = format!("{t:.2}");
    if short.parse::<f64>().ok() == Some(t) {
        short
    } else {
        t.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub map: f64,
    pub ap_per_threshold: BTreeMap<String, f64>,
    pub total_gt: usize,
    pub total_detections: usize,
    pub matched_per_threshold: BTreeMap<String, usize>,
    pub precision_recall_curves: BTreeMap<String, Vec<f64>>,
}

impl EvalReport {
    pub fn ap_per_threshold(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.iou_thresholds.iter().copied().zip(self.ap.iter().copied())
    }

    pub fn ap_at(&self, threshold: f64) -> Option<f64> {
        self.ap_per_threshold().find(|(t, _)| *t == threshold).map(|(_, ap)| ap)
    }

    pub fn to_document(&self) -> ReportDocument {
        let keyed = |values: &[f64]| {
            self.iou_thresholds
                .iter()
                .map(|&t| threshold_key(t))
                .zip(values.iter().copied())
                .collect()
        };
        ReportDocument {
            map: self.map,
            ap_per_threshold: keyed(&self.ap),
            total_gt: self.total_gt,
            total_detections: self.total_detections,
            matched_per_threshold: self
                .iou_thresholds
                .iter()
                .map(|&t| threshold_key(t))
                .zip(self.matched.iter().copied())
                .collect(),
            precision_recall_curves: self
                .iou_thresholds
                .iter()
                .map(|&t| threshold_key(t))
                .zip(self.precision.iter().cloned())
                .collect(),
        }
    }

    /// Human-readable table, values to four decimals.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mAP {:.4}", self.map);
        let _ = writeln!(s, "{:>8}  {:>8}  {:>8}", "IoU", "AP", "matched");
        for ((t, ap), m) in self.ap_per_threshold().zip(&self.matched) {
            let _ = writeln!(s, "{:>8}  {:>8.4}  {:>8}", threshold_key(t), ap, m);
        }
        let _ = writeln!(s, "ground truth {}  detections {}", self.total_gt, self.total_detections);
        s
    }
}

/// Evaluates `results` against the ground truth in `gt_dataset`.
///
/// Every image id in `results` must exist in the dataset. Dataset images
/// without results count as having no detections.
pub fn evaluate(gt_dataset: &DetectionDataset, results: &DetectionResults, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let gt_by_image = gt_dataset.boxes_by_image();
    if let Some(id) = results.image_ids().find(|id| !gt_by_image.contains_key(id)) {
        return Err(Error::UnknownImage(id));
    }

    let total_gt: usize = gt_by_image.values().map(Vec::len).sum();
    if total_gt == 0 {
        log::warn!("evaluating against a corpus with no ground truth; AP is reported as 0");
    }

    let n_thr = cfg.iou_thresholds.len();
    let mut pooled: Vec<Vec<ScoredMatch>> = vec![Vec::new(); n_thr];
    let mut total_detections = 0;
    for (&image_id, gt) in &gt_by_image {
        let Some(dets) = results.get(image_id) else {
            continue;
        };
        let mut order: Vec<usize> = (0..dets.len()).collect();
        order.sort_by(|&a, &b| dets[b].score().total_cmp(&dets[a].score()).then(a.cmp(&b)));
        order.truncate(cfg.max_detections);
        let top: Vec<ScoredBox> = order.iter().map(|&i| dets[i]).collect();
        total_detections += top.len();

        for (t, &thr) in cfg.iou_thresholds.iter().enumerate() {
            // `top` is already in score order, so visiting order == rank.
            for (rank, (d, matched)) in match_image(gt, &top, thr).into_iter().enumerate() {
                debug_assert_eq!(rank, d);
                pooled[t].push(ScoredMatch {
                    score: top[d].score(),
                    image_id,
                    rank,
                    true_positive: matched.is_some(),
                });
            }
        }
    }

    let mut ap = Vec::with_capacity(n_thr);
    let mut precision = Vec::with_capacity(n_thr);
    let mut matched = Vec::with_capacity(n_thr);
    for matches in &pooled {
        let curve = interpolated_precision(matches, total_gt, cfg.recall_points);
        ap.push(curve.iter().sum::<f64>() / curve.len() as f64);
        precision.push(curve);
        matched.push(matches.iter().filter(|m| m.true_positive).count());
    }
    let map = ap.iter().sum::<f64>() / ap.len() as f64;

    Ok(EvalReport {
        iou_thresholds: cfg.iou_thresholds.clone(),
        ap,
        map,
        precision,
        total_gt,
        total_detections,
        matched,
    })
}
