//! Confidence filtering and greedy non-maximum suppression.
//!
//! [`nms`] is the quadratic reference. [`nms_fast`] produces the same output
//! through a uniform grid that limits which pairs are compared.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{IouKind, ScoredBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    ScoreFilter,
    NmsUnion,
    NmsInter,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::ScoreFilter => "ScoreFilter",
            Stage::NmsUnion => "NmsUnion",
            Stage::NmsInter => "NmsInter",
        })
    }
}

/// Parameters for [`refine`]. There is no default score threshold; callers
/// must pick one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuppressionConfig {
    pub score_threshold: f64,
    pub nms_iou_threshold: f64,
    pub nms_inter_iou_threshold: f64,
    #[serde(default = "SuppressionConfig::default_stage_order")]
    pub stage_order: Vec<Stage>,
}

impl SuppressionConfig {
    pub fn new(score_threshold: f64, nms_iou_threshold: f64, nms_inter_iou_threshold: f64) -> Self {
        Self {
            score_threshold,
            nms_iou_threshold,
            nms_inter_iou_threshold,
            stage_order: Self::default_stage_order(),
        }
    }

    pub fn default_stage_order() -> Vec<Stage> {
        vec![Stage::ScoreFilter, Stage::NmsUnion, Stage::NmsInter]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("score_threshold", self.score_threshold),
            ("nms_iou_threshold", self.nms_iou_threshold),
            ("nms_inter_iou_threshold", self.nms_inter_iou_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        if self.stage_order.is_empty() {
            return Err(Error::InvalidConfig("stage_order is empty".into()));
        }
        for (i, stage) in self.stage_order.iter().enumerate() {
            if self.stage_order[..i].contains(stage) {
                return Err(Error::InvalidConfig(format!("stage {stage} repeated in stage_order")));
            }
        }
        Ok(())
    }
}

/// Boxes removed by each stage of one [`refine_with_report`] call, in stage order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct StageReport {
    pub input: usize,
    pub removed: Vec<(Stage, usize)>,
    pub output: usize,
}

impl StageReport {
    pub fn removed_by(&self, stage: Stage) -> usize {
        self.removed
            .iter()
            .filter(|(s, _)| *s == stage)
            .map(|(_, n)| n)
            .sum()
    }

    /// Adds another report's counts into this one, stage by stage.
    pub fn accumulate(&mut self, other: &StageReport) {
        self.input += other.input;
        self.output += other.output;
        for &(stage, n) in &other.removed {
            match self.removed.iter_mut().find(|(s, _)| *s == stage) {
                Some(entry) => entry.1 += n,
                None => self.removed.push((stage, n)),
            }
        }
    }
}

/// Keeps boxes with `score >= threshold`, preserving order.
pub fn score_filter(boxes: &[ScoredBox], threshold: f64) -> Vec<ScoredBox> {
    boxes.iter().filter(|b| b.score() >= threshold).copied().collect()
}

/// Input indices sorted by descending score, ties by ascending index.
fn score_order(boxes: &[ScoredBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| by_score_desc(boxes, a, b));
    order
}

fn by_score_desc(boxes: &[ScoredBox], a: usize, b: usize) -> Ordering {
    boxes[b]
        .score()
        .total_cmp(&boxes[a].score())
        .then(a.cmp(&b))
}

/// Greedy per-category NMS.
///
/// Boxes are visited by descending score (ties by input index). Each unsuppressed
/// box is kept and suppresses every later box of the same category whose overlap
/// with it is strictly greater than `iou_threshold`. Output is in visiting order.
pub fn nms(boxes: &[ScoredBox], iou_threshold: f64, kind: IouKind) -> Vec<ScoredBox> {
    let order = score_order(boxes);
    let mut suppressed = vec![false; boxes.len()];
    let mut kept = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        kept.push(boxes[i]);
        let keeper = &boxes[i];
        for &j in &order[pos + 1..] {
            if suppressed[j] || boxes[j].category_id() != keeper.category_id() {
                continue;
            }
            if kind.overlap(keeper.bbox(), boxes[j].bbox()) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    kept
}

// Grid dimensions are capped so a few huge boxes cannot blow up memory.
const MAX_GRID_CELLS_PER_AXIS: usize = 2048;

/// Uniform bucket grid over the positive-area boxes of one call.
struct Grid {
    x0: f64,
    y0: f64,
    cell: f64,
    cols: usize,
    rows: usize,
    // CSR layout: bucket `c` holds `entries[starts[c]..starts[c + 1]]`.
    starts: Vec<usize>,
    entries: Vec<u32>,
}

impl Grid {
    fn build(boxes: &[ScoredBox], members: &[usize], cell: f64) -> Grid {
        let mut x0 = f64::INFINITY;
        let mut y0 = f64::INFINITY;
        let mut x1 = f64::NEG_INFINITY;
        let mut y1 = f64::NEG_INFINITY;
        for &i in members {
            let b = boxes[i].bbox();
            x0 = x0.min(b.x_min());
            y0 = y0.min(b.y_min());
            x1 = x1.max(b.x_max());
            y1 = y1.max(b.y_max());
        }
        let span = (x1 - x0).max(y1 - y0);
        let cell = cell.max(span / MAX_GRID_CELLS_PER_AXIS as f64);
        let cols = (((x1 - x0) / cell).floor() as usize + 1).min(MAX_GRID_CELLS_PER_AXIS + 1);
        let rows = (((y1 - y0) / cell).floor() as usize + 1).min(MAX_GRID_CELLS_PER_AXIS + 1);

        let mut grid = Grid {
            x0,
            y0,
            cell,
            cols,
            rows,
            starts: vec![0; cols * rows + 1],
            entries: Vec::new(),
        };
        for &i in members {
            let (c0, c1, r0, r1) = grid.span(&boxes[i]);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    grid.starts[r * cols + c + 1] += 1;
                }
            }
        }
        for k in 1..grid.starts.len() {
            grid.starts[k] += grid.starts[k - 1];
        }
        let mut fill = grid.starts.clone();
        grid.entries = vec![0; grid.starts[cols * rows]];
        for &i in members {
            let (c0, c1, r0, r1) = grid.span(&boxes[i]);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let slot = &mut fill[r * cols + c];
                    grid.entries[*slot] = i as u32;
                    *slot += 1;
                }
            }
        }
        grid
    }

    fn axis(&self, v: f64, origin: f64, len: usize) -> usize {
        (((v - origin) / self.cell).floor().max(0.0) as usize).min(len - 1)
    }

    /// Inclusive column and row ranges covered by a box.
    fn span(&self, b: &ScoredBox) -> (usize, usize, usize, usize) {
        let bb = b.bbox();
        (
            self.axis(bb.x_min(), self.x0, self.cols),
            self.axis(bb.x_max(), self.x0, self.cols),
            self.axis(bb.y_min(), self.y0, self.rows),
            self.axis(bb.y_max(), self.y0, self.rows),
        )
    }

    fn bucket(&self, c: usize, r: usize) -> &[u32] {
        let k = r * self.cols + c;
        &self.entries[self.starts[k]..self.starts[k + 1]]
    }
}

/// Grid-accelerated NMS; output is identical to [`nms`].
///
/// Two boxes with a positive overlap share an interior point and therefore at
/// least one grid cell, so only boxes in shared buckets need comparing. Boxes
/// with zero area never take part in suppression and are not indexed.
pub fn nms_fast(boxes: &[ScoredBox], iou_threshold: f64, kind: IouKind) -> Vec<ScoredBox> {
    let members: Vec<usize> = (0..boxes.len())
        .filter(|&i| boxes[i].bbox().area() > 0.0)
        .collect();
    let mut diagonals: Vec<f64> = members.iter().map(|&i| boxes[i].bbox().diagonal()).collect();
    if diagonals.len() < 2 {
        return nms(boxes, iou_threshold, kind);
    }
    let mid = diagonals.len() / 2;
    let (_, median, _) = diagonals.select_nth_unstable_by(mid, f64::total_cmp);
    let cell = *median;
    if cell <= 0.0 {
        return nms(boxes, iou_threshold, kind);
    }

    let grid = Grid::build(boxes, &members, cell);
    let order = score_order(boxes);
    let mut rank = vec![0usize; boxes.len()];
    for (pos, &i) in order.iter().enumerate() {
        rank[i] = pos;
    }

    let mut suppressed = vec![false; boxes.len()];
    let mut kept = Vec::new();
    for &i in &order {
        if suppressed[i] {
            continue;
        }
        kept.push(boxes[i]);
        let keeper = &boxes[i];
        if keeper.bbox().area() <= 0.0 {
            continue;
        }
        let (c0, c1, r0, r1) = grid.span(keeper);
        for r in r0..=r1 {
            for c in c0..=c1 {
                for &j in grid.bucket(c, r) {
                    let j = j as usize;
                    if rank[j] <= rank[i]
                        || suppressed[j]
                        || boxes[j].category_id() != keeper.category_id()
                    {
                        continue;
                    }
                    if kind.overlap(keeper.bbox(), boxes[j].bbox()) > iou_threshold {
                        suppressed[j] = true;
                    }
                }
            }
        }
    }
    kept
}

/// Applies the configured stages in order.
pub fn refine(boxes: &[ScoredBox], cfg: &SuppressionConfig) -> Vec<ScoredBox> {
    refine_with_report(boxes, cfg).0
}

/// [`refine`] plus the number of boxes each stage removed.
pub fn refine_with_report(boxes: &[ScoredBox], cfg: &SuppressionConfig) -> (Vec<ScoredBox>, StageReport) {
    let mut current = boxes.to_vec();
    let mut report = StageReport {
        input: boxes.len(),
        ..StageReport::default()
    };
    for &stage in &cfg.stage_order {
        let before = current.len();
        current = match stage {
            Stage::ScoreFilter => score_filter(&current, cfg.score_threshold),
            Stage::NmsUnion => nms_fast(&current, cfg.nms_iou_threshold, IouKind::Union),
            Stage::NmsInter => nms_fast(&current, cfg.nms_inter_iou_threshold, IouKind::Min),
        };
        report.removed.push((stage, before - current.len()));
    }
    report.output = current.len();
    (current, report)
}
