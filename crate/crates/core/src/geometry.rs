//! Axis-aligned boxes and the two overlap measures used by suppression.
//!
//! Coordinates are continuous pixels: a box spans `[x_min, x_max] × [y_min, y_max]`
//! and its area is `width × height` with no `+1` correction.

use crate::error::{Error, Result};

/// Axis-aligned rectangle.
///
/// Construction validates the box, so every `BBox` has finite coordinates and
/// non-negative extents. Zero-area boxes are allowed. The box is held as
/// origin plus size, the same form COCO documents store, so conversion to and
/// from `[x, y, width, height]` is exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BBox {
    /// Builds a box from its corners.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidBox {
                x_min,
                y_min,
                x_max,
                y_max,
                reason: "non-finite coordinate",
            });
        }
        if x_max < x_min || y_max < y_min {
            return Err(Error::InvalidBox {
                x_min,
                y_min,
                x_max,
                y_max,
                reason: "negative extent",
            });
        }
        Self::from_xywh(x_min, y_min, x_max - x_min, y_max - y_min)
    }

    /// Builds a box from COCO `(x, y, width, height)` storage.
    pub fn from_xywh(x: f64, y: f64, width: f64, height: f64) -> Result<Self> {
        let invalid = |reason| Error::InvalidBox {
            x_min: x,
            y_min: y,
            x_max: x + width,
            y_max: y + height,
            reason,
        };
        let all = [x, y, width, height];
        if !all.iter().all(|v| v.is_finite()) || !(x + width).is_finite() || !(y + height).is_finite() {
            return Err(invalid("non-finite coordinate"));
        }
        if width < 0.0 || height < 0.0 {
            return Err(invalid("negative width or height"));
        }
        Ok(Self {
            x,
            y,
            // folds -0.0 so equal boxes compare equal
            w: width + 0.0,
            h: height + 0.0,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x
    }

    pub fn y_min(&self) -> f64 {
        self.y
    }

    pub fn x_max(&self) -> f64 {
        self.x + self.w
    }

    pub fn y_max(&self) -> f64 {
        self.y + self.h
    }

    pub fn width(&self) -> f64 {
        self.w
    }

    pub fn height(&self) -> f64 {
        self.h
    }

    /// `[x, y, width, height]` as stored in COCO documents.
    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn diagonal(&self) -> f64 {
        self.w.hypot(self.h)
    }

    /// True when `other` lies inside `self` (boundaries may touch).
    pub fn contains(&self, other: &BBox) -> bool {
        self.x_min() <= other.x_min()
            && self.y_min() <= other.y_min()
            && other.x_max() <= self.x_max()
            && other.y_max() <= self.y_max()
    }

    /// Clamps the box to `[0, width] × [0, height]`. Returns the clamped box and
    /// whether anything changed.
    pub fn clamp_to(&self, width: f64, height: f64) -> (BBox, bool) {
        let inside = self.x >= 0.0 && self.y >= 0.0 && self.x_max() <= width && self.y_max() <= height;
        if inside {
            return (*self, false);
        }
        let x = self.x_min().clamp(0.0, width);
        let y = self.y_min().clamp(0.0, height);
        let w = fit_extent(x, self.x_max().clamp(0.0, width), width);
        let h = fit_extent(y, self.y_max().clamp(0.0, height), height);
        (BBox { x, y, w, h }, true)
    }

    /// Same box shifted by `(dx, dy)`.
    pub fn translate(&self, dx: f64, dy: f64) -> Result<BBox> {
        BBox::from_xywh(self.x + dx, self.y + dy, self.w, self.h)
    }
}

/// Extent from `start` to `end` such that `start + extent` does not round past `limit`.
fn fit_extent(start: f64, end: f64, limit: f64) -> f64 {
    let mut extent = (end - start).max(0.0);
    while extent > 0.0 && start + extent > limit {
        extent = extent.next_down();
    }
    extent
}

/// Which overlap ratio a suppression pass compares against its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouKind {
    /// Intersection over union.
    Union,
    /// Intersection over the smaller of the two areas (nms-inter).
    Min,
}

impl IouKind {
    #[inline]
    pub fn overlap(self, a: &BBox, b: &BBox) -> f64 {
        match self {
            IouKind::Union => iou_union(a, b),
            IouKind::Min => iou_min(a, b),
        }
    }
}

pub fn area(b: &BBox) -> f64 {
    b.area()
}

/// Area of the overlap rectangle, zero for disjoint boxes.
#[inline]
pub fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let w = a.x_max().min(b.x_max()) - a.x_min().max(b.x_min());
    let h = a.y_max().min(b.y_max()) - a.y_min().max(b.y_min());
    if w <= 0.0 || h <= 0.0 {
        0.0
    } else {
        w * h
    }
}

/// Intersection over union. Returns 0 when the union has zero area.
#[inline]
pub fn iou_union(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).min(1.0)
    }
}

/// Intersection over the smaller area. Returns 0 if either box has zero area.
#[inline]
pub fn iou_min(a: &BBox, b: &BBox) -> f64 {
    let smaller = a.area().min(b.area());
    if smaller <= 0.0 {
        return 0.0;
    }
    (intersection_area(a, b) / smaller).min(1.0)
}

/// A detection: a box with a confidence in `[0, 1]` and a category label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    bbox: BBox,
    score: f64,
    category_id: u64,
}

impl ScoredBox {
    pub fn new(bbox: BBox, score: f64, category_id: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidScore(score));
        }
        Ok(Self {
            bbox,
            // folds -0.0 into 0.0 so ordering by total_cmp matches numeric order
            score: score + 0.0,
            category_id,
        })
    }

    pub fn bbox(&self) -> &BBox {
        &self.bbox
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn category_id(&self) -> u64 {
        self.category_id
    }

    /// Same box with a different score.
    pub fn with_score(&self, score: f64) -> Result<Self> {
        Self::new(self.bbox, score, self.category_id)
    }
}
