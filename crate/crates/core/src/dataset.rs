//! COCO-style ground-truth datasets and detection result files.
//!
//! Documents store boxes as `[x, y, width, height]`; in memory they are
//! corner-form [`BBox`]es. Fields this crate does not model are kept in
//! `extra` maps and written back unchanged.
//!
//! Two extension fields ride on annotations: `source` (`"human"` or `"pseudo"`)
//! and `score`, present only on pseudo labels. Plain COCO readers ignore both.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::geometry::{BBox, ScoredBox};

/// Category used when synthesizing single-class datasets.
pub const DEFAULT_CATEGORY_ID: u64 = 1;
pub const DEFAULT_CATEGORY_NAME: &str = "object";

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    pub extra: Map<String, Value>,
}

impl ImageRecord {
    pub fn new(image_id: u64, file_name: impl Into<String>, width: u32, height: u32) -> Self {
        Self {
            image_id,
            file_name: file_name.into(),
            width,
            height,
            extra: Map::new(),
        }
    }
}

/// Where an annotation came from. Pseudo labels keep the teacher's confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Source {
    Human,
    Pseudo { score: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub annotation_id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
    pub source: Source,
    pub extra: Map<String, Value>,
}

impl Annotation {
    pub fn human(annotation_id: u64, image_id: u64, category_id: u64, bbox: BBox) -> Self {
        Self {
            annotation_id,
            image_id,
            category_id,
            bbox,
            source: Source::Human,
            extra: Map::new(),
        }
    }

    pub fn pseudo(annotation_id: u64, image_id: u64, det: &ScoredBox) -> Self {
        Self {
            annotation_id,
            image_id,
            category_id: det.category_id(),
            bbox: *det.bbox(),
            source: Source::Pseudo { score: det.score() },
            extra: Map::new(),
        }
    }

    pub fn score(&self) -> Option<f64> {
        match self.source {
            Source::Human => None,
            Source::Pseudo { score } => Some(score),
        }
    }

    pub fn is_pseudo(&self) -> bool {
        matches!(self.source, Source::Pseudo { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Category {
    pub id: u64,
    pub name: String,
    pub extra: Map<String, Value>,
}

impl Category {
    pub fn new(id: u64, name: impl Into<String>) -> Self {
        Self {
            id,
            name: name.into(),
            extra: Map::new(),
        }
    }

    pub fn default_object() -> Self {
        Self::new(DEFAULT_CATEGORY_ID, DEFAULT_CATEGORY_NAME)
    }
}

/// A validated dataset. Only constructible through [`DetectionDataset::new`]
/// or [`parse_dataset`], both of which check every invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionDataset {
    images: Vec<ImageRecord>,
    annotations: Vec<Annotation>,
    categories: Vec<Category>,
    extra: Map<String, Value>,
}

impl DetectionDataset {
    /// Validates and builds a dataset. Boxes overhanging their image are
    /// clamped to the image bounds with a warning.
    pub fn new(
        images: Vec<ImageRecord>,
        annotations: Vec<Annotation>,
        categories: Vec<Category>,
    ) -> Result<Self> {
        Self::with_extra(images, annotations, categories, Map::new())
    }

    pub fn with_extra(
        images: Vec<ImageRecord>,
        mut annotations: Vec<Annotation>,
        categories: Vec<Category>,
        extra: Map<String, Value>,
    ) -> Result<Self> {
        let mut category_ids = HashSet::new();
        for c in &categories {
            if !category_ids.insert(c.id) {
                return Err(Error::Validation(format!("duplicate category id {}", c.id)));
            }
        }
        let mut dims = HashMap::with_capacity(images.len());
        for img in &images {
            if img.width == 0 || img.height == 0 {
                return Err(Error::Validation(format!(
                    "image {} has non-positive size {}x{}",
                    img.image_id, img.width, img.height
                )));
            }
            if dims.insert(img.image_id, (img.width, img.height)).is_some() {
                return Err(Error::Validation(format!("duplicate image id {}", img.image_id)));
            }
        }
        let mut annotation_ids = HashSet::with_capacity(annotations.len());
        let mut clamped = 0usize;
        for ann in &mut annotations {
            if !annotation_ids.insert(ann.annotation_id) {
                return Err(Error::Validation(format!(
                    "duplicate annotation id {}",
                    ann.annotation_id
                )));
            }
            let Some(&(w, h)) = dims.get(&ann.image_id) else {
                return Err(Error::Validation(format!(
                    "annotation {} references missing image_id {}",
                    ann.annotation_id, ann.image_id
                )));
            };
            if !category_ids.contains(&ann.category_id) {
                return Err(Error::Validation(format!(
                    "annotation {} references missing category_id {}",
                    ann.annotation_id, ann.category_id
                )));
            }
            if let Source::Pseudo { score } = ann.source {
                if !(0.0..=1.0).contains(&score) {
                    return Err(Error::Validation(format!(
                        "annotation {} has score {score} outside [0, 1]",
                        ann.annotation_id
                    )));
                }
            }
            let (bbox, changed) = ann.bbox.clamp_to(f64::from(w), f64::from(h));
            if changed {
                ann.bbox = bbox;
                clamped += 1;
            }
        }
        if clamped > 0 {
            log::warn!("clamped {clamped} annotation boxes to image bounds");
        }
        Ok(Self {
            images,
            annotations,
            categories,
            extra,
        })
    }

    pub fn empty() -> Self {
        Self {
            images: Vec::new(),
            annotations: Vec::new(),
            categories: Vec::new(),
            extra: Map::new(),
        }
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    /// Top-level document fields other than the three collections.
    pub fn extra(&self) -> &Map<String, Value> {
        &self.extra
    }

    pub fn into_parts(self) -> (Vec<ImageRecord>, Vec<Annotation>, Vec<Category>, Map<String, Value>) {
        (self.images, self.annotations, self.categories, self.extra)
    }

    pub fn image(&self, image_id: u64) -> Option<&ImageRecord> {
        self.images.iter().find(|i| i.image_id == image_id)
    }

    /// Ground-truth boxes grouped by image, in annotation order.
    pub fn boxes_by_image(&self) -> BTreeMap<u64, Vec<BBox>> {
        let mut out: BTreeMap<u64, Vec<BBox>> =
            self.images.iter().map(|i| (i.image_id, Vec::new())).collect();
        for ann in &self.annotations {
            out.entry(ann.image_id).or_default().push(ann.bbox);
        }
        out
    }
}

// --- document representation ---

#[derive(Serialize, Deserialize)]
struct RawDataset {
    images: Vec<RawImage>,
    annotations: Vec<RawAnnotation>,
    categories: Vec<RawCategory>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct RawImage {
    id: u64,
    file_name: String,
    width: u32,
    height: u32,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct RawAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    // recomputed from the box on write; input values are ignored
    #[serde(default)]
    area: Option<f64>,
    #[serde(default)]
    iscrowd: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct RawCategory {
    id: u64,
    name: String,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct RawDetection {
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    score: f64,
}

fn parse_error(input: &[u8], err: serde_json::Error) -> Error {
    let (line, column) = (err.line(), err.column());
    let line_start = if line <= 1 {
        0
    } else {
        input
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == b'\n')
            .nth(line - 2)
            .map_or(input.len(), |(i, _)| i + 1)
    };
    Error::Parse {
        offset: (line_start + column.saturating_sub(1)).min(input.len()),
        line,
        column,
        message: err.to_string(),
    }
}

fn bbox_from_storage(what: &str, id: u64, xywh: [f64; 4]) -> Result<BBox> {
    let [x, y, w, h] = xywh;
    BBox::from_xywh(x, y, w, h).map_err(|e| Error::Validation(format!("{what} {id}: {e}")))
}

/// Parses and validates a COCO annotation document.
pub fn parse_dataset(input: &[u8]) -> Result<DetectionDataset> {
    let raw: RawDataset = serde_json::from_slice(input).map_err(|e| parse_error(input, e))?;

    let images = raw
        .images
        .into_iter()
        .map(|r| ImageRecord {
            image_id: r.id,
            file_name: r.file_name,
            width: r.width,
            height: r.height,
            extra: r.extra,
        })
        .collect();

    let mut annotations = Vec::with_capacity(raw.annotations.len());
    for r in raw.annotations {
        if r.iscrowd != 0 {
            return Err(Error::Validation(format!(
                "annotation {} has iscrowd = {}; crowd annotations are not supported",
                r.id, r.iscrowd
            )));
        }
        let source = match (r.source.as_deref(), r.score) {
            (None | Some("human"), None) => Source::Human,
            (None | Some("human"), Some(_)) => {
                return Err(Error::Validation(format!(
                    "annotation {} is human-labeled but carries a score",
                    r.id
                )))
            }
            (Some("pseudo"), Some(score)) => Source::Pseudo { score },
            (Some("pseudo"), None) => {
                return Err(Error::Validation(format!(
                    "pseudo annotation {} has no score",
                    r.id
                )))
            }
            (Some(other), _) => {
                return Err(Error::Validation(format!(
                    "annotation {} has unknown source {other:?}",
                    r.id
                )))
            }
        };
        annotations.push(Annotation {
            annotation_id: r.id,
            image_id: r.image_id,
            category_id: r.category_id,
            bbox: bbox_from_storage("annotation", r.id, r.bbox)?,
            source,
            extra: r.extra,
        });
    }

    let categories = raw
        .categories
        .into_iter()
        .map(|r| Category {
            id: r.id,
            name: r.name,
            extra: r.extra,
        })
        .collect();

    DetectionDataset::with_extra(images, annotations, categories, raw.extra)
}

/// Serializes a dataset as a COCO document.
pub fn write_dataset(d: &DetectionDataset) -> Vec<u8> {
    let raw = RawDataset {
        images: d
            .images
            .iter()
            .map(|i| RawImage {
                id: i.image_id,
                file_name: i.file_name.clone(),
                width: i.width,
                height: i.height,
                extra: i.extra.clone(),
            })
            .collect(),
        annotations: d
            .annotations
            .iter()
            .map(|a| RawAnnotation {
                id: a.annotation_id,
                image_id: a.image_id,
                category_id: a.category_id,
                bbox: a.bbox.to_xywh(),
                area: Some(a.bbox.area()),
                iscrowd: 0,
                source: Some(if a.is_pseudo() { "pseudo" } else { "human" }.to_owned()),
                score: a.score(),
                extra: a.extra.clone(),
            })
            .collect(),
        categories: d
            .categories
            .iter()
            .map(|c| RawCategory {
                id: c.id,
                name: c.name.clone(),
                extra: c.extra.clone(),
            })
            .collect(),
        extra: d.extra.clone(),
    };
    serde_json::to_vec_pretty(&raw).expect("dataset serialization cannot fail")
}

/// Per-image detections keyed by image id, input order preserved within an image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionResults {
    per_image: BTreeMap<u64, Vec<ScoredBox>>,
}

impl DetectionResults {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, image_id: u64, det: ScoredBox) {
        self.per_image.entry(image_id).or_default().push(det);
    }

    /// Replaces the detections of one image.
    pub fn insert(&mut self, image_id: u64, dets: Vec<ScoredBox>) {
        self.per_image.insert(image_id, dets);
    }

    pub fn get(&self, image_id: u64) -> Option<&[ScoredBox]> {
        self.per_image.get(&image_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &[ScoredBox])> {
        self.per_image.iter().map(|(&id, v)| (id, v.as_slice()))
    }

    pub fn image_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.per_image.keys().copied()
    }

    pub fn num_images(&self) -> usize {
        self.per_image.len()
    }

    pub fn num_detections(&self) -> usize {
        self.per_image.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.per_image.is_empty()
    }
}

impl FromIterator<(u64, Vec<ScoredBox>)> for DetectionResults {
    fn from_iter<I: IntoIterator<Item = (u64, Vec<ScoredBox>)>>(iter: I) -> Self {
        Self {
            per_image: iter.into_iter().collect(),
        }
    }
}

/// Parses a COCO results array.
pub fn parse_results(input: &[u8]) -> Result<DetectionResults> {
    let raw: Vec<RawDetection> = serde_json::from_slice(input).map_err(|e| parse_error(input, e))?;
    let mut results = DetectionResults::new();
    for (n, r) in raw.into_iter().enumerate() {
        let bbox = bbox_from_storage("detection", n as u64, r.bbox)?;
        let det = ScoredBox::new(bbox, r.score, r.category_id)
            .map_err(|e| Error::Validation(format!("detection {n} on image {}: {e}", r.image_id)))?;
        results.push(r.image_id, det);
    }
    Ok(results)
}

pub fn write_results(results: &DetectionResults) -> Vec<u8> {
    let raw: Vec<RawDetection> = results
        .iter()
        .flat_map(|(image_id, dets)| {
            dets.iter().map(move |d| RawDetection {
                image_id,
                category_id: d.category_id(),
                bbox: d.bbox().to_xywh(),
                score: d.score(),
            })
        })
        .collect();
    serde_json::to_vec_pretty(&raw).expect("results serialization cannot fail")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub images: usize,
    pub annotations: usize,
    pub pseudo_annotations: usize,
    pub mean_density: f64,
    pub median_density: f64,
    pub max_density: usize,
    /// Annotation count per image, in image order.
    pub per_image: Vec<(u64, usize)>,
}

impl DatasetStats {
    /// Number of images for each annotation count.
    pub fn histogram(&self) -> BTreeMap<usize, usize> {
        let mut h = BTreeMap::new();
        for &(_, n) in &self.per_image {
            *h.entry(n).or_insert(0) += 1;
        }
        h
    }
}

pub fn dataset_stats(d: &DetectionDataset) -> Result<DatasetStats> {
    if d.images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut counts: HashMap<u64, usize> = d.images.iter().map(|i| (i.image_id, 0)).collect();
    for ann in &d.annotations {
        *counts.get_mut(&ann.image_id).expect("validated reference") += 1;
    }
    let per_image: Vec<(u64, usize)> = d.images.iter().map(|i| (i.image_id, counts[&i.image_id])).collect();

    let mut sorted: Vec<usize> = per_image.iter().map(|&(_, n)| n).collect();
    sorted.sort_unstable();
    let mid = sorted.len() / 2;
    let median_density = if sorted.len() % 2 == 1 {
        sorted[mid] as f64
    } else {
        (sorted[mid - 1] + sorted[mid]) as f64 / 2.0
    };

    Ok(DatasetStats {
        images: d.images.len(),
        annotations: d.annotations.len(),
        pseudo_annotations: d.annotations.iter().filter(|a| a.is_pseudo()).count(),
        mean_density: d.annotations.len() as f64 / d.images.len() as f64,
        median_density,
        max_density: *sorted.last().expect("non-empty"),
        per_image,
    })
}
