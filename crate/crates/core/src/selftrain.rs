//! Data plumbing for teacher/student rounds: pseudo-label datasets, merging
//! with human-labeled data, density-based frame sampling and round manifests.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Annotation, Category, DetectionDataset, DetectionResults, ImageRecord};
use crate::error::{Error, Result};
use crate::suppression::{refine, SuppressionConfig};

/// Turns teacher detections into a pseudo-labeled dataset.
///
/// Each image's detections are refined with `cfg`; survivors become pseudo
/// annotations that keep their score. Every image in `unlabeled_images` is
/// kept, with or without annotations. Annotation ids run from 1 in image order.
pub fn pseudo_label(
    unlabeled_images: &[ImageRecord],
    results: &DetectionResults,
    cfg: &SuppressionConfig,
    categories: &[Category],
) -> Result<DetectionDataset> {
    cfg.validate()?;
    let known: HashSet<u64> = unlabeled_images.iter().map(|i| i.image_id).collect();
    if let Some(id) = results.image_ids().find(|id| !known.contains(id)) {
        return Err(Error::UnknownImage(id));
    }

    let mut annotations = Vec::new();
    for image in unlabeled_images {
        let Some(dets) = results.get(image.image_id) else {
            continue;
        };
        for det in refine(dets, cfg) {
            let id = annotations.len() as u64 + 1;
            annotations.push(Annotation::pseudo(id, image.image_id, &det));
        }
    }
    DetectionDataset::new(unlabeled_images.to_vec(), annotations, categories.to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Labeled,
    Pseudo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdMapping {
    pub origin: Origin,
    pub old: u64,
    pub new: u64,
}

/// Old-to-new id assignments made by [`merge`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdRemap {
    pub images: Vec<IdMapping>,
    pub annotations: Vec<IdMapping>,
}

impl IdRemap {
    pub fn image(&self, origin: Origin, old: u64) -> Option<u64> {
        self.images
            .iter()
            .find(|m| m.origin == origin && m.old == old)
            .map(|m| m.new)
    }
}

#[derive(Debug, Clone)]
pub struct Merged {
    pub dataset: DetectionDataset,
    pub remap: IdRemap,
}

/// Combines a human-labeled dataset with a pseudo-labeled one.
///
/// Images and annotations are renumbered from 1, labeled first, so ids never
/// collide. Categories must agree on every shared id. The same `file_name` in
/// both inputs is treated as contamination and rejected.
pub fn merge(labeled: &DetectionDataset, pseudo: &DetectionDataset) -> Result<Merged> {
    let mut categories: Vec<Category> = labeled.categories().to_vec();
    for c in pseudo.categories() {
        match categories.iter().find(|l| l.id == c.id) {
            Some(l) if l.name != c.name => {
                return Err(Error::Validation(format!(
                    "category {} is {:?} in the labeled dataset but {:?} in the pseudo dataset",
                    c.id, l.name, c.name
                )))
            }
            Some(_) => {}
            None => categories.push(c.clone()),
        }
    }

    let labeled_names: HashSet<&str> = labeled.images().iter().map(|i| i.file_name.as_str()).collect();
    if let Some(dup) = pseudo.images().iter().find(|i| labeled_names.contains(i.file_name.as_str())) {
        return Err(Error::Contamination(dup.file_name.clone()));
    }

    let mut remap = IdRemap::default();
    let mut images = Vec::with_capacity(labeled.images().len() + pseudo.images().len());
    let mut annotations = Vec::with_capacity(labeled.annotations().len() + pseudo.annotations().len());
    for (origin, part) in [(Origin::Labeled, labeled), (Origin::Pseudo, pseudo)] {
        let mut image_map = HashMap::with_capacity(part.images().len());
        for img in part.images() {
            let new = images.len() as u64 + 1;
            image_map.insert(img.image_id, new);
            remap.images.push(IdMapping { origin, old: img.image_id, new });
            images.push(ImageRecord { image_id: new, ..img.clone() });
        }
        for ann in part.annotations() {
            let new = annotations.len() as u64 + 1;
            remap.annotations.push(IdMapping { origin, old: ann.annotation_id, new });
            annotations.push(Annotation {
                annotation_id: new,
                image_id: image_map[&ann.image_id],
                ..ann.clone()
            });
        }
    }

    let dataset = DetectionDataset::with_extra(images, annotations, categories, labeled.extra().clone())?;
    Ok(Merged { dataset, remap })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSamplerConfig {
    #[serde(default)]
    pub min_detections: usize,
    /// Window length, in input frames, within which at most one frame is kept.
    #[serde(default = "FrameSamplerConfig::default_stride")]
    pub temporal_stride: usize,
    #[serde(default)]
    pub max_frames: Option<usize>,
}

impl Default for FrameSamplerConfig {
    fn default() -> Self {
        Self {
            min_detections: 0,
            temporal_stride: 1,
            max_frames: None,
        }
    }
}

impl FrameSamplerConfig {
    fn default_stride() -> usize {
        1
    }

    pub fn validate(&self) -> Result<()> {
        if self.temporal_stride == 0 {
            return Err(Error::InvalidConfig("temporal_stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// Picks frames with many detections, at most one per stride window.
///
/// `frames` holds `(frame index, detection count)` with strictly increasing
/// indices. The input is cut into consecutive windows of `temporal_stride`
/// entries; each window contributes its highest-count frame among those with
/// at least `min_detections` (ties to the earliest). With `max_frames` set,
/// only that many of the highest-count picks survive. Output is in frame order.
pub fn sample_frames(frames: &[(u64, usize)], cfg: &FrameSamplerConfig) -> Result<Vec<u64>> {
    cfg.validate()?;
    for w in frames.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(Error::NonMonotoneFrames {
                previous: w[0].0,
                current: w[1].0,
            });
        }
    }

    let mut picked: Vec<(u64, usize)> = frames
        .chunks(cfg.temporal_stride)
        .filter_map(|window| {
            window
                .iter()
                .filter(|(_, count)| *count >= cfg.min_detections)
                .fold(None, |best: Option<(u64, usize)>, &(idx, count)| match best {
                    Some((_, c)) if c >= count => best,
                    _ => Some((idx, count)),
                })
        })
        .collect();

    if let Some(cap) = cfg.max_frames {
        if picked.len() > cap {
            picked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            picked.truncate(cap);
            picked.sort_by_key(|&(idx, _)| idx);
        }
    }
    Ok(picked.into_iter().map(|(idx, _)| idx).collect())
}

/// Provenance record for one teacher/student round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundManifest {
    pub round_index: u32,
    pub teacher_checkpoint_label: String,
    pub labeled_dataset_ref: Option<PathBuf>,
    pub unlabeled_pool_ref: PathBuf,
    pub suppression_config: SuppressionConfig,
    pub output_dataset_ref: PathBuf,
    /// `sha256:<hex>` over the exact bytes of the output dataset file.
    pub content_digest: String,
    /// Digest of the previous round's output, when chained.
    pub previous_output_digest: Option<String>,
    pub created_at: DateTime<Utc>,
}

/// Everything [`record_round`] needs besides the previous manifest.
#[derive(Debug, Clone)]
pub struct RoundInputs {
    pub teacher_checkpoint_label: String,
    pub labeled_dataset_ref: Option<PathBuf>,
    pub unlabeled_pool_ref: PathBuf,
    pub suppression_config: SuppressionConfig,
    pub output_dataset_ref: PathBuf,
    /// Defaults to the current time; pin it for reproducible manifests.
    pub created_at: Option<DateTime<Utc>>,
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}

pub fn digest_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(digest_bytes(&bytes))
}

/// Checks that the manifest's output file still hashes to its recorded digest.
pub fn verify_manifest(manifest: &RoundManifest) -> Result<()> {
    let actual = digest_file(&manifest.output_dataset_ref)?;
    if actual != manifest.content_digest {
        return Err(Error::DigestMismatch {
            path: manifest.output_dataset_ref.clone(),
            expected: manifest.content_digest.clone(),
            actual,
        });
    }
    Ok(())
}

/// Records a round. A previous manifest is verified first, so a chain cannot
/// be extended past an edited or corrupted output.
pub fn record_round(prev: Option<&RoundManifest>, inputs: RoundInputs) -> Result<RoundManifest> {
    inputs.suppression_config.validate()?;
    let (round_index, previous_output_digest) = match prev {
        Some(p) => {
            verify_manifest(p)?;
            (p.round_index + 1, Some(p.content_digest.clone()))
        }
        None => (0, None),
    };
    let content_digest = digest_file(&inputs.output_dataset_ref)?;
    Ok(RoundManifest {
        round_index,
        teacher_checkpoint_label: inputs.teacher_checkpoint_label,
        labeled_dataset_ref: inputs.labeled_dataset_ref,
        unlabeled_pool_ref: inputs.unlabeled_pool_ref,
        suppression_config: inputs.suppression_config,
        output_dataset_ref: inputs.output_dataset_ref,
        content_digest,
        previous_output_digest,
        created_at: inputs.created_at.unwrap_or_else(Utc::now),
    })
}

pub fn write_manifest(m: &RoundManifest) -> Vec<u8> {
    serde_json::to_vec_pretty(m).expect("manifest serialization cannot fail")
}

pub fn parse_manifest(input: &[u8]) -> Result<RoundManifest> {
    serde_json::from_slice(input).map_err(|e| Error::Validation(format!("round manifest: {e}")))
}
