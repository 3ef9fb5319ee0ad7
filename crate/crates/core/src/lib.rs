//! Non-training machinery for noisy-student self-training on dense detection
//! scenes: pseudo-label refinement, dataset plumbing across teacher/student
//! rounds, frame sampling, COCO-protocol evaluation and a synthetic dense
//! scene generator.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod selftrain;
pub mod suppression;
pub mod synth;

pub use dataset::{
    dataset_stats, parse_dataset, parse_results, write_dataset, write_results, Annotation,
    Category, DatasetStats, DetectionDataset, DetectionResults, ImageRecord, Source,
};
pub use error::{Error, Result};
pub use evaluation::{evaluate, EvalConfig, EvalReport};
pub use geometry::{intersection_area, iou_min, iou_union, BBox, IouKind, ScoredBox};
pub use selftrain::{
    merge, pseudo_label, record_round, sample_frames, FrameSamplerConfig, RoundInputs,
    RoundManifest,
};
pub use suppression::{nms, nms_fast, refine, score_filter, Stage, SuppressionConfig};
pub use synth::{corrupt, generate_scene, CorruptionSpec, Provenance, SceneSpec};
