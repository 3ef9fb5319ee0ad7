//! The pipeline configuration file (TOML) and its merge with command-line flags.

use std::fmt;
use std::path::Path;

use anyhow::{anyhow, Context};
use densepl::synth::{CorruptionSpec, SceneSpec};
use densepl::{EvalConfig, FrameSamplerConfig, Stage, SuppressionConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Table,
    Machine,
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Table => "table",
            ReportFormat::Machine => "machine",
        })
    }
}

/// Suppression settings as they appear in a file: every threshold may be
/// missing, because none of them has a sensible built-in value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuppressionSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nms_iou_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nms_inter_iou_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage_order: Option<Vec<Stage>>,
}

impl SuppressionSection {
    /// Fills in `self`'s unset fields from `other`.
    fn or(self, other: SuppressionSection) -> SuppressionSection {
        SuppressionSection {
            score_threshold: self.score_threshold.or(other.score_threshold),
            nms_iou_threshold: self.nms_iou_threshold.or(other.nms_iou_threshold),
            nms_inter_iou_threshold: self.nms_inter_iou_threshold.or(other.nms_inter_iou_threshold),
            stage_order: self.stage_order.or(other.stage_order),
        }
    }

    pub fn resolve(&self) -> anyhow::Result<SuppressionConfig> {
        let need = |v: Option<f64>, key: &str, flag: &str| {
            v.ok_or_else(|| anyhow!("suppression.{key} is not set; give it in the config file or with --{flag}"))
        };
        let cfg = SuppressionConfig {
            score_threshold: need(self.score_threshold, "score_threshold", "score-threshold")?,
            nms_iou_threshold: need(self.nms_iou_threshold, "nms_iou_threshold", "nms-iou")?,
            nms_inter_iou_threshold: need(self.nms_inter_iou_threshold, "nms_inter_iou_threshold", "nms-inter-iou")?,
            stage_order: self.stage_order.clone().unwrap_or_else(SuppressionConfig::default_stage_order),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl From<&SuppressionConfig> for SuppressionSection {
    fn from(c: &SuppressionConfig) -> Self {
        SuppressionSection {
            score_threshold: Some(c.score_threshold),
            nms_iou_threshold: Some(c.nms_iou_threshold),
            nms_inter_iou_threshold: Some(c.nms_inter_iou_threshold),
            stage_order: Some(c.stage_order.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    #[serde(default = "SynthSection::default_images")]
    pub images: usize,
    #[serde(default = "SynthSection::default_first_image_id")]
    pub first_image_id: u64,
    /// Used with `seed` to build a shelf layout when `scene` is absent.
    #[serde(default = "SynthSection::default_density")]
    pub density: f64,
    #[serde(default)]
    pub seed: u64,
    /// Full scene layout; overrides `density` and `seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneSpec>,
    #[serde(default)]
    pub corruption: CorruptionSpec,
}

impl SynthSection {
    fn default_images() -> usize {
        1
    }

    fn default_first_image_id() -> u64 {
        1
    }

    fn default_density() -> f64 {
        147.0
    }

    pub fn scene_spec(&self) -> SceneSpec {
        self.scene.clone().unwrap_or_else(|| SceneSpec::shelf(self.density, self.seed))
    }
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            images: Self::default_images(),
            first_image_id: Self::default_first_image_id(),
            density: Self::default_density(),
            seed: 0,
            scene: None,
            corruption: CorruptionSpec::default(),
        }
    }
}

/// Everything a pipeline run can be configured with. Input and output paths
/// are always given on the command line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub report_format: ReportFormat,
    #[serde(default)]
    pub suppression: SuppressionSection,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub sampler: FrameSamplerConfig,
    #[serde(default)]
    pub synth: SynthSection,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in config {}", path.display()))
    }

    /// Fails only for values TOML cannot hold, i.e. seeds above `i64::MAX`.
    pub fn to_toml(&self) -> anyhow::Result<String> {
        toml::to_string_pretty(self).context("config cannot be written as TOML (seeds must fit in i64)")
    }

    /// Applies flag values on top of this config; flags win.
    pub fn override_suppression(&mut self, flags: SuppressionSection) {
        self.suppression = flags.or(std::mem::take(&mut self.suppression));
    }
}
