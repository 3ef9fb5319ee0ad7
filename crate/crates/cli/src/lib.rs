//! Command implementations behind the `densepl` binary. Each `cmd_*` function
//! reads its inputs, writes its outputs atomically and returns a summary; the
//! binary decides how to print it.

pub mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use chrono::{DateTime, Utc};
use densepl::evaluation::ReportDocument;
use densepl::selftrain::{parse_manifest, verify_manifest, write_manifest, IdRemap};
use densepl::suppression::{refine_with_report, StageReport};
use densepl::synth::{synth_corpus, ProvenanceRecord};
use densepl::{
    dataset_stats, evaluate, merge, parse_dataset, parse_results, pseudo_label, record_round, sample_frames,
    write_dataset, write_results, Category, DatasetStats, DetectionResults, EvalConfig, FrameSamplerConfig,
    RoundInputs, Stage, SuppressionConfig,
};
use rayon::prelude::*;
use serde::Serialize;

pub use config::{PipelineConfig, ReportFormat, SuppressionSection, SynthSection};

/// Writes `bytes` to a sibling temporary file and renames it over `path`, so
/// readers never observe a half-written output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn read(path: &Path) -> anyhow::Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn read_results(path: &Path) -> anyhow::Result<DetectionResults> {
    parse_results(&read(path)?).with_context(|| format!("in results file {}", path.display()))
}

fn read_dataset(path: &Path) -> anyhow::Result<densepl::DetectionDataset> {
    parse_dataset(&read(path)?).with_context(|| format!("in dataset file {}", path.display()))
}

/// Parses a stage name in either `NmsInter` or `nms_inter` / `nms-inter` form.
pub fn parse_stage(s: &str) -> Result<Stage, String> {
    match s.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
        "scorefilter" => Ok(Stage::ScoreFilter),
        "nmsunion" => Ok(Stage::NmsUnion),
        "nmsinter" => Ok(Stage::NmsInter),
        _ => Err(format!("unknown stage {s:?} (expected score_filter, nms_union or nms_inter)")),
    }
}

/// Refines every image in parallel and sums the per-stage counts. Runs on
/// the current rayon pool.
pub fn refine_all(results: &DetectionResults, cfg: &SuppressionConfig) -> (DetectionResults, StageReport) {
    let per_image: Vec<(u64, Vec<densepl::ScoredBox>, StageReport)> = results
        .iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(id, dets)| {
            let (kept, report) = refine_with_report(dets, cfg);
            (id, kept, report)
        })
        .collect();

    let mut total = StageReport {
        removed: cfg.stage_order.iter().map(|&s| (s, 0)).collect(),
        ..StageReport::default()
    };
    let mut refined = DetectionResults::new();
    for (id, kept, report) in per_image {
        total.accumulate(&report);
        refined.insert(id, kept);
    }
    (refined, total)
}

#[derive(Debug, Clone, Serialize)]
pub struct RefineSummary {
    pub images: usize,
    pub input: usize,
    pub output: usize,
    pub removed: BTreeMap<String, usize>,
    #[serde(skip)]
    pub report: StageReport,
}

impl RefineSummary {
    fn new(images: usize, report: StageReport) -> Self {
        RefineSummary {
            images,
            input: report.input,
            output: report.output,
            removed: report.removed.iter().map(|(s, n)| (s.to_string(), *n)).collect(),
            report,
        }
    }

    pub fn table(&self) -> String {
        let mut s = format!("images: {}\ninput detections: {}\n", self.images, self.input);
        for (stage, n) in &self.report.removed {
            s += &format!("{stage} removed: {n}\n");
        }
        s += &format!("kept: {}\n", self.output);
        s
    }
}

pub fn cmd_refine(results_path: &Path, output: &Path, cfg: &SuppressionConfig) -> anyhow::Result<RefineSummary> {
    cfg.validate()?;
    let results = read_results(results_path)?;
    let (refined, report) = refine_all(&results, cfg);
    write_atomic(output, &write_results(&refined))?;
    Ok(RefineSummary::new(results.num_images(), report))
}

/// Round bookkeeping options for [`cmd_pseudo_label`].
#[derive(Debug, Clone, Default)]
pub struct RoundOptions {
    pub manifest: Option<PathBuf>,
    pub prev_manifest: Option<PathBuf>,
    pub teacher_label: String,
    pub labeled_ref: Option<PathBuf>,
    pub created_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PseudoLabelSummary {
    pub refine: RefineSummary,
    pub images: usize,
    pub annotations: usize,
    pub manifest: PathBuf,
    pub round_index: u32,
    pub content_digest: String,
}

impl PseudoLabelSummary {
    pub fn table(&self) -> String {
        format!(
            "{}pseudo images: {}\npseudo annotations: {}\nround {} manifest: {}\ndigest: {}\n",
            self.refine.table(),
            self.images,
            self.annotations,
            self.round_index,
            self.manifest.display(),
            self.content_digest
        )
    }
}

/// Default manifest location: `<output stem>.manifest.json` next to the output.
pub fn default_manifest_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    output.with_file_name(format!("{stem}.manifest.json"))
}

/// `images` is any dataset file; only its images and categories are used.
pub fn cmd_pseudo_label(
    images_path: &Path,
    results_path: &Path,
    output: &Path,
    cfg: &SuppressionConfig,
    round: &RoundOptions,
) -> anyhow::Result<PseudoLabelSummary> {
    cfg.validate()?;
    let pool = read_dataset(images_path)?;
    let results = read_results(results_path)?;
    let prev = match &round.prev_manifest {
        Some(p) => Some(parse_manifest(&read(p)?).with_context(|| format!("in manifest {}", p.display()))?),
        None => None,
    };
    // before writing anything, in case the new output replaces the old one
    if let Some(p) = &prev {
        verify_manifest(p)?;
    }

    // Refining here, in parallel, gives the stage counts; refine is
    // idempotent, so pseudo_label's own pass removes nothing more.
    let (refined, report) = refine_all(&results, cfg);
    let categories = if pool.categories().is_empty() {
        vec![Category::default_object()]
    } else {
        pool.categories().to_vec()
    };
    let dataset = pseudo_label(pool.images(), &refined, cfg, &categories)?;
    debug_assert_eq!(dataset.annotations().len(), report.output);
    write_atomic(output, &write_dataset(&dataset))?;

    let manifest_path = round.manifest.clone().unwrap_or_else(|| default_manifest_path(output));
    let manifest = record_round(
        prev.as_ref(),
        RoundInputs {
            teacher_checkpoint_label: round.teacher_label.clone(),
            labeled_dataset_ref: round.labeled_ref.clone(),
            unlabeled_pool_ref: images_path.to_path_buf(),
            suppression_config: cfg.clone(),
            output_dataset_ref: output.to_path_buf(),
            created_at: round.created_at,
        },
    )?;
    write_atomic(&manifest_path, &write_manifest(&manifest))?;

    Ok(PseudoLabelSummary {
        refine: RefineSummary::new(results.num_images(), report),
        images: dataset.images().len(),
        annotations: dataset.annotations().len(),
        manifest: manifest_path,
        round_index: manifest.round_index,
        content_digest: manifest.content_digest,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MergeSummary {
    pub images: usize,
    pub annotations: usize,
    pub labeled_annotations: usize,
    pub pseudo_annotations: usize,
    pub mean_density: f64,
    #[serde(skip)]
    pub stats: Option<DatasetStats>,
}

impl MergeSummary {
    pub fn table(&self) -> String {
        format!(
            "images: {}\nannotations: {} ({} labeled + {} pseudo)\nmean density: {:.2}\n",
            self.images, self.annotations, self.labeled_annotations, self.pseudo_annotations, self.mean_density
        )
    }
}

pub fn cmd_merge(
    labeled_path: &Path,
    pseudo_path: &Path,
    output: &Path,
    remap_output: Option<&Path>,
) -> anyhow::Result<MergeSummary> {
    let labeled = read_dataset(labeled_path)?;
    let pseudo = read_dataset(pseudo_path)?;
    let merged = merge(&labeled, &pseudo)?;
    write_atomic(output, &write_dataset(&merged.dataset))?;
    if let Some(p) = remap_output {
        write_atomic(p, &serde_json::to_vec_pretty::<IdRemap>(&merged.remap)?)?;
    }
    let stats = match dataset_stats(&merged.dataset) {
        Ok(s) => Some(s),
        Err(densepl::Error::EmptyDataset) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(MergeSummary {
        images: merged.dataset.images().len(),
        annotations: merged.dataset.annotations().len(),
        labeled_annotations: labeled.annotations().len(),
        pseudo_annotations: pseudo.annotations().len(),
        mean_density: stats.as_ref().map_or(0.0, |s| s.mean_density),
        stats,
    })
}

pub struct EvalSummary {
    pub report: densepl::EvalReport,
}

impl EvalSummary {
    pub fn document(&self) -> ReportDocument {
        self.report.to_document()
    }

    pub fn table(&self) -> String {
        self.report.to_table()
    }
}

pub fn cmd_eval(gt_path: &Path, results_path: &Path, output: Option<&Path>, cfg: &EvalConfig) -> anyhow::Result<EvalSummary> {
    cfg.validate()?;
    let gt = read_dataset(gt_path)?;
    let results = read_results(results_path)?;
    let report = evaluate(&gt, &results, cfg)?;
    if let Some(p) = output {
        write_atomic(p, &serde_json::to_vec_pretty(&report.to_document())?)?;
    }
    Ok(EvalSummary { report })
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleSummary {
    pub frames_in: usize,
    pub frames: Vec<u64>,
}

impl SampleSummary {
    pub fn table(&self) -> String {
        format!("frames considered: {}\nframes kept: {}\n", self.frames_in, self.frames.len())
    }
}

/// Frame results are an ordinary results file keyed by frame index. Frames
/// without detections do not appear in it and so count as zero.
pub fn cmd_sample_frames(results_path: &Path, output: &Path, cfg: &FrameSamplerConfig) -> anyhow::Result<SampleSummary> {
    cfg.validate()?;
    let results = read_results(results_path)?;
    let frames: Vec<(u64, usize)> = results.iter().map(|(id, dets)| (id, dets.len())).collect();
    let picked = sample_frames(&frames, cfg)?;
    write_atomic(output, &serde_json::to_vec_pretty(&picked)?)?;
    Ok(SampleSummary { frames_in: frames.len(), frames: picked })
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthSummary {
    pub images: usize,
    pub annotations: usize,
    pub detections: usize,
    pub nested_false_positives: usize,
    pub dataset: PathBuf,
    pub results: PathBuf,
    pub provenance: PathBuf,
}

impl SynthSummary {
    pub fn table(&self) -> String {
        format!(
            "images: {}\nground truth boxes: {}\ndetections: {} ({} nested false positives)\nwrote {}, {}, {}\n",
            self.images,
            self.annotations,
            self.detections,
            self.nested_false_positives,
            self.dataset.display(),
            self.results.display(),
            self.provenance.display()
        )
    }
}

/// Writes `dataset.json`, `results.json` and `provenance.json` into `out_dir`.
pub fn cmd_synth(out_dir: &Path, cfg: &SynthSection) -> anyhow::Result<SynthSummary> {
    if cfg.images == 0 {
        bail!("synth.images must be at least 1");
    }
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let corpus = synth_corpus(&cfg.scene_spec(), &cfg.corruption, cfg.images, cfg.first_image_id)?;
    let paths = ["dataset.json", "results.json", "provenance.json"].map(|f| out_dir.join(f));
    write_atomic(&paths[0], &write_dataset(&corpus.dataset))?;
    write_atomic(&paths[1], &write_results(&corpus.results))?;
    write_atomic(&paths[2], &serde_json::to_vec_pretty::<Vec<ProvenanceRecord>>(&corpus.provenance)?)?;
    let nested = corpus
        .provenance
        .iter()
        .filter(|p| matches!(p.origin, densepl::Provenance::NestedFalsePositiveOf(_)))
        .count();
    let [dataset, results, provenance] = paths;
    Ok(SynthSummary {
        images: corpus.dataset.images().len(),
        annotations: corpus.dataset.annotations().len(),
        detections: corpus.results.num_detections(),
        nested_false_positives: nested,
        dataset,
        results,
        provenance,
    })
}
