use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};
use densepl::Stage;
use densepl_cli::{
    cmd_eval, cmd_merge, cmd_pseudo_label, cmd_refine, cmd_sample_frames, cmd_synth, parse_stage, PipelineConfig,
    ReportFormat, RoundOptions, SuppressionSection,
};
use serde::Serialize;

/// Pseudo-label refinement, dataset merging and evaluation for dense
/// detection self-training.
#[derive(Debug, Parser)]
#[command(name = "densepl", version)]
struct Cli {
    /// TOML pipeline config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    format: Option<ReportFormat>,
    /// Print the effective config as TOML and exit without running.
    #[arg(long, global = true)]
    dump_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Default)]
struct SuppressionFlags {
    #[arg(long)]
    score_threshold: Option<f64>,
    /// IoU threshold for standard NMS.
    #[arg(long = "nms-iou")]
    nms_iou_threshold: Option<f64>,
    /// Threshold on intersection over the smaller area.
    #[arg(long = "nms-inter-iou")]
    nms_inter_iou_threshold: Option<f64>,
    /// Comma-separated, e.g. score_filter,nms_union,nms_inter
    #[arg(long, value_delimiter = ',', value_parser = parse_stage)]
    stage_order: Option<Vec<Stage>>,
}

impl From<SuppressionFlags> for SuppressionSection {
    fn from(f: SuppressionFlags) -> Self {
        SuppressionSection {
            score_threshold: f.score_threshold,
            nms_iou_threshold: f.nms_iou_threshold,
            nms_inter_iou_threshold: f.nms_inter_iou_threshold,
            stage_order: f.stage_order,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Apply score filtering and NMS to a results file.
    Refine {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        suppression: SuppressionFlags,
    },
    /// Refine teacher detections into a pseudo-labeled dataset and record the round.
    PseudoLabel {
        /// Dataset file listing the unlabeled images; its annotations are ignored.
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Round manifest path (default: <output stem>.manifest.json).
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Manifest of the previous round; its output must still verify.
        #[arg(long)]
        prev_manifest: Option<PathBuf>,
        #[arg(long, default_value = "")]
        teacher_label: String,
        #[arg(long)]
        labeled: Option<PathBuf>,
        /// RFC 3339 timestamp to record instead of the current time.
        #[arg(long)]
        created_at: Option<DateTime<Utc>>,
        #[command(flatten)]
        suppression: SuppressionFlags,
    },
    /// Merge a labeled dataset with a pseudo-labeled one.
    Merge {
        #[arg(long)]
        labeled: PathBuf,
        #[arg(long)]
        pseudo: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Also write the old-to-new id table here.
        #[arg(long)]
        remap: Option<PathBuf>,
    },
    /// COCO-style mAP of a results file against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        results: PathBuf,
        /// Write the machine-readable report here as well.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        max_detections: Option<usize>,
    },
    /// Pick video frames by teacher detection count.
    SampleFrames {
        /// Results file keyed by frame index.
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        min_detections: Option<usize>,
        #[arg(long)]
        temporal_stride: Option<usize>,
        #[arg(long)]
        max_frames: Option<usize>,
    },
    /// Generate synthetic shelf scenes with corrupted detections.
    Synth {
        /// Output directory.
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        images: Option<usize>,
        #[arg(long)]
        density: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        noise_sigma: Option<f64>,
        #[arg(long)]
        nested_fp_rate: Option<f64>,
        #[arg(long)]
        drop_rate: Option<f64>,
    },
}

fn emit<T: Serialize>(format: ReportFormat, table: String, machine: &T) -> anyhow::Result<()> {
    let text = match format {
        ReportFormat::Table => table,
        ReportFormat::Machine => serde_json::to_string_pretty(machine)? + "\n",
    };
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        // a closed pipe (`| head`) is the reader's choice, not a failure
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

/// Folds this command's flags into `cfg`. Flags beat the file, which beats
/// the built-in defaults.
fn apply_flags(cfg: &mut PipelineConfig, command: &mut Command) {
    match command {
        Command::Refine { suppression, .. } | Command::PseudoLabel { suppression, .. } => {
            cfg.override_suppression(std::mem::take(suppression).into());
        }
        Command::Eval { max_detections, .. } => {
            if let Some(n) = *max_detections {
                cfg.eval.max_detections = n;
            }
        }
        Command::SampleFrames { min_detections, temporal_stride, max_frames, .. } => {
            if let Some(n) = *min_detections {
                cfg.sampler.min_detections = n;
            }
            if let Some(n) = *temporal_stride {
                cfg.sampler.temporal_stride = n;
            }
            if max_frames.is_some() {
                cfg.sampler.max_frames = *max_frames;
            }
        }
        Command::Synth { images, density, seed, noise_sigma, nested_fp_rate, drop_rate, .. } => {
            let s = &mut cfg.synth;
            if let Some(v) = *images {
                s.images = v;
            }
            if let Some(v) = *density {
                s.density = v;
                s.scene = None;
            }
            if let Some(v) = *seed {
                s.seed = v;
                s.corruption.seed = v;
                if let Some(scene) = &mut s.scene {
                    scene.seed = v;
                }
            }
            if let Some(v) = *noise_sigma {
                s.corruption.coordinate_noise_sigma = v;
            }
            if let Some(v) = *nested_fp_rate {
                s.corruption.nested_fp_rate = v;
            }
            if let Some(v) = *drop_rate {
                s.corruption.drop_rate = v;
            }
        }
        Command::Merge { .. } => {}
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(f) = cli.format {
        cfg.report_format = f;
    }
    let mut command = cli.command;
    apply_flags(&mut cfg, &mut command);
    if cli.dump_config {
        return emit(ReportFormat::Table, cfg.to_toml()?, &());
    }

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            anyhow::bail!("--threads must be at least 1");
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("starting worker threads")?;
    let format = cfg.report_format;

    pool.install(|| match command {
        Command::Refine { results, output, .. } => {
            let s = cmd_refine(&results, &output, &cfg.suppression.resolve()?)?;
            emit(format, s.table(), &s)
        }
        Command::PseudoLabel { images, results, output, manifest, prev_manifest, teacher_label, labeled, created_at, .. } => {
            let round = RoundOptions { manifest, prev_manifest, teacher_label, labeled_ref: labeled, created_at };
            let s = cmd_pseudo_label(&images, &results, &output, &cfg.suppression.resolve()?, &round)?;
            emit(format, s.table(), &s)
        }
        Command::Merge { labeled, pseudo, output, remap } => {
            let s = cmd_merge(&labeled, &pseudo, &output, remap.as_deref())?;
            emit(format, s.table(), &s)
        }
        Command::Eval { gt, results, output, .. } => {
            let s = cmd_eval(&gt, &results, output.as_deref(), &cfg.eval)?;
            emit(format, s.table(), &s.document())
        }
        Command::SampleFrames { results, output, .. } => {
            let s = cmd_sample_frames(&results, &output, &cfg.sampler)?;
            emit(format, s.table(), &s)
        }
        Command::Synth { output, .. } => {
            let s = cmd_synth(&output, &cfg.synth)?;
            emit(format, s.table(), &s)
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
