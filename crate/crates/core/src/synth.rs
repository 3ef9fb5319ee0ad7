//! Synthetic dense shelf scenes and controllably corrupted detections.
//!
//! Scenes are jittered grids, one box per occupied cell, which mimics rows of
//! products on a shelf. [`corrupt`] turns ground truth into detections with
//! coordinate noise, dropped boxes and false positives nested strictly inside
//! their parent box, tagging every output with where it came from.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    Annotation, Category, DetectionDataset, DetectionResults, ImageRecord, DEFAULT_CATEGORY_ID,
};
use crate::error::{Error, Result};
use crate::geometry::{BBox, ScoredBox};

// Fraction of each cell left empty around a zero-jitter box.
const CELL_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub image_width: u32,
    pub image_height: u32,
    /// Mean number of boxes per scene.
    pub target_density: f64,
    pub grid_rows: u32,
    pub grid_cols: u32,
    /// Position and size perturbation as a fraction of the cell, in `[0, 0.5)`.
    pub jitter: f64,
    pub seed: u64,
}

impl SceneSpec {
    /// A shelf-like scene with roughly square cells sized for `density`.
    pub fn shelf(density: f64, seed: u64) -> Self {
        let cols = (density * 1.6).sqrt().ceil().max(1.0) as u32;
        let rows = (density / f64::from(cols)).ceil().max(1.0) as u32 + 1;
        Self {
            image_width: 64 * cols,
            image_height: 96 * rows,
            target_density: density,
            grid_rows: rows,
            grid_cols: cols,
            jitter: 0.2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InfeasibleScene(msg));
        if self.image_width == 0 || self.image_height == 0 {
            return bad("image size must be positive".into());
        }
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return bad("grid must have at least one row and column".into());
        }
        if !(self.target_density.is_finite() && self.target_density >= 0.0) {
            return bad(format!("target_density {} is not a valid count", self.target_density));
        }
        let capacity = f64::from(self.grid_rows) * f64::from(self.grid_cols);
        if self.target_density.ceil() > capacity {
            return bad(format!(
                "target_density {} exceeds grid capacity {}x{} = {capacity}",
                self.target_density, self.grid_rows, self.grid_cols
            ));
        }
        if !(0.0..0.5).contains(&self.jitter) {
            return bad(format!("jitter {} outside [0, 0.5)", self.jitter));
        }
        Ok(())
    }
}

/// Generates one scene. The image record gets id 1; corpus builders renumber it.
///
/// The box count is `floor(d)` or `ceil(d)` for target density `d`, chosen so
/// the expected count is exactly `d`.
pub fn generate_scene(spec: &SceneSpec) -> Result<(ImageRecord, Vec<BBox>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let whole = spec.target_density.floor();
    let frac = spec.target_density - whole;
    let count = whole as usize + usize::from(frac > 0.0 && rng.gen_bool(frac));

    let cells = (spec.grid_rows * spec.grid_cols) as usize;
    let mut chosen: Vec<usize> = if count >= cells {
        (0..cells).collect()
    } else {
        index::sample(&mut rng, cells, count).into_vec()
    };
    chosen.sort_unstable();

    let (img_w, img_h) = (f64::from(spec.image_width), f64::from(spec.image_height));
    let cell_w = img_w / f64::from(spec.grid_cols);
    let cell_h = img_h / f64::from(spec.grid_rows);
    let j = spec.jitter;

    let mut boxes = Vec::with_capacity(chosen.len());
    for cell in chosen {
        let row = (cell / spec.grid_cols as usize) as f64;
        let col = (cell % spec.grid_cols as usize) as f64;
        let (mut dx, mut dy, mut sx, mut sy) = (0.0, 0.0, 1.0, 1.0);
        if j > 0.0 {
            dx = rng.gen_range(-j / 4.0..=j / 4.0) * cell_w;
            dy = rng.gen_range(-j / 4.0..=j / 4.0) * cell_h;
            sx = rng.gen_range(1.0 - j / 2.0..=1.0);
            sy = rng.gen_range(1.0 - j / 2.0..=1.0);
        }
        let cx = (col + 0.5) * cell_w + dx;
        let cy = (row + 0.5) * cell_h + dy;
        let half_w = 0.5 * (1.0 - CELL_MARGIN) * cell_w * sx;
        let half_h = 0.5 * (1.0 - CELL_MARGIN) * cell_h * sy;
        let b = BBox::new(cx - half_w, cy - half_h, cx + half_w, cy + half_h)?;
        boxes.push(b.clamp_to(img_w, img_h).0);
    }

    let image = ImageRecord::new(1, format!("synth_{:016x}.jpg", spec.seed), spec.image_width, spec.image_height);
    Ok((image, boxes))
}

/// Score distribution, clamped to `[0, 1]` after sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreModel {
    pub mean: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    /// Standard deviation of the Gaussian noise added to each box coordinate.
    pub coordinate_noise_sigma: f64,
    /// Probability that a surviving ground-truth box spawns a nested false positive.
    pub nested_fp_rate: f64,
    /// Probability that a ground-truth box gets no detection at all.
    pub drop_rate: f64,
    pub tp_score: ScoreModel,
    pub fp_score: ScoreModel,
    /// Caps each nested false positive's score strictly below its parent's.
    #[serde(default = "default_true")]
    pub fp_below_parent: bool,
    #[serde(default = "default_category")]
    pub category_id: u64,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

fn default_category() -> u64 {
    DEFAULT_CATEGORY_ID
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            coordinate_noise_sigma: 1.0,
            nested_fp_rate: 0.2,
            drop_rate: 0.05,
            tp_score: ScoreModel { mean: 0.85, sigma: 0.08 },
            fp_score: ScoreModel { mean: 0.45, sigma: 0.15 },
            fp_below_parent: true,
            category_id: DEFAULT_CATEGORY_ID,
            seed: 0,
        }
    }
}

impl CorruptionSpec {
    /// Leaves ground truth untouched: every box kept, no noise, no false positives.
    pub fn identity(seed: u64) -> Self {
        Self {
            coordinate_noise_sigma: 0.0,
            nested_fp_rate: 0.0,
            drop_rate: 0.0,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        for (name, v) in [("nested_fp_rate", self.nested_fp_rate), ("drop_rate", self.drop_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} outside [0, 1]"));
            }
        }
        for (name, v) in [
            ("coordinate_noise_sigma", self.coordinate_noise_sigma),
            ("tp_score.sigma", self.tp_score.sigma),
            ("fp_score.sigma", self.fp_score.sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} = {v} must be a finite non-negative number"));
            }
        }
        if !(self.tp_score.mean.is_finite() && self.fp_score.mean.is_finite()) {
            return bad("score means must be finite".into());
        }
        Ok(())
    }
}

/// Where a corrupted detection came from; the index refers to the ground-truth list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "gt_index", rename_all = "snake_case")]
pub enum Provenance {
    TruePositiveOf(usize),
    NestedFalsePositiveOf(usize),
}

fn sample_score(rng: &mut ChaCha8Rng, model: ScoreModel) -> f64 {
    let v = if model.sigma > 0.0 {
        Normal::new(model.mean, model.sigma)
            .expect("validated sigma")
            .sample(rng)
    } else {
        model.mean
    };
    v.clamp(0.0, 1.0)
}

/// Corrupts ground truth into scored detections inside a `width × height` image.
///
/// For each ground-truth box, in order: it is dropped with `drop_rate`;
/// otherwise a noisy copy is emitted, optionally followed by one false
/// positive strictly inside both the ground-truth box and its noisy copy.
pub fn corrupt(gt: &[BBox], bounds: (f64, f64), spec: &CorruptionSpec) -> Result<(Vec<ScoredBox>, Vec<Provenance>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = (spec.coordinate_noise_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.coordinate_noise_sigma).expect("validated sigma"));
    let (img_w, img_h) = bounds;

    let mut dets = Vec::new();
    let mut provenance = Vec::new();
    for (i, g) in gt.iter().enumerate() {
        if spec.drop_rate > 0.0 && rng.gen_bool(spec.drop_rate) {
            continue;
        }
        let tp_box = match &noise {
            None => *g,
            Some(n) => {
                let mut c = [g.x_min(), g.y_min(), g.x_max(), g.y_max()];
                for v in &mut c {
                    *v += n.sample(&mut rng);
                }
                let (x0, x1) = (c[0].min(c[2]), c[0].max(c[2]));
                let (y0, y1) = (c[1].min(c[3]), c[1].max(c[3]));
                BBox::new(x0, y0, x1, y1)?.clamp_to(img_w, img_h).0
            }
        };
        let tp_score = sample_score(&mut rng, spec.tp_score);
        dets.push(ScoredBox::new(tp_box, tp_score, spec.category_id)?);
        provenance.push(Provenance::TruePositiveOf(i));

        if spec.nested_fp_rate > 0.0 && rng.gen_bool(spec.nested_fp_rate) {
            let region = overlap_region(g, &tp_box).unwrap_or(*g);
            let fp_box = nested_box(&mut rng, &region)?;
            let mut fp_score = sample_score(&mut rng, spec.fp_score);
            if spec.fp_below_parent {
                fp_score = fp_score.min(tp_score * 0.99);
            }
            dets.push(ScoredBox::new(fp_box, fp_score, spec.category_id)?);
            provenance.push(Provenance::NestedFalsePositiveOf(i));
        }
    }
    Ok((dets, provenance))
}

fn overlap_region(a: &BBox, b: &BBox) -> Option<BBox> {
    let x0 = a.x_min().max(b.x_min());
    let y0 = a.y_min().max(b.y_min());
    let x1 = a.x_max().min(b.x_max());
    let y1 = a.y_max().min(b.y_max());
    (x1 > x0 && y1 > y0).then(|| BBox::new(x0, y0, x1, y1).expect("ordered corners"))
}

/// A box strictly inside `region`, 20-60% of its size on each axis.
fn nested_box(rng: &mut ChaCha8Rng, region: &BBox) -> Result<BBox> {
    let w = region.width() * rng.gen_range(0.2..=0.6);
    let h = region.height() * rng.gen_range(0.2..=0.6);
    let x0 = region.x_min() + (region.width() - w) * rng.gen_range(0.05..=0.95);
    let y0 = region.y_min() + (region.height() - h) * rng.gen_range(0.05..=0.95);
    BBox::new(x0, y0, x0 + w, y0 + h)
}

/// Provenance of one detection in a synthetic corpus, as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub image_id: u64,
    /// Index into the image's detection list.
    pub detection_index: usize,
    #[serde(flatten)]
    pub origin: Provenance,
    /// Id of the ground-truth annotation the detection derives from.
    pub gt_annotation_id: u64,
}

/// Ground truth, detections and provenance for a batch of synthetic scenes.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub dataset: DetectionDataset,
    pub results: DetectionResults,
    pub provenance: Vec<ProvenanceRecord>,
}

/// Generates `images` scenes with ids starting at `first_image_id`. Scene `k`
/// uses seeds `scene.seed + k` and `corruption.seed + k`.
pub fn synth_corpus(
    scene: &SceneSpec,
    corruption: &CorruptionSpec,
    images: usize,
    first_image_id: u64,
) -> Result<SynthCorpus> {
    let mut records = Vec::with_capacity(images);
    let mut annotations = Vec::new();
    let mut results = DetectionResults::new();
    let mut provenance = Vec::new();
    for k in 0..images as u64 {
        let spec = SceneSpec {
            seed: scene.seed.wrapping_add(k),
            ..scene.clone()
        };
        let (mut image, gt) = generate_scene(&spec)?;
        image.image_id = first_image_id + k;
        image.file_name = format!("synth_{:06}_{:016x}.jpg", image.image_id, spec.seed);

        let first_ann = annotations.len() as u64 + 1;
        for (i, b) in gt.iter().enumerate() {
            annotations.push(Annotation::human(first_ann + i as u64, image.image_id, corruption.category_id, *b));
        }
        let cspec = CorruptionSpec {
            seed: corruption.seed.wrapping_add(k),
            ..corruption.clone()
        };
        let bounds = (f64::from(image.width), f64::from(image.height));
        let (dets, tags) = corrupt(&gt, bounds, &cspec)?;
        for (d, tag) in tags.iter().enumerate() {
            let gt_index = match *tag {
                Provenance::TruePositiveOf(i) | Provenance::NestedFalsePositiveOf(i) => i,
            };
            provenance.push(ProvenanceRecord {
                image_id: image.image_id,
                detection_index: d,
                origin: *tag,
                gt_annotation_id: first_ann + gt_index as u64,
            });
        }
        results.insert(image.image_id, dets);
        records.push(image);
    }
    let categories = vec![Category::new(corruption.category_id, crate::dataset::DEFAULT_CATEGORY_NAME)];
    Ok(SynthCorpus {
        dataset: DetectionDataset::new(records, annotations, categories)?,
        results,
        provenance,
    })
}
