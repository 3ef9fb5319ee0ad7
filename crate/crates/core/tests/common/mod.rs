#![allow(dead_code)]

pub mod oracle;

use densepl::{Annotation, BBox, Category, DetectionDataset, DetectionResults, ImageRecord, ScoredBox};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// 1-3 images, at most 5 ground-truth boxes and 8 detections each, on a
/// coarse lattice so exact overlaps and score ties are common.
pub fn random_instance(rng: &mut ChaCha8Rng) -> oracle::Instance {
    let n_images = rng.gen_range(1..=3);
    let mut images = Vec::new();
    for _ in 0..n_images {
        let n_gt = rng.gen_range(0..=5);
        let n_det = rng.gen_range(0..=8);
        let gt: Vec<[f64; 4]> = (0..n_gt)
            .map(|_| {
                let x = rng.gen_range(0..12) as f64;
                let y = rng.gen_range(0..12) as f64;
                [x, y, x + rng.gen_range(2..8) as f64, y + rng.gen_range(2..8) as f64]
            })
            .collect();
        let dets = (0..n_det)
            .map(|_| {
                let b = if !gt.is_empty() && rng.gen_bool(0.7) {
                    let g = gt[rng.gen_range(0..gt.len())];
                    let mut j = || rng.gen_range(-2..=2) as f64 * 0.5;
                    let (x0, y0, x1, y1) = (g[0] + j(), g[1] + j(), g[2] + j(), g[3] + j());
                    [x0.min(x1), y0.min(y1), x0.max(x1), y0.max(y1)]
                } else {
                    let x = rng.gen_range(0..14) as f64;
                    let y = rng.gen_range(0..14) as f64;
                    [x, y, x + rng.gen_range(1..6) as f64, y + rng.gen_range(1..6) as f64]
                };
                // coarse scores so ties within and across images occur
                (b, rng.gen_range(0..=10) as f64 / 10.0)
            })
            .collect();
        images.push((gt, dets));
    }
    images
}

pub fn to_inputs(inst: &oracle::Instance) -> (DetectionDataset, DetectionResults) {
    let mut images = Vec::new();
    let mut anns = Vec::new();
    let mut results = DetectionResults::new();
    for (k, (gt, dets)) in inst.iter().enumerate() {
        let image_id = k as u64 + 1;
        images.push(ImageRecord::new(image_id, format!("{image_id}.jpg"), 100, 100));
        for g in gt {
            let id = anns.len() as u64 + 1;
            anns.push(Annotation::human(id, image_id, 1, BBox::new(g[0], g[1], g[2], g[3]).unwrap()));
        }
        let boxes = dets
            .iter()
            .map(|(d, s)| ScoredBox::new(BBox::new(d[0], d[1], d[2], d[3]).unwrap(), *s, 1).unwrap())
            .collect();
        results.insert(image_id, boxes);
    }
    let dataset = DetectionDataset::new(images, anns, vec![Category::default_object()]).unwrap();
    (dataset, results)
}
