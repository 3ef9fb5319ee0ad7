//! Scene fixtures shared by the criterion benchmarks.

use densepl::synth::{corrupt, generate_scene, CorruptionSpec, SceneSpec};
use densepl::ScoredBox;

/// One dense shelf image with `boxes` detections, including nested false
/// positives and coordinate noise.
pub fn dense_detections(boxes: usize, seed: u64) -> Vec<ScoredBox> {
    // drops and nested false positives net about 1.14 detections per object
    let density = boxes as f64 / 1.05;
    let spec = SceneSpec::shelf(density, seed);
    let (image, gt) = generate_scene(&spec).expect("shelf spec is feasible");
    let corruption = CorruptionSpec {
        seed,
        ..CorruptionSpec::default()
    };
    let bounds = (f64::from(image.width), f64::from(image.height));
    let mut dets = corrupt(&gt, bounds, &corruption).expect("default corruption is valid").0;
    assert!(dets.len() >= boxes, "scene too sparse: {} < {boxes}", dets.len());
    dets.truncate(boxes);
    dets
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_sizes() {
        for n in [150, 1_000, 5_000] {
            assert_eq!(dense_detections(n, 7).len(), n);
        }
    }
}
