use densepl::dataset::write_results;
use densepl::{
    dataset_stats, parse_dataset, parse_results, write_dataset, Annotation, BBox, Category,
    DetectionDataset, DetectionResults, ImageRecord, ScoredBox, Source,
};
use proptest::prelude::*;
use serde_json::Value;

const FIXTURE: &[u8] = include_bytes!("fixtures/three_images.json");

#[test]
fn fixture_counts_and_density() {
    let d = parse_dataset(FIXTURE).unwrap();
    assert_eq!((d.images().len(), d.annotations().len()), (3, 7));
    let stats = dataset_stats(&d).unwrap();
    assert_eq!(stats.mean_density, 7.0 / 3.0);
    assert_eq!(stats.pseudo_annotations, 2);
    assert_eq!(stats.per_image, vec![(1, 3), (2, 2), (7, 2)]);
    assert_eq!(d.annotations()[4].source, Source::Pseudo { score: 0.83 });
    assert_eq!(d.annotations()[1].bbox, BBox::new(70.0, 20.0, 118.5, 100.0).unwrap());
}

#[test]
fn fixture_round_trips() {
    let d = parse_dataset(FIXTURE).unwrap();
    let written = write_dataset(&d);
    assert_eq!(parse_dataset(&written).unwrap(), d);

    // write ∘ parse is the identity up to key order, whitespace and the
    // fields the writer always fills in (area, iscrowd, source)
    let mut original: Value = serde_json::from_slice(FIXTURE).unwrap();
    let rewritten: Value = serde_json::from_slice(&written).unwrap();
    for ann in original["annotations"].as_array_mut().unwrap() {
        let obj = ann.as_object_mut().unwrap();
        let bbox: Vec<f64> = obj["bbox"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        obj.insert("bbox".into(), serde_json::json!(bbox));
        obj.insert("area".into(), serde_json::json!(bbox[2] * bbox[3]));
        obj.entry("source").or_insert_with(|| "human".into());
    }
    assert_eq!(original, rewritten);
}

fn arb_dataset() -> impl Strategy<Value = DetectionDataset> {
    let image = (1u32..2000, 1u32..2000);
    (prop::collection::vec(image, 0..6), prop::collection::vec((0usize..6, 0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64, prop::option::of(0.0..=1.0f64)), 0..30))
        .prop_map(|(dims, raw)| {
            let images: Vec<ImageRecord> = dims
                .iter()
                .enumerate()
                .map(|(k, &(w, h))| ImageRecord::new(k as u64 * 3 + 1, format!("img_{k}.png"), w, h))
                .collect();
            let mut anns = Vec::new();
            if !images.is_empty() {
                for (n, (k, fx, fy, fw, fh, score)) in raw.into_iter().enumerate() {
                    let img = &images[k % images.len()];
                    let (w, h) = (f64::from(img.width), f64::from(img.height));
                    let x = fx * w;
                    let y = fy * h;
                    let bbox = BBox::from_xywh(x, y, fw * (w - x), fh * (h - y)).unwrap();
                    let source = match score {
                        Some(score) => Source::Pseudo { score },
                        None => Source::Human,
                    };
                    anns.push(Annotation { source, ..Annotation::human(n as u64 * 2 + 5, img.image_id, 1, bbox) });
                }
            }
            DetectionDataset::new(images, anns, vec![Category::default_object()]).unwrap()
        })
}

proptest! {
    #[test]
    fn parse_write_identity(d in arb_dataset()) {
        prop_assert_eq!(parse_dataset(&write_dataset(&d)).unwrap(), d);
    }

    #[test]
    fn results_round_trip(raw in prop::collection::vec((0u64..5, -100.0..100.0f64, -100.0..100.0f64, 0.0..50.0f64, 0.0..50.0f64, 0.0..=1.0f64), 0..40)) {
        let mut r = DetectionResults::new();
        for (img, x, y, w, h, s) in raw {
            r.push(img, ScoredBox::new(BBox::from_xywh(x, y, w, h).unwrap(), s, 1).unwrap());
        }
        prop_assert_eq!(parse_results(&write_results(&r)).unwrap(), r);
    }
}

#[test]
fn stats_of_density_147_corpus() {
    use densepl::synth::{synth_corpus, CorruptionSpec, SceneSpec};
    let c = synth_corpus(&SceneSpec::shelf(147.0, 4), &CorruptionSpec::default(), 200, 1).unwrap();
    let stats = dataset_stats(&c.dataset).unwrap();
    assert!((stats.mean_density - 147.0).abs() < 1.0, "{}", stats.mean_density);
    assert_eq!(stats.mean_density, stats.annotations as f64 / stats.images as f64);
}
