//! Unoptimized reference evaluator. Boxes are plain corner arrays so nothing
//! here goes through the library's geometry or evaluation code.

/// Per image: ground-truth corners and `(corners, score)` detections.
pub type Instance = Vec<(Vec<[f64; 4]>, Vec<([f64; 4], f64)>)>;

pub fn iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    if inter <= 0.0 || union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Detections in descending score order, stable on input index.
pub fn score_sorted(dets: &[([f64; 4], f64)]) -> Vec<([f64; 4], f64)> {
    let mut v = dets.to_vec();
    // insertion sort: stable and obviously correct
    for i in 1..v.len() {
        let mut j = i;
        while j > 0 && v[j - 1].1 < v[j].1 {
            v.swap(j - 1, j);
            j -= 1;
        }
    }
    v
}

/// Greedy matching of already score-sorted detections; returns the matched
/// ground-truth index per detection.
pub fn match_greedy(gt: &[[f64; 4]], sorted_dets: &[([f64; 4], f64)], thr: f64) -> Vec<Option<usize>> {
    let mut used = vec![false; gt.len()];
    let mut out = Vec::new();
    for (d, _) in sorted_dets {
        let mut best: Option<usize> = None;
        let mut best_iou = -1.0;
        for g in 0..gt.len() {
            let v = iou(d, &gt[g]);
            if !used[g] && v >= thr && v > best_iou {
                best = Some(g);
                best_iou = v;
            }
        }
        if let Some(g) = best {
            used[g] = true;
        }
        out.push(best);
    }
    out
}

/// 101-point AP straight from the definition: for each recall level r,
/// the maximum precision over all ranks whose recall is at least r.
/// `ranked` must already be in global rank order.
pub fn ap_101(ranked: &[(f64, bool)], total_gt: usize) -> f64 {
    if total_gt == 0 {
        return 0.0;
    }
    let mut points = Vec::new();
    let mut tp = 0.0;
    for (k, (_, is_tp)) in ranked.iter().enumerate() {
        if *is_tp {
            tp += 1.0;
        }
        points.push((tp / total_gt as f64, tp / (k + 1) as f64));
    }
    let mut sum = 0.0;
    for level in 0..=100 {
        let r = level as f64 / 100.0;
        let best = points
            .iter()
            .filter(|(rec, _)| *rec >= r)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        sum += best;
    }
    sum / 101.0
}

/// AP at one IoU threshold over a whole instance.
pub fn ap_at_threshold(inst: &Instance, thr: f64, max_det: usize) -> f64 {
    // (score, image, rank, tp)
    let mut pooled: Vec<(f64, usize, usize, bool)> = Vec::new();
    let mut total_gt = 0;
    for (img, (gt, dets)) in inst.iter().enumerate() {
        total_gt += gt.len();
        let mut sorted = score_sorted(dets);
        sorted.truncate(max_det);
        for (rank, m) in match_greedy(gt, &sorted, thr).into_iter().enumerate() {
            pooled.push((sorted[rank].1, img, rank, m.is_some()));
        }
    }
    // stable global order: score desc, image asc, rank asc
    for i in 1..pooled.len() {
        let mut j = i;
        while j > 0 && {
            let (a, b) = (pooled[j - 1], pooled[j]);
            a.0 < b.0 || (a.0 == b.0 && (a.1, a.2) > (b.1, b.2))
        } {
            pooled.swap(j - 1, j);
            j -= 1;
        }
    }
    let ranked: Vec<(f64, bool)> = pooled.iter().map(|p| (p.0, p.3)).collect();
    ap_101(&ranked, total_gt)
}
