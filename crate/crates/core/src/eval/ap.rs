use crate::eval::{bev_iou, Detection};

/// Greedy matching in descending score order; returns the true-positive flag
/// of each detection in that order.
fn match_greedy(dets: &[Detection], gts: &[Detection], iou_threshold: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut used = vec![false; gts.len()];
    order
        .iter()
        .map(|&d| {
            let best = (0..gts.len())
                .filter(|&g| !used[g])
                .map(|g| (g, bev_iou(&dets[d], &gts[g])))
                .filter(|&(_, iou)| iou >= iou_threshold)
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            match best {
                Some((g, _)) => {
                    used[g] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// All-point average precision.
pub fn average_precision(dets: &[Detection], gts: &[Detection], iou_threshold: f64) -> f64 {
    if gts.is_empty() {
        return if dets.is_empty() { 1.0 } else { 0.0 };
    }
    let tp = match_greedy(dets, gts, iou_threshold);
    let mut prec = Vec::with_capacity(tp.len());
    let mut rec = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += t as usize;
        prec.push(hits as f64 / (i + 1) as f64);
        rec.push(hits as f64 / gts.len() as f64);
    }
    // precision envelope, then sum over recall steps
    for i in (0..prec.len().saturating_sub(1)).rev() {
        prec[i] = prec[i].max(prec[i + 1]);
    }
    let mut ap = 0.0;
    let mut last_r = 0.0;
    for (p, r) in prec.iter().zip(&rec) {
        if *r > last_r {
            ap += (r - last_r) * p;
            last_r = *r;
        }
    }
    ap
}

/// Fraction of ground truths matched at `iou_threshold`.
pub fn recall(dets: &[Detection], gts: &[Detection], iou_threshold: f64) -> f64 {
    if gts.is_empty() {
        return 1.0;
    }
    let hits = match_greedy(dets, gts, iou_threshold).iter().filter(|&&t| t).count();
    hits as f64 / gts.len() as f64
}
