use std::collections::BTreeMap;

use super::boxes::Detection;
use super::iou::box_iou;

/// Greedy per-category non-maximum suppression.
///
/// Within each category, detections are visited by descending score (ties by
/// input index) and any detection whose IoU with an already kept box exceeds
/// `iou_threshold` is dropped. The survivors are returned in the same
/// score-descending, index-ascending order across all categories.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| dets[j].score.total_cmp(&dets[i].score).then(i.cmp(&j)));

    let mut kept_by_cat: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    let mut kept = Vec::new();
    for i in order {
        let bucket = kept_by_cat.entry(dets[i].category).or_default();
        let suppressed = bucket
            .iter()
            .any(|&k| box_iou(&dets[k].bbox, &dets[i].bbox) > iou_threshold);
        if !suppressed {
            bucket.push(i);
            kept.push(dets[i]);
        }
    }
    kept
}
