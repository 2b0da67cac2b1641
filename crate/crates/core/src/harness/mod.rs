//! Synthetic scenes, oracle rendering, box fitting and the end-to-end runs
//! behind the command-line tool.

pub mod config;
pub mod fit;
pub mod pe;
pub mod plot;
pub mod render;
pub mod scene;

use std::fmt::Write;
use std::path::Path;

use ndarray::Array1;

use crate::aggregation::{aggregate, AggregationParams, Query};
use crate::error::{invalid, Result};
use crate::eval::{metrics_report, read_scenes, BoxRecord, EvalConfig, MetricsReport, SceneRecord};
use crate::geometry::{box_iou, nms, Box9DoF};
use crate::losses::BoxLossKind;
use config::RunConfig;
use fit::{fit_boxes, FitTrace};
use render::RenderedScene;
use scene::SceneSample;

/// Per-scene, per-category NMS on detection records.
pub fn suppress(scenes: &[SceneRecord], iou_threshold: f64) -> Result<Vec<SceneRecord>> {
    scenes
        .iter()
        .map(|s| {
            let dets = s.boxes.iter().map(BoxRecord::to_detection).collect::<Result<Vec<_>>>()?;
            let boxes = nms(&dets, iou_threshold)
                .iter()
                .map(|d| BoxRecord::from_box(&d.bbox, d.category, Some(d.score)))
                .collect();
            Ok(SceneRecord {
                boxes,
                ..s.clone()
            })
        })
        .collect()
}

/// Loads detections and ground truth, optionally applies NMS to the
/// detections, and evaluates.
pub fn run_eval(
    dets_path: impl AsRef<Path>,
    gts_path: impl AsRef<Path>,
    cfg: &EvalConfig,
    nms_threshold: Option<f64>,
) -> Result<MetricsReport> {
    let mut dets = read_scenes(dets_path)?;
    let gts = read_scenes(gts_path)?;
    if let Some(t) = nms_threshold {
        if !(0.0..=1.0).contains(&t) {
            return Err(invalid("nms threshold must lie in [0, 1]"));
        }
        dets = suppress(&dets, t)?;
    }
    metrics_report(&dets, &gts, cfg)
}

/// Fits every ground-truth box of a scene with the run's fit settings and
/// seed.
pub fn fit_scene(scene: &SceneSample, kind: BoxLossKind, cfg: &RunConfig) -> Result<Vec<FitTrace>> {
    fit_boxes(&scene.gt_boxes()?, kind, &cfg.fit, cfg.seed)
}

/// Rows of `box,step,loss,grad_norm,iou` followed by the nine box
/// parameters.
pub fn trace_csv(traces: &[FitTrace], gts: &[Box9DoF]) -> String {
    let mut out = String::from("box,step,loss,grad_norm,iou,cx,cy,cz,sx,sy,sz,roll,pitch,yaw\n");
    for (i, (t, gt)) in traces.iter().zip(gts).enumerate() {
        for (k, s) in t.steps.iter().enumerate() {
            let _ = write!(out, "{i},{k},{:.9e},{:.9e},{:.6}", s.loss, s.grad_norm, box_iou(&s.bbox, gt));
            for p in s.bbox.params() {
                let _ = write!(out, ",{p:.9}");
            }
            out.push('\n');
        }
    }
    out
}

/// Rows of `box,initial_iou,final_iou,final_loss`.
pub fn fit_summary_csv(traces: &[FitTrace], gts: &[Box9DoF]) -> String {
    let mut out = String::from("box,initial_iou,final_iou,final_loss\n");
    for (i, (t, gt)) in traces.iter().zip(gts).enumerate() {
        let _ = writeln!(
            out,
            "{i},{:.6},{:.6},{:.9e}",
            box_iou(&t.steps[0].bbox, gt),
            box_iou(&t.final_box(), gt),
            t.final_loss()
        );
    }
    out
}

/// Outcome of aggregating one ground-truth box over oracle feature maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    pub index: usize,
    /// Instance whose signature is most similar to the aggregated feature,
    /// `None` if the feature is zero.
    pub top1: Option<usize>,
    pub own_cosine: f64,
    /// Best cosine among the other instances, `-inf` without others.
    pub best_other_cosine: f64,
    pub valid_samples: usize,
    pub weight_sum: f64,
}

/// Uses every ground-truth box as a query anchor with a zero feature and
/// zero-initialised heads, so each query averages its visible key points
/// uniformly, then compares the result with every instance signature.
pub fn aggregate_demo(scene: &SceneSample, rendered: &RenderedScene, cfg: &RunConfig) -> Result<Vec<Recovery>> {
    let cams = scene.cameras()?;
    let gts = scene.gt_boxes()?;
    let channels = cfg.scene.signature_dims;
    let params = AggregationParams::zeros(channels, cams.len(), cfg.max_depth);
    let queries: Vec<Query> = gts
        .iter()
        .map(|b| Query {
            feature: Array1::zeros(channels),
            anchor: *b,
        })
        .collect();
    let updates = aggregate(&queries, &rendered.features, &cams, &params)?;
    let sig = &rendered.signatures;
    Ok(updates
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let n = u.feature.dot(&u.feature).sqrt();
            let cos: Vec<f64> = sig
                .rows()
                .into_iter()
                .map(|s| if n > 0.0 { s.dot(&u.feature) / n } else { 0.0 })
                .collect();
            let top1 = (n > 0.0).then(|| (0..cos.len()).max_by(|&a, &b| cos[a].total_cmp(&cos[b]).then(b.cmp(&a)))).flatten();
            Recovery {
                index: i,
                top1,
                own_cosine: cos[i],
                best_other_cosine: cos
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, c)| *c)
                    .fold(f64::NEG_INFINITY, f64::max),
                valid_samples: u.pixels.iter().filter(|p| p.is_some()).count(),
                weight_sum: u.weights.weights.sum(),
            }
        })
        .collect())
}

/// Rows of `box,top1,own_cosine,best_other_cosine,valid_samples,weight_sum`.
pub fn recovery_csv(rows: &[Recovery]) -> String {
    let mut out = String::from("box,top1,own_cosine,best_other_cosine,valid_samples,weight_sum\n");
    for r in rows {
        let top1 = r.top1.map_or_else(|| "none".to_string(), |t| t.to_string());
        let _ = writeln!(
            out,
            "{},{top1},{:.6},{:.6},{},{:.9}",
            r.index, r.own_cosine, r.best_other_cosine, r.valid_samples, r.weight_sum
        );
    }
    out
}
