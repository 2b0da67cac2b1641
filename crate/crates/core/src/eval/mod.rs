//! AP at a fixed 3D IoU threshold, with per-category, size-class and subset
//! splits.
//!
//! Matching is greedy in score order and AP integrates the precision
//! envelope over recall (all-point interpolation). Split means are macro
//! averages over the categories that have ground truth in the split.
//! Size-class splits filter both detections and ground truth by their own
//! box volume.

mod ap;
mod io;

pub use ap::{average_precision, match_detections, score_order};
pub use io::{parse_scenes, read_scenes, write_scenes, BoxRecord, SceneRecord};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{Box9DoF, Detection};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    /// Boxes below this volume (m^3) are small.
    pub small_max_volume: f64,
    /// Boxes below this volume and not small are medium; the rest large.
    pub medium_max_volume: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.25,
            small_max_volume: 0.01,
            medium_max_volume: 0.5,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(invalid(format!("IoU threshold must lie in (0, 1], got {}", self.iou_threshold)));
        }
        if !(self.small_max_volume > 0.0 && self.small_max_volume < self.medium_max_volume) {
            return Err(invalid("size thresholds must satisfy 0 < small < medium"));
        }
        Ok(())
    }

    pub fn size_class(&self, b: &Box9DoF) -> SizeClass {
        let v = b.volume();
        if v < self.small_max_volume {
            SizeClass::Small
        } else if v < self.medium_max_volume {
            SizeClass::Medium
        } else {
            SizeClass::Large
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

impl SizeClass {
    pub const ALL: [SizeClass; 3] = [SizeClass::Small, SizeClass::Medium, SizeClass::Large];

    pub fn name(&self) -> &'static str {
        match self {
            SizeClass::Small => "small",
            SizeClass::Medium => "medium",
            SizeClass::Large => "large",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CategoryAp {
    pub ap: f64,
    pub num_gt: usize,
    pub num_det: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitReport {
    /// Macro mean over categories with ground truth; 0 if there are none.
    pub mean_ap: f64,
    pub num_gt: usize,
    pub num_det: usize,
    pub categories: BTreeMap<u32, CategoryAp>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub iou_threshold: f64,
    pub overall: SplitReport,
    /// Keyed by size-class name; classes without ground truth are omitted.
    pub sizes: BTreeMap<String, SplitReport>,
    /// Keyed by subset tag of the ground-truth scenes.
    pub subsets: BTreeMap<String, SplitReport>,
}

struct EvalScene {
    subset: Option<String>,
    gts: Vec<(Box9DoF, u32, SizeClass)>,
    dets: Vec<(Detection, SizeClass)>,
}

/// Evaluates detections against ground truth. Scenes are paired by
/// `scene_id`; detections in scenes without ground truth are all false
/// positives.
pub fn metrics_report(dets: &[SceneRecord], gts: &[SceneRecord], cfg: &EvalConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let mut scenes: Vec<EvalScene> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for s in gts {
        if index.insert(&s.scene_id, scenes.len()).is_some() {
            return Err(invalid(format!("duplicate ground-truth scene {:?}", s.scene_id)));
        }
        let boxes = s
            .boxes
            .iter()
            .map(|b| {
                let bx = b.to_box()?;
                Ok((bx, b.category, cfg.size_class(&bx)))
            })
            .collect::<Result<Vec<_>>>()?;
        scenes.push(EvalScene {
            subset: s.subset.clone(),
            gts: boxes,
            dets: Vec::new(),
        });
    }
    for s in dets {
        let idx = match index.get(s.scene_id.as_str()) {
            Some(&i) => i,
            None => {
                index.insert(&s.scene_id, scenes.len());
                scenes.push(EvalScene {
                    subset: None,
                    gts: Vec::new(),
                    dets: Vec::new(),
                });
                scenes.len() - 1
            }
        };
        for b in &s.boxes {
            let d = b.to_detection().map_err(|e| invalid(format!("scene {:?}: {e}", s.scene_id)))?;
            let size = cfg.size_class(&d.bbox);
            scenes[idx].dets.push((d, size));
        }
    }

    let overall = evaluate_split(&scenes, cfg.iou_threshold, |_| true, None);
    let mut sizes = BTreeMap::new();
    for class in SizeClass::ALL {
        let r = evaluate_split(&scenes, cfg.iou_threshold, |_| true, Some(class));
        if r.num_gt > 0 {
            sizes.insert(class.name().to_string(), r);
        }
    }
    let tags: BTreeSet<&str> = scenes.iter().filter_map(|s| s.subset.as_deref()).collect();
    let subsets = tags
        .into_iter()
        .map(|t| {
            let r = evaluate_split(&scenes, cfg.iou_threshold, |s| s.subset.as_deref() == Some(t), None);
            (t.to_string(), r)
        })
        .collect();
    Ok(MetricsReport {
        iou_threshold: cfg.iou_threshold,
        overall,
        sizes,
        subsets,
    })
}

fn evaluate_split(
    scenes: &[EvalScene],
    threshold: f64,
    keep_scene: impl Fn(&EvalScene) -> bool + Sync,
    size: Option<SizeClass>,
) -> SplitReport {
    let in_size = |s: SizeClass| size.is_none_or(|c| c == s);
    let selected: Vec<&EvalScene> = scenes.iter().filter(|s| keep_scene(s)).collect();
    let categories: BTreeSet<u32> = selected
        .iter()
        .flat_map(|s| {
            s.gts
                .iter()
                .filter(|g| in_size(g.2))
                .map(|g| g.1)
                .chain(s.dets.iter().filter(|d| in_size(d.1)).map(|d| d.0.category))
        })
        .collect();

    let per_category: Vec<(u32, CategoryAp)> = categories
        .into_par_iter()
        .map(|cat| {
            // (score, scene, detection, tp) over all scenes.
            let mut ranked: Vec<(f64, usize, usize, bool)> = Vec::new();
            let mut num_gt = 0;
            for (si, s) in selected.iter().enumerate() {
                let gts: Vec<Box9DoF> = s.gts.iter().filter(|g| g.1 == cat && in_size(g.2)).map(|g| g.0).collect();
                let dets: Vec<Detection> =
                    s.dets.iter().filter(|d| d.0.category == cat && in_size(d.1)).map(|d| d.0).collect();
                num_gt += gts.len();
                let flags = match_detections(&dets, &gts, threshold);
                ranked.extend(dets.iter().zip(flags).enumerate().map(|(di, (d, f))| (d.score, si, di, f)));
            }
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let flags: Vec<bool> = ranked.iter().map(|r| r.3).collect();
            (
                cat,
                CategoryAp {
                    ap: average_precision(&flags, num_gt),
                    num_gt,
                    num_det: ranked.len(),
                },
            )
        })
        .collect();

    let with_gt: Vec<f64> = per_category.iter().filter(|c| c.1.num_gt > 0).map(|c| c.1.ap).collect();
    SplitReport {
        mean_ap: if with_gt.is_empty() {
            0.0
        } else {
            with_gt.iter().sum::<f64>() / with_gt.len() as f64
        },
        num_gt: per_category.iter().map(|c| c.1.num_gt).sum(),
        num_det: per_category.iter().map(|c| c.1.num_det).sum(),
        categories: per_category.into_iter().collect(),
    }
}

impl MetricsReport {
    /// Rows of `split,category,ap,num_gt,num_det`; the macro mean of each
    /// split uses category `mean`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("split,category,ap,num_gt,num_det\n");
        let mut emit = |name: &str, r: &SplitReport| {
            let _ = writeln!(out, "{name},mean,{:.6},{},{}", r.mean_ap, r.num_gt, r.num_det);
            for (cat, c) in &r.categories {
                let _ = writeln!(out, "{name},{cat},{:.6},{},{}", c.ap, c.num_gt, c.num_det);
            }
        };
        emit("overall", &self.overall);
        for (k, r) in &self.sizes {
            emit(&format!("size:{k}"), r);
        }
        for (k, r) in &self.subsets {
            emit(&format!("subset:{k}"), r);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}
