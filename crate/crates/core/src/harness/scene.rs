use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::camera::{in_frustum, project, CameraJson, CameraModel, Intrinsics};
use crate::error::{invalid, Result};
use crate::eval::{BoxRecord, SceneRecord};
use crate::geometry::{box_iou, Box9DoF};

/// Attempts per box before scene generation gives up.
const MAX_BOX_ATTEMPTS: usize = 10_000;

/// A generated scene: cameras plus categorized ground-truth boxes. Feature
/// maps are rendered from it on demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSample {
    pub scene_id: String,
    pub seed: u64,
    pub subset: String,
    pub cameras: Vec<CameraJson>,
    pub boxes: Vec<BoxRecord>,
}

impl SceneSample {
    pub fn cameras(&self) -> Result<Vec<CameraModel>> {
        self.cameras.iter().cloned().map(CameraModel::try_from).collect()
    }

    pub fn gt_boxes(&self) -> Result<Vec<Box9DoF>> {
        self.boxes.iter().map(BoxRecord::to_box).collect()
    }

    /// The ground truth in evaluation format.
    pub fn to_record(&self) -> SceneRecord {
        SceneRecord {
            scene_id: self.scene_id.clone(),
            subset: Some(self.subset.clone()),
            boxes: self.boxes.clone(),
        }
    }
}

/// Seed of task `index` under a root seed.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(index + 1);
    rng.next_u64()
}

/// `n` scenes, scene `i` generated from `derive_seed(seed, i)`.
pub fn gen_scenes(cfg: &RunConfig, seed: u64, n: usize) -> Result<Vec<SceneSample>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut s = gen_scene(cfg, derive_seed(seed, i as u64))?;
            s.scene_id = format!("scene_{i:04}");
            s.subset = cfg.scene.subsets[i % cfg.scene.subsets.len()].clone();
            Ok(s)
        })
        .collect()
}

/// Boxes in a room seen by a ring of inward-looking cameras.
///
/// Boxes do not overlap, and each box center is in some camera's frustum
/// and not hidden there behind another box (see [`visible_from`]). With
/// `occlusion_free` set, no box center may be hidden in any view that frames
/// it. Boxes violating these are re-sampled.
pub fn gen_scene(cfg: &RunConfig, seed: u64) -> Result<SceneSample> {
    cfg.validate()?;
    let sc = &cfg.scene;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intrinsics = Intrinsics::from_array(cfg.intrinsics)?;

    let num_cams = rng.random_range(sc.min_cameras..=sc.max_cameras);
    let phase = rng.random_range(0.0..2.0 * PI);
    let center = Vector3::new(0.0, 0.0, 0.5 * sc.room[2]);
    let cameras = (0..num_cams)
        .map(|i| {
            let a = phase + 2.0 * PI * i as f64 / num_cams as f64;
            let pos = Vector3::new(sc.camera_radius * a.cos(), sc.camera_radius * a.sin(), sc.camera_height);
            let target = center + Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 0.0);
            CameraModel::look_at(intrinsics, pos, target, Vector3::z(), sc.image_width, sc.image_height)
        })
        .collect::<Result<Vec<_>>>()?;

    let num_boxes = rng.random_range(sc.min_boxes..=sc.max_boxes);
    let mut boxes: Vec<(Box9DoF, u32)> = Vec::with_capacity(num_boxes);
    for _ in 0..num_boxes {
        let mut placed = false;
        for _ in 0..MAX_BOX_ATTEMPTS {
            let b = sample_box(cfg, &mut rng)?;
            let category = rng.random_range(0..sc.num_categories);
            if boxes.iter().any(|(o, _)| box_iou(o, &b) > 0.0) {
                continue;
            }
            let mut all: Vec<Box9DoF> = boxes.iter().map(|(o, _)| *o).collect();
            all.push(b);
            // The new box must be visible and must not hide an earlier one.
            if (0..all.len()).all(|i| centers_visible(&cameras, &all, i, cfg)) {
                boxes.push((b, category));
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(invalid(format!("could not place {num_boxes} boxes in the room")));
        }
    }

    Ok(SceneSample {
        scene_id: format!("scene_s{seed}"),
        seed,
        subset: sc.subsets[0].clone(),
        cameras: cameras.iter().map(CameraJson::from).collect(),
        boxes: boxes.iter().map(|(b, c)| BoxRecord::from_box(b, *c, None)).collect(),
    })
}

fn sample_box(cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Result<Box9DoF> {
    let sc = &cfg.scene;
    let size = loop {
        let s: [f64; 3] = std::array::from_fn(|_| rng.random_range(sc.min_box_size..=sc.max_box_size));
        let mut sorted = s;
        sorted.sort_by(f64::total_cmp);
        if sorted[1] >= sorted[0] * sc.min_extent_ratio && sorted[2] >= sorted[1] * sc.min_extent_ratio {
            break Vector3::from(s);
        }
    };
    // Keep the center at least a half diagonal from the walls.
    let margin = 0.5 * size.norm();
    let mut range = |extent: f64, lo: f64| {
        let (a, b) = (lo + margin, lo + extent - margin);
        if a < b {
            rng.random_range(a..b)
        } else {
            lo + 0.5 * extent
        }
    };
    let c = Vector3::new(
        range(sc.room[0], -0.5 * sc.room[0]),
        range(sc.room[1], -0.5 * sc.room[1]),
        range(sc.room[2], 0.0),
    );
    let euler = Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-PI..PI));
    Box9DoF::new(c, size, euler)
}

fn centers_visible(cams: &[CameraModel], boxes: &[Box9DoF], i: usize, cfg: &RunConfig) -> bool {
    let seen = |c: &CameraModel| visible_from(c, boxes, i, cfg.max_depth);
    if cfg.scene.occlusion_free {
        let framed: Vec<&CameraModel> = cams.iter().filter(|c| in_frustum(c, &boxes[i].center, cfg.max_depth)).collect();
        !framed.is_empty() && framed.into_iter().all(seen)
    } else {
        cams.iter().any(seen)
    }
}

/// Whether the center of `boxes[index]` is inside the frustum of `cam` and
/// the first box the camera ray through it enters is `boxes[index]`.
pub fn visible_from(cam: &CameraModel, boxes: &[Box9DoF], index: usize, max_depth: f64) -> bool {
    let target = boxes[index].center;
    if !in_frustum(cam, &target, max_depth) {
        return false;
    }
    let origin = cam.translation();
    let dir = target - origin;
    let own = ray_box_entry(&origin, &dir, &boxes[index]);
    let Some(own) = own else { return false };
    boxes
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != index)
        .all(|(_, b)| ray_box_entry(&origin, &dir, b).is_none_or(|t| t > own))
}

/// Smallest nonnegative ray parameter at which `origin + t dir` is inside
/// the box, by the slab method in the box frame.
pub fn ray_box_entry(origin: &Vector3<f64>, dir: &Vector3<f64>, b: &Box9DoF) -> Option<f64> {
    let r = b.rotation().ok()?;
    let o = r.transpose() * (origin - b.center);
    let d = r.transpose() * dir;
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    for k in 0..3 {
        let h = 0.5 * b.size[k];
        if d[k].abs() < 1e-15 {
            if o[k].abs() > h {
                return None;
            }
            continue;
        }
        let (t1, t2) = ((-h - o[k]) / d[k], (h - o[k]) / d[k]);
        lo = lo.max(t1.min(t2));
        hi = hi.min(t1.max(t2));
        if lo > hi {
            return None;
        }
    }
    Some(lo)
}

/// Depth of a world point in a camera, or `None` behind it.
pub fn center_depth(cam: &CameraModel, p: &Vector3<f64>) -> Option<f64> {
    project(cam, p).ok().map(|pd| pd.depth).filter(|d| *d > 0.0)
}
