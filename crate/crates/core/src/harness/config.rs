use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fit::FitConfig;
use crate::aggregation::{NUM_FIXED_KEYPOINTS, NUM_LEARNABLE_KEYPOINTS};
use crate::camera::STANDARD_INTRINSICS;
use crate::error::{invalid, Result};
use crate::eval::EvalConfig;
use crate::losses::LossWeights;

/// Synthetic scene layout. All numbers are plumbing defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Room extent along x, y and z; the floor is centered on the origin.
    pub room: [f64; 3],
    pub min_boxes: usize,
    pub max_boxes: usize,
    pub min_cameras: usize,
    pub max_cameras: usize,
    /// Distance of the camera ring from the room's vertical axis.
    pub camera_radius: f64,
    pub camera_height: f64,
    pub image_width: usize,
    pub image_height: usize,
    /// Image pixels per feature-map cell.
    pub stride: usize,
    /// Sub-samples per cell side when rendering oracle feature maps.
    pub supersample: usize,
    pub min_box_size: f64,
    pub max_box_size: f64,
    /// Minimum ratio between consecutive sorted box extents. Near-cubic
    /// boxes make the orientation unidentifiable from second moments.
    pub min_extent_ratio: f64,
    /// Reject boxes whose center is hidden behind another box in any view
    /// that frames it, not just in all of them.
    pub occlusion_free: bool,
    pub num_categories: u32,
    pub signature_dims: usize,
    /// Subset tags assigned to generated scenes round-robin.
    pub subsets: Vec<String>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            room: [6.0, 6.0, 3.0],
            min_boxes: 1,
            max_boxes: 10,
            min_cameras: 2,
            max_cameras: 8,
            camera_radius: 2.8,
            camera_height: 1.6,
            image_width: 512,
            image_height: 512,
            stride: 16,
            supersample: 4,
            min_box_size: 0.2,
            max_box_size: 1.5,
            min_extent_ratio: 1.15,
            occlusion_free: true,
            num_categories: 8,
            signature_dims: 16,
            subsets: vec!["north".into(), "south".into()],
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.room.iter().all(|r| r.is_finite() && *r > 0.0) {
            return Err(invalid("room extents must be positive"));
        }
        if self.min_boxes < 1 || self.min_boxes > self.max_boxes {
            return Err(invalid("box count range must satisfy 1 <= min <= max"));
        }
        if self.min_cameras < 1 || self.min_cameras > self.max_cameras {
            return Err(invalid("camera count range must satisfy 1 <= min <= max"));
        }
        if !(self.camera_radius > 0.0) || !(0.0..=self.room[2]).contains(&self.camera_height) {
            return Err(invalid("camera ring must have positive radius and lie inside the room"));
        }
        if self.camera_radius >= 0.5 * self.room[0].min(self.room[1]) {
            return Err(invalid("camera ring must fit inside the room"));
        }
        if self.stride < 1 || !self.image_width.is_multiple_of(self.stride) || !self.image_height.is_multiple_of(self.stride) {
            return Err(invalid("image size must be a positive multiple of the stride"));
        }
        if self.supersample < 1 {
            return Err(invalid("supersample must be at least 1"));
        }
        if !(self.min_box_size > 0.0 && self.min_box_size * self.min_extent_ratio.powi(2) <= self.max_box_size) {
            return Err(invalid("box size range cannot hold the required extent ratio"));
        }
        if !(self.min_extent_ratio >= 1.0) {
            return Err(invalid("min extent ratio must be at least 1"));
        }
        if self.max_box_size > 0.5 * self.room.iter().cloned().fold(f64::INFINITY, f64::min) {
            return Err(invalid("boxes must not exceed half the room"));
        }
        if self.num_categories < 1 || self.signature_dims < 1 {
            return Err(invalid("need at least one category and one signature dimension"));
        }
        if self.subsets.is_empty() {
            return Err(invalid("need at least one subset tag"));
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.image_height / self.stride, self.image_width / self.stride)
    }
}

/// Every knob of the command-line tool, with model defaults where the
/// reference configuration gives them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub embed_dims: usize,
    /// Maximum frustum depth `D` in meters.
    pub max_depth: f64,
    /// Depth samples per pixel `K`.
    pub num_depths: usize,
    pub num_fixed_keypoints: usize,
    pub num_learnable_keypoints: usize,
    pub intrinsics: [f64; 4],
    pub loss_weights: LossWeights,
    pub nms_threshold: f64,
    pub eval: EvalConfig,
    pub fit: FitConfig,
    pub seed: u64,
    pub scene: SceneConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            embed_dims: 32,
            max_depth: 10.0,
            num_depths: 64,
            num_fixed_keypoints: NUM_FIXED_KEYPOINTS,
            num_learnable_keypoints: NUM_LEARNABLE_KEYPOINTS,
            intrinsics: STANDARD_INTRINSICS,
            loss_weights: LossWeights::default(),
            nms_threshold: 0.4,
            eval: EvalConfig::default(),
            fit: FitConfig::default(),
            seed: 0,
            scene: SceneConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dims < 1 || self.num_depths < 1 {
            return Err(invalid("embed dims and depth samples must be positive"));
        }
        if !(self.max_depth > 0.0 && self.max_depth.is_finite()) {
            return Err(invalid("max depth must be positive"));
        }
        if self.num_fixed_keypoints != NUM_FIXED_KEYPOINTS || self.num_learnable_keypoints != NUM_LEARNABLE_KEYPOINTS {
            return Err(invalid(format!(
                "key-point layout is fixed at {NUM_FIXED_KEYPOINTS} fixed + {NUM_LEARNABLE_KEYPOINTS} learnable"
            )));
        }
        if !(0.0..=1.0).contains(&self.nms_threshold) {
            return Err(invalid("nms threshold must lie in [0, 1]"));
        }
        let diagonal = self.scene.room.iter().map(|r| r * r).sum::<f64>().sqrt();
        if self.max_depth < diagonal {
            return Err(invalid("max depth must cover the room diagonal"));
        }
        crate::camera::Intrinsics::from_array(self.intrinsics)?;
        self.loss_weights.validate()?;
        self.eval.validate()?;
        self.fit.validate()?;
        self.scene.validate()
    }

    /// Reads a JSON config; missing fields take their defaults.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
