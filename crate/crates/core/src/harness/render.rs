use nalgebra::Vector3;
use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::config::RunConfig;
use super::scene::{center_depth, ray_box_entry, SceneSample};
use crate::camera::{unproject, CameraModel, PixelDepth};
use crate::enhancer::FeatureMap;
use crate::error::Result;
use crate::geometry::Box9DoF;

/// Stream reserved for signature draws so they never collide with scene
/// sampling.
const SIGNATURE_STREAM: u64 = 0x5157;

/// Oracle feature and depth maps of every view plus the per-instance
/// signatures painted into them.
#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub features: Vec<FeatureMap>,
    /// One channel: center depth of the visible instance, 0 on background.
    pub depths: Vec<FeatureMap>,
    /// `num_boxes x signature_dims`, unit-norm rows.
    pub signatures: Array2<f64>,
}

/// Unit-norm Gaussian signatures, one row per instance.
pub fn instance_signatures(seed: u64, num: usize, dims: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SIGNATURE_STREAM);
    let mut s: Array2<f64> = Array2::from_shape_fn((num, dims), |_| StandardNormal.sample(&mut rng));
    for mut row in s.rows_mut() {
        let n = row.dot(&row).sqrt();
        row /= n;
    }
    s
}

/// Paints each feature cell with the signatures of the instances seen
/// through it.
///
/// Every cell is sampled on a `supersample x supersample` pixel lattice. A
/// sample takes the signature of the box its camera ray enters first (ties
/// by center depth) or zero; the cell stores the mean over its samples.
/// The depth map averages the camera depth of the seen instance's center.
pub fn render_feature_maps(scene: &SceneSample, cfg: &RunConfig) -> Result<RenderedScene> {
    cfg.validate()?;
    let cams = scene.cameras()?;
    let boxes = scene.gt_boxes()?;
    let sc = &cfg.scene;
    let signatures = instance_signatures(scene.seed, boxes.len(), sc.signature_dims);
    let (rows, cols) = sc.grid();
    let stride = sc.stride as f64;
    let s = sc.supersample;

    let views = cams
        .par_iter()
        .enumerate()
        .map(|(view, cam)| {
            let mut feat = Array3::zeros((rows, cols, sc.signature_dims));
            let mut depth = Array3::zeros((rows, cols, 1));
            let depths: Vec<Option<f64>> = boxes.iter().map(|b| center_depth(cam, &b.center)).collect();
            let w = 1.0 / (s * s) as f64;
            for row in 0..rows {
                for col in 0..cols {
                    for a in 0..s {
                        for b in 0..s {
                            let u = col as f64 * stride + (b as f64 + 0.5) * stride / s as f64 - 0.5;
                            let v = row as f64 * stride + (a as f64 + 0.5) * stride / s as f64 - 0.5;
                            let Some(hit) = first_hit(cam, &boxes, &depths, u, v)? else { continue };
                            for c in 0..sc.signature_dims {
                                feat[(row, col, c)] += w * signatures[(hit, c)];
                            }
                            depth[(row, col, 0)] += w * depths[hit].unwrap_or(0.0);
                        }
                    }
                }
            }
            Ok((FeatureMap::new(view, stride, feat)?, FeatureMap::new(view, stride, depth)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let (features, depths) = views.into_iter().unzip();
    Ok(RenderedScene {
        features,
        depths,
        signatures,
    })
}

fn first_hit(cam: &CameraModel, boxes: &[Box9DoF], depths: &[Option<f64>], u: f64, v: f64) -> Result<Option<usize>> {
    let origin = cam.translation();
    let dir: Vector3<f64> = unproject(cam, &PixelDepth { u, v, depth: 1.0 })? - origin;
    let mut best: Option<(usize, f64, f64)> = None;
    for (i, b) in boxes.iter().enumerate() {
        let Some(t) = ray_box_entry(&origin, &dir, b) else { continue };
        let d = depths[i].unwrap_or(f64::INFINITY);
        if best.is_none_or(|(_, bt, bd)| t < bt || (t == bt && d < bd)) {
            best = Some((i, t, d));
        }
    }
    Ok(best.map(|(i, _, _)| i))
}
