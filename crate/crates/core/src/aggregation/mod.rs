//! Multi-view deformable aggregation of query features around 3D boxes.
//!
//! Every query carries a box. Key points are placed inside the box (seven
//! fixed ones at the center and face centers, nine regressed from the query
//! feature), projected into every view, sampled bilinearly from that view's
//! feature map and combined with softmax weights. Weights of key points that
//! fall outside a view are excluded from the softmax, so the remaining
//! weights still sum to one.
//!
//! Image pixels map to feature-grid coordinates by
//! `f = (u + 0.5) / stride - 0.5`, the same cell-center convention used by
//! the frustum grid.

mod anchors;

pub use anchors::{generate_anchors, ANCHORS_PER_VIEW};

use log::debug;
use nalgebra::Vector3;
use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;

use crate::camera::{in_frustum, project, CameraModel};
use crate::enhancer::FeatureMap;
use crate::error::{invalid, Error, Result};
use crate::geometry::Box9DoF;
use crate::linear::LinearParams;

pub const NUM_FIXED_KEYPOINTS: usize = 7;
pub const NUM_LEARNABLE_KEYPOINTS: usize = 9;
pub const NUM_KEYPOINTS: usize = NUM_FIXED_KEYPOINTS + NUM_LEARNABLE_KEYPOINTS;

/// Camera descriptor length per view: 4 intrinsics and 12 extrinsic entries.
pub const CAMERA_DESCRIPTOR_DIMS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub feature: Array1<f64>,
    pub anchor: Box9DoF,
}

/// Box center followed by the six face centers, in box-local unit
/// coordinates.
pub fn fixed_keypoint_offsets() -> [Vector3<f64>; NUM_FIXED_KEYPOINTS] {
    [
        Vector3::zeros(),
        Vector3::new(0.5, 0.0, 0.0),
        Vector3::new(-0.5, 0.0, 0.0),
        Vector3::new(0.0, 0.5, 0.0),
        Vector3::new(0.0, -0.5, 0.0),
        Vector3::new(0.0, 0.0, 0.5),
        Vector3::new(0.0, 0.0, -0.5),
    ]
}

/// Nine offsets regressed by an affine `C -> 27` map. Not clamped to the
/// unit cube.
pub fn learnable_keypoint_offsets(feature: ArrayView1<f64>, p: &LinearParams) -> Result<Vec<Vector3<f64>>> {
    p.expect_dims(feature.len(), 3 * NUM_LEARNABLE_KEYPOINTS)?;
    let out = p.apply(feature)?;
    Ok(out
        .as_slice()
        .expect("contiguous")
        .chunks_exact(3)
        .map(|c| Vector3::new(c[0], c[1], c[2]))
        .collect())
}

/// `center + R (offset * size)` for each offset.
pub fn keypoints_world(b: &Box9DoF, offsets: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
    b.validate()?;
    let r = b.rotation()?;
    Ok(offsets.iter().map(|o| b.center + r * o.component_mul(&b.size)).collect())
}

/// Bilinear interpolation at continuous feature-grid coordinates
/// `(u, v)` = (column, row).
pub fn bilinear_sample(fm: &FeatureMap, u: f64, v: f64) -> Result<Array1<f64>> {
    let (rows, cols) = (fm.rows(), fm.cols());
    if !(u >= 0.0 && v >= 0.0 && u <= (cols - 1) as f64 && v <= (rows - 1) as f64) {
        return Err(Error::OutOfRange {
            u,
            v,
            width: cols,
            height: rows,
        });
    }
    let c0 = (u.floor() as usize).min(cols - 1);
    let r0 = (v.floor() as usize).min(rows - 1);
    let c1 = (c0 + 1).min(cols - 1);
    let r1 = (r0 + 1).min(rows - 1);
    let fu = u - c0 as f64;
    let fv = v - r0 as f64;
    Ok(&fm.cell(r0, c0) * ((1.0 - fu) * (1.0 - fv))
        + &fm.cell(r0, c1) * (fu * (1.0 - fv))
        + &fm.cell(r1, c0) * ((1.0 - fu) * fv)
        + &fm.cell(r1, c1) * (fu * fv))
}

/// Image pixel to feature-grid coordinate along one axis.
pub fn pixel_to_grid(pixel: f64, stride: f64) -> f64 {
    (pixel + 0.5) / stride - 0.5
}

/// `M x N` weights; invalid samples hold exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationWeights {
    pub weights: Array2<f64>,
    /// Set when no key point is visible in any view.
    pub all_invalid: bool,
}

/// Input to the weight head: query feature, nine box parameters and one
/// camera descriptor per view.
fn weight_head_input(query: &Query, cams: &[CameraModel]) -> Array1<f64> {
    let mut x = Vec::with_capacity(query.feature.len() + 9 + CAMERA_DESCRIPTOR_DIMS * cams.len());
    x.extend(query.feature.iter());
    x.extend(query.anchor.params());
    for cam in cams {
        x.extend(cam.descriptor());
    }
    Array1::from(x)
}

/// Joint softmax over all `M x N` logits of the weight head, restricted to
/// the valid samples.
pub fn aggregation_weights(
    query: &Query,
    cams: &[CameraModel],
    validity: &Array2<bool>,
    p: &LinearParams,
) -> Result<AggregationWeights> {
    let (m, n) = validity.dim();
    if n != cams.len() {
        return Err(invalid(format!("validity has {n} views but {} cameras given", cams.len())));
    }
    let input = weight_head_input(query, cams);
    p.expect_dims(input.len(), m * n)?;
    let logits = p.apply(input.view())?;

    let mut weights = Array2::zeros((m, n));
    let max = logits
        .iter()
        .zip(validity.iter())
        .filter(|(_, &ok)| ok)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(AggregationWeights {
            weights,
            all_invalid: true,
        });
    }
    let mut total = 0.0;
    for ((w, &l), &ok) in weights.iter_mut().zip(logits.iter()).zip(validity.iter()) {
        if ok {
            *w = (l - max).exp();
            total += *w;
        }
    }
    weights.mapv_inplace(|w| w / total);
    Ok(AggregationWeights {
        weights,
        all_invalid: false,
    })
}

/// Learned heads of the aggregation step.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationParams {
    /// `C -> 27` learnable key-point offsets.
    pub offset_head: LinearParams,
    /// `C + 9 + 16 N -> 16 N` sample weights.
    pub weight_head: LinearParams,
    /// Key points deeper than this are treated as invisible.
    pub max_depth: f64,
}

impl AggregationParams {
    pub fn zeros(channels: usize, num_views: usize, max_depth: f64) -> Self {
        Self {
            offset_head: LinearParams::zeros("offset_head", channels, 3 * NUM_LEARNABLE_KEYPOINTS),
            weight_head: LinearParams::zeros(
                "weight_head",
                channels + 9 + CAMERA_DESCRIPTOR_DIMS * num_views,
                NUM_KEYPOINTS * num_views,
            ),
            max_depth,
        }
    }

    pub fn seeded(channels: usize, num_views: usize, max_depth: f64, seed: u64) -> Self {
        Self {
            offset_head: LinearParams::seeded("offset_head", channels, 3 * NUM_LEARNABLE_KEYPOINTS, seed),
            weight_head: LinearParams::seeded(
                "weight_head",
                channels + 9 + CAMERA_DESCRIPTOR_DIMS * num_views,
                NUM_KEYPOINTS * num_views,
                seed.wrapping_add(1),
            ),
            max_depth,
        }
    }
}

/// Key points of one query, in world coordinates.
pub fn query_keypoints(query: &Query, p: &AggregationParams) -> Result<Vec<Vector3<f64>>> {
    let mut offsets = fixed_keypoint_offsets().to_vec();
    offsets.extend(learnable_keypoint_offsets(query.feature.view(), &p.offset_head)?);
    keypoints_world(&query.anchor, &offsets)
}

/// Image pixel of every key point in every view (`M x N`, row-major), or
/// `None` where the point is outside that camera's frustum.
pub fn project_keypoints(points: &[Vector3<f64>], cams: &[CameraModel], max_depth: f64) -> Array2<Option<(f64, f64)>> {
    Array2::from_shape_fn((points.len(), cams.len()), |(m, n)| {
        let (cam, pt) = (&cams[n], &points[m]);
        if !in_frustum(cam, pt, max_depth) {
            return None;
        }
        project(cam, pt).ok().map(|pd| (pd.u, pd.v))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryUpdate {
    /// `sum_{m,n} W[m,n] F[m,n]`; zero when nothing is visible.
    pub feature: Array1<f64>,
    pub weights: AggregationWeights,
    pub pixels: Array2<Option<(f64, f64)>>,
}

/// Aggregates features for every query. Views are matched to cameras by
/// position in the slices.
pub fn aggregate(
    queries: &[Query],
    maps: &[FeatureMap],
    cams: &[CameraModel],
    p: &AggregationParams,
) -> Result<Vec<QueryUpdate>> {
    if maps.len() != cams.len() {
        return Err(invalid(format!("{} feature maps for {} cameras", maps.len(), cams.len())));
    }
    let channels = match maps.first() {
        Some(m) => m.channels(),
        None => return Err(invalid("aggregation needs at least one view")),
    };
    if maps.iter().any(|m| m.channels() != channels) {
        return Err(invalid("feature maps disagree on channel count"));
    }
    queries
        .par_iter()
        .map(|q| aggregate_one(q, maps, cams, p, channels))
        .collect()
}

fn aggregate_one(
    query: &Query,
    maps: &[FeatureMap],
    cams: &[CameraModel],
    p: &AggregationParams,
    channels: usize,
) -> Result<QueryUpdate> {
    let points = query_keypoints(query, p)?;
    let pixels = project_keypoints(&points, cams, p.max_depth);
    let validity = pixels.mapv(|px| px.is_some());
    let weights = aggregation_weights(query, cams, &validity, &p.weight_head)?;
    if weights.all_invalid {
        debug!("query at {:?} is not visible in any view", query.anchor.center.as_slice());
    }
    let mut feature = Array1::zeros(channels);
    for ((m, n), px) in pixels.indexed_iter() {
        let Some((u, v)) = *px else { continue };
        let fm = &maps[n];
        // Pixels in the outer half-cell fall between the last cell center and
        // the image border; clamp them onto the grid.
        let gu = pixel_to_grid(u, fm.stride).clamp(0.0, (fm.cols() - 1) as f64);
        let gv = pixel_to_grid(v, fm.stride).clamp(0.0, (fm.rows() - 1) as f64);
        let sample = bilinear_sample(fm, gu, gv)?;
        feature.scaled_add(weights.weights[(m, n)], &sample);
    }
    Ok(QueryUpdate {
        feature,
        weights,
        pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Intrinsics;
    use crate::geometry::{box_corners, euler_to_rotation};
    use nalgebra::{Matrix4, Vector3};
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn camera_at(pos: [f64; 3], target: [f64; 3]) -> CameraModel {
        CameraModel::look_at(
            Intrinsics::new(300.0, 300.0, 127.5, 95.5).unwrap(),
            pos.into(),
            target.into(),
            Vector3::new(0.0, 0.0, 1.0),
            256,
            192,
        )
        .unwrap()
    }

    fn constant_map(view: usize, value: &[f64]) -> FeatureMap {
        let data = Array3::from_shape_fn((12, 16, value.len()), |(_, _, c)| value[c]);
        FeatureMap::new(view, 16.0, data).unwrap()
    }

    fn random_map(view: usize, channels: usize, rng: &mut ChaCha8Rng) -> FeatureMap {
        let data = Array3::from_shape_fn((12, 16, channels), |_| rng.random_range(-1.0..1.0));
        FeatureMap::new(view, 16.0, data).unwrap()
    }

    fn query(center: [f64; 3], channels: usize) -> Query {
        Query {
            feature: Array1::from_shape_fn(channels, |i| 0.1 * i as f64),
            anchor: Box9DoF::new(center.into(), Vector3::new(0.6, 0.4, 0.5), Vector3::new(0.0, 0.0, 0.7)).unwrap(),
        }
    }

    #[test]
    fn fixed_offsets() {
        let o = fixed_keypoint_offsets();
        assert_eq!(o.len(), 7);
        assert_eq!(o[0], Vector3::zeros());
        assert_eq!(o.iter().sum::<Vector3<f64>>(), Vector3::zeros());
    }

    #[test]
    fn learnable_offsets_are_affine() {
        let zero = LinearParams::zeros("o", 5, 27);
        let f = Array1::from(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let out = learnable_keypoint_offsets(f.view(), &zero).unwrap();
        assert_eq!(out.len(), 9);
        assert!(out.iter().all(|o| *o == Vector3::zeros()));

        let mut p = LinearParams::seeded("o", 5, 27, 3);
        p.bias.fill(0.25);
        let f1 = Array1::from(vec![0.3, -1.0, 2.0, 0.0, 0.5]);
        let f2 = Array1::from(vec![1.0, 0.2, -0.7, 0.9, -0.1]);
        let off = |f: &Array1<f64>| learnable_keypoint_offsets(f.view(), &p).unwrap();
        let z = off(&Array1::zeros(5));
        let (a, b, s) = (off(&f1), off(&f2), off(&(&f1 + &f2)));
        for i in 0..9 {
            assert!(((s[i] - z[i]) - ((a[i] - z[i]) + (b[i] - z[i]))).norm() < 1e-12);
        }
        assert!(learnable_keypoint_offsets(Array1::zeros(4).view(), &p).is_err());
    }

    #[test]
    fn keypoints_hit_center_and_face_centers() {
        let b = Box9DoF::axis_aligned([1.0, 2.0, 3.0], [2.0, 1.0, 1.0]).unwrap();
        let k = keypoints_world(&b, &fixed_keypoint_offsets()).unwrap();
        assert_eq!(k[0], b.center);
        assert!((k[1] - Vector3::new(2.0, 2.0, 3.0)).norm() < 1e-12);

        let b = Box9DoF::new(Vector3::new(-1.0, 0.5, 2.0), Vector3::new(1.2, 0.7, 0.4), Vector3::new(0.1, -0.2, 0.9)).unwrap();
        let k = keypoints_world(&b, &fixed_keypoint_offsets()).unwrap();
        let corners = box_corners(&b).unwrap();
        // Face k = 1 + 2 axis + (0 for +, 1 for -); corner bit `axis` selects the side.
        for axis in 0..3 {
            for (side, bit) in [(0, 1), (1, 0)] {
                let face: Vector3<f64> = (0..8)
                    .filter(|c| (c >> axis) & 1 == bit)
                    .map(|c| corners.0[c])
                    .sum::<Vector3<f64>>()
                    / 4.0;
                assert!((k[1 + 2 * axis + side] - face).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn bilinear_basics() {
        let data = Array3::from_shape_fn((3, 4, 2), |(r, c, ch)| (10 * r + c) as f64 + 100.0 * ch as f64);
        let fm = FeatureMap::new(0, 8.0, data).unwrap();
        assert_eq!(bilinear_sample(&fm, 2.0, 1.0).unwrap().to_vec(), vec![12.0, 112.0]);
        assert_eq!(bilinear_sample(&fm, 2.5, 1.0).unwrap()[0], 12.5);
        assert!((bilinear_sample(&fm, 1.25, 1.5).unwrap()[0] - 16.25).abs() < 1e-12);
        assert!(matches!(bilinear_sample(&fm, 3.5, 0.0), Err(Error::OutOfRange { .. })));
        assert!(bilinear_sample(&fm, 0.0, -0.1).is_err());
        let c = constant_map(0, &[4.5]);
        assert_eq!(bilinear_sample(&c, 7.3, 2.9).unwrap()[0], 4.5);
    }

    #[test]
    fn uniform_and_masked_weights() {
        let cams = vec![camera_at([0.0, -4.0, 1.0], [0.0, 0.0, 0.5]), camera_at([4.0, 0.0, 1.0], [0.0, 0.0, 0.5])];
        let q = query([0.0, 0.0, 0.5], 4);
        let p = AggregationParams::zeros(4, 2, 20.0).weight_head;

        let all = Array2::from_elem((16, 2), true);
        let w = aggregation_weights(&q, &cams, &all, &p).unwrap();
        assert!(!w.all_invalid);
        assert!(w.weights.iter().all(|&x| (x - 1.0 / 32.0).abs() < 1e-15));

        let mut half = all.clone();
        half.column_mut(1).fill(false);
        let w = aggregation_weights(&q, &cams, &half, &p).unwrap();
        assert!(w.weights.column(1).iter().all(|&x| x == 0.0));
        assert!(w.weights.column(0).iter().all(|&x| (x - 1.0 / 16.0).abs() < 1e-15));

        let none = Array2::from_elem((16, 2), false);
        let w = aggregation_weights(&q, &cams, &none, &p).unwrap();
        assert!(w.all_invalid);
        assert!(w.weights.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn weight_mass_with_random_mask() {
        let cams = vec![camera_at([0.0, -4.0, 1.0], [0.0, 0.0, 0.5]); 3];
        let q = query([0.0, 0.0, 0.5], 6);
        let p = AggregationParams::seeded(6, 3, 20.0, 9).weight_head;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let mask = Array2::from_shape_fn((16, 3), |_| rng.random_bool(0.3));
            let w = aggregation_weights(&q, &cams, &mask, &p).unwrap();
            if mask.iter().any(|&v| v) {
                assert!((w.weights.sum() - 1.0).abs() < 1e-12);
            }
            for (x, &ok) in w.weights.iter().zip(mask.iter()) {
                assert!(ok || *x == 0.0);
                assert!(*x >= 0.0);
            }
        }
    }

    #[test]
    fn constant_maps_reproduce_their_value() {
        let cams = vec![camera_at([0.0, -4.0, 1.0], [0.0, 0.0, 0.5])];
        let maps = vec![constant_map(0, &[1.5, -2.0])];
        let p = AggregationParams::zeros(2, 1, 20.0);
        let out = aggregate(&[query([0.0, 0.0, 0.5], 2)], &maps, &cams, &p).unwrap();
        assert!((out[0].feature[0] - 1.5).abs() < 1e-12);
        assert!((out[0].feature[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn two_views_average() {
        let cams = vec![camera_at([0.0, -4.0, 1.0], [0.0, 0.0, 0.5]), camera_at([4.0, 0.0, 1.0], [0.0, 0.0, 0.5])];
        let maps = vec![constant_map(0, &[1.0]), constant_map(1, &[3.0])];
        let p = AggregationParams::zeros(1, 2, 20.0);
        let out = aggregate(&[query([0.0, 0.0, 0.5], 1)], &maps, &cams, &p).unwrap();
        assert!(out[0].pixels.iter().all(|p| p.is_some()));
        assert!((out[0].feature[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn invisible_query_gets_zero_update() {
        let cams = vec![camera_at([0.0, -4.0, 1.0], [0.0, 0.0, 0.5])];
        let maps = vec![constant_map(0, &[1.0, 1.0])];
        let p = AggregationParams::zeros(2, 1, 20.0);
        let out = aggregate(&[query([0.0, -10.0, 0.5], 2)], &maps, &cams, &p).unwrap();
        assert!(out[0].weights.all_invalid);
        assert_eq!(out[0].feature.to_vec(), vec![0.0, 0.0]);
    }

    /// Weight head that only reads the query feature, so rigid motions of
    /// the whole scene do not change its logits.
    fn feature_only_params(channels: usize, views: usize, seed: u64) -> AggregationParams {
        let mut p = AggregationParams::seeded(channels, views, 30.0, seed);
        p.weight_head.weight.columns_mut().into_iter().skip(channels).for_each(|mut c| c.fill(0.0));
        p
    }

    #[test]
    fn rigid_motion_leaves_update_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cams = vec![
            camera_at([0.0, -4.0, 1.5], [0.0, 0.0, 0.5]),
            camera_at([4.0, 0.5, 1.5], [0.0, 0.0, 0.5]),
            camera_at([-3.0, 3.0, 2.0], [0.0, 0.0, 0.5]),
        ];
        let maps: Vec<_> = (0..3).map(|v| random_map(v, 5, &mut rng)).collect();
        let p = feature_only_params(5, 3, 8);
        let queries: Vec<_> = (0..6)
            .map(|i| Query {
                feature: Array1::from_shape_fn(5, |_| rng.random_range(-1.0..1.0)),
                anchor: Box9DoF::new(
                    Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.5),
                    Vector3::new(0.5, 0.7, 0.4 + 0.1 * i as f64),
                    Vector3::new(0.1, -0.05, rng.random_range(-3.0..3.0)),
                )
                .unwrap(),
            })
            .collect();
        let base = aggregate(&queries, &maps, &cams, &p).unwrap();

        let rot = euler_to_rotation(&Vector3::new(0.3, -0.2, 1.1)).unwrap();
        let trans = Vector3::new(5.0, -2.0, 0.7);
        let mut g = Matrix4::identity();
        g.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
        g.fixed_view_mut::<3, 1>(0, 3).copy_from(&trans);
        let moved_cams: Vec<_> = cams.iter().map(|c| c.transformed(&g).unwrap()).collect();
        let moved: Vec<_> = queries
            .iter()
            .map(|q| Query {
                feature: q.feature.clone(),
                anchor: q.anchor.transformed(&rot, &trans).unwrap(),
            })
            .collect();
        let after = aggregate(&moved, &maps, &moved_cams, &p).unwrap();
        for (a, b) in base.iter().zip(&after) {
            for (pa, pb) in a.pixels.iter().zip(&b.pixels) {
                match (pa, pb) {
                    (Some(x), Some(y)) => assert!((x.0 - y.0).abs() < 1e-7 && (x.1 - y.1).abs() < 1e-7),
                    (None, None) => {}
                    _ => panic!("validity changed under a rigid motion"),
                }
            }
            for (x, y) in a.feature.iter().zip(&b.feature) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn invalid_samples_never_contribute_and_output_is_in_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cams = vec![camera_at([0.0, -3.0, 1.0], [0.0, 0.0, 0.5]), camera_at([3.0, 0.0, 1.0], [0.0, 0.0, 0.5])];
        let maps: Vec<_> = (0..2).map(|v| random_map(v, 3, &mut rng)).collect();
        let p = AggregationParams::seeded(3, 2, 30.0, 2);
        // A large box near the first camera, so some key points leave its view.
        let q = Query {
            feature: Array1::from(vec![0.5, -0.5, 0.2]),
            anchor: Box9DoF::axis_aligned([0.0, -1.0, 0.5], [4.0, 1.0, 3.0]).unwrap(),
        };
        let out = aggregate(std::slice::from_ref(&q), &maps, &cams, &p).unwrap().remove(0);
        assert!(out.pixels.iter().any(|p| p.is_none()));
        assert!(out.pixels.iter().any(|p| p.is_some()));

        // Per-channel bounds from the features of the four cells around each
        // valid sample.
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for ((_, n), px) in out.pixels.indexed_iter() {
            if let Some((u, v)) = px {
                let fm = &maps[n];
                let gu = pixel_to_grid(*u, fm.stride).clamp(0.0, 15.0);
                let gv = pixel_to_grid(*v, fm.stride).clamp(0.0, 11.0);
                let s = bilinear_sample(fm, gu, gv).unwrap();
                for c in 0..3 {
                    lo[c] = lo[c].min(s[c]);
                    hi[c] = hi[c].max(s[c]);
                }
            }
        }
        for c in 0..3 {
            assert!(out.feature[c] >= lo[c] - 1e-12 && out.feature[c] <= hi[c] + 1e-12);
        }

        // Perturbing features everywhere except near valid samples changes nothing.
        let mut touched = [vec![vec![false; 16]; 12], vec![vec![false; 16]; 12]];
        for ((_, n), px) in out.pixels.indexed_iter() {
            if let Some((u, v)) = px {
                let gu = pixel_to_grid(*u, 16.0).clamp(0.0, 15.0);
                let gv = pixel_to_grid(*v, 16.0).clamp(0.0, 11.0);
                for r in [gv.floor() as usize, (gv.floor() as usize + 1).min(11)] {
                    for c in [gu.floor() as usize, (gu.floor() as usize + 1).min(15)] {
                        touched[n][r][c] = true;
                    }
                }
            }
        }
        let mut noisy = maps.clone();
        for (n, fm) in noisy.iter_mut().enumerate() {
            for r in 0..12 {
                for c in 0..16 {
                    if !touched[n][r][c] {
                        fm.data.slice_mut(ndarray::s![r, c, ..]).fill(99.0);
                    }
                }
            }
        }
        let again = aggregate(&[q], &noisy, &cams, &p).unwrap().remove(0);
        assert_eq!(again.feature, out.feature);
    }
}
