//! 3D position encoding of image features.
//!
//! Each feature-map cell is lifted to `K` points along its camera ray, the
//! points are embedded by an affine map, and a per-cell depth distribution
//! predicted from image and depth features mixes those embeddings into one
//! image position embedding. The embedding is then fused back into the image
//! features. Multi-scale inputs are handled one stride level at a time with
//! shared `D` and `K`.

use ndarray::{concatenate, Array1, Array2, Array3, Array4, ArrayView1, Axis};

use crate::camera::{frustum_point_grid, CameraModel, FrustumPointGrid};
use crate::error::{invalid, Result};
use crate::linear::LinearParams;

/// Per-view feature grid, `H x W x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub view: usize,
    /// Image pixels per feature cell.
    pub stride: f64,
    pub data: Array3<f64>,
}

impl FeatureMap {
    pub fn new(view: usize, stride: f64, data: Array3<f64>) -> Result<Self> {
        let (h, w, _) = data.dim();
        if h < 1 || w < 1 {
            return Err(invalid("feature map must be at least 1x1"));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(invalid("feature map entries must be finite"));
        }
        if !(stride > 0.0) {
            return Err(invalid("stride must be positive"));
        }
        Ok(Self { view, stride, data })
    }

    pub fn rows(&self) -> usize {
        self.data.dim().0
    }

    pub fn cols(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn cell(&self, row: usize, col: usize) -> ArrayView1<'_, f64> {
        self.data.slice(ndarray::s![row, col, ..])
    }
}

/// Softmax-normalised depth bins per cell, `H x W x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthDistribution(pub Array3<f64>);

/// Point position embeddings, `H x W x K x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointEmbedding(pub Array4<f64>);

/// Image position embeddings, `H x W x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEmbedding(pub Array3<f64>);

pub fn point_position_embedding(grid: &FrustumPointGrid, p: &LinearParams) -> Result<PointEmbedding> {
    if p.input_dim() != 3 {
        return Err(invalid(format!("{}: point embedding expects 3 inputs, got {}", p.role, p.input_dim())));
    }
    let c = p.output_dim();
    let mut out = Array4::zeros((grid.rows, grid.cols, grid.num_depths, c));
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            for k in 0..grid.num_depths {
                let x = grid.point(row, col, k);
                let e = p.apply_slice(x.as_slice())?;
                out.slice_mut(ndarray::s![row, col, k, ..]).assign(&e);
            }
        }
    }
    Ok(PointEmbedding(out))
}

fn check_aligned(a: &FeatureMap, b: &FeatureMap) -> Result<()> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(invalid(format!(
            "feature maps not aligned: {}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

fn softmax(x: &Array1<f64>) -> Array1<f64> {
    let m = x.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = x.mapv(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

/// `DT = softmax_K(head(fuse(concat(I, D))))` per cell.
pub fn depth_distribution(
    img: &FeatureMap,
    dep: &FeatureMap,
    fuse: &LinearParams,
    head: &LinearParams,
) -> Result<DepthDistribution> {
    check_aligned(img, dep)?;
    if fuse.input_dim() != img.channels() + dep.channels() {
        return Err(invalid(format!(
            "{}: expects {} inputs for concat(I, D), got {}",
            fuse.role,
            img.channels() + dep.channels(),
            fuse.input_dim()
        )));
    }
    if head.input_dim() != fuse.output_dim() {
        return Err(invalid(format!("{}: input dim does not match {}", head.role, fuse.role)));
    }
    let k = head.output_dim();
    let mut out = Array3::zeros((img.rows(), img.cols(), k));
    for row in 0..img.rows() {
        for col in 0..img.cols() {
            let x = concatenate(Axis(0), &[img.cell(row, col), dep.cell(row, col)]).expect("1-d concat");
            let logits = head.apply(fuse.apply(x.view())?.view())?;
            out.slice_mut(ndarray::s![row, col, ..]).assign(&softmax(&logits));
        }
    }
    Ok(DepthDistribution(out))
}

/// `IPE[i, j] = sum_k PPE[i, j, k] * DT[i, j, k]`.
pub fn image_position_embedding(ppe: &PointEmbedding, dt: &DepthDistribution) -> Result<ImageEmbedding> {
    let (h, w, k, c) = ppe.0.dim();
    if dt.0.dim() != (h, w, k) {
        return Err(invalid(format!("depth distribution shape {:?} does not match embedding {:?}", dt.0.dim(), (h, w, k))));
    }
    let mut out = Array3::zeros((h, w, c));
    for row in 0..h {
        for col in 0..w {
            let mut acc = out.slice_mut(ndarray::s![row, col, ..]);
            for bin in 0..k {
                let weight = dt.0[(row, col, bin)];
                acc.scaled_add(weight, &ppe.0.slice(ndarray::s![row, col, bin, ..]));
            }
        }
    }
    Ok(ImageEmbedding(out))
}

/// `I'[i, j] = W concat(I, D, IPE) + b` per cell.
pub fn fuse_features(img: &FeatureMap, dep: &FeatureMap, ipe: &ImageEmbedding, p: &LinearParams) -> Result<FeatureMap> {
    check_aligned(img, dep)?;
    let (h, w, c) = ipe.0.dim();
    if (h, w) != (img.rows(), img.cols()) {
        return Err(invalid("position embedding not aligned with feature map"));
    }
    let input = img.channels() + dep.channels() + c;
    if p.input_dim() != input {
        return Err(invalid(format!("{}: expects {input} inputs, got {}", p.role, p.input_dim())));
    }
    let mut out = Array3::zeros((h, w, p.output_dim()));
    for row in 0..h {
        for col in 0..w {
            let x = concatenate(
                Axis(0),
                &[img.cell(row, col), dep.cell(row, col), ipe.0.slice(ndarray::s![row, col, ..])],
            )
            .expect("1-d concat");
            out.slice_mut(ndarray::s![row, col, ..]).assign(&p.apply(x.view())?);
        }
    }
    FeatureMap::new(img.view, img.stride, out)
}

/// Cosine similarity of every cell's embedding with the one at `reference`.
/// Cells with a zero embedding get similarity 0.
pub fn ipe_correlation_map(ipe: &ImageEmbedding, reference: (usize, usize)) -> Result<Array2<f64>> {
    let (h, w, _) = ipe.0.dim();
    if reference.0 >= h || reference.1 >= w {
        return Err(invalid(format!("reference cell {reference:?} outside {h}x{w}")));
    }
    let r = ipe.0.slice(ndarray::s![reference.0, reference.1, ..]);
    let rn = r.dot(&r).sqrt();
    if rn == 0.0 {
        return Err(invalid("reference embedding has zero norm"));
    }
    Ok(Array2::from_shape_fn((h, w), |(i, j)| {
        if (i, j) == reference {
            return 1.0;
        }
        let e = ipe.0.slice(ndarray::s![i, j, ..]);
        let n = e.dot(&e).sqrt();
        if n == 0.0 {
            0.0
        } else {
            (e.dot(&r) / (n * rn)).clamp(-1.0, 1.0)
        }
    }))
}

/// The four affine layers of the enhancer plus its frustum sampling settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialEnhancer {
    pub point_embed: LinearParams,
    pub depth_fuse: LinearParams,
    pub depth_head: LinearParams,
    pub feature_fuse: LinearParams,
    pub max_depth: f64,
    pub num_depths: usize,
}

/// Intermediate and final outputs of one enhancer pass.
#[derive(Debug, Clone)]
pub struct EnhancerOutput {
    pub grid: FrustumPointGrid,
    pub ppe: PointEmbedding,
    pub depth: DepthDistribution,
    pub ipe: ImageEmbedding,
    pub features: FeatureMap,
}

impl SpatialEnhancer {
    /// Seeded parameters for image features with `image_dims` channels and
    /// depth features with `depth_dims` channels, embedding into `embed_dims`.
    pub fn seeded(image_dims: usize, depth_dims: usize, embed_dims: usize, max_depth: f64, num_depths: usize, seed: u64) -> Self {
        Self {
            point_embed: LinearParams::seeded("linear1", 3, embed_dims, seed),
            depth_fuse: LinearParams::seeded("fusion3", image_dims + depth_dims, embed_dims, seed.wrapping_add(1)),
            depth_head: LinearParams::seeded("linear2", embed_dims, num_depths, seed.wrapping_add(2)),
            feature_fuse: LinearParams::seeded("fusion4", image_dims + depth_dims + embed_dims, image_dims, seed.wrapping_add(3)),
            max_depth,
            num_depths,
        }
    }

    pub fn forward(&self, img: &FeatureMap, dep: &FeatureMap, cam: &CameraModel) -> Result<EnhancerOutput> {
        let grid = frustum_point_grid(cam, (img.rows(), img.cols()), self.max_depth, self.num_depths)?;
        let ppe = point_position_embedding(&grid, &self.point_embed)?;
        let depth = depth_distribution(img, dep, &self.depth_fuse, &self.depth_head)?;
        let ipe = image_position_embedding(&ppe, &depth)?;
        let features = fuse_features(img, dep, &ipe, &self.feature_fuse)?;
        Ok(EnhancerOutput {
            grid,
            ppe,
            depth,
            ipe,
            features,
        })
    }
}
