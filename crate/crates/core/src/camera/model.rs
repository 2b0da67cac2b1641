use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub focal_u: f64,
    pub focal_v: f64,
    pub center_u: f64,
    pub center_v: f64,
}

impl Intrinsics {
    pub fn new(focal_u: f64, focal_v: f64, center_u: f64, center_v: f64) -> Result<Self> {
        let k = Self {
            focal_u,
            focal_v,
            center_u,
            center_v,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.focal_u, self.focal_v, self.center_u, self.center_v]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal_u > 0.0 && self.focal_v > 0.0) || !self.focal_u.is_finite() || !self.focal_v.is_finite() {
            return Err(invalid("focal lengths must be finite and strictly positive"));
        }
        if !self.center_u.is_finite() || !self.center_v.is_finite() {
            return Err(invalid("principal point must be finite"));
        }
        Ok(())
    }
}

/// Pinhole camera with camera-to-world extrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    pub extrinsics: Matrix4<f64>,
    pub width: usize,
    pub height: usize,
}

impl CameraModel {
    pub fn new(intrinsics: Intrinsics, extrinsics: Matrix4<f64>, width: usize, height: usize) -> Result<Self> {
        let cam = Self {
            intrinsics,
            extrinsics,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if self.width < 1 || self.height < 1 {
            return Err(invalid("image size must be at least 1x1"));
        }
        let r = self.rotation();
        if (r.transpose() * r - Matrix3::identity()).norm() > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(invalid("extrinsic rotation block must be a proper rotation"));
        }
        let bottom = self.extrinsics.fixed_view::<1, 4>(3, 0);
        if (bottom[0], bottom[1], bottom[2], bottom[3]) != (0.0, 0.0, 0.0, 1.0) {
            return Err(invalid("extrinsics bottom row must be [0, 0, 0, 1]"));
        }
        if !self.extrinsics.iter().all(|v| v.is_finite()) {
            return Err(invalid("extrinsics must be finite"));
        }
        Ok(())
    }

    /// Camera at `position` looking at `target`, with image `v` pointing
    /// away from `up`.
    pub fn look_at(
        intrinsics: Intrinsics,
        position: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - position).try_normalize(1e-12).ok_or_else(|| invalid("look_at target equals position"))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| invalid("look_at up vector parallel to view direction"))?;
        let down = forward.cross(&right);
        let mut t = Matrix4::identity();
        t.fixed_view_mut::<3, 1>(0, 0).copy_from(&right);
        t.fixed_view_mut::<3, 1>(0, 1).copy_from(&down);
        t.fixed_view_mut::<3, 1>(0, 2).copy_from(&forward);
        t.fixed_view_mut::<3, 1>(0, 3).copy_from(&position);
        Self::new(intrinsics, t, width, height)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.extrinsics.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.extrinsics.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// World point in camera coordinates.
    pub fn world_to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation().transpose() * (world - self.translation())
    }

    /// The 16 numbers describing this camera to the aggregation weight net:
    /// `[fu, fv, cu, cv]` followed by the top three extrinsic rows.
    pub fn descriptor(&self) -> [f64; 16] {
        let mut d = [0.0; 16];
        d[..4].copy_from_slice(&self.intrinsics.to_array());
        for r in 0..3 {
            for c in 0..4 {
                d[4 + 4 * r + c] = self.extrinsics[(r, c)];
            }
        }
        d
    }

    /// Same camera after a rigid world transform `g`.
    pub fn transformed(&self, g: &Matrix4<f64>) -> Result<Self> {
        Self::new(self.intrinsics, g * self.extrinsics, self.width, self.height)
    }

    pub fn with_intrinsics(&self, intrinsics: Intrinsics) -> Self {
        Self {
            intrinsics,
            ..self.clone()
        }
    }
}

/// On-disk camera description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraJson {
    pub intrinsics: [f64; 4],
    pub extrinsics: Vec<f64>,
    pub width: usize,
    pub height: usize,
}

impl From<&CameraModel> for CameraJson {
    fn from(cam: &CameraModel) -> Self {
        let mut ext = Vec::with_capacity(16);
        for r in 0..4 {
            for c in 0..4 {
                ext.push(cam.extrinsics[(r, c)]);
            }
        }
        Self {
            intrinsics: cam.intrinsics.to_array(),
            extrinsics: ext,
            width: cam.width,
            height: cam.height,
        }
    }
}

impl TryFrom<CameraJson> for CameraModel {
    type Error = Error;

    fn try_from(j: CameraJson) -> Result<Self> {
        if j.extrinsics.len() != 16 {
            return Err(invalid(format!("extrinsics must have 16 entries, got {}", j.extrinsics.len())));
        }
        let ext = Matrix4::from_row_slice(&j.extrinsics);
        CameraModel::new(Intrinsics::from_array(j.intrinsics)?, ext, j.width, j.height)
    }
}

/// Continuous pixel coordinate plus camera-frame depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelDepth {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

pub fn unproject(cam: &CameraModel, pd: &PixelDepth) -> Result<Vector3<f64>> {
    if !(pd.depth > 0.0) {
        return Err(invalid(format!("depth must be positive, got {}", pd.depth)));
    }
    let k = &cam.intrinsics;
    let local = Vector3::new(
        (pd.u - k.center_u) * pd.depth / k.focal_u,
        (pd.v - k.center_v) * pd.depth / k.focal_v,
        pd.depth,
    );
    Ok(cam.rotation() * local + cam.translation())
}

pub fn project(cam: &CameraModel, world: &Vector3<f64>) -> Result<PixelDepth> {
    if !world.iter().all(|v| v.is_finite()) {
        return Err(invalid("world point must be finite"));
    }
    let p = cam.world_to_camera(world);
    if p.z == 0.0 {
        return Err(Error::SingularProjection);
    }
    let k = &cam.intrinsics;
    Ok(PixelDepth {
        u: k.focal_u * p.x / p.z + k.center_u,
        v: k.focal_v * p.y / p.z + k.center_v,
        depth: p.z,
    })
}

/// Whether `world` lies in front of the camera, inside the image bounds and
/// no deeper than `max_depth`.
pub fn in_frustum(cam: &CameraModel, world: &Vector3<f64>, max_depth: f64) -> bool {
    match project(cam, world) {
        Ok(pd) => {
            pd.depth > 0.0
                && pd.depth <= max_depth
                && (0.0..=(cam.width - 1) as f64).contains(&pd.u)
                && (0.0..=(cam.height - 1) as f64).contains(&pd.v)
        }
        Err(_) => false,
    }
}

/// World points sampled on a `rows x cols` pixel lattice at `num_depths`
/// depths per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct FrustumPointGrid {
    pub rows: usize,
    pub cols: usize,
    pub num_depths: usize,
    pub max_depth: f64,
    /// Image pixels per grid cell along `u` and `v`.
    pub stride: (f64, f64),
    /// Row-major `(row, col, depth)` layout.
    pub points: Vec<Vector3<f64>>,
}

impl FrustumPointGrid {
    pub fn point(&self, row: usize, col: usize, k: usize) -> Vector3<f64> {
        self.points[(row * self.cols + col) * self.num_depths + k]
    }

    /// Center of grid cell `(row, col)` in image pixels.
    pub fn pixel(&self, row: usize, col: usize) -> (f64, f64) {
        (
            (col as f64 + 0.5) * self.stride.0 - 0.5,
            (row as f64 + 0.5) * self.stride.1 - 0.5,
        )
    }

    /// Depth of sample `k`; the first bin sits at its midpoint `D / (2K)`
    /// because depth zero cannot be unprojected.
    pub fn depth(&self, k: usize) -> f64 {
        depth_sample(k, self.max_depth, self.num_depths)
    }
}

fn depth_sample(k: usize, max_depth: f64, num_depths: usize) -> f64 {
    if k == 0 {
        max_depth / (2.0 * num_depths as f64)
    } else {
        k as f64 * max_depth / num_depths as f64
    }
}

pub fn frustum_point_grid(
    cam: &CameraModel,
    grid: (usize, usize),
    max_depth: f64,
    num_depths: usize,
) -> Result<FrustumPointGrid> {
    let (rows, cols) = grid;
    if num_depths < 1 || rows < 1 || cols < 1 {
        return Err(invalid("frustum grid needs at least one row, column and depth"));
    }
    if !(max_depth > 0.0) {
        return Err(invalid("max depth must be positive"));
    }
    let stride = (cam.width as f64 / cols as f64, cam.height as f64 / rows as f64);
    let mut g = FrustumPointGrid {
        rows,
        cols,
        num_depths,
        max_depth,
        stride,
        points: Vec::with_capacity(rows * cols * num_depths),
    };
    for row in 0..rows {
        for col in 0..cols {
            let (u, v) = g.pixel(row, col);
            for k in 0..num_depths {
                let depth = depth_sample(k, max_depth, num_depths);
                g.points.push(unproject(cam, &PixelDepth { u, v, depth })?);
            }
        }
    }
    Ok(g)
}
