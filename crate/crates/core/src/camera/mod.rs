//! Pinhole cameras: projection, frustum tests and sampling, and intrinsic
//! standardization.
//!
//! Pixel coordinates address pixel centers: pixel `(0, 0)` covers
//! `[-0.5, 0.5)^2` and the valid image range is `[0, width-1] x [0, height-1]`.
//! Extrinsics map camera coordinates to world coordinates; the camera looks
//! down its local `+z` axis with `+u` along local `+x` and `+v` along `+y`.

mod model;
mod raster;
mod standardize;

pub use model::{
    frustum_point_grid, in_frustum, project, unproject, CameraJson, CameraModel,
    FrustumPointGrid, Intrinsics, PixelDepth,
};
pub use raster::Raster;
pub use standardize::{standardize_intrinsics, STANDARD_INTRINSICS};
