use rayon::prelude::*;

use super::model::{CameraModel, Intrinsics};
use super::raster::Raster;
use crate::error::Result;

/// Default virtual intrinsics `[fu, fv, cu, cv]` all inputs are warped to.
pub const STANDARD_INTRINSICS: [f64; 4] = [432.579, 539.857, 256.0, 256.0];

/// Warps `image` so that it appears to have been taken with `target`
/// intrinsics, keeping the source resolution and extrinsics.
///
/// Output pixel `(u', v')` is back-projected through the target intrinsics
/// and re-projected through the source intrinsics; for pinhole cameras this
/// is the per-axis affine map `u = cu + fu (u' - cu') / fu'`. Pixels that
/// fall outside the source are zero.
pub fn standardize_intrinsics(
    image: &Raster,
    cam: &CameraModel,
    target: &Intrinsics,
) -> Result<(Raster, CameraModel)> {
    cam.validate()?;
    target.validate()?;
    let src = &cam.intrinsics;
    let su = src.focal_u / target.focal_u;
    let sv = src.focal_v / target.focal_v;
    let (w, h, ch) = (image.width, image.height, image.channels);

    let mut out = Raster::zeros(w, h, ch);
    out.data
        .par_chunks_mut(w * ch)
        .enumerate()
        .for_each(|(y, row)| {
            let v = src.center_v + sv * (y as f64 - target.center_v);
            let mut px = vec![0.0f32; ch];
            for x in 0..w {
                let u = src.center_u + su * (x as f64 - target.center_u);
                if image.sample_bilinear(u, v, &mut px) {
                    row[x * ch..(x + 1) * ch].copy_from_slice(&px);
                }
            }
        });
    Ok((out, cam.with_intrinsics(*target)))
}
