//! Oriented 9-DoF boxes and the geometry built on them.
//!
//! Conventions used throughout the crate:
//!
//! - Orientation is stored as Euler angles `(roll, pitch, yaw)` and composed
//!   extrinsically as `R = Rz(yaw) * Ry(pitch) * Rx(roll)`. Swapping the
//!   convention only requires changing [`euler_to_rotation`] and its
//!   derivative [`rotation_partials`].
//! - Box-local axes `x, y, z` carry the size components `(w, l, h)`.
//! - Corners are indexed by sign bits: bit 0 selects `+w/2`, bit 1 `+l/2`,
//!   bit 2 `+h/2`. Corner 0 is `(-w/2, -l/2, -h/2)`, corner 7 the opposite.

mod boxes;
mod iou;
mod nms;

pub use boxes::{
    box_corners, box_to_gaussian, euler_to_rotation, reparameterize, rotation_partials,
    rotation_to_euler, signed_permutations, Box9DoF, CornerSet, Detection, GaussianBox,
    RotationMatrix, SignedPermutation, CORNER_SIGNS,
};
pub use iou::{box_iou, box_iou_flagged, IouOutcome, DEGENERATE_SIZE};
pub use nms::nms;
