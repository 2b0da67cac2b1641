//! Numerical core of an image-centric multi-view 3D detector.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: 9-DoF oriented boxes, rotations, corner symmetries, exact
//!   oriented IoU and NMS.
//! - [`camera`]: pinhole projection, frustum sampling and intrinsic
//!   standardization with image warping.
//! - [`enhancer`]: frustum point embeddings, depth distributions, image
//!   position embeddings and feature fusion.
//! - [`aggregation`]: key points inside query boxes, multi-view sampling with
//!   validity masking, weighted aggregation and K-Means anchors.
//! - [`losses`]: box regression and classification losses with analytic
//!   gradients.
//! - [`matching`]: Hungarian one-to-one assignment and the matched loss.
//! - [`eval`]: AP@IoU evaluation with category, size and subset splits.
//! - [`harness`]: synthetic scenes, oracle rendering, box fitting and the
//!   file formats used by the command-line tool.

pub mod aggregation;
pub mod camera;
pub mod cli;
pub mod enhancer;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod harness;
pub mod linear;
pub mod losses;
pub mod matching;

pub use error::{Error, Result};
