use nalgebra::{Matrix3, SMatrix, Vector3};

use super::{BoxLossKind, LossValueGrad};
use crate::error::{invalid, Result};
use crate::geometry::{
    box_to_gaussian, euler_to_rotation, rotation_partials, signed_permutations, Box9DoF, CORNER_SIGNS,
};

/// Regulariser inside the Wasserstein square root.
pub const WASSERSTEIN_EPS: f64 = 1e-8;

type Jac = SMatrix<f64, 3, 9>;

/// Coordinates in which the last three gradient entries are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Orientation {
    /// Partial derivatives with respect to roll, pitch and yaw.
    Euler,
    /// Derivatives with respect to a body-frame rotation `R exp([w]x)` at
    /// `w = 0`; well defined at gimbal lock.
    Body,
}

fn orientation_partials(b: &Box9DoF, frame: Orientation) -> Result<[Matrix3<f64>; 3]> {
    match frame {
        Orientation::Euler => rotation_partials(&b.euler),
        Orientation::Body => {
            let r = euler_to_rotation(&b.euler)?;
            Ok([0, 1, 2].map(|k| r * Vector3::ith(k, 1.0).cross_matrix()))
        }
    }
}

/// Corners of `b` and the Jacobian of each corner with respect to the nine
/// box parameters.
fn corners_with_jacobians(b: &Box9DoF, frame: Orientation) -> Result<([Vector3<f64>; 8], [Jac; 8])> {
    b.validate()?;
    let r = euler_to_rotation(&b.euler)?;
    let dr = orientation_partials(b, frame)?;
    let mut pts = [Vector3::zeros(); 8];
    let mut jacs = [Jac::zeros(); 8];
    for i in 0..8 {
        let s = CORNER_SIGNS[i];
        let local = Vector3::new(s[0] * b.size.x, s[1] * b.size.y, s[2] * b.size.z);
        pts[i] = b.center + r * local;
        let j = &mut jacs[i];
        j.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        for k in 0..3 {
            j.fixed_view_mut::<3, 1>(0, 3 + k).copy_from(&(r.column(k) * s[k]));
            j.fixed_view_mut::<3, 1>(0, 6 + k).copy_from(&(dr[k] * local));
        }
    }
    Ok((pts, jacs))
}

/// Unit vector along `d`, or zero for a zero-length residual.
fn unit_or_zero(d: &Vector3<f64>) -> Vector3<f64> {
    let n = d.norm();
    if n > 0.0 {
        d / n
    } else {
        Vector3::zeros()
    }
}

fn accumulate(grad: &mut [f64; 9], jac: &Jac, dir: &Vector3<f64>, scale: f64) {
    let g = jac.transpose() * dir;
    for k in 0..9 {
        grad[k] += scale * g[k];
    }
}

/// Mean absolute difference of the nine raw parameters.
pub fn l1_box_loss(pred: &Box9DoF, gt: &Box9DoF) -> Result<LossValueGrad> {
    pred.validate()?;
    gt.validate()?;
    let (p, g) = (pred.params(), gt.params());
    let mut value = 0.0;
    let mut grad = vec![0.0; 9];
    for k in 0..9 {
        let d = p[k] - g[k];
        value += d.abs();
        grad[k] = if d > 0.0 {
            1.0 / 9.0
        } else if d < 0.0 {
            -1.0 / 9.0
        } else {
            0.0
        };
    }
    Ok(LossValueGrad {
        value: value / 9.0,
        grad,
    })
}

fn nearest(from: &Vector3<f64>, to: &[Vector3<f64>; 8]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, q) in to.iter().enumerate() {
        let d = (from - q).norm_squared();
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// Symmetric mean chamfer distance between the two corner sets.
pub fn corner_chamfer_loss(pred: &Box9DoF, gt: &Box9DoF) -> Result<LossValueGrad> {
    chamfer(pred, gt, Orientation::Euler)
}

fn chamfer(pred: &Box9DoF, gt: &Box9DoF, frame: Orientation) -> Result<LossValueGrad> {
    let (pc, pj) = corners_with_jacobians(pred, frame)?;
    let (gc, _) = corners_with_jacobians(gt, frame)?;
    let mut value = 0.0;
    let mut grad = [0.0; 9];
    for i in 0..8 {
        let d = pc[i] - gc[nearest(&pc[i], &gc)];
        value += d.norm() / 8.0;
        accumulate(&mut grad, &pj[i], &unit_or_zero(&d), 1.0 / 8.0);
    }
    for g in gc.iter() {
        let i = nearest(g, &pc);
        let d = pc[i] - g;
        value += d.norm() / 8.0;
        accumulate(&mut grad, &pj[i], &unit_or_zero(&d), 1.0 / 8.0);
    }
    Ok(LossValueGrad {
        value,
        grad: grad.to_vec(),
    })
}

/// Mean per-corner distance between `pred` and every one of the 48 corner
/// relabelings of `gt`, in [`signed_permutations`] order.
pub fn permutation_corner_costs(pred: &Box9DoF, gt: &Box9DoF) -> Result<[f64; 48]> {
    let (pc, _) = corners_with_jacobians(pred, Orientation::Euler)?;
    let (gc, _) = corners_with_jacobians(gt, Orientation::Euler)?;
    let mut out = [0.0; 48];
    for (o, p) in out.iter_mut().zip(signed_permutations().iter()) {
        let perm = p.corner_permutation();
        *o = (0..8).map(|i| (pc[i] - gc[perm[i]]).norm()).sum::<f64>() / 8.0;
    }
    Ok(out)
}

/// Minimum over the 48 corner relabelings of `gt` of the mean per-corner
/// Euclidean distance. The first minimising relabeling is used for the
/// gradient.
pub fn permutation_corner_loss(pred: &Box9DoF, gt: &Box9DoF) -> Result<LossValueGrad> {
    permutation_corner(pred, gt, Orientation::Euler)
}

fn permutation_corner(pred: &Box9DoF, gt: &Box9DoF, frame: Orientation) -> Result<LossValueGrad> {
    let (pc, pj) = corners_with_jacobians(pred, frame)?;
    let (gc, _) = corners_with_jacobians(gt, frame)?;
    let mut best = (f64::INFINITY, [0usize; 8]);
    for p in signed_permutations() {
        let perm = p.corner_permutation();
        let cost = (0..8).map(|i| (pc[i] - gc[perm[i]]).norm()).sum::<f64>() / 8.0;
        if cost < best.0 {
            best = (cost, perm);
        }
    }
    let (value, perm) = best;
    let mut grad = [0.0; 9];
    for i in 0..8 {
        let d = pc[i] - gc[perm[i]];
        accumulate(&mut grad, &pj[i], &unit_or_zero(&d), 1.0 / 8.0);
    }
    Ok(LossValueGrad {
        value,
        grad: grad.to_vec(),
    })
}

/// Simplified Wasserstein box distance
/// `sqrt(|mu_gt - mu_pred| + |Sigma_gt - Sigma_pred|_F)` with
/// `Sigma = R diag(w, l, h) R^T`.
///
/// Evaluated as `sqrt(inner + eps) - sqrt(eps)` so the value is exactly zero
/// at a perfect match while the derivative stays bounded.
pub fn wasserstein_loss(pred: &Box9DoF, gt: &Box9DoF) -> Result<LossValueGrad> {
    wasserstein(pred, gt, Orientation::Euler)
}

fn wasserstein(pred: &Box9DoF, gt: &Box9DoF, frame: Orientation) -> Result<LossValueGrad> {
    let gp = box_to_gaussian(pred)?;
    let gg = box_to_gaussian(gt)?;
    let dmu = gp.mean - gg.mean;
    let dsig = gp.cov - gg.cov;
    let mu_norm = dmu.norm();
    let sig_norm = dsig.norm();
    let inner = mu_norm + sig_norm;
    let root = (inner + WASSERSTEIN_EPS).sqrt();
    let value = root - WASSERSTEIN_EPS.sqrt();

    let mut d_inner = [0.0; 9];
    if mu_norm > 0.0 {
        for k in 0..3 {
            d_inner[k] = dmu[k] / mu_norm;
        }
    }
    if sig_norm > 0.0 {
        let r = euler_to_rotation(&pred.euler)?;
        let dr = orientation_partials(pred, frame)?;
        let s = Matrix3::from_diagonal(&pred.size);
        for k in 0..3 {
            let col = r.column(k);
            let d_sigma = col * col.transpose();
            d_inner[3 + k] = dsig.dot(&d_sigma) / sig_norm;
            let rs = dr[k] * s * r.transpose();
            let d_sigma = rs + rs.transpose();
            d_inner[6 + k] = dsig.dot(&d_sigma) / sig_norm;
        }
    }
    let scale = 0.5 / root;
    Ok(LossValueGrad {
        value,
        grad: d_inner.iter().map(|g| g * scale).collect(),
    })
}

/// Squared center distance.
pub fn center_loss(pred: &Vector3<f64>, gt: &Vector3<f64>) -> LossValueGrad {
    let d = pred - gt;
    LossValueGrad {
        value: d.norm_squared(),
        grad: (2.0 * d).as_slice().to_vec(),
    }
}

pub fn box_loss(kind: BoxLossKind, pred: &Box9DoF, gt: &Box9DoF) -> Result<LossValueGrad> {
    match kind {
        BoxLossKind::L1 => l1_box_loss(pred, gt),
        BoxLossKind::CornerChamfer => corner_chamfer_loss(pred, gt),
        BoxLossKind::PermutationCorner => permutation_corner_loss(pred, gt),
        BoxLossKind::Wasserstein => wasserstein_loss(pred, gt),
    }
}

/// Like [`box_loss`], but the last three gradient entries are taken with
/// respect to a body-frame rotation increment `R -> R exp([w]x)` instead of
/// the Euler angles. Only geometric losses have such a gradient; the raw
/// parameter L1 loss is rejected.
pub fn box_loss_body_frame(kind: BoxLossKind, pred: &Box9DoF, gt: &Box9DoF) -> Result<LossValueGrad> {
    match kind {
        BoxLossKind::L1 => Err(invalid("the L1 box loss is defined on Euler angles only")),
        BoxLossKind::CornerChamfer => chamfer(pred, gt, Orientation::Body),
        BoxLossKind::PermutationCorner => permutation_corner(pred, gt, Orientation::Body),
        BoxLossKind::Wasserstein => wasserstein(pred, gt, Orientation::Body),
    }
}
