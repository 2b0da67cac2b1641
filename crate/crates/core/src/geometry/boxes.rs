use std::sync::OnceLock;

use nalgebra::{Matrix3, Vector3};

use crate::error::{invalid, Result};

pub type RotationMatrix = Matrix3<f64>;

/// Oriented box with center, size `(w, l, h)` and Euler angles
/// `(roll, pitch, yaw)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box9DoF {
    pub center: Vector3<f64>,
    pub size: Vector3<f64>,
    pub euler: Vector3<f64>,
}

impl Box9DoF {
    pub fn new(center: Vector3<f64>, size: Vector3<f64>, euler: Vector3<f64>) -> Result<Self> {
        let b = Self {
            center,
            size,
            euler,
        };
        b.validate()?;
        Ok(b)
    }

    /// Axis-aligned box.
    pub fn axis_aligned(center: [f64; 3], size: [f64; 3]) -> Result<Self> {
        Self::new(center.into(), size.into(), Vector3::zeros())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.center.iter().all(|v| v.is_finite()) {
            return Err(invalid("box center must be finite"));
        }
        if !self.size.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(invalid(format!(
                "box size must be strictly positive, got {:?}",
                self.size.as_slice()
            )));
        }
        if !self.euler.iter().all(|v| v.is_finite()) {
            return Err(invalid("box euler angles must be finite"));
        }
        Ok(())
    }

    /// Raw parameter vector `[x, y, z, w, l, h, roll, pitch, yaw]`.
    pub fn params(&self) -> [f64; 9] {
        [
            self.center.x,
            self.center.y,
            self.center.z,
            self.size.x,
            self.size.y,
            self.size.z,
            self.euler.x,
            self.euler.y,
            self.euler.z,
        ]
    }

    /// Inverse of [`Box9DoF::params`]. Does not validate.
    pub fn from_params(p: &[f64; 9]) -> Self {
        Self {
            center: Vector3::new(p[0], p[1], p[2]),
            size: Vector3::new(p[3], p[4], p[5]),
            euler: Vector3::new(p[6], p[7], p[8]),
        }
    }

    pub fn rotation(&self) -> Result<RotationMatrix> {
        euler_to_rotation(&self.euler)
    }

    pub fn volume(&self) -> f64 {
        self.size.x * self.size.y * self.size.z
    }

    /// Applies a rigid transform `x -> rot * x + trans` to the box.
    pub fn transformed(&self, rot: &RotationMatrix, trans: &Vector3<f64>) -> Result<Self> {
        let r = rot * self.rotation()?;
        Self::new(rot * self.center + trans, self.size, rotation_to_euler(&r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBox {
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
}

/// Eight corners in sign-bit order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerSet(pub [Vector3<f64>; 8]);

impl CornerSet {
    pub fn centroid(&self) -> Vector3<f64> {
        self.0.iter().sum::<Vector3<f64>>() / 8.0
    }

    /// Corners sorted lexicographically, for set comparisons.
    pub fn sorted(&self) -> [Vector3<f64>; 8] {
        let mut c = self.0;
        c.sort_by(|a, b| {
            a.x.total_cmp(&b.x)
                .then(a.y.total_cmp(&b.y))
                .then(a.z.total_cmp(&b.z))
        });
        c
    }
}

/// Half-extent signs of corner `i`: bit k set means `+1/2` along local axis k.
pub const CORNER_SIGNS: [[f64; 3]; 8] = {
    let mut out = [[0.0; 3]; 8];
    let mut i = 0;
    while i < 8 {
        let mut k = 0;
        while k < 3 {
            out[i][k] = if (i >> k) & 1 == 1 { 0.5 } else { -0.5 };
            k += 1;
        }
        i += 1;
    }
    out
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: Box9DoF,
    pub score: f64,
    pub category: u32,
}

fn check_finite(euler: &Vector3<f64>) -> Result<()> {
    if euler.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(invalid("euler angles must be finite"))
    }
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn drot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn drot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn drot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// `R = Rz(yaw) * Ry(pitch) * Rx(roll)` for `euler = (roll, pitch, yaw)`.
pub fn euler_to_rotation(euler: &Vector3<f64>) -> Result<RotationMatrix> {
    check_finite(euler)?;
    Ok(rot_z(euler.z) * rot_y(euler.y) * rot_x(euler.x))
}

/// Partial derivatives of [`euler_to_rotation`] with respect to roll, pitch
/// and yaw.
pub fn rotation_partials(euler: &Vector3<f64>) -> Result<[RotationMatrix; 3]> {
    check_finite(euler)?;
    let (rx, ry, rz) = (rot_x(euler.x), rot_y(euler.y), rot_z(euler.z));
    Ok([
        rz * ry * drot_x(euler.x),
        rz * drot_y(euler.y) * rx,
        drot_z(euler.z) * ry * rx,
    ])
}

/// Euler angles reproducing `r` under [`euler_to_rotation`]. Pitch lands in
/// `[-pi/2, pi/2]`; at gimbal lock roll is set to zero.
pub fn rotation_to_euler(r: &RotationMatrix) -> Vector3<f64> {
    let cp = r[(0, 0)].hypot(r[(1, 0)]);
    let pitch = (-r[(2, 0)]).atan2(cp);
    if cp > 1e-12 {
        let roll = r[(2, 1)].atan2(r[(2, 2)]);
        let yaw = r[(1, 0)].atan2(r[(0, 0)]);
        Vector3::new(roll, pitch, yaw)
    } else {
        // R = Rz(yaw) Ry(+-pi/2) with roll folded into yaw.
        let yaw = (-r[(0, 1)]).atan2(r[(1, 1)]);
        Vector3::new(0.0, pitch, yaw)
    }
}

pub fn box_corners(b: &Box9DoF) -> Result<CornerSet> {
    b.validate()?;
    let r = b.rotation()?;
    let mut out = [Vector3::zeros(); 8];
    for (c, s) in out.iter_mut().zip(CORNER_SIGNS.iter()) {
        let local = Vector3::new(s[0] * b.size.x, s[1] * b.size.y, s[2] * b.size.z);
        *c = b.center + r * local;
    }
    Ok(CornerSet(out))
}

/// Signed permutation matrix: row `i` has its single nonzero entry
/// `signs[i]` in column `axes[i]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SignedPermutation {
    pub axes: [usize; 3],
    pub signs: [i8; 3],
}

impl SignedPermutation {
    pub const IDENTITY: Self = Self {
        axes: [0, 1, 2],
        signs: [1, 1, 1],
    };

    pub fn matrix(&self) -> Matrix3<f64> {
        let mut m = Matrix3::zeros();
        for i in 0..3 {
            m[(i, self.axes[i])] = self.signs[i] as f64;
        }
        m
    }

    pub fn determinant(&self) -> f64 {
        self.matrix().determinant()
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    /// The corner relabeling induced by this symmetry: the corner with index
    /// `i` under the relabeled box is corner `perm[i]` of the original.
    pub fn corner_permutation(&self) -> [usize; 8] {
        let mut perm = [0usize; 8];
        for (i, p) in perm.iter_mut().enumerate() {
            let mut j = 0;
            for k in 0..3 {
                let bit_set = (i >> self.axes[k]) & 1 == 1;
                let positive = if self.signs[k] > 0 { bit_set } else { !bit_set };
                if positive {
                    j |= 1 << k;
                }
            }
            *p = j;
        }
        perm
    }
}

/// All 48 signed 3x3 permutation matrices. Axis permutations are enumerated
/// lexicographically and, within each, sign patterns by binary count (bit k
/// negates row k), so the identity comes first.
pub fn signed_permutations() -> &'static [SignedPermutation; 48] {
    static PERMS: OnceLock<[SignedPermutation; 48]> = OnceLock::new();
    PERMS.get_or_init(|| {
        const AXES: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let mut out = [SignedPermutation::IDENTITY; 48];
        let mut n = 0;
        for axes in AXES {
            for bits in 0..8u8 {
                let mut signs = [1i8; 3];
                for (k, s) in signs.iter_mut().enumerate() {
                    if (bits >> k) & 1 == 1 {
                        *s = -1;
                    }
                }
                out[n] = SignedPermutation { axes, signs };
                n += 1;
            }
        }
        out
    })
}

/// Re-expresses `b` under the symmetry `p`: `R' = R * P`, `size' = |P^T size|`.
/// Improper symmetries are applied as `-P`, which describes the same cuboid
/// with a proper rotation.
pub fn reparameterize(b: &Box9DoF, p: &SignedPermutation) -> Result<Box9DoF> {
    b.validate()?;
    let mut m = p.matrix();
    if p.determinant() < 0.0 {
        m = -m;
    }
    let r = b.rotation()? * m;
    let size = (m.transpose() * b.size).abs();
    Ok(Box9DoF {
        center: b.center,
        size,
        euler: rotation_to_euler(&r),
    })
}

/// Gaussian view of a box: mean at the center, `cov = R diag(w, l, h) R^T`.
pub fn box_to_gaussian(b: &Box9DoF) -> Result<GaussianBox> {
    b.validate()?;
    let r = b.rotation()?;
    let cov = r * Matrix3::from_diagonal(&b.size) * r.transpose();
    Ok(GaussianBox {
        mean: b.center,
        cov,
    })
}
