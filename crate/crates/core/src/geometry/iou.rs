use nalgebra::Vector3;

use super::boxes::{box_corners, Box9DoF};

/// Boxes with any extent below this are treated as zero-volume.
pub const DEGENERATE_SIZE: f64 = 1e-9;

const PLANE_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IouOutcome {
    pub iou: f64,
    /// Set when either box was degenerate and the IoU was forced to zero.
    pub degenerate: bool,
}

/// Exact oriented IoU.
pub fn box_iou(a: &Box9DoF, b: &Box9DoF) -> f64 {
    box_iou_flagged(a, b).iou
}

/// Exact oriented IoU, reporting degenerate inputs.
///
/// The intersection volume is computed by clipping the polytope of `a`
/// against the six face half-spaces of `b` and integrating the resulting
/// closed surface.
pub fn box_iou_flagged(a: &Box9DoF, b: &Box9DoF) -> IouOutcome {
    let degenerate = |x: &Box9DoF| {
        x.validate().is_err() || x.size.iter().any(|s| *s < DEGENERATE_SIZE)
    };
    if degenerate(a) || degenerate(b) {
        log::warn!("degenerate box passed to box_iou; returning 0");
        return IouOutcome {
            iou: 0.0,
            degenerate: true,
        };
    }
    let vol_a = a.volume();
    let vol_b = b.volume();
    let inter = intersection_volume(a, b).clamp(0.0, vol_a.min(vol_b));
    let union = vol_a + vol_b - inter;
    IouOutcome {
        iou: (inter / union).clamp(0.0, 1.0),
        degenerate: false,
    }
}

type Polygon = Vec<Vector3<f64>>;

fn box_polytope(b: &Box9DoF) -> Vec<Polygon> {
    let corners = box_corners(b).expect("validated box").0;
    let mut faces = Vec::with_capacity(6);
    for axis in 0..3 {
        let (p, q) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in 0..2 {
            let idx = |bp: usize, bq: usize| (side << axis) | (bp << p) | (bq << q);
            let mut face = vec![
                corners[idx(0, 0)],
                corners[idx(1, 0)],
                corners[idx(1, 1)],
                corners[idx(0, 1)],
            ];
            let centroid = face.iter().sum::<Vector3<f64>>() / 4.0;
            let normal = (face[1] - face[0]).cross(&(face[2] - face[0]));
            if normal.dot(&(centroid - b.center)) < 0.0 {
                face.reverse();
            }
            faces.push(face);
        }
    }
    faces
}

/// Half-spaces `n . x <= d` bounding the box.
fn box_halfspaces(b: &Box9DoF) -> [(Vector3<f64>, f64); 6] {
    let r = b.rotation().expect("validated box");
    let mut out = [(Vector3::zeros(), 0.0); 6];
    for axis in 0..3 {
        let n = r.column(axis).into_owned();
        let half = 0.5 * b.size[axis];
        out[2 * axis] = (n, n.dot(&b.center) + half);
        out[2 * axis + 1] = (-n, -n.dot(&b.center) + half);
    }
    out
}

fn clip_polytope(faces: Vec<Polygon>, n: &Vector3<f64>, d: f64) -> Vec<Polygon> {
    let mut out = Vec::with_capacity(faces.len() + 1);
    let mut cap: Vec<Vector3<f64>> = Vec::new();
    for face in faces {
        let dist: Vec<f64> = face.iter().map(|v| n.dot(v) - d).collect();
        if dist.iter().all(|x| x.abs() <= PLANE_EPS) {
            // Lies on the clip plane; the cap below reproduces it.
            cap.extend_from_slice(&face);
            continue;
        }
        let mut clipped = Vec::with_capacity(face.len() + 1);
        for i in 0..face.len() {
            let j = (i + 1) % face.len();
            let (vi, vj) = (face[i], face[j]);
            let (di, dj) = (dist[i], dist[j]);
            if di <= PLANE_EPS {
                clipped.push(vi);
                if di.abs() <= PLANE_EPS {
                    cap.push(vi);
                }
            }
            if (di < -PLANE_EPS && dj > PLANE_EPS) || (di > PLANE_EPS && dj < -PLANE_EPS) {
                let t = di / (di - dj);
                let x = vi + (vj - vi) * t;
                clipped.push(x);
                cap.push(x);
            }
        }
        if clipped.len() >= 3 {
            out.push(clipped);
        }
    }
    if let Some(cap_face) = order_cap(cap, n) {
        out.push(cap_face);
    }
    out
}

/// Orders coplanar points counter-clockwise about `n`, dropping duplicates.
fn order_cap(mut pts: Vec<Vector3<f64>>, n: &Vector3<f64>) -> Option<Polygon> {
    let mut uniq: Vec<Vector3<f64>> = Vec::with_capacity(pts.len());
    for p in pts.drain(..) {
        if !uniq.iter().any(|q| (q - p).norm() < 1e-10) {
            uniq.push(p);
        }
    }
    if uniq.len() < 3 {
        return None;
    }
    let centroid = uniq.iter().sum::<Vector3<f64>>() / uniq.len() as f64;
    let helper = if n.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let u = n.cross(&helper).normalize();
    let v = n.cross(&u);
    let mut keyed: Vec<(f64, Vector3<f64>)> = uniq
        .into_iter()
        .map(|p| {
            let r = p - centroid;
            (r.dot(&v).atan2(r.dot(&u)), p)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    Some(keyed.into_iter().map(|(_, p)| p).collect())
}

fn polytope_volume(faces: &[Polygon]) -> f64 {
    let Some(origin) = faces.first().and_then(|f| f.first()).copied() else {
        return 0.0;
    };
    let mut six_vol = 0.0;
    for face in faces {
        let p0 = face[0] - origin;
        for w in face[1..].windows(2) {
            let p1 = w[0] - origin;
            let p2 = w[1] - origin;
            six_vol += p0.dot(&p1.cross(&p2));
        }
    }
    six_vol / 6.0
}

fn intersection_volume(a: &Box9DoF, b: &Box9DoF) -> f64 {
    let mut poly = box_polytope(a);
    for (n, d) in box_halfspaces(b) {
        poly = clip_polytope(poly, &n, d);
        if poly.len() < 4 {
            return 0.0;
        }
    }
    polytope_volume(&poly).max(0.0)
}
