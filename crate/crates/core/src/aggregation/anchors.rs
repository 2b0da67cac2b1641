use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::geometry::Box9DoF;

pub const ANCHORS_PER_VIEW: usize = 50;

const MAX_ITERATIONS: usize = 100;
const MOVEMENT_TOLERANCE: f64 = 1e-6;
const MIN_ANCHOR_SIZE: f64 = 1e-3;

fn sq_dist(a: &[f64; 9], b: &[f64; 9]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64; 9], centers: &[[f64; 9]]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(i, c)| (i, sq_dist(p, c)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// K-means anchors over the raw 9-parameter box vectors, with k-means++
/// seeding and Lloyd iterations. Sizes of the returned centroids are clamped
/// to at least 1 mm.
pub fn generate_anchors(boxes: &[Box9DoF], k: usize, seed: u64) -> Result<Vec<Box9DoF>> {
    if k == 0 {
        return Err(invalid("anchor count must be positive"));
    }
    if k > boxes.len() {
        return Err(invalid(format!("cannot form {k} anchors from {} boxes", boxes.len())));
    }
    let points: Vec<[f64; 9]> = boxes.iter().map(|b| b.params()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centers = vec![points[rng.random_range(0..points.len())]];
    while centers.len() < k {
        let d2: Vec<f64> = points.iter().map(|p| nearest(p, &centers).1).collect();
        let next = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(&mut rng),
            // Every remaining point coincides with a center.
            Err(_) => rng.random_range(0..points.len()),
        };
        centers.push(points[next]);
    }

    for _ in 0..MAX_ITERATIONS {
        let mut sums = vec![[0.0; 9]; k];
        let mut counts = vec![0usize; k];
        for p in &points {
            let (c, _) = nearest(p, &centers);
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut movement = 0.0f64;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let mean = sums[c].map(|s| s / counts[c] as f64);
            movement = movement.max(sq_dist(&mean, &centers[c]).sqrt());
            centers[c] = mean;
        }
        if movement < MOVEMENT_TOLERANCE {
            break;
        }
    }

    Ok(centers
        .iter()
        .map(|c| {
            let mut b = Box9DoF::from_params(c);
            b.size = b.size.map(|s| s.max(MIN_ANCHOR_SIZE));
            b
        })
        .collect())
}
