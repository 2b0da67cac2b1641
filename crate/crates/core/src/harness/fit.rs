use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{reparameterize, rotation_to_euler, signed_permutations, Box9DoF};
use crate::losses::{box_loss, box_loss_body_frame, BoxLossKind};

/// Smallest size any fitted box may take during descent.
const MIN_FIT_SIZE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Step size of the first iteration.
    pub learning_rate: f64,
    /// Per-step geometric decay of the step size.
    pub lr_decay: f64,
    pub steps: usize,
    pub center_jitter: f64,
    pub size_jitter: f64,
    pub angle_jitter: f64,
    /// Probability of relabeling the initial box by a random symmetry.
    pub symmetry_probability: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            lr_decay: 0.99,
            steps: 3000,
            center_jitter: 0.3,
            size_jitter: 0.3,
            angle_jitter: 0.5,
            symmetry_probability: 0.5,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning rate must be positive"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(invalid("lr decay must lie in (0, 1]"));
        }
        if self.steps == 0 {
            return Err(invalid("fit needs at least one step"));
        }
        if !(self.center_jitter >= 0.0 && self.angle_jitter >= 0.0 && (0.0..1.0).contains(&self.size_jitter)) {
            return Err(invalid("jitter magnitudes must be nonnegative, size jitter below 1"));
        }
        if !(0.0..=1.0).contains(&self.symmetry_probability) {
            return Err(invalid("symmetry probability must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn step_size(&self, step: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi(step as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitStep {
    pub loss: f64,
    pub bbox: Box9DoF,
    pub grad_norm: f64,
}

/// Loss, box and gradient norm before each update, plus the final state.
#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    pub steps: Vec<FitStep>,
}

impl FitTrace {
    pub fn final_box(&self) -> Box9DoF {
        self.steps.last().expect("trace is never empty").bbox
    }

    pub fn final_loss(&self) -> f64 {
        self.steps.last().expect("trace is never empty").loss
    }
}

/// Jittered copy of `gt`. With `symmetry` set, the result is additionally
/// relabeled by a uniformly chosen non-identity symmetry of the cuboid.
pub fn perturb_box(gt: &Box9DoF, cfg: &FitConfig, symmetry: bool, rng: &mut impl Rng) -> Result<Box9DoF> {
    let normal = |s: f64| Normal::new(0.0, s).map_err(|e| invalid(e.to_string()));
    let (nc, na) = (normal(cfg.center_jitter)?, normal(cfg.angle_jitter)?);
    let center = gt.center + Vector3::from_fn(|_, _| nc.sample(rng));
    let size = gt
        .size
        .map(|s| s * rng.random_range(1.0 - cfg.size_jitter..=1.0 + cfg.size_jitter));
    let euler = gt.euler + Vector3::from_fn(|_, _| na.sample(rng));
    let b = Box9DoF::new(center, size, euler)?;
    if symmetry {
        let k = rng.random_range(1..signed_permutations().len());
        reparameterize(&b, &signed_permutations()[k])
    } else {
        Ok(b)
    }
}

/// Gradient descent with a geometrically decaying step size. Sizes are kept
/// above 1 mm.
///
/// The L1 loss lives on the raw parameters and steps in Euler angles. The
/// geometric losses step the orientation on the rotation group,
/// `R -> R exp(-lr [g_w]x)`, which is unaffected by gimbal lock and commutes
/// with relabeling the box by any of its symmetries.
pub fn fit_box(gt: &Box9DoF, init: &Box9DoF, kind: BoxLossKind, cfg: &FitConfig) -> Result<FitTrace> {
    cfg.validate()?;
    let mut cur = *init;
    let mut steps = Vec::with_capacity(cfg.steps + 1);
    for t in 0..=cfg.steps {
        let lv = match kind {
            BoxLossKind::L1 => box_loss(kind, &cur, gt)?,
            _ => box_loss_body_frame(kind, &cur, gt)?,
        };
        let grad_norm = lv.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        steps.push(FitStep {
            loss: lv.value,
            bbox: cur,
            grad_norm,
        });
        if t == cfg.steps {
            break;
        }
        let lr = cfg.step_size(t);
        let g = &lv.grad;
        let mut next = cur;
        next.center -= lr * Vector3::new(g[0], g[1], g[2]);
        next.size = (cur.size - lr * Vector3::new(g[3], g[4], g[5])).map(|s| s.max(MIN_FIT_SIZE));
        let dw = -lr * Vector3::new(g[6], g[7], g[8]);
        next.euler = match kind {
            BoxLossKind::L1 => cur.euler + dw,
            _ => rotation_to_euler(&(cur.rotation()? * Rotation3::new(dw).into_inner())),
        };
        next.validate()?;
        cur = next;
    }
    Ok(FitTrace { steps })
}

/// Fits every box of a scene from a seeded perturbation. Box `i` draws its
/// perturbation from a generator seeded with `seed` and `i`, so results do
/// not depend on thread scheduling.
pub fn fit_boxes(gts: &[Box9DoF], kind: BoxLossKind, cfg: &FitConfig, seed: u64) -> Result<Vec<FitTrace>> {
    cfg.validate()?;
    gts.par_iter()
        .enumerate()
        .map(|(i, gt)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let symmetry = rng.random_bool(cfg.symmetry_probability);
            let init = perturb_box(gt, cfg, symmetry, &mut rng)?;
            fit_box(gt, &init, kind, cfg)
        })
        .collect()
}
