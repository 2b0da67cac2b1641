//! Box regression and classification losses with analytic gradients.
//!
//! Box losses differentiate with respect to the nine raw parameters of the
//! predicted box, in [`Box9DoF::params`] order. At non-smooth points (L1
//! kinks, nearest-neighbour or permutation ties, zero-length residuals) the
//! active set is frozen and zero is used as the subgradient.

mod box_losses;
mod focal;

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::geometry::Box9DoF;

pub use box_losses::{
    box_loss, box_loss_body_frame, center_loss, corner_chamfer_loss, l1_box_loss, permutation_corner_loss,
    permutation_corner_costs, wasserstein_loss, WASSERSTEIN_EPS,
};
pub use focal::{focal_loss, FOCAL_ALPHA, FOCAL_GAMMA};

#[derive(Debug, Clone, PartialEq)]
pub struct LossValueGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl LossValueGrad {
    pub fn zero(n: usize) -> Self {
        Self {
            value: 0.0,
            grad: vec![0.0; n],
        }
    }
}

/// Weights of the classification, center and box terms.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub cls: f64,
    pub center: f64,
    #[serde(rename = "box")]
    pub bbox: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cls: 1.0,
            center: 0.8,
            bbox: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.cls, self.center, self.bbox].iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(invalid("loss weights must be finite and nonnegative"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoxLossKind {
    L1,
    CornerChamfer,
    PermutationCorner,
    Wasserstein,
}

impl BoxLossKind {
    pub const ALL: [BoxLossKind; 4] = [
        BoxLossKind::L1,
        BoxLossKind::CornerChamfer,
        BoxLossKind::PermutationCorner,
        BoxLossKind::Wasserstein,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BoxLossKind::L1 => "l1",
            BoxLossKind::CornerChamfer => "ccd",
            BoxLossKind::PermutationCorner => "pcd",
            BoxLossKind::Wasserstein => "wd",
        }
    }
}

impl fmt::Display for BoxLossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BoxLossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(BoxLossKind::L1),
            "ccd" => Ok(BoxLossKind::CornerChamfer),
            "pcd" => Ok(BoxLossKind::PermutationCorner),
            "wd" => Ok(BoxLossKind::Wasserstein),
            other => Err(invalid(format!("unknown box loss kind {other:?} (expected l1, ccd, pcd or wd)"))),
        }
    }
}

/// Decoder output for one query: a box and per-class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub bbox: Box9DoF,
    pub logits: Vec<f64>,
}

impl Prediction {
    /// Builds a prediction from class probabilities, clamped away from 0 and 1.
    pub fn from_probabilities(bbox: Box9DoF, probs: &[f64]) -> Self {
        let logits = probs
            .iter()
            .map(|p| {
                let p = p.clamp(1e-12, 1.0 - 1e-12);
                (p / (1.0 - p)).ln()
            })
            .collect();
        Self { bbox, logits }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub bbox: Box9DoF,
    pub category: usize,
}

/// `cls * focal + center * L2(center) + box * box_loss` for a matched pair.
///
/// The gradient holds the nine box parameters followed by one entry per
/// logit.
pub fn total_loss(pred: &Prediction, gt: &GroundTruth, w: &LossWeights, kind: BoxLossKind) -> Result<LossValueGrad> {
    w.validate()?;
    if gt.category >= pred.logits.len() {
        return Err(invalid(format!(
            "gt category {} outside the {} predicted classes",
            gt.category,
            pred.logits.len()
        )));
    }
    let cls = focal_loss(&pred.logits, Some(gt.category))?;
    let center = center_loss(&pred.bbox.center, &gt.bbox.center);
    let bx = box_loss(kind, &pred.bbox, &gt.bbox)?;

    let mut grad = vec![0.0; 9 + pred.logits.len()];
    for k in 0..9 {
        grad[k] = w.bbox * bx.grad[k];
    }
    for k in 0..3 {
        grad[k] += w.center * center.grad[k];
    }
    for (g, c) in grad[9..].iter_mut().zip(&cls.grad) {
        *g = w.cls * c;
    }
    Ok(LossValueGrad {
        value: w.cls * cls.value + w.center * center.value + w.bbox * bx.value,
        grad,
    })
}

/// Background-only classification loss for an unmatched prediction. Same
/// gradient layout as [`total_loss`], with a zero box block.
pub fn background_loss(pred: &Prediction, w: &LossWeights) -> Result<LossValueGrad> {
    w.validate()?;
    let cls = focal_loss(&pred.logits, None)?;
    let mut grad = vec![0.0; 9 + pred.logits.len()];
    for (g, c) in grad[9..].iter_mut().zip(&cls.grad) {
        *g = w.cls * c;
    }
    Ok(LossValueGrad {
        value: w.cls * cls.value,
        grad,
    })
}
