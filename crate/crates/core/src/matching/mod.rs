//! One-to-one assignment between predictions and ground truth.

mod hungarian;

pub use hungarian::{hungarian, Assignment};

use ndarray::Array2;

use crate::error::{invalid, Result};
use crate::losses::{
    background_loss, box_loss, center_loss, focal_loss, total_loss, BoxLossKind, GroundTruth, LossValueGrad,
    LossWeights, Prediction,
};

/// `cost[p][g] = cls * focal + center * L2 + box * box_loss`, i.e. the
/// matched training loss of pairing prediction `p` with ground truth `g`.
pub fn cost_matrix(
    preds: &[Prediction],
    gts: &[GroundTruth],
    w: &LossWeights,
    kind: BoxLossKind,
) -> Result<Array2<f64>> {
    w.validate()?;
    if preds.is_empty() || gts.is_empty() {
        return Err(invalid("cost matrix needs at least one prediction and one ground truth"));
    }
    let mut cost = Array2::zeros((preds.len(), gts.len()));
    for (p, pred) in preds.iter().enumerate() {
        for (g, gt) in gts.iter().enumerate() {
            if gt.category >= pred.logits.len() {
                return Err(invalid(format!("gt category {} has no logit", gt.category)));
            }
            let cls = focal_loss(&pred.logits, Some(gt.category))?.value;
            let center = center_loss(&pred.bbox.center, &gt.bbox.center).value;
            let bx = box_loss(kind, &pred.bbox, &gt.bbox)?.value;
            cost[(p, g)] = w.cls * cls + w.center * center + w.bbox * bx;
        }
    }
    Ok(cost)
}

#[derive(Debug, Clone)]
pub struct MatchedLoss {
    pub assignment: Assignment,
    /// One entry per prediction, gradient laid out as in `total_loss`.
    pub per_prediction: Vec<LossValueGrad>,
    pub total: f64,
}

/// Hungarian assignment followed by `total_loss` on matched pairs and
/// background classification loss on everything left over.
pub fn matched_loss(
    preds: &[Prediction],
    gts: &[GroundTruth],
    w: &LossWeights,
    kind: BoxLossKind,
) -> Result<MatchedLoss> {
    let assignment = if gts.is_empty() || preds.is_empty() {
        w.validate()?;
        Assignment::default()
    } else {
        hungarian(&cost_matrix(preds, gts, w, kind)?)?
    };
    matched_loss_with(preds, gts, w, kind, assignment)
}

/// Same as [`matched_loss`] with a caller-supplied (frozen) assignment.
pub fn matched_loss_with(
    preds: &[Prediction],
    gts: &[GroundTruth],
    w: &LossWeights,
    kind: BoxLossKind,
    assignment: Assignment,
) -> Result<MatchedLoss> {
    let matched = assignment.by_prediction(preds.len());
    let per_prediction = preds
        .iter()
        .zip(&matched)
        .map(|(pred, m)| match m {
            Some(g) => total_loss(pred, &gts[*g], w, kind),
            None => background_loss(pred, w),
        })
        .collect::<Result<Vec<_>>>()?;
    let total = per_prediction.iter().map(|l| l.value).sum();
    Ok(MatchedLoss {
        assignment,
        per_prediction,
        total,
    })
}
