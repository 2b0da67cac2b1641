use super::LossValueGrad;
use crate::error::{invalid, Result};

pub const FOCAL_GAMMA: f64 = 2.0;
pub const FOCAL_ALPHA: f64 = 0.25;

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid focal loss summed over classes. `target` is the positive class,
/// `None` for background.
pub fn focal_loss(logits: &[f64], target: Option<usize>) -> Result<LossValueGrad> {
    if !logits.iter().all(|x| x.is_finite()) {
        return Err(invalid("logits must be finite"));
    }
    if let Some(t) = target {
        if t >= logits.len() {
            return Err(invalid(format!("target class {t} outside {} logits", logits.len())));
        }
    }
    let (a, g) = (FOCAL_ALPHA, FOCAL_GAMMA);
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (c, &x) in logits.iter().enumerate() {
        let p = sigmoid(x);
        if target == Some(c) {
            // -a (1-p)^g log p, with -log p = softplus(-x)
            let sp = softplus(-x);
            let q = (1.0 - p).powf(g);
            value += a * q * sp;
            grad.push(-a * q * (g * p * sp + (1.0 - p)));
        } else {
            // -(1-a) p^g log(1-p), with -log(1-p) = softplus(x)
            let sp = softplus(x);
            let q = p.powf(g);
            value += (1.0 - a) * q * sp;
            grad.push((1.0 - a) * q * (g * (1.0 - p) * sp + p));
        }
    }
    Ok(LossValueGrad { value, grad })
}
