//! Supervision losses with analytic gradients with respect to the predicted
//! probabilities.
//!
//! * BCE for body and detail heads (targets may be continuous).
//! * Soft IoU for the saliency head (targets must be binary).
//! * Per-pass sum of the three, and a weighted sum over refinement passes.

use crate::decouple::DecoupledLabels;
use crate::error::{Error, Result};
use crate::gray::{ensure_same_dims, BinaryMask, GrayMap};
use crate::scalar::Scalar;

/// Clamp applied to probabilities before taking logs.
pub const BCE_EPS: f64 = 1e-7;

/// How per-pixel BCE terms are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, clap::ValueEnum)]
pub enum Reduction {
    /// Plain sum over pixels.
    #[default]
    Sum,
    /// Sum divided by the pixel count.
    Mean,
}

/// A scalar loss and its gradient, laid out like the prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValueGrad<T> {
    pub value: T,
    pub width: usize,
    pub height: usize,
    pub grad: Vec<T>,
}

/// Binary cross-entropy on raw slices. Returns the value and writes
/// `scale * dvalue/dp` into `grad`.
pub(crate) fn bce_slice<T: Scalar>(pred: &[T], target: &[T], reduction: Reduction, grad: &mut [T]) -> T {
    let eps = T::c(BCE_EPS);
    let one = T::one();
    let scale = match reduction {
        Reduction::Sum => one,
        Reduction::Mean => one / T::c(pred.len() as f64),
    };
    let mut total = T::zero();
    for ((&p, &g), d) in pred.iter().zip(target).zip(grad.iter_mut()) {
        let p = p.max(eps).min(one - eps);
        total -= g * p.ln() + (one - g) * (one - p).ln();
        *d = scale * (p - g) / (p * (one - p));
    }
    total * scale
}

/// Soft IoU loss on raw slices. `target` entries must be 0 or 1.
pub(crate) fn iou_slice<T: Scalar>(pred: &[T], target: &[T], grad: &mut [T]) -> T {
    let one = T::one();
    let mut inter = T::zero();
    let mut union = T::zero();
    for (&p, &g) in pred.iter().zip(target) {
        inter += g * p;
        union += g + p - g * p;
    }
    if union == T::zero() {
        grad.iter_mut().for_each(|d| *d = T::zero());
        return T::zero();
    }
    let b2 = union * union;
    for (&g, d) in target.iter().zip(grad.iter_mut()) {
        *d = -(g * union - inter * (one - g)) / b2;
    }
    one - inter / union
}

pub fn bce<T: Scalar>(pred: &GrayMap<T>, target: &GrayMap<T>, reduction: Reduction) -> Result<LossValueGrad<T>> {
    ensure_same_dims(pred.dims(), target.dims())?;
    let mut grad = vec![T::zero(); pred.len()];
    let value = bce_slice(pred.data(), target.data(), reduction, &mut grad);
    Ok(LossValueGrad {
        value,
        width: pred.width(),
        height: pred.height(),
        grad,
    })
}

/// `1 - Σ g·p / Σ (g + p - g·p)`. Both-empty inputs count as a perfect match.
pub fn iou_loss<T: Scalar>(pred: &GrayMap<T>, target: &BinaryMask) -> Result<LossValueGrad<T>> {
    ensure_same_dims(pred.dims(), target.dims())?;
    let g: Vec<T> = target.to_gray::<T>().into_data();
    let mut grad = vec![T::zero(); pred.len()];
    let value = iou_slice(pred.data(), &g, &mut grad);
    Ok(LossValueGrad {
        value,
        width: pred.width(),
        height: pred.height(),
        grad,
    })
}

/// The three head predictions of one refinement pass.
#[derive(Clone, Debug, PartialEq)]
pub struct PassPredictions<T> {
    pub body: GrayMap<T>,
    pub detail: GrayMap<T>,
    pub sal: GrayMap<T>,
}

/// Gradients for the three heads of one pass.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrads<T> {
    pub body: Vec<T>,
    pub detail: Vec<T>,
    pub sal: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationLoss<T> {
    pub body: T,
    pub detail: T,
    pub segm: T,
    pub value: T,
    pub grads: HeadGrads<T>,
}

/// Body BCE + detail BCE + saliency IoU for a single pass.
pub fn iteration_loss<T: Scalar>(
    preds: &PassPredictions<T>,
    labels: &DecoupledLabels<T>,
    mask: &BinaryMask,
    reduction: Reduction,
) -> Result<IterationLoss<T>> {
    for dims in [
        preds.detail.dims(),
        preds.sal.dims(),
        labels.body.dims(),
        labels.detail.dims(),
        mask.dims(),
    ] {
        ensure_same_dims(preds.body.dims(), dims)?;
    }
    let body = bce(&preds.body, &labels.body, reduction)?;
    let detail = bce(&preds.detail, &labels.detail, reduction)?;
    let segm = iou_loss(&preds.sal, mask)?;
    Ok(IterationLoss {
        body: body.value,
        detail: detail.value,
        segm: segm.value,
        value: body.value + detail.value + segm.value,
        grads: HeadGrads {
            body: body.grad,
            detail: detail.grad,
            sal: segm.grad,
        },
    })
}

/// Per-pass loss terms and their weighted total.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown<T> {
    /// `(body, detail, segm)` per pass.
    pub per_iteration: Vec<(T, T, T)>,
    pub weights: Vec<T>,
    pub total: T,
    /// Gradients of `total` for every pass (already weighted).
    pub grads: Vec<HeadGrads<T>>,
}

/// `Σ_k α_k · ℓ(k)`. `weights = None` weighs every pass by 1.
pub fn total_loss<T: Scalar>(
    passes: &[PassPredictions<T>],
    labels: &DecoupledLabels<T>,
    mask: &BinaryMask,
    weights: Option<&[T]>,
    reduction: Reduction,
) -> Result<LossBreakdown<T>> {
    if passes.is_empty() {
        return Err(Error::LengthMismatch { expected: 1, got: 0 });
    }
    let weights: Vec<T> = match weights {
        Some(w) if w.len() != passes.len() => {
            return Err(Error::LengthMismatch {
                expected: passes.len(),
                got: w.len(),
            })
        }
        Some(w) => w.to_vec(),
        None => vec![T::one(); passes.len()],
    };
    let mut per_iteration = Vec::with_capacity(passes.len());
    let mut grads = Vec::with_capacity(passes.len());
    let mut total = T::zero();
    for (p, &a) in passes.iter().zip(&weights) {
        let it = iteration_loss(p, labels, mask, reduction)?;
        total += a * it.value;
        per_iteration.push((it.body, it.detail, it.segm));
        let scale = |v: Vec<T>| v.into_iter().map(|x| x * a).collect();
        grads.push(HeadGrads {
            body: scale(it.grads.body),
            detail: scale(it.grads.detail),
            sal: scale(it.grads.sal),
        });
    }
    Ok(LossBreakdown {
        per_iteration,
        weights,
        total,
        grads,
    })
}
