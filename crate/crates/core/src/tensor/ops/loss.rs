use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Probabilities are clamped to `[BCE_CLAMP, 1 − BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-7;
/// Additive smoothing of the soft-IoU ratio.
pub const IOU_SMOOTH: f64 = 1.0;

fn check<T: Scalar>(s: &Tensor<T>, g: &Tensor<T>, op: &str) -> Result<()> {
    if s.shape() != g.shape() {
        return Err(Error::shape(format!(
            "{op}: prediction {:?} and target {:?} differ",
            s.shape(),
            g.shape()
        )));
    }
    Ok(())
}

/// Mean binary cross-entropy over every element.
pub fn bce<T: Scalar>(s: &Tensor<T>, g: &Tensor<T>) -> Result<T> {
    check(s, g, "bce")?;
    let (lo, hi) = (T::of(BCE_CLAMP), T::of(1.0 - BCE_CLAMP));
    let total: T = s
        .data()
        .iter()
        .zip(g.data())
        .map(|(&p, &t)| {
            let p = p.max(lo).min(hi);
            -(t * p.ln() + (T::one() - t) * (T::one() - p).ln())
        })
        .sum();
    Ok(total / T::of(s.numel() as f64))
}

pub fn bce_backward<T: Scalar>(s: &Tensor<T>, g: &Tensor<T>, upstream: T) -> Tensor<T> {
    let (lo, hi) = (T::of(BCE_CLAMP), T::of(1.0 - BCE_CLAMP));
    let scale = upstream / T::of(s.numel() as f64);
    let data = s
        .data()
        .iter()
        .zip(g.data())
        .map(|(&p, &t)| {
            if p < lo || p > hi {
                T::zero()
            } else {
                scale * ((T::one() - t) / (T::one() - p) - t / p)
            }
        })
        .collect();
    Tensor::from_parts(s.shape().to_vec(), data)
}

fn per_sample<T: Scalar>(s: &Tensor<T>) -> (usize, usize) {
    let n = s.shape()[0];
    (n, s.numel() / n)
}

/// `1 − (Σ S·G + ε) / (Σ S + Σ G − Σ S·G + ε)` per sample, averaged over the batch axis.
pub fn soft_iou<T: Scalar>(s: &Tensor<T>, g: &Tensor<T>) -> Result<T> {
    check(s, g, "iou")?;
    let (n, len) = per_sample(s);
    let eps = T::of(IOU_SMOOTH);
    let mut total = T::zero();
    for b in 0..n {
        let (sp, gp) = (
            &s.data()[b * len..(b + 1) * len],
            &g.data()[b * len..(b + 1) * len],
        );
        let (mut inter, mut ss, mut gs) = (T::zero(), T::zero(), T::zero());
        for (&p, &t) in sp.iter().zip(gp) {
            inter = inter + p * t;
            ss = ss + p;
            gs = gs + t;
        }
        total = total + T::one() - (inter + eps) / (ss + gs - inter + eps);
    }
    Ok(total / T::of(n as f64))
}

pub fn soft_iou_backward<T: Scalar>(s: &Tensor<T>, g: &Tensor<T>, upstream: T) -> Tensor<T> {
    let (n, len) = per_sample(s);
    let eps = T::of(IOU_SMOOTH);
    let mut out = vec![T::zero(); s.numel()];
    for b in 0..n {
        let r = b * len..(b + 1) * len;
        let (sp, gp) = (&s.data()[r.clone()], &g.data()[r.clone()]);
        let (mut inter, mut ss, mut gs) = (T::zero(), T::zero(), T::zero());
        for (&p, &t) in sp.iter().zip(gp) {
            inter = inter + p * t;
            ss = ss + p;
            gs = gs + t;
        }
        let i = inter + eps;
        let u = ss + gs - inter + eps;
        let k = -upstream / T::of(n as f64) / (u * u);
        for (o, &t) in out[r].iter_mut().zip(gp) {
            *o = k * (t * u - i * (T::one() - t));
        }
    }
    Tensor::from_parts(s.shape().to_vec(), out)
}
