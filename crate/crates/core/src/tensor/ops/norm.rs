use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormMode {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with the running statistics.
    Eval,
}

pub struct BatchNormForward<T> {
    pub y: Tensor<T>,
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    /// Per-channel batch mean (train mode only).
    pub batch_mean: Vec<T>,
    /// Per-channel unbiased batch variance (train mode only).
    pub batch_var: Vec<T>,
}

fn check_channels<T: Scalar>(what: &str, t: &Tensor<T>, c: usize) -> Result<()> {
    if t.shape() != [c] {
        return Err(Error::shape(format!(
            "batch_norm: {what} must be [{c}], got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

pub fn batch_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: f64,
    mode: NormMode,
) -> Result<BatchNormForward<T>> {
    let [n, c, h, w] = x.dims4()?;
    check_channels("gamma", gamma, c)?;
    check_channels("beta", beta, c)?;
    check_channels("running_mean", running_mean, c)?;
    check_channels("running_var", running_var, c)?;
    let plane = h * w;
    let m = n * plane;
    let xd = x.data();

    let (mean, var, batch_var) = match mode {
        NormMode::Eval => (
            running_mean.data().to_vec(),
            running_var.data().to_vec(),
            Vec::new(),
        ),
        NormMode::Train => {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut s = T::zero();
                for b in 0..n {
                    s = s + xd[(b * c + ch) * plane..(b * c + ch + 1) * plane]
                        .iter()
                        .copied()
                        .sum();
                }
                let mu = s / T::of(m as f64);
                let mut sq = T::zero();
                for b in 0..n {
                    for &v in &xd[(b * c + ch) * plane..(b * c + ch + 1) * plane] {
                        sq = sq + (v - mu) * (v - mu);
                    }
                }
                mean[ch] = mu;
                var[ch] = sq / T::of(m as f64);
            }
            let unbiased = if m > 1 {
                var.iter()
                    .map(|&v| v * T::of(m as f64 / (m - 1) as f64))
                    .collect()
            } else {
                var.clone()
            };
            (mean, var, unbiased)
        }
    };

    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| T::one() / (v + T::of(eps)).sqrt())
        .collect();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut y = vec![T::zero(); xd.len()];
    let (gd, bd) = (gamma.data(), beta.data());
    for b in 0..n {
        for ch in 0..c {
            let r = (b * c + ch) * plane..(b * c + ch + 1) * plane;
            for ((xh, yv), &xv) in xhat[r.clone()]
                .iter_mut()
                .zip(&mut y[r.clone()])
                .zip(&xd[r])
            {
                *xh = (xv - mean[ch]) * inv_std[ch];
                *yv = gd[ch] * *xh + bd[ch];
            }
        }
    }
    let shape = x.shape().to_vec();
    Ok(BatchNormForward {
        y: Tensor::from_parts(shape.clone(), y),
        xhat: Tensor::from_parts(shape, xhat),
        inv_std,
        batch_mean: if mode == NormMode::Train {
            mean
        } else {
            Vec::new()
        },
        batch_var,
    })
}

/// `running ← (1 − momentum)·running + momentum·batch`.
pub fn update_running<T: Scalar>(running: &Tensor<T>, batch: &[T], momentum: f64) -> Tensor<T> {
    let m = T::of(momentum);
    Tensor::from_parts(
        running.shape().to_vec(),
        running
            .data()
            .iter()
            .zip(batch)
            .map(|(&r, &b)| (T::one() - m) * r + m * b)
            .collect(),
    )
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batch_norm_backward<T: Scalar>(
    dy: &Tensor<T>,
    xhat: &Tensor<T>,
    inv_std: &[T],
    gamma: &Tensor<T>,
    mode: NormMode,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [n, c, h, w] = xhat.dims4()?;
    if dy.shape() != xhat.shape() {
        return Err(Error::shape("batch_norm backward: gradient shape mismatch"));
    }
    let plane = h * w;
    let m = T::of((n * plane) as f64);
    let (dyd, xd, gd) = (dy.data(), xhat.data(), gamma.data());
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let r = (b * c + ch) * plane..(b * c + ch + 1) * plane;
            for (&g, &xh) in dyd[r.clone()].iter().zip(&xd[r]) {
                dbeta[ch] = dbeta[ch] + g;
                dgamma[ch] = dgamma[ch] + g * xh;
            }
        }
    }
    let mut dx = vec![T::zero(); dyd.len()];
    for b in 0..n {
        for ch in 0..c {
            let r = (b * c + ch) * plane..(b * c + ch + 1) * plane;
            let scale = gd[ch] * inv_std[ch];
            for ((d, &g), &xh) in dx[r.clone()].iter_mut().zip(&dyd[r.clone()]).zip(&xd[r]) {
                *d = match mode {
                    NormMode::Eval => scale * g,
                    NormMode::Train => scale * (g - dbeta[ch] / m - xh * dgamma[ch] / m),
                };
            }
        }
    }
    Ok((
        Tensor::from_parts(dy.shape().to_vec(), dx),
        Tensor::from_parts(vec![c], dgamma),
        Tensor::from_parts(vec![c], dbeta),
    ))
}
