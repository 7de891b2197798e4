use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolKind {
    /// 2×2 window, stride 2.
    Max2x2,
    /// Max over H and W: `N×C×H×W → N×C×1×1`.
    GlobalMaxSpatial,
    /// Max over channels: `N×C×H×W → N×1×H×W`.
    MaxOverChannels,
}

/// Pooled output plus, for each output element, the flat input index it came from.
pub fn pool<T: Scalar>(x: &Tensor<T>, kind: PoolKind) -> Result<(Tensor<T>, Vec<u32>)> {
    let [n, c, h, w] = x.dims4()?;
    let xd = x.data();
    match kind {
        PoolKind::Max2x2 => {
            if h % 2 != 0 || w % 2 != 0 {
                return Err(Error::shape(format!(
                    "max2x2 pooling needs even extents, got {h}x{w}"
                )));
            }
            let (oh, ow) = (h / 2, w / 2);
            let mut y = Vec::with_capacity(n * c * oh * ow);
            let mut idx = Vec::with_capacity(n * c * oh * ow);
            for p in 0..n * c {
                let base = p * h * w;
                for i in 0..oh {
                    for j in 0..ow {
                        let mut best = base + 2 * i * w + 2 * j;
                        for k in [
                            base + 2 * i * w + 2 * j + 1,
                            base + (2 * i + 1) * w + 2 * j,
                            base + (2 * i + 1) * w + 2 * j + 1,
                        ] {
                            if xd[k] > xd[best] {
                                best = k;
                            }
                        }
                        y.push(xd[best]);
                        idx.push(best as u32);
                    }
                }
            }
            Ok((Tensor::from_parts(vec![n, c, oh, ow], y), idx))
        }
        PoolKind::GlobalMaxSpatial => {
            let plane = h * w;
            let mut y = Vec::with_capacity(n * c);
            let mut idx = Vec::with_capacity(n * c);
            for p in 0..n * c {
                let mut best = p * plane;
                for k in p * plane..(p + 1) * plane {
                    if xd[k] > xd[best] {
                        best = k;
                    }
                }
                y.push(xd[best]);
                idx.push(best as u32);
            }
            Ok((Tensor::from_parts(vec![n, c, 1, 1], y), idx))
        }
        PoolKind::MaxOverChannels => {
            let plane = h * w;
            let mut y = Vec::with_capacity(n * plane);
            let mut idx = Vec::with_capacity(n * plane);
            for b in 0..n {
                for s in 0..plane {
                    let mut best = b * c * plane + s;
                    for ch in 1..c {
                        let k = (b * c + ch) * plane + s;
                        if xd[k] > xd[best] {
                            best = k;
                        }
                    }
                    y.push(xd[best]);
                    idx.push(best as u32);
                }
            }
            Ok((Tensor::from_parts(vec![n, 1, h, w], y), idx))
        }
    }
}

/// Routes each output gradient back to the input element that won the max.
pub fn pool_backward<T: Scalar>(x_shape: &[usize], argmax: &[u32], dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = vec![T::zero(); x_shape.iter().product()];
    for (&i, &g) in argmax.iter().zip(dy.data()) {
        dx[i as usize] = dx[i as usize] + g;
    }
    Tensor::from_parts(x_shape.to_vec(), dx)
}
