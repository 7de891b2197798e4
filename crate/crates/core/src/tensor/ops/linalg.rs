//! Matrix primitives. Rank-2 tensors are single matrices; rank-3 tensors are
//! batches `[B, rows, cols]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Which slices of a matrix the softmax normalizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SoftmaxAxis {
    /// Every row sums to one.
    Rows,
    /// Every column sums to one.
    Cols,
}

/// `(batch, rows, cols, batched)` of a rank-2 or rank-3 tensor.
pub(crate) fn matrix_dims<T: Scalar>(
    t: &Tensor<T>,
    op: &str,
) -> Result<(usize, usize, usize, bool)> {
    match *t.shape() {
        [r, c] => Ok((1, r, c, false)),
        [b, r, c] => Ok((b, r, c, true)),
        _ => Err(Error::shape(format!(
            "{op}: expected a matrix or batch of matrices, got {:?}",
            t.shape()
        ))),
    }
}

fn out_shape(batch: usize, batched: bool, r: usize, c: usize) -> Vec<usize> {
    if batched {
        vec![batch, r, c]
    } else {
        vec![r, c]
    }
}

/// Matrix product. A rank-2 operand is shared across the other's batch.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ba, m, k, bat_a) = matrix_dims(a, "matmul")?;
    let (bb, k2, n, bat_b) = matrix_dims(b, "matmul")?;
    if k != k2 {
        return Err(Error::shape(format!(
            "matmul: inner extents differ ({:?} x {:?})",
            a.shape(),
            b.shape()
        )));
    }
    if bat_a && bat_b && ba != bb {
        return Err(Error::shape(format!(
            "matmul: batch sizes differ ({ba} vs {bb})"
        )));
    }
    let batch = ba.max(bb);
    let mut out = vec![T::zero(); batch * m * n];
    for i in 0..batch {
        let ad = &a.data()[if bat_a { i * m * k } else { 0 }..][..m * k];
        let bd = &b.data()[if bat_b { i * k * n } else { 0 }..][..k * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            ad,
            k as isize,
            1,
            bd,
            n as isize,
            1,
            T::zero(),
            &mut out[i * m * n..(i + 1) * m * n],
            n as isize,
            1,
        );
    }
    Ok(Tensor::from_parts(
        out_shape(batch, bat_a || bat_b, m, n),
        out,
    ))
}

/// Returns `(da, db)` for `c = a·b`, summing over the batch for shared operands.
pub fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    dc: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (ba, m, k, bat_a) = matrix_dims(a, "matmul")?;
    let (bb, _, n, bat_b) = matrix_dims(b, "matmul")?;
    let batch = ba.max(bb);
    let mut da = vec![T::zero(); a.numel()];
    let mut db = vec![T::zero(); b.numel()];
    for i in 0..batch {
        let (aoff, boff) = (
            if bat_a { i * m * k } else { 0 },
            if bat_b { i * k * n } else { 0 },
        );
        let g = &dc.data()[i * m * n..(i + 1) * m * n];
        // dA += dC · Bᵀ
        T::gemm(
            m,
            n,
            k,
            T::one(),
            g,
            n as isize,
            1,
            &b.data()[boff..boff + k * n],
            1,
            n as isize,
            T::one(),
            &mut da[aoff..aoff + m * k],
            k as isize,
            1,
        );
        // dB += Aᵀ · dC
        T::gemm(
            k,
            m,
            n,
            T::one(),
            &a.data()[aoff..aoff + m * k],
            1,
            k as isize,
            g,
            n as isize,
            1,
            T::one(),
            &mut db[boff..boff + k * n],
            n as isize,
            1,
        );
    }
    Ok((
        Tensor::from_parts(a.shape().to_vec(), da),
        Tensor::from_parts(b.shape().to_vec(), db),
    ))
}

/// Swaps the last two axes.
pub fn transpose<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, r, c, batched) = matrix_dims(x, "transpose")?;
    let mut out = vec![T::zero(); x.numel()];
    let xd = x.data();
    for b in 0..batch {
        let src = &xd[b * r * c..(b + 1) * r * c];
        let dst = &mut out[b * r * c..(b + 1) * r * c];
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
    }
    Ok(Tensor::from_parts(out_shape(batch, batched, c, r), out))
}

/// Numerically stable softmax (max-subtracted) over rows or columns.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: SoftmaxAxis) -> Result<Tensor<T>> {
    let (batch, r, c, _) = matrix_dims(x, "softmax")?;
    let mut out = x.data().to_vec();
    let (outer, len, stride, step) = match axis {
        SoftmaxAxis::Rows => (r, c, 1, c),
        SoftmaxAxis::Cols => (c, r, c, 1),
    };
    for b in 0..batch {
        let m = &mut out[b * r * c..(b + 1) * r * c];
        for o in 0..outer {
            let base = o * step;
            let mut mx = T::neg_infinity();
            for i in 0..len {
                mx = mx.max(m[base + i * stride]);
            }
            let mut s = T::zero();
            for i in 0..len {
                let e = (m[base + i * stride] - mx).exp();
                m[base + i * stride] = e;
                s = s + e;
            }
            for i in 0..len {
                m[base + i * stride] = m[base + i * stride] / s;
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Gradient through a softmax given its output `y`: `y ⊙ (dy − Σ dy⊙y)` per slice.
pub fn softmax_backward<T: Scalar>(
    y: &Tensor<T>,
    dy: &Tensor<T>,
    axis: SoftmaxAxis,
) -> Result<Tensor<T>> {
    let (batch, r, c, _) = matrix_dims(y, "softmax")?;
    let (outer, len, stride, step) = match axis {
        SoftmaxAxis::Rows => (r, c, 1, c),
        SoftmaxAxis::Cols => (c, r, c, 1),
    };
    let (yd, gd) = (y.data(), dy.data());
    let mut dx = vec![T::zero(); y.numel()];
    for b in 0..batch {
        let off = b * r * c;
        for o in 0..outer {
            let base = off + o * step;
            let mut dot = T::zero();
            for i in 0..len {
                let j = base + i * stride;
                dot = dot + gd[j] * yd[j];
            }
            for i in 0..len {
                let j = base + i * stride;
                dx[j] = yd[j] * (gd[j] - dot);
            }
        }
    }
    Ok(Tensor::from_parts(y.shape().to_vec(), dx))
}
