use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Affine map `y = x·Wᵀ + b` for `x: [N, C]` (or `[C]`), `w: [Cout, C]`, `b: [Cout]`.
pub fn fully_connected<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (n, c, batched) = match *x.shape() {
        [c] => (1, c, false),
        [n, c] => (n, c, true),
        _ => {
            return Err(Error::shape(format!(
                "fully_connected: input must be [N, C], got {:?}",
                x.shape()
            )))
        }
    };
    let cout = match *w.shape() {
        [o, i] if i == c => o,
        _ => {
            return Err(Error::shape(format!(
                "fully_connected: weight {:?} does not accept {c} inputs",
                w.shape()
            )))
        }
    };
    let mut y = vec![T::zero(); n * cout];
    if let Some(b) = b {
        if b.shape() != [cout] {
            return Err(Error::shape(format!(
                "fully_connected: bias must be [{cout}]"
            )));
        }
        for row in y.chunks_mut(cout) {
            row.copy_from_slice(b.data());
        }
    }
    T::gemm(
        n,
        c,
        cout,
        T::one(),
        x.data(),
        c as isize,
        1,
        w.data(),
        1,
        c as isize,
        T::one(),
        &mut y,
        cout as isize,
        1,
    );
    let shape = if batched { vec![n, cout] } else { vec![cout] };
    Ok(Tensor::from_parts(shape, y))
}

/// Returns `(dx, dw, db)`.
pub fn fully_connected_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let c = *x.shape().last().unwrap();
    let n = x.numel() / c;
    let cout = w.shape()[0];
    let mut dx = vec![T::zero(); x.numel()];
    let mut dw = vec![T::zero(); w.numel()];
    // dX = dY · W
    T::gemm(
        n,
        cout,
        c,
        T::one(),
        dy.data(),
        cout as isize,
        1,
        w.data(),
        c as isize,
        1,
        T::zero(),
        &mut dx,
        c as isize,
        1,
    );
    // dW = dYᵀ · X
    T::gemm(
        cout,
        n,
        c,
        T::one(),
        dy.data(),
        1,
        cout as isize,
        x.data(),
        c as isize,
        1,
        T::zero(),
        &mut dw,
        c as isize,
        1,
    );
    let mut db = vec![T::zero(); cout];
    for row in dy.data().chunks(cout) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d = *d + g;
        }
    }
    (
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(w.shape().to_vec(), dw),
        Tensor::from_parts(vec![cout], db),
    )
}
