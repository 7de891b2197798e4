use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-axis bilinear sampling table, align-corners=false: output index `d`
/// reads source coordinate `(d + 0.5)·in/out − 0.5`, clamped to the edges.
fn axis_table(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let frac = if i0 == input - 1 {
                0.0
            } else {
                src - i0 as f64
            };
            (i0, i1, frac)
        })
        .collect()
}

/// Bilinear resampling of every plane of an NCHW tensor to `out_h × out_w`.
pub fn resize_bilinear<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("resize: zero output extent"));
    }
    let (ty, tx) = (axis_table(h, out_h), axis_table(w, out_w));
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for p in 0..n * c {
        let plane = &xd[p * h * w..(p + 1) * h * w];
        for &(y0, y1, fy) in &ty {
            let (fy1, fy0) = (T::of(fy), T::of(1.0 - fy));
            for &(x0, x1, fx) in &tx {
                let (fx1, fx0) = (T::of(fx), T::of(1.0 - fx));
                let top = plane[y0 * w + x0] * fx0 + plane[y0 * w + x1] * fx1;
                let bot = plane[y1 * w + x0] * fx0 + plane[y1 * w + x1] * fx1;
                out.push(top * fy0 + bot * fy1);
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, out_h, out_w], out))
}

/// Adjoint of [`resize_bilinear`].
pub fn resize_bilinear_backward<T: Scalar>(x_shape: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = match *x_shape {
        [a, b, cc, d] => [a, b, cc, d],
        _ => return Err(Error::shape("resize backward: input must be NCHW")),
    };
    let [_, _, out_h, out_w] = dy.dims4()?;
    let (ty, tx) = (axis_table(h, out_h), axis_table(w, out_w));
    let gd = dy.data();
    let mut dx = vec![T::zero(); n * c * h * w];
    for p in 0..n * c {
        let plane = &mut dx[p * h * w..(p + 1) * h * w];
        let g = &gd[p * out_h * out_w..(p + 1) * out_h * out_w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let (fy1, fy0) = (T::of(fy), T::of(1.0 - fy));
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let (fx1, fx0) = (T::of(fx), T::of(1.0 - fx));
                let v = g[oy * out_w + ox];
                plane[y0 * w + x0] = plane[y0 * w + x0] + v * fy0 * fx0;
                plane[y0 * w + x1] = plane[y0 * w + x1] + v * fy0 * fx1;
                plane[y1 * w + x0] = plane[y1 * w + x0] + v * fy1 * fx0;
                plane[y1 * w + x1] = plane[y1 * w + x1] + v * fy1 * fx1;
            }
        }
    }
    Ok(Tensor::from_parts(x_shape.to_vec(), dx))
}

/// Integer-factor bilinear upsampling.
pub fn upsample_bilinear<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::InvalidArgument(
            "upsample factor must be >= 1".into(),
        ));
    }
    let [_, _, h, w] = x.dims4()?;
    if factor == 1 {
        return Ok(x.clone());
    }
    resize_bilinear(x, h * factor, w * factor)
}

/// Nearest-neighbour resampling: output `d` reads `floor(d·in/out)`.
pub fn resize_nearest<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("resize: zero output extent"));
    }
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for p in 0..n * c {
        for oy in 0..out_h {
            let iy = oy * h / out_h;
            for ox in 0..out_w {
                out.push(xd[p * h * w + iy * w + ox * w / out_w]);
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, out_h, out_w], out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_two_half_pixel_weights() {
        let x = Tensor::<f64>::new(&[1, 1, 2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let y = upsample_bilinear(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        for row in y.data().chunks(4) {
            assert_eq!(row, &[0.0, 0.25, 0.75, 1.0]);
        }
    }

    #[test]
    fn identity_and_constant() {
        let x = Tensor::<f64>::from_fn(&[1, 2, 3, 3], |i| i as f64);
        assert_eq!(upsample_bilinear(&x, 1).unwrap(), x);
        let c = Tensor::<f64>::full(&[1, 1, 3, 5], 0.3);
        let y = upsample_bilinear(&c, 4).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
        assert_eq!(resize_bilinear(&x, 3, 3).unwrap(), x);
    }

    #[test]
    fn nearest_picks_top_left_of_each_block() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 4, 4], |i| i as f64);
        let y = resize_nearest(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0, 8.0, 10.0]);
    }
}
