use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::{Scalar, Tensor};

/// Stride, zero padding, dilation and group count of a 2-D convolution.
/// Padding and stride apply equally to both spatial axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Conv2dParams {
            stride: 1,
            padding: 0,
            dilation: 1,
            groups: 1,
        }
    }
}

impl Conv2dParams {
    pub fn new(stride: usize, padding: usize, dilation: usize, groups: usize) -> Self {
        Conv2dParams {
            stride,
            padding,
            dilation,
            groups,
        }
    }

    /// `floor((input + 2·padding − dilation·(kernel−1) − 1) / stride) + 1`,
    /// or `None` when the dilated kernel does not fit.
    pub fn output_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span || self.stride == 0 {
            None
        } else {
            Some((padded - span) / self.stride + 1)
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    cin_g: usize,
    cout_g: usize,
    p: Conv2dParams,
}

impl Geometry {
    fn new(x: &[usize], w: &[usize], p: Conv2dParams) -> Result<Self> {
        let [n, cin, h, wd] = match *x {
            [a, b, c, d] => [a, b, c, d],
            _ => {
                return Err(Error::shape(format!(
                    "conv2d: input must be NCHW, got {x:?}"
                )))
            }
        };
        let [cout, cin_g, kh, kw] = match *w {
            [a, b, c, d] => [a, b, c, d],
            _ => {
                return Err(Error::shape(format!(
                    "conv2d: weight must be [Cout, Cin/groups, kh, kw], got {w:?}"
                )))
            }
        };
        if p.groups == 0 || p.stride == 0 || p.dilation == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv2d: stride, dilation and groups must be positive, got {p:?}"
            )));
        }
        if cin % p.groups != 0 || cout % p.groups != 0 {
            return Err(Error::shape(format!(
                "conv2d: {cin} input / {cout} output channels not divisible by {} groups",
                p.groups
            )));
        }
        if cin / p.groups != cin_g {
            return Err(Error::shape(format!(
                "conv2d: weight expects {cin_g} channels per group, input provides {} ({cin} / {} groups)",
                cin / p.groups,
                p.groups
            )));
        }
        let oh = p.output_extent(h, kh);
        let ow = p.output_extent(wd, kw);
        let (oh, ow) = match (oh, ow) {
            (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
            _ => {
                return Err(Error::shape(format!(
                    "conv2d: {kh}x{kw} kernel with {p:?} yields an empty output for {h}x{wd} input"
                )))
            }
        };
        Ok(Geometry {
            n,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            oh,
            ow,
            cin_g,
            cout_g: cout / p.groups,
            p,
        })
    }

    fn pointwise(&self) -> bool {
        self.kh == 1
            && self.kw == 1
            && self.p.stride == 1
            && self.p.padding == 0
            && self.p.groups == 1
    }

    fn depthwise(&self) -> bool {
        self.p.groups == self.cin && self.cin_g == 1
    }

    fn k(&self) -> usize {
        self.cin_g * self.kh * self.kw
    }

    fn in_len(&self) -> usize {
        self.cin * self.h * self.w
    }

    fn out_len(&self) -> usize {
        self.cout * self.oh * self.ow
    }
}

/// Output positions `o` in `0..out_len` for which `o·stride + offset` lands in `0..in_len`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, stride: usize, offset: isize) -> (usize, usize) {
    let lo = if offset >= 0 {
        0
    } else {
        ((-offset) as usize).div_ceil(stride)
    };
    let lim = in_len as isize - offset;
    let hi = if lim <= 0 {
        0
    } else {
        (lim as usize).div_ceil(stride)
    };
    let lo = lo.min(out_len);
    (lo, hi.min(out_len).max(lo))
}

/// Unfolds one group of one sample into a `[cin_g·kh·kw, oh·ow]` column matrix.
fn im2col<T: Scalar>(g: &Geometry, x: &[T], cols: &mut [T]) {
    let ohw = g.oh * g.ow;
    let Conv2dParams {
        stride,
        padding,
        dilation,
        ..
    } = g.p;
    for ci in 0..g.cin_g {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ohw..(row + 1) * ohw];
                let col_off = (kj * dilation) as isize - padding as isize;
                let (lo, hi) = valid_range(g.ow, g.w, stride, col_off);
                for oy in 0..g.oh {
                    let out = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    let iy = (oy * stride + ki * dilation) as isize - padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out[..lo].fill(T::zero());
                    out[hi..].fill(T::zero());
                    for (ox, o) in out.iter_mut().enumerate().take(hi).skip(lo) {
                        *o = src[((ox * stride) as isize + col_off) as usize];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `dx`.
fn col2im<T: Scalar>(g: &Geometry, cols: &[T], dx: &mut [T]) {
    let ohw = g.oh * g.ow;
    let Conv2dParams {
        stride,
        padding,
        dilation,
        ..
    } = g.p;
    for ci in 0..g.cin_g {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ohw..(row + 1) * ohw];
                let col_off = (kj * dilation) as isize - padding as isize;
                let (lo, hi) = valid_range(g.ow, g.w, stride, col_off);
                for oy in 0..g.oh {
                    let iy = (oy * stride + ki * dilation) as isize - padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let row_src = &src[oy * g.ow..(oy + 1) * g.ow];
                    for ox in lo..hi {
                        let ix = (ox * stride) as isize + col_off;
                        dst[ix as usize] = dst[ix as usize] + row_src[ox];
                    }
                }
            }
        }
    }
}

/// Depthwise forward for one sample: output channel `oc` reads input channel `oc / mult`.
fn depthwise_forward<T: Scalar>(g: &Geometry, x: &[T], w: &[T], y: &mut [T]) {
    let mult = g.cout / g.cin;
    let Conv2dParams {
        stride,
        padding,
        dilation,
        ..
    } = g.p;
    let (ihw, ohw, kk) = (g.h * g.w, g.oh * g.ow, g.kh * g.kw);
    for oc in 0..g.cout {
        let plane = &x[(oc / mult) * ihw..(oc / mult + 1) * ihw];
        let out = &mut y[oc * ohw..(oc + 1) * ohw];
        let kernel = &w[oc * kk..(oc + 1) * kk];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let wv = kernel[ki * g.kw + kj];
                let col_off = (kj * dilation) as isize - padding as isize;
                let (lo, hi) = valid_range(g.ow, g.w, stride, col_off);
                if lo >= hi {
                    continue;
                }
                for oy in 0..g.oh {
                    let iy = (oy * stride + ki * dilation) as isize - padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let dst = &mut out[oy * g.ow..(oy + 1) * g.ow];
                    if stride == 1 {
                        let s0 = (lo as isize + col_off) as usize;
                        for (d, &s) in dst[lo..hi].iter_mut().zip(&src[s0..s0 + hi - lo]) {
                            *d = *d + wv * s;
                        }
                    } else {
                        for ox in lo..hi {
                            let ix = ((ox * stride) as isize + col_off) as usize;
                            dst[ox] = dst[ox] + wv * src[ix];
                        }
                    }
                }
            }
        }
    }
}

/// Dot product with eight independent partial sums (fixed order, so results
/// are reproducible) to let the compiler vectorize.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] = lanes[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail = tail + x * y;
    }
    lanes.iter().fold(T::zero(), |s, &v| s + v) + tail
}

/// Depthwise backward for one sample; accumulates into `dx` / `dw` when given.
fn depthwise_backward<T: Scalar>(
    g: &Geometry,
    x: &[T],
    w: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let mult = g.cout / g.cin;
    let Conv2dParams {
        stride,
        padding,
        dilation,
        ..
    } = g.p;
    let (ihw, ohw, kk) = (g.h * g.w, g.oh * g.ow, g.kh * g.kw);
    for oc in 0..g.cout {
        let ic = oc / mult;
        let grad = &dy[oc * ohw..(oc + 1) * ohw];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let tap = oc * kk + ki * g.kw + kj;
                let wv = w[tap];
                let col_off = (kj * dilation) as isize - padding as isize;
                let (lo, hi) = valid_range(g.ow, g.w, stride, col_off);
                if lo >= hi {
                    continue;
                }
                let mut acc = T::zero();
                for oy in 0..g.oh {
                    let iy = (oy * stride + ki * dilation) as isize - padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let row = ic * ihw + iy as usize * g.w;
                    let gy = &grad[oy * g.ow..(oy + 1) * g.ow];
                    if stride == 1 {
                        let s0 = (lo as isize + col_off) as usize;
                        let gy = &gy[lo..hi];
                        if let Some(dx) = dx.as_deref_mut() {
                            let dst = &mut dx[row + s0..row + s0 + gy.len()];
                            for (d, &v) in dst.iter_mut().zip(gy) {
                                *d = *d + wv * v;
                            }
                        }
                        if dw.is_some() {
                            acc = acc + dot(gy, &x[row + s0..row + s0 + gy.len()]);
                        }
                        continue;
                    }
                    if let Some(dx) = dx.as_deref_mut() {
                        let dst = &mut dx[row..row + g.w];
                        for ox in lo..hi {
                            let ix = ((ox * stride) as isize + col_off) as usize;
                            dst[ix] = dst[ix] + wv * gy[ox];
                        }
                    }
                    if dw.is_some() {
                        let src = &x[row..row + g.w];
                        for ox in lo..hi {
                            let ix = ((ox * stride) as isize + col_off) as usize;
                            acc = acc + gy[ox] * src[ix];
                        }
                    }
                }
                if let Some(dw) = dw.as_deref_mut() {
                    dw[tap] = dw[tap] + acc;
                }
            }
        }
    }
}

/// 2-D cross-correlation (no kernel flip) of an NCHW batch.
///
/// Regular, grouped, depthwise (`groups == Cin`), pointwise (1×1) and dilated
/// convolutions all go through here; the kernel is picked from the geometry.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    p: Conv2dParams,
) -> Result<Tensor<T>> {
    let g = Geometry::new(x.shape(), w.shape(), p)?;
    if let Some(b) = b {
        if b.shape() != [g.cout] {
            return Err(Error::shape(format!(
                "conv2d: bias must be [{}], got {:?}",
                g.cout,
                b.shape()
            )));
        }
    }
    let (xd, wd) = (x.data(), w.data());
    let mut y = vec![T::zero(); g.n * g.out_len()];
    let ohw = g.oh * g.ow;
    parallel::for_each_chunk(&mut y, g.out_len(), |n, out| {
        let xs = &xd[n * g.in_len()..(n + 1) * g.in_len()];
        if g.pointwise() {
            T::gemm(
                g.cout,
                g.cin,
                ohw,
                T::one(),
                wd,
                g.cin as isize,
                1,
                xs,
                ohw as isize,
                1,
                T::zero(),
                out,
                ohw as isize,
                1,
            );
        } else if g.depthwise() {
            depthwise_forward(&g, xs, wd, out);
        } else {
            let k = g.k();
            let mut cols = vec![T::zero(); k * ohw];
            for grp in 0..p.groups {
                let xg = &xs[grp * g.cin_g * g.h * g.w..(grp + 1) * g.cin_g * g.h * g.w];
                im2col(&g, xg, &mut cols);
                let wg = &wd[grp * g.cout_g * k..(grp + 1) * g.cout_g * k];
                let yg = &mut out[grp * g.cout_g * ohw..(grp + 1) * g.cout_g * ohw];
                T::gemm(
                    g.cout_g,
                    k,
                    ohw,
                    T::one(),
                    wg,
                    k as isize,
                    1,
                    &cols,
                    ohw as isize,
                    1,
                    T::zero(),
                    yg,
                    ohw as isize,
                    1,
                );
            }
        }
        if let Some(b) = b {
            for (c, &bv) in b.data().iter().enumerate() {
                for v in &mut out[c * ohw..(c + 1) * ohw] {
                    *v = *v + bv;
                }
            }
        }
    });
    Ok(Tensor::from_parts(vec![g.n, g.cout, g.oh, g.ow], y))
}

/// Gradients of [`conv2d`] with respect to the input, weight and bias.
pub struct Conv2dGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Option<Tensor<T>>,
    pub db: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    p: Conv2dParams,
    need: (bool, bool, bool),
) -> Result<Conv2dGrads<T>> {
    let g = Geometry::new(x.shape(), w.shape(), p)?;
    if dy.shape() != [g.n, g.cout, g.oh, g.ow] {
        return Err(Error::shape(format!(
            "conv2d backward: upstream gradient {:?} does not match output [{}, {}, {}, {}]",
            dy.shape(),
            g.n,
            g.cout,
            g.oh,
            g.ow
        )));
    }
    let (need_dx, need_dw, need_db) = need;
    let (xd, wd, dyd) = (x.data(), w.data(), dy.data());
    let ohw = g.oh * g.ow;
    let k = g.k();

    let per_sample = parallel::map_indexed(g.n, |n| {
        let xs = &xd[n * g.in_len()..(n + 1) * g.in_len()];
        let gy = &dyd[n * g.out_len()..(n + 1) * g.out_len()];
        let mut dx = if need_dx {
            vec![T::zero(); g.in_len()]
        } else {
            Vec::new()
        };
        let mut dw = if need_dw {
            vec![T::zero(); wd.len()]
        } else {
            Vec::new()
        };
        if g.pointwise() {
            if need_dw {
                // dW = dY · Xᵀ
                T::gemm(
                    g.cout,
                    ohw,
                    g.cin,
                    T::one(),
                    gy,
                    ohw as isize,
                    1,
                    xs,
                    1,
                    ohw as isize,
                    T::zero(),
                    &mut dw,
                    g.cin as isize,
                    1,
                );
            }
            if need_dx {
                // dX = Wᵀ · dY
                T::gemm(
                    g.cin,
                    g.cout,
                    ohw,
                    T::one(),
                    wd,
                    1,
                    g.cin as isize,
                    gy,
                    ohw as isize,
                    1,
                    T::zero(),
                    &mut dx,
                    ohw as isize,
                    1,
                );
            }
        } else if g.depthwise() {
            depthwise_backward(
                &g,
                xs,
                wd,
                gy,
                need_dx.then_some(&mut dx[..]),
                need_dw.then_some(&mut dw[..]),
            );
        } else if need_dx || need_dw {
            let mut cols = vec![T::zero(); k * ohw];
            for grp in 0..p.groups {
                let xoff = grp * g.cin_g * g.h * g.w;
                let wg_range = grp * g.cout_g * k..(grp + 1) * g.cout_g * k;
                let gyg = &gy[grp * g.cout_g * ohw..(grp + 1) * g.cout_g * ohw];
                if need_dw {
                    im2col(&g, &xs[xoff..xoff + g.cin_g * g.h * g.w], &mut cols);
                    T::gemm(
                        g.cout_g,
                        ohw,
                        k,
                        T::one(),
                        gyg,
                        ohw as isize,
                        1,
                        &cols,
                        1,
                        ohw as isize,
                        T::zero(),
                        &mut dw[wg_range.clone()],
                        k as isize,
                        1,
                    );
                }
                if need_dx {
                    T::gemm(
                        k,
                        g.cout_g,
                        ohw,
                        T::one(),
                        &wd[wg_range],
                        1,
                        k as isize,
                        gyg,
                        ohw as isize,
                        1,
                        T::zero(),
                        &mut cols,
                        ohw as isize,
                        1,
                    );
                    col2im(&g, &cols, &mut dx[xoff..xoff + g.cin_g * g.h * g.w]);
                }
            }
        }
        let db: Vec<T> = if need_db {
            (0..g.cout)
                .map(|c| gy[c * ohw..(c + 1) * ohw].iter().copied().sum())
                .collect()
        } else {
            Vec::new()
        };
        (dx, dw, db)
    });

    let mut dx_all = need_dx.then(|| Vec::with_capacity(g.n * g.in_len()));
    let mut dw_all = need_dw.then(|| vec![T::zero(); wd.len()]);
    let mut db_all = need_db.then(|| vec![T::zero(); g.cout]);
    for (dx, dw, db) in per_sample {
        if let Some(all) = dx_all.as_mut() {
            all.extend_from_slice(&dx);
        }
        if let Some(all) = dw_all.as_mut() {
            for (a, v) in all.iter_mut().zip(&dw) {
                *a = *a + *v;
            }
        }
        if let Some(all) = db_all.as_mut() {
            for (a, v) in all.iter_mut().zip(&db) {
                *a = *a + *v;
            }
        }
    }
    Ok(Conv2dGrads {
        dx: dx_all.map(|d| Tensor::from_parts(x.shape().to_vec(), d)),
        dw: dw_all.map(|d| Tensor::from_parts(w.shape().to_vec(), d)),
        db: db_all.map(|d| Tensor::from_parts(vec![g.cout], d)),
    })
}
