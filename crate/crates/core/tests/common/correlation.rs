use corrnet_core::Tensor;

/// Explicit-sum reference for the two aggregated streams on `C×P` matrices.
pub fn correlation_oracle(
    f4: &[Vec<f64>],
    f5: &[Vec<f64>],
    w: &[Vec<f64>],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (c, p) = (f4.len(), f4[0].len());
    let mut r = vec![vec![0.0; p]; p];
    for (i, row) in r.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            for a in 0..c {
                for b in 0..c {
                    *v += f5[a][i] * w[a][b] * f4[b][j];
                }
            }
        }
    }
    // a4[i][j] normalizes column j of r; a5[i][j] normalizes column j of rᵀ
    let col_softmax = |m: &dyn Fn(usize, usize) -> f64| {
        let mut out = vec![vec![0.0; p]; p];
        for j in 0..p {
            let z: f64 = (0..p).map(|i| m(i, j).exp()).sum();
            for (i, row) in out.iter_mut().enumerate() {
                row[j] = m(i, j).exp() / z;
            }
        }
        out
    };
    let a4 = col_softmax(&|i, j| r[i][j]);
    let a5 = col_softmax(&|i, j| r[j][i]);
    let agg = |f: &[Vec<f64>], a: &[Vec<f64>]| {
        (0..c)
            .map(|ch| {
                (0..p)
                    .map(|j| (0..p).map(|i| f[ch][i] * a[i][j]).sum())
                    .collect()
            })
            .collect::<Vec<Vec<f64>>>()
    };
    (agg(f4, &a4), agg(f5, &a5))
}

pub fn as_rows(t: &Tensor<f64>, c: usize) -> Vec<Vec<f64>> {
    t.data().chunks(t.numel() / c).map(|r| r.to_vec()).collect()
}
