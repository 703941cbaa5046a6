//! Raw numeric kernels shared by forward and backward passes.
//!
//! The GEMM entry points wrap `matrixmultiply::dgemm`; transposed variants
//! use stride tricks instead of materializing the transpose.

/// C[m,n] = A[m,k] * B[k,n], row-major.
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    if m == 0 || k == 0 || n == 0 {
        return c;
    }
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), k as isize, 1, b.as_ptr(), n as isize, 1, 0.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
    c
}

/// C[m,n] = A[m,k] * B^T where B is [n,k] row-major.
pub fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut c = vec![0.0; m * n];
    if m == 0 || k == 0 || n == 0 {
        return c;
    }
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), k as isize, 1, b.as_ptr(), 1, k as isize, 0.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
    c
}

/// C[m,n] = A^T * B where A is [k,m] and B is [k,n], row-major.
pub fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    if m == 0 || k == 0 || n == 0 {
        return c;
    }
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), 1, m as isize, b.as_ptr(), n as isize, 1, 0.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
    c
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Per-output-index source pair and interpolation parameter for a 1-D
/// align-corners resample from `src` points to `dst` points.
///
/// `dst == 1` samples the geometric center of the source axis.
pub fn axis_weights(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    assert!(src >= 1 && dst >= 1);
    (0..dst)
        .map(|i| {
            let y = if dst == 1 {
                (src - 1) as f64 / 2.0
            } else {
                i as f64 * (src - 1) as f64 / (dst - 1) as f64
            };
            let i0 = (y.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, y - i0 as f64)
        })
        .collect()
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Bilinear align-corners resample of a square `[side, side, d]` row-major
/// map to `[target, target, d]`. Exact on constant maps: the lerp form
/// returns `a` bit-for-bit when `a == b`.
pub fn interpolate(x: &[f64], side: usize, d: usize, target: usize) -> Vec<f64> {
    let w = axis_weights(side, target);
    let mut out = vec![0.0; target * target * d];
    for (oy, &(y0, y1, ty)) in w.iter().enumerate() {
        for (ox, &(x0, x1, tx)) in w.iter().enumerate() {
            let p00 = (y0 * side + x0) * d;
            let p01 = (y0 * side + x1) * d;
            let p10 = (y1 * side + x0) * d;
            let p11 = (y1 * side + x1) * d;
            let o = (oy * target + ox) * d;
            for c in 0..d {
                let top = lerp(x[p00 + c], x[p01 + c], tx);
                let bot = lerp(x[p10 + c], x[p11 + c], tx);
                out[o + c] = lerp(top, bot, ty);
            }
        }
    }
    out
}

/// Adjoint of [`interpolate`]: scatters an upstream `[target, target, d]`
/// gradient back onto the `[side, side, d]` source.
pub fn interpolate_adjoint(g: &[f64], side: usize, d: usize, target: usize) -> Vec<f64> {
    let w = axis_weights(side, target);
    let mut out = vec![0.0; side * side * d];
    for (oy, &(y0, y1, ty)) in w.iter().enumerate() {
        for (ox, &(x0, x1, tx)) in w.iter().enumerate() {
            let o = (oy * target + ox) * d;
            let w00 = (1.0 - ty) * (1.0 - tx);
            let w01 = (1.0 - ty) * tx;
            let w10 = ty * (1.0 - tx);
            let w11 = ty * tx;
            let p00 = (y0 * side + x0) * d;
            let p01 = (y0 * side + x1) * d;
            let p10 = (y1 * side + x0) * d;
            let p11 = (y1 * side + x1) * d;
            for c in 0..d {
                let gv = g[o + c];
                out[p00 + c] += w00 * gv;
                out[p01 + c] += w01 * gv;
                out[p10 + c] += w10 * gv;
                out[p11 + c] += w11 * gv;
            }
        }
    }
    out
}

/// Row-wise softmax of an `[n, d]` matrix.
pub fn softmax_rows(x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * d];
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let o = &mut out[r * d..(r + 1) * d];
        let mut z = 0.0;
        for j in 0..d {
            let e = (row[j] - m).exp();
            o[j] = e;
            z += e;
        }
        for v in o.iter_mut() {
            *v /= z;
        }
    }
    out
}

/// Mean negative log-softmax probability of `targets` under `logits [n, v]`.
/// Returns the loss and the row-wise softmax (reused by the backward pass).
pub fn cross_entropy(logits: &[f64], n: usize, v: usize, targets: &[usize]) -> (f64, Vec<f64>) {
    debug_assert_eq!(targets.len(), n);
    let probs = softmax_rows(logits, n, v);
    let mut loss = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        loss -= probs[r * v + t].max(f64::MIN_POSITIVE).ln();
    }
    (loss / n as f64, probs)
}

/// Row-wise layer normalization without affine parameters.
pub fn layer_norm(x: &[f64], n: usize, d: usize, eps: f64) -> Vec<f64> {
    let mut out = vec![0.0; n * d];
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for j in 0..d {
            out[r * d + j] = (row[j] - mean) * inv;
        }
    }
    out
}

/// Backward of [`layer_norm`] given the input and upstream gradient.
pub fn layer_norm_backward(x: &[f64], g: &[f64], n: usize, d: usize, eps: f64) -> Vec<f64> {
    let mut out = vec![0.0; n * d];
    let dn = d as f64;
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let grow = &g[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / dn;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dn;
        let inv = 1.0 / (var + eps).sqrt();
        let mut g_mean = 0.0;
        let mut gx_mean = 0.0;
        for j in 0..d {
            let xh = (row[j] - mean) * inv;
            g_mean += grow[j];
            gx_mean += grow[j] * xh;
        }
        g_mean /= dn;
        gx_mean /= dn;
        for j in 0..d {
            let xh = (row[j] - mean) * inv;
            out[r * d + j] = inv * (grow[j] - g_mean - xh * gx_mean);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_small() {
        // [[1,2],[3,4]] * [[5,6],[7,8]] = [[19,22],[43,50]]
        let c = gemm(2, 2, 2, &[1., 2., 3., 4.], &[5., 6., 7., 8.]);
        assert_eq!(c, vec![19., 22., 43., 50.]);
    }

    #[test]
    fn gemm_transposed_variants_agree() {
        let a = [1., -2., 0.5, 3., 4., -1.];
        let b = [2., 0., 1., -1., 0.5, 2.];
        // nt: A [2x3] * (B as [2x3])^T
        let nt = gemm_nt(2, 3, 2, &a, &b);
        let bt = transpose(&b, 2, 3);
        let direct = gemm(2, 3, 2, &a, &bt);
        for (x, y) in nt.iter().zip(direct.iter()) {
            assert!((x - y).abs() < 1e-14);
        }
        // tn: (A as [2x3])^T * B [2x3]
        let tn = gemm_tn(3, 2, 3, &a, &b);
        let at = transpose(&a, 2, 3);
        let direct = gemm(3, 2, 3, &at, &b);
        for (x, y) in tn.iter().zip(direct.iter()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = [1.0, 2.0, 3.0, -5.0, 0.0, 5.0];
        let s = softmax_rows(&x, 2, 3);
        for r in 0..2 {
            let sum: f64 = s[r * 3..(r + 1) * 3].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_uniform_is_log_v() {
        let (loss, _) = cross_entropy(&[0.0; 8], 1, 8, &[3]);
        assert!((loss - (8f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_saturated_is_zero() {
        let mut logits = vec![0.0; 8];
        logits[5] = 1000.0;
        let (loss, _) = cross_entropy(&logits, 1, 8, &[5]);
        assert!(loss.abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_matches_softmax_oracle() {
        // logits [1,2,3], target 2 -> -ln(e^3 / (e^1+e^2+e^3))
        let (loss, _) = cross_entropy(&[1.0, 2.0, 3.0], 1, 3, &[2]);
        let z = 1f64.exp() + 2f64.exp() + 3f64.exp();
        let want = -(3f64.exp() / z).ln();
        assert!((loss - want).abs() < 1e-12);
    }
}
