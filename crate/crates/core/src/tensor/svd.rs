//! Thin SVD of small dense matrices by one-sided Jacobi rotations.

use super::Tensor;
use crate::error::{Error, Result};

/// Thin factorization `m = u * diag(sigma) * vt` of a `[q, d]` matrix.
///
/// `sigma` is sorted descending and non-negative; rows of `vt` are mutually
/// orthonormal. Signs are fixed by forcing the largest-magnitude entry of
/// each `vt` row positive, so factorizations are reproducible.
pub struct SvdFactorization {
    /// Left singular vectors, `[q, r_full]` with `r_full = min(q, d)`.
    pub u: Tensor,
    /// Singular values, descending.
    pub sigma: Vec<f64>,
    /// Right singular vectors, transposed: `[r_full, d]`.
    pub vt: Tensor,
}

impl SvdFactorization {
    /// `u * diag(sigma) * vt`, for reconstruction checks.
    pub fn reconstruct(&self) -> Tensor {
        let q = self.u.shape()[0];
        let r = self.sigma.len();
        let d = self.vt.shape()[1];
        let mut scaled = self.u.data().to_vec();
        for row in 0..q {
            for j in 0..r {
                scaled[row * r + j] *= self.sigma[j];
            }
        }
        Tensor::from_vec(vec![q, d], super::kernels::gemm(q, r, d, &scaled, self.vt.data()))
    }
}

/// One-sided Jacobi SVD. Rotates column pairs of a working copy until all
/// pairwise inner products vanish; the accumulated rotations form `v`.
pub fn svd(m: &Tensor) -> Result<SvdFactorization> {
    let (q, d) = match m.shape() {
        [q, d] => (*q, *d),
        s => return Err(Error::Shape(format!("svd expects a matrix, got shape {s:?}"))),
    };
    if q == 0 || d == 0 {
        return Err(Error::Shape("svd requires q >= 1 and d >= 1".into()));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("svd input has non-finite entries".into()));
    }

    // Column-major working copy: a[j] is column j of m, length q.
    let mut a: Vec<Vec<f64>> = (0..d)
        .map(|j| (0..q).map(|i| m.data()[i * d + j]).collect())
        .collect();
    // v starts as identity; columns rotate together with a's columns.
    let mut v: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let mut col = vec![0.0; d];
            col[j] = 1.0;
            col
        })
        .collect();

    let scale = m.data().iter().map(|x| x * x).sum::<f64>();
    let tol = 1e-28 * scale.max(f64::MIN_POSITIVE);
    const MAX_SWEEPS: usize = 64;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for j in 0..d {
            for k in (j + 1)..d {
                let (mut ajj, mut akk, mut ajk) = (0.0, 0.0, 0.0);
                for i in 0..q {
                    ajj += a[j][i] * a[j][i];
                    akk += a[k][i] * a[k][i];
                    ajk += a[j][i] * a[k][i];
                }
                if ajk * ajk <= tol * 1e-4 || ajk * ajk <= 1e-30 * ajj * akk {
                    continue;
                }
                rotated = true;
                let tau = (akk - ajj) / (2.0 * ajk);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..q {
                    let (x, y) = (a[j][i], a[k][i]);
                    a[j][i] = c * x - s * y;
                    a[k][i] = s * x + c * y;
                }
                for i in 0..d {
                    let (x, y) = (v[j][i], v[k][i]);
                    v[j][i] = c * x - s * y;
                    v[k][i] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    // Singular values are the column norms; order descending.
    let mut order: Vec<usize> = (0..d).collect();
    let norms: Vec<f64> = a.iter().map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap());

    let r_full = q.min(d);
    let mut sigma = Vec::with_capacity(r_full);
    let mut u = vec![0.0; q * r_full];
    let mut vt = vec![0.0; r_full * d];
    for (slot, &col) in order.iter().take(r_full).enumerate() {
        let s = norms[col];
        sigma.push(s);
        // Sign convention: largest-magnitude entry of the right vector positive.
        let mut flip = 1.0;
        let mut best = 0.0;
        for i in 0..d {
            if v[col][i].abs() > best {
                best = v[col][i].abs();
                flip = if v[col][i] < 0.0 { -1.0 } else { 1.0 };
            }
        }
        for i in 0..d {
            vt[slot * d + i] = flip * v[col][i];
        }
        if s > f64::MIN_POSITIVE {
            for i in 0..q {
                u[i * r_full + slot] = flip * a[col][i] / s;
            }
        }
    }

    Ok(SvdFactorization {
        u: Tensor::from_vec(vec![q, r_full], u),
        sigma,
        vt: Tensor::from_vec(vec![r_full, d], vt),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn check_invariants(m: &Tensor) {
        let f = svd(m).unwrap();
        // sigma descending, non-negative
        for w in f.sigma.windows(2) {
            assert!(w[0] >= w[1] - 1e-12);
        }
        assert!(f.sigma.iter().all(|&s| s >= 0.0));
        // vt rows orthonormal
        let r = f.sigma.len();
        let d = f.vt.shape()[1];
        for i in 0..r {
            for j in i..r {
                let dot: f64 = (0..d)
                    .map(|c| f.vt.data()[i * d + c] * f.vt.data()[j * d + c])
                    .sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-8, "vt gram ({i},{j}) = {dot}");
            }
        }
        // reconstruction
        let rec = f.reconstruct();
        let err = rec.sub(m).frob_norm() / m.frob_norm().max(1e-300);
        assert!(err < 1e-6, "reconstruction error {err}");
    }

    #[test]
    fn identity_has_unit_sigma() {
        let m = Tensor::from_vec(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let f = svd(&m).unwrap();
        for s in &f.sigma {
            assert!((s - 1.0).abs() < 1e-12);
        }
        check_invariants(&m);
    }

    #[test]
    fn rank_one_sigma_by_hand() {
        // [[1,2],[2,4]]: M M^T has eigenvalues (25, 0), so sigma = (5, 0).
        let m = Tensor::from_vec(vec![2, 2], vec![1., 2., 2., 4.]);
        let f = svd(&m).unwrap();
        assert!((f.sigma[0] - 5.0).abs() < 1e-10);
        assert!(f.sigma[1].abs() < 1e-10);
        check_invariants(&m);
    }

    #[test]
    fn random_rectangular_invariants() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let m = Tensor::randn(&[8, 16], 1.0, &mut rng);
        check_invariants(&m);
        let m = Tensor::randn(&[16, 8], 1.0, &mut rng);
        check_invariants(&m);
        let m = Tensor::randn(&[1, 12], 1.0, &mut rng);
        check_invariants(&m);
    }

    #[test]
    fn rejects_non_finite() {
        let m = Tensor::from_vec(vec![1, 2], vec![1.0, f64::NAN]);
        assert!(svd(&m).is_err());
    }

    #[test]
    fn sign_convention_is_deterministic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let m = Tensor::randn(&[5, 4], 1.0, &mut rng);
        let a = svd(&m).unwrap();
        let b = svd(&m.scale(1.0)).unwrap();
        assert!(a.vt.bit_eq(&b.vt));
        for r in 0..a.sigma.len() {
            let d = a.vt.shape()[1];
            let row = &a.vt.data()[r * d..(r + 1) * d];
            let maxidx = row
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.abs().partial_cmp(&y.1.abs()).unwrap())
                .unwrap()
                .0;
            assert!(row[maxidx] >= 0.0);
        }
    }

    #[test]
    fn projector_is_idempotent() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let m = Tensor::randn(&[10, 6], 1.0, &mut rng);
        let f = svd(&m).unwrap();
        let d = 6;
        for r in [1usize, 3, 6] {
            // P = vt_r^T vt_r
            let vtr = &f.vt.data()[..r * d];
            let p = super::super::kernels::gemm_tn(d, r, d, vtr, vtr);
            // symmetric
            for i in 0..d {
                for j in 0..d {
                    assert!((p[i * d + j] - p[j * d + i]).abs() < 1e-8);
                }
            }
            // idempotent
            let pp = super::super::kernels::gemm(d, d, d, &p, &p);
            for i in 0..d * d {
                assert!((pp[i] - p[i]).abs() < 1e-8);
            }
        }
    }
}
