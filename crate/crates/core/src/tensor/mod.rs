//! Dense f64 tensors with reverse-mode gradients, bilinear interpolation
//! and a small-matrix SVD.
//!
//! [`Tensor`] is an immutable value: cheap to clone, safe to share across
//! threads. Gradient recording happens on a [`Tape`] confined to one thread;
//! see the `tape` module.

pub(crate) mod kernels;
mod svd;
mod tape;

pub use svd::{svd, SvdFactorization};
pub use tape::{Gradients, Tape, Var};

use std::sync::Arc;

use crate::error::{Error, Result};

/// An immutable dense tensor of f64 values in row-major order.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<[f64]>,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor { shape, data: data.into() }
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::from_vec(shape.to_vec(), vec![0.0; shape.iter().product()])
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor::from_vec(shape.to_vec(), vec![value; shape.iter().product()])
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::from_vec(vec![], vec![value])
    }

    /// Samples i.i.d. normal entries with the given standard deviation.
    pub fn randn(shape: &[usize], std: f64, rng: &mut impl rand::Rng) -> Tensor {
        use rand::distributions::Distribution;
        let normal = rand_distr_normal();
        let data = (0..shape.iter().product())
            .map(|_| normal.sample(rng) * std)
            .collect();
        Tensor::from_vec(shape.to_vec(), data)
    }

    /// Xavier/Glorot uniform init over [-a, a] with a = sqrt(6 / (fan_in + fan_out)).
    pub fn xavier_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl rand::Rng) -> Tensor {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..shape.iter().product())
            .map(|_| rng.gen_range(-a..=a))
            .collect();
        Tensor::from_vec(shape.to_vec(), data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Reinterprets the buffer under a new shape of equal length.
    pub fn reshape(&self, shape: Vec<usize>) -> Tensor {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        Tensor { shape, data: Arc::clone(&self.data) }
    }

    /// Extracts the single element of a scalar tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape, other.shape);
        let data = self.data.iter().zip(other.data.iter()).map(|(a, b)| a + b).collect();
        Tensor::from_vec(self.shape.clone(), data)
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape, other.shape);
        let data = self.data.iter().zip(other.data.iter()).map(|(a, b)| a - b).collect();
        Tensor::from_vec(self.shape.clone(), data)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        Tensor::from_vec(self.shape.clone(), self.data.iter().map(|v| v * c).collect())
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn mse(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        let n = self.data.len().max(1) as f64;
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Exact bitwise equality of shape and contents.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Value-level bilinear resampling of a square `[h, w, d]` feature map to
    /// `[t, t, d]`, align-corners convention.
    pub fn interpolate_bilinear(&self, target_side: usize) -> Result<Tensor> {
        let (h, w, d) = self.expect_map3()?;
        if h != w {
            return Err(Error::Shape(format!("interpolate requires a square map, got {h}x{w}")));
        }
        if target_side == 0 {
            return Err(Error::Shape("interpolate target side must be >= 1".into()));
        }
        let out = kernels::interpolate(&self.data, h, d, target_side);
        Ok(Tensor::from_vec(vec![target_side, target_side, d], out))
    }

    pub(crate) fn expect_map3(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            [h, w, d] => Ok((*h, *w, *d)),
            s => Err(Error::Shape(format!("expected rank-3 map, got shape {s:?}"))),
        }
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 8 {
            write!(f, " {:?}", &self.data[..])
        } else {
            write!(f, " [{:.4}, {:.4}, ..]", self.data[0], self.data[1])
        }
    }
}

// Marsaglia polar method; avoids pulling in rand_distr for one distribution.
fn rand_distr_normal() -> StdNormal {
    StdNormal
}

struct StdNormal;

impl rand::distributions::Distribution<f64> for StdNormal {
    fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let u: f64 = rng.gen_range(-1.0..1.0);
            let v: f64 = rng.gen_range(-1.0..1.0);
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                return u * (-2.0 * s.ln() / s).sqrt();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reshape_shares_data() {
        let t = Tensor::from_vec(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]);
        let r = t.reshape(vec![3, 2]);
        assert_eq!(r.shape(), &[3, 2]);
        assert_eq!(r.data(), t.data());
    }

    #[test]
    #[should_panic]
    fn bad_shape_panics() {
        Tensor::from_vec(vec![2, 2], vec![1.0]);
    }

    #[test]
    fn interpolate_identity() {
        let t = Tensor::from_vec(vec![2, 2, 1], vec![0., 2., 4., 6.]);
        let out = t.interpolate_bilinear(2).unwrap();
        assert!(out.bit_eq(&t));
    }

    #[test]
    fn interpolate_constant_extension() {
        let t = Tensor::from_vec(vec![1, 1, 2], vec![3.5, -1.25]);
        let out = t.interpolate_bilinear(2).unwrap();
        assert_eq!(out.shape(), &[2, 2, 2]);
        for p in 0..4 {
            assert_eq!(out.data()[p * 2], 3.5);
            assert_eq!(out.data()[p * 2 + 1], -1.25);
        }
    }

    #[test]
    fn interpolate_rejects_non_square() {
        let t = Tensor::zeros(&[2, 3, 1]);
        assert!(t.interpolate_bilinear(4).is_err());
    }

    #[test]
    fn interpolate_matches_hand_bilinear() {
        // 2x2 map [[0,2],[4,6]], target 4. Under align-corners the source is the
        // plane v(y, x) = 4y + 2x over [0,1]^2, so out[i][j] = 4*(i/3) + 2*(j/3).
        let t = Tensor::from_vec(vec![2, 2, 1], vec![0., 2., 4., 6.]);
        let out = t.interpolate_bilinear(4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = 4.0 * (i as f64 / 3.0) + 2.0 * (j as f64 / 3.0);
                let got = out.data()[i * 4 + j];
                assert!((got - want).abs() < 1e-12, "({i},{j}): {got} vs {want}");
            }
        }
        // Aligned corners preserved exactly.
        assert_eq!(out.data()[0], 0.0);
        assert_eq!(out.data()[3], 2.0);
        assert_eq!(out.data()[12], 4.0);
        assert_eq!(out.data()[15], 6.0);
    }

    #[test]
    fn interpolate_constant_exact_any_side() {
        let t = Tensor::full(&[3, 3, 2], 0.731);
        for target in [1, 2, 5, 9, 16] {
            let out = t.interpolate_bilinear(target).unwrap();
            assert!(out.data().iter().all(|&v| v == 0.731), "target {target}");
        }
    }
}
