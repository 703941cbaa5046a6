//! Adam optimizer over named parameter slots.

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> AdamConfig {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam state for a fixed group of parameters. Slot `i` of every call must
/// refer to the same parameter.
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, sizes: &[usize]) -> Adam {
        Adam {
            cfg,
            t: 0,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one update. `params[i]` is replaced with the stepped tensor;
    /// `grads[i]` must match its shape.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(p.numel(), g.numel(), "adam slot shape mismatch");
            let mut data = p.data().to_vec();
            for i in 0..data.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] -= self.cfg.lr * mhat / (vhat.sqrt() + self.cfg.eps);
            }
            **p = Tensor::from_vec(p.shape().to_vec(), data);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_descends_a_quadratic() {
        // minimize f(x) = (x - 3)^2
        let mut x = Tensor::scalar(0.0);
        let mut opt = Adam::new(AdamConfig::with_lr(0.1), &[1]);
        for _ in 0..500 {
            let g = Tensor::scalar(2.0 * (x.item() - 3.0));
            opt.step(&mut [&mut x], &[g]);
        }
        assert!((x.item() - 3.0).abs() < 1e-3, "x = {}", x.item());
    }
}
