//! Minimal 2-D convolution layers built from im2col gathers and GEMM.
//!
//! Each layer precomputes its im2col index table for a fixed input side, so
//! the per-call cost is one gather, one matmul and a bias add — all recorded
//! on the tape, which makes the backward pass automatic.

use std::sync::Arc;

use rand::Rng;

use crate::tensor::{Tensor, Var};

#[derive(Clone)]
pub struct Conv2d {
    pub weight: Tensor, // [k*k*cin, cout]
    pub bias: Tensor,   // [cout]
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_side: usize,
    pub out_side: usize,
    im2col: Arc<Vec<i64>>,
}

impl Conv2d {
    pub fn new(
        in_side: usize,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Conv2d {
        let out_side = (in_side + 2 * pad - kernel) / stride + 1;
        let fan_in = kernel * kernel * cin;
        let weight = Tensor::xavier_uniform(&[fan_in, cout], fan_in, cout, rng);
        let bias = Tensor::zeros(&[cout]);
        let im2col = Arc::new(build_im2col(in_side, cin, kernel, stride, pad, out_side));
        Conv2d { weight, bias, cin, cout, kernel, stride, pad, in_side, out_side, im2col }
    }

    /// Applies the convolution to a `[side, side, cin]` map var, returning
    /// `[out_side, out_side, cout]`.
    pub fn forward<'t>(&self, x: Var<'t>, weight: Var<'t>, bias: Var<'t>) -> Var<'t> {
        let s = self.out_side;
        let patches = x.gather_flat(&self.im2col, vec![s * s, self.kernel * self.kernel * self.cin]);
        patches
            .matmul(weight)
            .add_bias(bias)
            .reshape(vec![s, s, self.cout])
    }

    /// Rebuilds the index table after loading weights for a config whose
    /// input side differs from the constructor's.
    pub fn reindex(&mut self, in_side: usize) {
        self.in_side = in_side;
        self.out_side = (in_side + 2 * self.pad - self.kernel) / self.stride + 1;
        self.im2col =
            Arc::new(build_im2col(in_side, self.cin, self.kernel, self.stride, self.pad, self.out_side));
    }
}

fn build_im2col(
    in_side: usize,
    cin: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_side: usize,
) -> Vec<i64> {
    let mut idx = Vec::with_capacity(out_side * out_side * kernel * kernel * cin);
    for oy in 0..out_side {
        for ox in 0..out_side {
            for ky in 0..kernel {
                for kx in 0..kernel {
                    let iy = (oy * stride + ky) as i64 - pad as i64;
                    let ix = (ox * stride + kx) as i64 - pad as i64;
                    let inside = iy >= 0 && ix >= 0 && (iy as usize) < in_side && (ix as usize) < in_side;
                    for c in 0..cin {
                        idx.push(if inside {
                            ((iy as usize * in_side + ix as usize) * cin + c) as i64
                        } else {
                            -1
                        });
                    }
                }
            }
        }
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use rand::SeedableRng;

    #[test]
    fn conv_matches_direct_loop() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let conv = Conv2d::new(6, 2, 3, 3, 2, 1, &mut rng);
        let x = Tensor::randn(&[6, 6, 2], 1.0, &mut rng);
        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        let w = tape.constant(conv.weight.clone());
        let b = tape.constant(conv.bias.clone());
        let y = conv.forward(xv, w, b).value();
        assert_eq!(y.shape(), &[3, 3, 3]);
        // direct evaluation at an interior output position
        let (oy, ox, co) = (1usize, 1usize, 2usize);
        let mut want = conv.bias.data()[co];
        for ky in 0..3usize {
            for kx in 0..3usize {
                let iy = (oy * 2 + ky) as i64 - 1;
                let ix = (ox * 2 + kx) as i64 - 1;
                if iy < 0 || ix < 0 || iy >= 6 || ix >= 6 {
                    continue;
                }
                for c in 0..2usize {
                    let xval = x.data()[((iy as usize) * 6 + ix as usize) * 2 + c];
                    let wval = conv.weight.data()[((ky * 3 + kx) * 2 + c) * 3 + co];
                    want += xval * wval;
                }
            }
        }
        let got = y.data()[(oy * 3 + ox) * 3 + co];
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}
