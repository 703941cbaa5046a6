//! Reverse-mode gradient tape.
//!
//! A [`Tape`] records operations on [`Var`] handles inside a single thread.
//! Values are immutable [`Tensor`]s; `backward` walks the recorded nodes in
//! reverse and accumulates gradients for every node that requires them.
//! Nodes whose inputs are all constants skip gradient bookkeeping entirely,
//! so inference-only forwards pay no backward cost.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};

static TAPE_IDS: AtomicU64 = AtomicU64::new(1);

type BackFn = Box<dyn Fn(&Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    requires_grad: bool,
    parents: Vec<usize>,
    back: Option<BackFn>,
}

/// Single-threaded recording context for one forward/backward pass.
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape { id: TAPE_IDS.fetch_add(1, Ordering::Relaxed), nodes: RefCell::new(Vec::new()) }
    }

    /// Enters a tensor as a differentiable leaf.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, true, Vec::new(), None)
    }

    /// Enters a tensor that never receives gradients.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, false, Vec::new(), None)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, requires_grad: bool, parents: Vec<usize>, back: Option<BackFn>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, requires_grad, parents, back });
        Var { tape: self, idx: nodes.len() - 1 }
    }

    fn value_of(&self, idx: usize) -> Tensor {
        self.nodes.borrow()[idx].value.clone()
    }

    fn requires(&self, idx: usize) -> bool {
        self.nodes.borrow()[idx].requires_grad
    }

    /// Reverse-mode sweep from a scalar output. Gradients of every node that
    /// participates are available through the returned [`Gradients`].
    pub fn backward(&self, output: Var<'_>) -> Gradients {
        assert_eq!(output.tape.id, self.id, "backward on a var from a different tape");
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[output.idx].value.numel(), 1, "backward requires a scalar output");
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        let seed_shape = nodes[output.idx].value.shape().to_vec();
        grads[output.idx] = Some(Tensor::full(&seed_shape, 1.0));
        for i in (0..=output.idx).rev() {
            if grads[i].is_none() || !nodes[i].requires_grad {
                continue;
            }
            let Some(back) = &nodes[i].back else { continue };
            let g = grads[i].clone().unwrap();
            let contribs = back(&g);
            debug_assert_eq!(contribs.len(), nodes[i].parents.len());
            for (&p, c) in nodes[i].parents.iter().zip(contribs) {
                let Some(c) = c else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                grads[p] = Some(match grads[p].take() {
                    Some(acc) => acc.add(&c),
                    None => c,
                });
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Gradients { tape_id: self.id, grads, shapes }
    }
}

/// Gradients produced by one backward sweep.
pub struct Gradients {
    tape_id: u64,
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the swept output with respect to `v`.
    ///
    /// Returns `None` when `v` belongs to a different tape (no gradient
    /// exists at all). A var that is on the tape but detached from the
    /// output yields `Some` zeros — present, but zero.
    pub fn get(&self, v: Var<'_>) -> Option<Tensor> {
        if v.tape.id != self.tape_id || v.idx >= self.grads.len() {
            return None;
        }
        Some(match &self.grads[v.idx] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.idx]),
        })
    }
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.idx)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(self.idx)
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn unary(
        &self,
        value: Tensor,
        back: impl Fn(&Tensor) -> Tensor + 'static,
    ) -> Var<'t> {
        if self.requires_grad() {
            self.tape.push(
                value,
                true,
                vec![self.idx],
                Some(Box::new(move |g| vec![Some(back(g))])),
            )
        } else {
            self.tape.push(value, false, Vec::new(), None)
        }
    }

    fn binary(
        &self,
        other: Var<'t>,
        value: Tensor,
        back_a: impl Fn(&Tensor) -> Tensor + 'static,
        back_b: impl Fn(&Tensor) -> Tensor + 'static,
    ) -> Var<'t> {
        assert_eq!(self.tape.id, other.tape.id, "vars from different tapes");
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        if !ra && !rb {
            return self.tape.push(value, false, Vec::new(), None);
        }
        self.tape.push(
            value,
            true,
            vec![self.idx, other.idx],
            Some(Box::new(move |g| {
                vec![
                    if ra { Some(back_a(g)) } else { None },
                    if rb { Some(back_b(g)) } else { None },
                ]
            })),
        )
    }

    /// Re-enters the current value as a constant: gradients do not flow back.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.value())
    }

    pub fn add(&self, other: Var<'t>) -> Var<'t> {
        let v = self.value().add(&other.value());
        self.binary(other, v, |g| g.clone(), |g| g.clone())
    }

    pub fn sub(&self, other: Var<'t>) -> Var<'t> {
        let v = self.value().sub(&other.value());
        self.binary(other, v, |g| g.clone(), |g| g.scale(-1.0))
    }

    pub fn mul(&self, other: Var<'t>) -> Var<'t> {
        let a = self.value();
        let b = other.value();
        assert_eq!(a.shape(), b.shape());
        let v = Tensor::from_vec(
            a.shape().to_vec(),
            a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect(),
        );
        let (ac, bc) = (a.clone(), b.clone());
        self.binary(
            other,
            v,
            move |g| {
                Tensor::from_vec(
                    g.shape().to_vec(),
                    g.data().iter().zip(bc.data().iter()).map(|(g, b)| g * b).collect(),
                )
            },
            move |g| {
                Tensor::from_vec(
                    g.shape().to_vec(),
                    g.data().iter().zip(ac.data().iter()).map(|(g, a)| g * a).collect(),
                )
            },
        )
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        let v = self.value().scale(c);
        self.unary(v, move |g| g.scale(c))
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        let a = self.value();
        let v = Tensor::from_vec(a.shape().to_vec(), a.data().iter().map(|x| x + c).collect());
        self.unary(v, |g| g.clone())
    }

    /// Matrix product of `[m, k]` by `[k, n]`.
    pub fn matmul(&self, other: Var<'t>) -> Var<'t> {
        let a = self.value();
        let b = other.value();
        let (m, k) = mat_shape(&a);
        let (k2, n) = mat_shape(&b);
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let v = Tensor::from_vec(vec![m, n], kernels::gemm(m, k, n, a.data(), b.data()));
        let (ac, bc) = (a.clone(), b.clone());
        self.binary(
            other,
            v,
            move |g| Tensor::from_vec(vec![m, k], kernels::gemm_nt(m, n, k, g.data(), bc.data())),
            move |g| Tensor::from_vec(vec![k, n], kernels::gemm_tn(k, m, n, ac.data(), g.data())),
        )
    }

    /// 2-D transpose.
    pub fn t(&self) -> Var<'t> {
        let a = self.value();
        let (m, n) = mat_shape(&a);
        let v = Tensor::from_vec(vec![n, m], kernels::transpose(a.data(), m, n));
        self.unary(v, move |g| {
            Tensor::from_vec(vec![m, n], kernels::transpose(g.data(), n, m))
        })
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Var<'t> {
        let a = self.value();
        let old = a.shape().to_vec();
        let v = a.reshape(shape);
        self.unary(v, move |g| g.reshape(old.clone()))
    }

    /// Concatenates `[n_i, d]` matrices along rows.
    pub fn concat_rows(vars: &[Var<'t>]) -> Var<'t> {
        assert!(!vars.is_empty());
        let tape = vars[0].tape;
        let vals: Vec<Tensor> = vars.iter().map(|v| v.value()).collect();
        let d = mat_shape(&vals[0]).1;
        let mut data = Vec::new();
        let mut splits = Vec::with_capacity(vals.len());
        let mut total = 0;
        for v in &vals {
            let (r, dc) = mat_shape(v);
            assert_eq!(dc, d, "concat_rows column mismatch");
            splits.push((total, r));
            total += r;
            data.extend_from_slice(v.data());
        }
        let value = Tensor::from_vec(vec![total, d], data);
        let needs: Vec<bool> = vars.iter().map(|v| v.requires_grad()).collect();
        if !needs.iter().any(|&b| b) {
            return tape.push(value, false, Vec::new(), None);
        }
        let parents: Vec<usize> = vars.iter().map(|v| v.idx).collect();
        tape.push(
            value,
            true,
            parents,
            Some(Box::new(move |g| {
                splits
                    .iter()
                    .zip(needs.iter())
                    .map(|(&(start, rows), &need)| {
                        need.then(|| {
                            Tensor::from_vec(
                                vec![rows, d],
                                g.data()[start * d..(start + rows) * d].to_vec(),
                            )
                        })
                    })
                    .collect()
            })),
        )
    }

    /// Concatenates `[n, d_i]` matrices along columns.
    pub fn concat_cols(vars: &[Var<'t>]) -> Var<'t> {
        assert!(!vars.is_empty());
        let tape = vars[0].tape;
        let vals: Vec<Tensor> = vars.iter().map(|v| v.value()).collect();
        let n = mat_shape(&vals[0]).0;
        let widths: Vec<usize> = vals.iter().map(|v| mat_shape(v).1).collect();
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; n * total];
        let mut off = 0;
        for (v, &w) in vals.iter().zip(widths.iter()) {
            assert_eq!(mat_shape(v).0, n, "concat_cols row mismatch");
            for r in 0..n {
                data[r * total + off..r * total + off + w]
                    .copy_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let value = Tensor::from_vec(vec![n, total], data);
        let needs: Vec<bool> = vars.iter().map(|v| v.requires_grad()).collect();
        if !needs.iter().any(|&b| b) {
            return tape.push(value, false, Vec::new(), None);
        }
        let parents: Vec<usize> = vars.iter().map(|v| v.idx).collect();
        tape.push(
            value,
            true,
            parents,
            Some(Box::new(move |g| {
                let mut out = Vec::with_capacity(widths.len());
                let mut off = 0;
                for (&w, &need) in widths.iter().zip(needs.iter()) {
                    if need {
                        let mut part = vec![0.0; n * w];
                        for r in 0..n {
                            part[r * w..(r + 1) * w]
                                .copy_from_slice(&g.data()[r * total + off..r * total + off + w]);
                        }
                        out.push(Some(Tensor::from_vec(vec![n, w], part)));
                    } else {
                        out.push(None);
                    }
                    off += w;
                }
                out
            })),
        )
    }

    /// Rows `range` of an `[n, d]` matrix.
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> Var<'t> {
        let a = self.value();
        let (n, d) = mat_shape(&a);
        assert!(range.end <= n);
        let (start, rows) = (range.start, range.len());
        let v = Tensor::from_vec(vec![rows, d], a.data()[start * d..(start + rows) * d].to_vec());
        self.unary(v, move |g| {
            let mut out = vec![0.0; n * d];
            out[start * d..(start + rows) * d].copy_from_slice(g.data());
            Tensor::from_vec(vec![n, d], out)
        })
    }

    /// Columns `range` of an `[n, d]` matrix.
    pub fn slice_cols(&self, range: std::ops::Range<usize>) -> Var<'t> {
        let a = self.value();
        let (n, d) = mat_shape(&a);
        assert!(range.end <= d);
        let (start, w) = (range.start, range.len());
        let mut data = vec![0.0; n * w];
        for r in 0..n {
            data[r * w..(r + 1) * w].copy_from_slice(&a.data()[r * d + start..r * d + start + w]);
        }
        let v = Tensor::from_vec(vec![n, w], data);
        self.unary(v, move |g| {
            let mut out = vec![0.0; n * d];
            for r in 0..n {
                out[r * d + start..r * d + start + w].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
            }
            Tensor::from_vec(vec![n, d], out)
        })
    }

    /// Row lookup into an `[n, d]` table; backward scatter-adds into the table.
    pub fn gather_rows(&self, indices: &[usize]) -> Var<'t> {
        let a = self.value();
        let (n, d) = mat_shape(&a);
        let idx = indices.to_vec();
        for &i in &idx {
            assert!(i < n, "gather_rows index {i} out of range for {n} rows");
        }
        let mut data = vec![0.0; idx.len() * d];
        for (r, &i) in idx.iter().enumerate() {
            data[r * d..(r + 1) * d].copy_from_slice(&a.data()[i * d..(i + 1) * d]);
        }
        let v = Tensor::from_vec(vec![idx.len(), d], data);
        self.unary(v, move |g| {
            let mut out = vec![0.0; n * d];
            for (r, &i) in idx.iter().enumerate() {
                for c in 0..d {
                    out[i * d + c] += g.data()[r * d + c];
                }
            }
            Tensor::from_vec(vec![n, d], out)
        })
    }

    /// Flat element gather with `-1` as a zero-padding sentinel. The output
    /// takes `out_shape`; backward scatter-adds into the flat source. The
    /// index table is shared, not copied — callers precompute it once.
    pub fn gather_flat(&self, indices: &std::sync::Arc<Vec<i64>>, out_shape: Vec<usize>) -> Var<'t> {
        let a = self.value();
        let len = a.numel();
        let src_shape = a.shape().to_vec();
        let idx = std::sync::Arc::clone(indices);
        assert_eq!(out_shape.iter().product::<usize>(), idx.len());
        let src = a.data();
        let data: Vec<f64> = idx.iter().map(|&i| if i < 0 { 0.0 } else { src[i as usize] }).collect();
        let v = Tensor::from_vec(out_shape, data);
        self.unary(v, move |g| {
            let mut out = vec![0.0; len];
            for (o, &i) in idx.iter().enumerate() {
                if i >= 0 {
                    out[i as usize] += g.data()[o];
                }
            }
            Tensor::from_vec(src_shape.clone(), out)
        })
    }

    pub fn sum_all(&self) -> Var<'t> {
        let a = self.value();
        let shape = a.shape().to_vec();
        let v = Tensor::scalar(a.data().iter().sum());
        self.unary(v, move |g| Tensor::full(&shape, g.item()))
    }

    pub fn mean_all(&self) -> Var<'t> {
        let a = self.value();
        let n = a.numel() as f64;
        let shape = a.shape().to_vec();
        let v = Tensor::scalar(a.data().iter().sum::<f64>() / n);
        self.unary(v, move |g| Tensor::full(&shape, g.item() / n))
    }

    /// Column means of an `[n, d]` matrix, yielding `[d]`.
    pub fn mean_axis0(&self) -> Var<'t> {
        let a = self.value();
        let (n, d) = mat_shape(&a);
        let mut out = vec![0.0; d];
        for r in 0..n {
            for c in 0..d {
                out[c] += a.data()[r * d + c];
            }
        }
        for v in out.iter_mut() {
            *v /= n as f64;
        }
        let v = Tensor::from_vec(vec![d], out);
        self.unary(v, move |g| {
            let mut out = vec![0.0; n * d];
            for r in 0..n {
                for c in 0..d {
                    out[r * d + c] = g.data()[c] / n as f64;
                }
            }
            Tensor::from_vec(vec![n, d], out)
        })
    }

    /// Adds a `[d]` bias to every row of an `[n, d]` matrix.
    pub fn add_bias(&self, bias: Var<'t>) -> Var<'t> {
        let a = self.value();
        let b = bias.value();
        let (n, d) = mat_shape(&a);
        assert_eq!(b.shape(), &[d]);
        let mut data = a.data().to_vec();
        for r in 0..n {
            for c in 0..d {
                data[r * d + c] += b.data()[c];
            }
        }
        let v = Tensor::from_vec(vec![n, d], data);
        self.binary(
            bias,
            v,
            |g| g.clone(),
            move |g| {
                let mut out = vec![0.0; d];
                for r in 0..n {
                    for c in 0..d {
                        out[c] += g.data()[r * d + c];
                    }
                }
                Tensor::from_vec(vec![d], out)
            },
        )
    }

    /// Multiplies every row of an `[n, d]` matrix by a `[d]` gain.
    pub fn mul_bias(&self, gain: Var<'t>) -> Var<'t> {
        let a = self.value();
        let s = gain.value();
        let (n, d) = mat_shape(&a);
        assert_eq!(s.shape(), &[d]);
        let mut data = a.data().to_vec();
        for r in 0..n {
            for c in 0..d {
                data[r * d + c] *= s.data()[c];
            }
        }
        let v = Tensor::from_vec(vec![n, d], data);
        let (ac, sc) = (a.clone(), s.clone());
        self.binary(
            gain,
            v,
            move |g| {
                let mut out = g.data().to_vec();
                for r in 0..n {
                    for c in 0..d {
                        out[r * d + c] *= sc.data()[c];
                    }
                }
                Tensor::from_vec(vec![n, d], out)
            },
            move |g| {
                let mut out = vec![0.0; d];
                for r in 0..n {
                    for c in 0..d {
                        out[c] += g.data()[r * d + c] * ac.data()[r * d + c];
                    }
                }
                Tensor::from_vec(vec![d], out)
            },
        )
    }

    /// Row-wise layer normalization (no affine) of an `[n, d]` matrix.
    pub fn layer_norm(&self, eps: f64) -> Var<'t> {
        let a = self.value();
        let (n, d) = mat_shape(&a);
        let v = Tensor::from_vec(vec![n, d], kernels::layer_norm(a.data(), n, d, eps));
        let ac = a.clone();
        self.unary(v, move |g| {
            Tensor::from_vec(vec![n, d], kernels::layer_norm_backward(ac.data(), g.data(), n, d, eps))
        })
    }

    pub fn silu(&self) -> Var<'t> {
        let a = self.value();
        let data: Vec<f64> = a.data().iter().map(|&x| x * sigmoid_f(x)).collect();
        let v = Tensor::from_vec(a.shape().to_vec(), data);
        let ac = a.clone();
        self.unary(v, move |g| {
            let data: Vec<f64> = ac
                .data()
                .iter()
                .zip(g.data().iter())
                .map(|(&x, &g)| {
                    let s = sigmoid_f(x);
                    g * (s * (1.0 + x * (1.0 - s)))
                })
                .collect();
            Tensor::from_vec(ac.shape().to_vec(), data)
        })
    }

    pub fn tanh(&self) -> Var<'t> {
        let a = self.value();
        let y: Vec<f64> = a.data().iter().map(|&x| x.tanh()).collect();
        let v = Tensor::from_vec(a.shape().to_vec(), y.clone());
        let shape = a.shape().to_vec();
        self.unary(v, move |g| {
            let data: Vec<f64> =
                y.iter().zip(g.data().iter()).map(|(&y, &g)| g * (1.0 - y * y)).collect();
            Tensor::from_vec(shape.clone(), data)
        })
    }

    pub fn sigmoid(&self) -> Var<'t> {
        let a = self.value();
        let y: Vec<f64> = a.data().iter().map(|&x| sigmoid_f(x)).collect();
        let v = Tensor::from_vec(a.shape().to_vec(), y.clone());
        let shape = a.shape().to_vec();
        self.unary(v, move |g| {
            let data: Vec<f64> = y
                .iter()
                .zip(g.data().iter())
                .map(|(&y, &g)| g * y * (1.0 - y))
                .collect();
            Tensor::from_vec(shape.clone(), data)
        })
    }

    /// Row-wise softmax of an `[n, d]` matrix.
    pub fn softmax_rows(&self) -> Var<'t> {
        let a = self.value();
        let (n, d) = mat_shape(&a);
        let y = kernels::softmax_rows(a.data(), n, d);
        let v = Tensor::from_vec(vec![n, d], y.clone());
        self.unary(v, move |g| {
            let mut out = vec![0.0; n * d];
            for r in 0..n {
                let yr = &y[r * d..(r + 1) * d];
                let gr = &g.data()[r * d..(r + 1) * d];
                let dot: f64 = yr.iter().zip(gr.iter()).map(|(y, g)| y * g).sum();
                for c in 0..d {
                    out[r * d + c] = yr[c] * (gr[c] - dot);
                }
            }
            Tensor::from_vec(vec![n, d], out)
        })
    }

    /// Mean cross-entropy of `[n, v]` logits against integer targets.
    pub fn cross_entropy(&self, targets: &[usize]) -> Result<Var<'t>> {
        let a = self.value();
        let (n, v) = mat_shape(&a);
        if targets.len() != n {
            return Err(Error::Shape(format!(
                "cross_entropy: {n} logit rows vs {} targets",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::Shape(format!("cross_entropy: target {bad} out of range [0, {v})")));
        }
        let (loss, probs) = kernels::cross_entropy(a.data(), n, v, targets);
        let t = targets.to_vec();
        Ok(self.unary(Tensor::scalar(loss), move |g| {
            let gv = g.item() / n as f64;
            let mut out = probs.clone();
            for (r, &tc) in t.iter().enumerate() {
                out[r * v + tc] -= 1.0;
            }
            for x in out.iter_mut() {
                *x *= gv;
            }
            Tensor::from_vec(vec![n, v], out)
        }))
    }

    /// Differentiable bilinear align-corners resample of `[h, w, d]` to
    /// `[t, t, d]`; rejects non-square maps.
    pub fn interpolate(&self, target_side: usize) -> Result<Var<'t>> {
        let a = self.value();
        let (h, w, d) = a.expect_map3()?;
        if h != w {
            return Err(Error::Shape(format!("interpolate requires a square map, got {h}x{w}")));
        }
        if target_side == 0 {
            return Err(Error::Shape("interpolate target side must be >= 1".into()));
        }
        let v = Tensor::from_vec(
            vec![target_side, target_side, d],
            kernels::interpolate(a.data(), h, d, target_side),
        );
        Ok(self.unary(v, move |g| {
            Tensor::from_vec(vec![h, h, d], kernels::interpolate_adjoint(g.data(), h, d, target_side))
        }))
    }
}

#[inline]
fn sigmoid_f(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn mat_shape(t: &Tensor) -> (usize, usize) {
    match t.shape() {
        [n, d] => (*n, *d),
        s => panic!("expected a matrix, got shape {s:?}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        // f(x) = x^2 at x = 3 -> df/dx = 6
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = x.mul(x);
        let g = tape.backward(y);
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn cross_entropy_gradient_uniform() {
        // At uniform logits the gradient is (1/V - onehot)/n per entry.
        let tape = Tape::new();
        let v = 8usize;
        let x = tape.leaf(Tensor::zeros(&[1, v]));
        let loss = x.cross_entropy(&[2]).unwrap();
        let g = tape.backward(loss).get(x).unwrap();
        for c in 0..v {
            let want = if c == 2 { 1.0 / v as f64 - 1.0 } else { 1.0 / v as f64 };
            assert!((g.data()[c] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_rejects_bad_target() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 4]));
        assert!(x.cross_entropy(&[0, 4]).is_err());
        assert!(x.cross_entropy(&[0]).is_err());
    }

    #[test]
    fn detached_zero_vs_absent_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let unused = tape.leaf(Tensor::from_vec(vec![3], vec![1., 2., 3.]));
        let y = x.mul(x);
        let g = tape.backward(y);
        // On-tape but detached: present, zero.
        let gz = g.get(unused).unwrap();
        assert_eq!(gz.shape(), &[3]);
        assert!(gz.data().iter().all(|&v| v == 0.0));
        // Different tape entirely: absent.
        let other = Tape::new();
        let foreign = other.leaf(Tensor::scalar(1.0));
        assert!(g.get(foreign).is_none());
    }

    #[test]
    fn detach_blocks_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(4.0));
        let d = x.detach();
        let y = d.mul(d);
        let g = tape.backward(y);
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constants_skip_recording() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::from_vec(vec![2, 2], vec![1., 2., 3., 4.]));
        let b = tape.constant(Tensor::from_vec(vec![2, 2], vec![1., 0., 0., 1.]));
        let c = a.matmul(b);
        assert!(!c.requires_grad());
    }

    #[test]
    fn matmul_chain_gradient() {
        // loss = sum(A * B); dA = ones * B^T, dB = A^T * ones
        let tape = Tape::new();
        let a = tape.leaf(Tensor::from_vec(vec![2, 3], vec![1., -1., 2., 0., 3., 1.]));
        let b = tape.leaf(Tensor::from_vec(vec![3, 2], vec![2., 1., 0., -1., 1., 1.]));
        let loss = a.matmul(b).sum_all();
        let g = tape.backward(loss);
        let ga = g.get(a).unwrap();
        // row sums of B
        for r in 0..2 {
            for c in 0..3 {
                let want: f64 = (0..2).map(|j| b.value().data()[c * 2 + j]).sum();
                assert!((ga.data()[r * 3 + c] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_property() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![2, 4], vec![1., 2., 3., 4., -1., 0., 5., 2.]));
        let s = x.softmax_rows().value();
        for r in 0..2 {
            let sum: f64 = s.data()[r * 4..(r + 1) * 4].iter().sum();
            assert!((sum - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn concat_slice_roundtrip() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::from_vec(vec![2, 2], vec![1., 2., 3., 4.]));
        let b = tape.leaf(Tensor::from_vec(vec![1, 2], vec![5., 6.]));
        let c = Var::concat_rows(&[a, b]);
        assert_eq!(c.value().data(), &[1., 2., 3., 4., 5., 6.]);
        let back = c.slice_rows(2..3);
        assert_eq!(back.value().data(), &[5., 6.]);
        let loss = back.sum_all();
        let g = tape.backward(loss);
        assert_eq!(g.get(b).unwrap().data(), &[1., 1.]);
        assert_eq!(g.get(a).unwrap().data(), &[0., 0., 0., 0.]);
    }
}
