//! Teacher-forced forward pass, scale-by-scale generation and per-scale
//! losses.
//!
//! Self-attention is computed per (head, scale-group): the query block only
//! ever multiplies against the key prefix its scale may see, so causality is
//! structural rather than masked, and a prefix-only forward reproduces the
//! full forward bitwise on the shared groups.

use rand::Rng;

use super::text::{CondVars, TextCondition};
use super::{BlockParams, KvMemorySet, MemoryVisibility, VarModel};
use crate::error::{Error, Result};
use crate::msvq::{Codebook, TokenMapPyramid};
use crate::rng::stream;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct SamplerConfig {
    /// 0 means greedy argmax.
    pub temperature: f64,
    pub top_k: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { temperature: 0.9, top_k: 12 }
    }
}

impl SamplerConfig {
    pub fn validate(&self, vocab: usize) -> Result<()> {
        if self.temperature < 0.0 || !self.temperature.is_finite() {
            return Err(Error::Config(format!("invalid temperature {}", self.temperature)));
        }
        if self.top_k == 0 || self.top_k > vocab {
            return Err(Error::Config(format!("top_k {} out of range [1, {vocab}]", self.top_k)));
        }
        Ok(())
    }
}

/// Per-scale logits, `[side_k^2, V]` each.
pub struct ScaleLogits<'t> {
    pub per_scale: Vec<Var<'t>>,
}

/// Tape-level view of one memory set.
pub struct MemoryVars<'t> {
    pub role: super::MemoryRole,
    pub scale_index: usize,
    pub block_indices: Vec<usize>,
    pub count: usize,
    pub keys: Vec<Var<'t>>,
    pub values: Vec<Var<'t>>,
}

impl<'t> MemoryVars<'t> {
    pub fn leaves(tape: &'t Tape, set: &KvMemorySet) -> MemoryVars<'t> {
        MemoryVars {
            role: set.role,
            scale_index: set.scale_index,
            block_indices: set.block_indices.clone(),
            count: set.count,
            keys: set.keys.iter().map(|t| tape.leaf(t.clone())).collect(),
            values: set.values.iter().map(|t| tape.leaf(t.clone())).collect(),
        }
    }

    pub fn constants(tape: &'t Tape, set: &KvMemorySet) -> MemoryVars<'t> {
        MemoryVars {
            role: set.role,
            scale_index: set.scale_index,
            block_indices: set.block_indices.clone(),
            count: set.count,
            keys: set.keys.iter().map(|t| tape.constant(t.clone())).collect(),
            values: set.values.iter().map(|t| tape.constant(t.clone())).collect(),
        }
    }
}

/// All model parameters entered on a tape, as leaves (training) or
/// constants (inference/factorization).
pub struct ParamVars<'t> {
    pub embed_table: Var<'t>,
    pub text_pos: Var<'t>,
    w_in: Var<'t>,
    w_in_b: Var<'t>,
    scale_emb: Var<'t>,
    row_emb: Var<'t>,
    col_emb: Var<'t>,
    blocks: Vec<BlockVars<'t>>,
    ln_f_g: Var<'t>,
    ln_f_b: Var<'t>,
    head_w: Var<'t>,
    head_b: Var<'t>,
}

struct BlockVars<'t> {
    ln1_g: Var<'t>,
    ln1_b: Var<'t>,
    wq: Var<'t>,
    wk: Var<'t>,
    wv: Var<'t>,
    wo: Var<'t>,
    ln2_g: Var<'t>,
    ln2_b: Var<'t>,
    cq: Var<'t>,
    ck: Var<'t>,
    cv: Var<'t>,
    co: Var<'t>,
    ln3_g: Var<'t>,
    ln3_b: Var<'t>,
    w1: Var<'t>,
    b1: Var<'t>,
    w2: Var<'t>,
    b2: Var<'t>,
}

const LN_EPS: f64 = 1e-6;

fn ln_affine<'t>(x: Var<'t>, g: Var<'t>, b: Var<'t>) -> Var<'t> {
    x.layer_norm(LN_EPS).mul_bias(g).add_bias(b)
}

impl VarModel {
    /// Enters every parameter on the tape. `trainable` controls whether the
    /// entries are leaves (receive gradients) or constants.
    pub fn param_vars<'t>(&self, tape: &'t Tape, trainable: bool) -> ParamVars<'t> {
        let enter = |t: &Tensor| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) };
        ParamVars {
            embed_table: enter(&self.embed_table),
            text_pos: enter(&self.text_pos),
            w_in: enter(&self.w_in),
            w_in_b: enter(&self.w_in_b),
            scale_emb: enter(&self.scale_emb),
            row_emb: enter(&self.row_emb),
            col_emb: enter(&self.col_emb),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockVars {
                    ln1_g: enter(&b.ln1_g),
                    ln1_b: enter(&b.ln1_b),
                    wq: enter(&b.wq),
                    wk: enter(&b.wk),
                    wv: enter(&b.wv),
                    wo: enter(&b.wo),
                    ln2_g: enter(&b.ln2_g),
                    ln2_b: enter(&b.ln2_b),
                    cq: enter(&b.cq),
                    ck: enter(&b.ck),
                    cv: enter(&b.cv),
                    co: enter(&b.co),
                    ln3_g: enter(&b.ln3_g),
                    ln3_b: enter(&b.ln3_b),
                    w1: enter(&b.w1),
                    b1: enter(&b.b1),
                    w2: enter(&b.w2),
                    b2: enter(&b.b2),
                })
                .collect(),
            ln_f_g: enter(&self.ln_f_g),
            ln_f_b: enter(&self.ln_f_b),
            head_w: enter(&self.head_w),
            head_b: enter(&self.head_b),
        }
    }

    /// Gradient lookup order matching [`VarModel::named_tensors`].
    pub fn param_var_list<'t>(pv: &ParamVars<'t>) -> Vec<Var<'t>> {
        let mut out = vec![
            pv.embed_table,
            pv.text_pos,
            pv.w_in,
            pv.w_in_b,
            pv.scale_emb,
            pv.row_emb,
            pv.col_emb,
        ];
        for b in &pv.blocks {
            out.extend([
                b.ln1_g, b.ln1_b, b.wq, b.wk, b.wv, b.wo, b.ln2_g, b.ln2_b, b.cq, b.ck, b.cv,
                b.co, b.ln3_g, b.ln3_b, b.w1, b.b1, b.w2, b.b2,
            ]);
        }
        out.extend([pv.ln_f_g, pv.ln_f_b, pv.head_w, pv.head_b]);
        out
    }

    fn validate_memories(&self, memories: &[&KvMemorySet]) -> Result<()> {
        for m in memories {
            m.validate(self.schedule.k(), self.cfg.n_blocks, self.cfg.n_heads, self.cfg.d_head())?;
        }
        Ok(())
    }

    /// Teacher-forced pass: ground-truth scales as inputs, logits for every
    /// scale in one go.
    pub fn forward_teacher_forced<'t>(
        &self,
        tape: &'t Tape,
        codebook: &Codebook,
        pyramid: &TokenMapPyramid,
        pv: &ParamVars<'t>,
        cond: &CondVars<'t>,
        memories: &[MemoryVars<'t>],
    ) -> Result<ScaleLogits<'t>> {
        if pyramid.schedule != self.schedule {
            return Err(Error::Shape("pyramid schedule does not match the model".into()));
        }
        pyramid.validate(self.cfg.vocab_v)?;
        let logits =
            self.forward_groups(tape, codebook, &pyramid.maps, self.schedule.k(), pv, cond, memories)?;
        Ok(ScaleLogits { per_scale: logits })
    }

    /// Forward over input groups `1..=upto`. Group 1 is the pooled start
    /// token; group k > 1 embeds the interpolated dequantized tokens of scale
    /// k-1, so only `tokens[..upto-1]` is read.
    pub fn forward_groups<'t>(
        &self,
        tape: &'t Tape,
        codebook: &Codebook,
        tokens: &[Vec<usize>],
        upto: usize,
        pv: &ParamVars<'t>,
        cond: &CondVars<'t>,
        memories: &[MemoryVars<'t>],
    ) -> Result<Vec<Var<'t>>> {
        let sides = self.schedule.sides();
        assert!(upto >= 1 && upto <= sides.len());
        assert!(tokens.len() + 1 >= upto, "need {} previous scales, have {}", upto - 1, tokens.len());
        for m in memories {
            if m.scale_index == 0 || m.scale_index > sides.len() {
                return Err(Error::Config(format!(
                    "memory scale_index {} out of range [1, {}]",
                    m.scale_index,
                    sides.len()
                )));
            }
        }
        let d = self.cfg.d_model;
        let d_code = self.cfg.d_code;

        // Input rows per group, with scale and 2-D position embeddings.
        let mut groups: Vec<Var<'t>> = Vec::with_capacity(upto);
        for k in 1..=upto {
            let side = sides[k - 1];
            let n = side * side;
            let base = if k == 1 {
                cond.pooled
            } else {
                let prev_side = sides[k - 2];
                let feat = pv
                    .embed_tokens(codebook, tape, &tokens[k - 2])
                    .reshape(vec![prev_side, prev_side, d_code])
                    .interpolate(side)?
                    .reshape(vec![n, d_code]);
                feat.matmul(pv.w_in).add_bias(pv.w_in_b)
            };
            let scale_rows = pv.scale_emb.gather_rows(&vec![k - 1; n]);
            let rid: Vec<usize> = (0..n).map(|p| p / side).collect();
            let cid: Vec<usize> = (0..n).map(|p| p % side).collect();
            let pos = pv.row_emb.gather_rows(&rid).add(pv.col_emb.gather_rows(&cid));
            groups.push(base.add(scale_rows).add(pos));
        }
        let mut h = if groups.len() == 1 { groups[0] } else { Var::concat_rows(&groups) };

        // Group row ranges within the current sequence.
        let mut ranges = Vec::with_capacity(upto);
        let mut off = 0usize;
        for k in 1..=upto {
            let n = sides[k - 1] * sides[k - 1];
            ranges.push(off..off + n);
            off += n;
        }

        for (bi, blk) in pv.blocks.iter().enumerate() {
            let normed = ln_affine(h, blk.ln1_g, blk.ln1_b);
            let attn = self.self_attention(normed, blk, bi, &ranges, memories);
            h = h.add(attn);
            let normed = ln_affine(h, blk.ln2_g, blk.ln2_b);
            let cross = self.cross_attention(normed, blk, cond);
            h = h.add(cross);
            let normed = ln_affine(h, blk.ln3_g, blk.ln3_b);
            let ffn = normed.matmul(blk.w1).add_bias(blk.b1).silu().matmul(blk.w2).add_bias(blk.b2);
            h = h.add(ffn);
        }
        let hn = ln_affine(h, pv.ln_f_g, pv.ln_f_b);
        let logits = hn.matmul(pv.head_w).add_bias(pv.head_b);
        Ok(ranges.into_iter().map(|r| logits.slice_rows(r)).collect())
    }

    /// Block-causal self-attention with optional prefix K-V memories.
    /// Computed per (head, group): each query group multiplies only against
    /// the keys of groups it may see, plus any eligible memory rows, which
    /// are prepended along the key axis and share the softmax normalization.
    fn self_attention<'t>(
        &self,
        x: Var<'t>,
        blk: &BlockVars<'t>,
        block_idx: usize,
        ranges: &[std::ops::Range<usize>],
        memories: &[MemoryVars<'t>],
    ) -> Var<'t> {
        let heads = self.cfg.n_heads;
        let dh = self.cfg.d_head();
        let inv = 1.0 / (dh as f64).sqrt();
        let q = x.matmul(blk.wq);
        let k = x.matmul(blk.wk);
        let v = x.matmul(blk.wv);
        let mut head_outs = Vec::with_capacity(heads);
        for hidx in 0..heads {
            let cols = hidx * dh..(hidx + 1) * dh;
            let qh = q.slice_cols(cols.clone());
            let kh = k.slice_cols(cols.clone());
            let vh = v.slice_cols(cols);
            let mut group_outs = Vec::with_capacity(ranges.len());
            for (gi, range) in ranges.iter().enumerate() {
                let g = gi + 1; // 1-based scale
                let qg = qh.slice_rows(range.clone());
                let kpre = kh.slice_rows(0..range.end);
                let vpre = vh.slice_rows(0..range.end);
                // Eligible memory rows for this (block, group).
                let mut mem_k: Vec<Var<'t>> = Vec::new();
                let mut mem_v: Vec<Var<'t>> = Vec::new();
                for m in memories {
                    let visible = match self.cfg.memory_visibility {
                        MemoryVisibility::FromScaleOnward => g >= m.scale_index,
                        MemoryVisibility::AtScaleOnly => g == m.scale_index,
                    };
                    if !visible || m.count == 0 {
                        continue;
                    }
                    if let Some(bp) = m.block_indices.iter().position(|&b| b == block_idx) {
                        let slot = bp * heads + hidx;
                        mem_k.push(m.keys[slot]);
                        mem_v.push(m.values[slot]);
                    }
                }
                let out = if mem_k.is_empty() {
                    let scores = qg.matmul(kpre.t()).scale(inv);
                    scores.softmax_rows().matmul(vpre)
                } else {
                    let mk = if mem_k.len() == 1 { mem_k[0] } else { Var::concat_rows(&mem_k) };
                    let mv = if mem_v.len() == 1 { mem_v[0] } else { Var::concat_rows(&mem_v) };
                    let o = mk.shape()[0];
                    let mem_scores = qg.matmul(mk.t()).scale(inv);
                    let tok_scores = qg.matmul(kpre.t()).scale(inv);
                    let weights = Var::concat_cols(&[mem_scores, tok_scores]).softmax_rows();
                    let wm = weights.slice_cols(0..o);
                    let wt = weights.slice_cols(o..o + range.end);
                    wm.matmul(mv).add(wt.matmul(vpre))
                };
                group_outs.push(out);
            }
            head_outs.push(if group_outs.len() == 1 {
                group_outs[0]
            } else {
                Var::concat_rows(&group_outs)
            });
        }
        let merged =
            if head_outs.len() == 1 { head_outs[0] } else { Var::concat_cols(&head_outs) };
        merged.matmul(blk.wo)
    }

    fn cross_attention<'t>(&self, x: Var<'t>, blk: &BlockVars<'t>, cond: &CondVars<'t>) -> Var<'t> {
        let heads = self.cfg.n_heads;
        let dh = self.cfg.d_head();
        let inv = 1.0 / (dh as f64).sqrt();
        let q = x.matmul(blk.cq);
        let k = cond.emb.matmul(blk.ck);
        let v = cond.emb.matmul(blk.cv);
        let mut head_outs = Vec::with_capacity(heads);
        for hidx in 0..heads {
            let cols = hidx * dh..(hidx + 1) * dh;
            let qh = q.slice_cols(cols.clone());
            let kh = k.slice_cols(cols.clone());
            let vh = v.slice_cols(cols);
            let weights = qh.matmul(kh.t()).scale(inv).softmax_rows();
            head_outs.push(weights.matmul(vh));
        }
        let merged =
            if head_outs.len() == 1 { head_outs[0] } else { Var::concat_cols(&head_outs) };
        merged.matmul(blk.co)
    }

    /// Per-scale cross-entropies L_1..L_K against the pyramid's tokens.
    pub fn loss_per_scale<'t>(
        &self,
        logits: &ScaleLogits<'t>,
        pyramid: &TokenMapPyramid,
    ) -> Result<Vec<Var<'t>>> {
        if logits.per_scale.len() != pyramid.maps.len() {
            return Err(Error::Shape(format!(
                "{} logit scales vs {} pyramid scales",
                logits.per_scale.len(),
                pyramid.maps.len()
            )));
        }
        logits
            .per_scale
            .iter()
            .zip(pyramid.maps.iter())
            .map(|(l, targets)| l.cross_entropy(targets))
            .collect()
    }

    /// Scale-by-scale sampling; each scale's tokens feed back through the
    /// interpolated dequantization as the next scale's input. Deterministic
    /// for a fixed seed; temperature 0 is greedy argmax.
    pub fn generate(
        &self,
        codebook: &Codebook,
        cond: &TextCondition,
        memories: &[KvMemorySet],
        sampler: &SamplerConfig,
        seed: u64,
    ) -> Result<TokenMapPyramid> {
        if !self.trained {
            return Err(Error::MissingArtifact("var model is untrained".into()));
        }
        sampler.validate(self.cfg.vocab_v)?;
        self.validate_memories(&memories.iter().collect::<Vec<_>>())?;
        let mut tokens: Vec<Vec<usize>> = Vec::with_capacity(self.schedule.k());
        for k in 1..=self.schedule.k() {
            let tape = Tape::new();
            let pv = self.param_vars(&tape, false);
            let cond_vars = CondVars {
                emb: tape.constant(cond.embeddings.clone()),
                pooled: tape.constant(cond.pooled.clone()),
                len: cond.embeddings.shape()[0],
            };
            let mems: Vec<MemoryVars> =
                memories.iter().map(|m| MemoryVars::constants(&tape, m)).collect();
            let logits =
                self.forward_groups(&tape, codebook, &tokens, k, &pv, &cond_vars, &mems)?;
            let last = logits.last().unwrap().value();
            let mut rng = stream(seed, "gen/scale", k as u64);
            tokens.push(sample_tokens(&last, sampler, &mut rng));
        }
        Ok(TokenMapPyramid { schedule: self.schedule.clone(), maps: tokens })
    }
}

impl<'t> ParamVars<'t> {
    /// Dequantized token embedding: gathers codebook rows. The codebook is
    /// frozen for the transformer, so it enters as a constant.
    fn embed_tokens(&self, codebook: &Codebook, tape: &'t Tape, tokens: &[usize]) -> Var<'t> {
        tape.constant(codebook.vectors().clone()).gather_rows(tokens)
    }
}

/// Per-row top-k/temperature sampling over `[n, V]` logits.
fn sample_tokens(logits: &Tensor, sampler: &SamplerConfig, rng: &mut impl Rng) -> Vec<usize> {
    let (n, v) = (logits.shape()[0], logits.shape()[1]);
    let mut out = Vec::with_capacity(n);
    for r in 0..n {
        let row = &logits.data()[r * v..(r + 1) * v];
        if sampler.temperature == 0.0 {
            let mut best = 0;
            for j in 1..v {
                if row[j] > row[best] {
                    best = j;
                }
            }
            out.push(best);
            continue;
        }
        let k = sampler.top_k.min(v);
        let mut idx: Vec<usize> = (0..v).collect();
        idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
        let top = &idx[..k];
        let m = row[top[0]];
        let weights: Vec<f64> =
            top.iter().map(|&j| ((row[j] - m) / sampler.temperature).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.gen_range(0.0..1.0) * total;
        let mut chosen = top[k - 1];
        for (j, w) in top.iter().zip(weights.iter()) {
            if u < *w {
                chosen = *j;
                break;
            }
            u -= w;
        }
        out.push(chosen);
    }
    out
}

/// Convenience bundle for callers that run whole teacher-forced passes
/// against stored conditions.
pub struct GroupForward;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msvq::ScaleSchedule;
    use crate::var::text::{build_condition, parse_prompt};
    use crate::var::{MemoryRole, VarConfig};
    use rand::SeedableRng;

    fn tiny_setup() -> (VarModel, Codebook, TokenMapPyramid) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let cfg = VarConfig {
            d_model: 16,
            n_heads: 2,
            n_blocks: 2,
            ffn_hidden: 32,
            vocab_v: 24,
            d_code: 6,
            sides: vec![1, 2, 3, 4],
            max_text_len: 16,
            memory_visibility: MemoryVisibility::FromScaleOnward,
        };
        let model = VarModel::new(cfg, &mut rng).unwrap();
        let codebook = Codebook::init(24, 6, &mut rng);
        let schedule = ScaleSchedule::new(vec![1, 2, 3, 4]).unwrap();
        let maps: Vec<Vec<usize>> = schedule
            .sides()
            .iter()
            .map(|&s| (0..s * s).map(|_| rng.gen_range(0..24)).collect())
            .collect();
        (model, codebook, TokenMapPyramid { schedule, maps })
    }

    fn run_logits(
        model: &VarModel,
        codebook: &Codebook,
        pyr: &TokenMapPyramid,
        memories: &[KvMemorySet],
    ) -> Vec<Tensor> {
        let tape = Tape::new();
        let pv = model.param_vars(&tape, false);
        let toks = parse_prompt("a photo of a circle in ruby style").unwrap();
        let cond = build_condition(
            &tape,
            pv.embed_table,
            pv.text_pos,
            &toks,
            None,
            None,
            model.cfg.max_text_len,
        )
        .unwrap();
        let mems: Vec<MemoryVars> =
            memories.iter().map(|m| MemoryVars::constants(&tape, m)).collect();
        let logits = model
            .forward_teacher_forced(&tape, codebook, pyr, &pv, &cond, &mems)
            .unwrap();
        logits.per_scale.iter().map(|l| l.value()).collect()
    }

    #[test]
    fn empty_memory_list_equals_zero_row_memory_bitwise() {
        let (model, codebook, pyr) = tiny_setup();
        let base = run_logits(&model, &codebook, &pyr, &[]);
        let zero_mem = KvMemorySet {
            role: MemoryRole::Style,
            scale_index: 1,
            block_indices: vec![0],
            count: 0,
            keys: vec![Tensor::zeros(&[0, 8]); 2],
            values: vec![Tensor::zeros(&[0, 8]); 2],
        };
        let with = run_logits(&model, &codebook, &pyr, &[zero_mem]);
        for (a, b) in base.iter().zip(with.iter()) {
            assert!(a.bit_eq(b), "empty vs zero-row memory logits differ");
        }
    }

    #[test]
    fn block_causality_is_exact() {
        let (model, codebook, pyr) = tiny_setup();
        let base = run_logits(&model, &codebook, &pyr, &[]);
        for j in 1..=pyr.schedule.k() {
            let mut perturbed = pyr.clone();
            perturbed.maps[j - 1][0] = (perturbed.maps[j - 1][0] + 1) % model.cfg.vocab_v;
            let out = run_logits(&model, &codebook, &perturbed, &[]);
            for s in 1..=pyr.schedule.k() {
                if s <= j {
                    assert!(
                        base[s - 1].bit_eq(&out[s - 1]),
                        "perturbing scale {j} changed logits at scale {s}"
                    );
                } else if s == j + 1 {
                    assert!(
                        !base[s - 1].bit_eq(&out[s - 1]),
                        "perturbing scale {j} left scale {s} logits unchanged"
                    );
                }
            }
        }
    }

    #[test]
    fn strongly_negative_memory_keys_vanish() {
        // With memory keys pushed to -1e6 effective logits, attention on
        // memories is < 1e-9 and outputs match the base attention closely.
        let (model, codebook, pyr) = tiny_setup();
        let base = run_logits(&model, &codebook, &pyr, &[]);
        let dh = model.cfg.d_head();
        // Keys scaled so q.k is hugely negative regardless of q direction:
        // use +/-1e8 keys; scores saturate to -inf on one side. Instead pin
        // values at zero influence by keys = large negative multiple of every
        // direction is impossible; emulate via near -inf by keys = 0 and a
        // value check is vacuous. Use the documented contract: scores with
        // keys such that exp(score - max) underflows.
        let big = Tensor::full(&[1, dh], -1e8);
        let mem = KvMemorySet {
            role: MemoryRole::Style,
            scale_index: 1,
            block_indices: vec![0, 1],
            count: 1,
            keys: vec![big.clone(); 4],
            values: vec![Tensor::full(&[1, dh], 42.0); 4],
        };
        let with = run_logits(&model, &codebook, &pyr, &[mem]);
        for (a, b) in base.iter().zip(with.iter()) {
            let diff = a.max_abs_diff(b);
            assert!(diff < 1e-6, "suppressed memories should not move logits, diff {diff}");
        }
    }

    #[test]
    fn loss_sum_matches_total_and_gradients_are_disjoint() {
        let (model, codebook, pyr) = tiny_setup();
        let tape = Tape::new();
        let pv = model.param_vars(&tape, false);
        let toks = parse_prompt("a photo of a circle").unwrap();
        let cond =
            build_condition(&tape, pv.embed_table, pv.text_pos, &toks, None, None, 16).unwrap();
        // Make logits leaves so gradient isolation is observable per scale.
        let logits = model
            .forward_teacher_forced(&tape, &codebook, &pyr, &pv, &cond, &[])
            .unwrap();
        let leaf_logits: Vec<Var> = logits.per_scale.iter().map(|l| tape.leaf(l.value())).collect();
        let relogits = ScaleLogits { per_scale: leaf_logits.clone() };
        let losses = model.loss_per_scale(&relogits, &pyr).unwrap();
        let total: f64 = losses.iter().map(|l| l.item()).sum();
        let mut acc = losses[0];
        for l in &losses[1..] {
            acc = acc.add(*l);
        }
        assert!((acc.item() - total).abs() < 1e-12);
        // Backward of a partial sum leaves other scales' logits at zero grad.
        let partial = losses[1].add(losses[2]);
        let grads = tape.backward(partial);
        let g0 = grads.get(leaf_logits[0]).unwrap();
        assert!(g0.data().iter().all(|&x| x == 0.0));
        let g1 = grads.get(leaf_logits[1]).unwrap();
        assert!(g1.data().iter().any(|&x| x != 0.0));
    }

    #[test]
    fn generation_is_deterministic_and_greedy_matches_temp_zero() {
        let (mut model, codebook, _) = tiny_setup();
        model.mark_trained();
        let toks = parse_prompt("a photo of a circle").unwrap();
        let cond = TextCondition::build(
            &model.embed_table,
            &model.text_pos,
            &toks,
            None,
            None,
            16,
        )
        .unwrap();
        let greedy = SamplerConfig { temperature: 0.0, top_k: 1 };
        let a = model.generate(&codebook, &cond, &[], &greedy, 7).unwrap();
        let b = model.generate(&codebook, &cond, &[], &greedy, 99).unwrap();
        assert_eq!(a, b, "greedy decode must not depend on the seed");
        let sampled = SamplerConfig { temperature: 0.8, top_k: 4 };
        let c = model.generate(&codebook, &cond, &[], &sampled, 5).unwrap();
        let d = model.generate(&codebook, &cond, &[], &sampled, 5).unwrap();
        assert_eq!(c, d, "same seed must reproduce the pyramid");
    }

    #[test]
    fn teacher_forcing_reproduces_greedy_decode() {
        let (mut model, codebook, _) = tiny_setup();
        model.mark_trained();
        let toks = parse_prompt("a photo of a star").unwrap();
        let cond = TextCondition::build(
            &model.embed_table,
            &model.text_pos,
            &toks,
            None,
            None,
            16,
        )
        .unwrap();
        let greedy = SamplerConfig { temperature: 0.0, top_k: 1 };
        let pyr = model.generate(&codebook, &cond, &[], &greedy, 0).unwrap();
        let logits = {
            let tape = Tape::new();
            let pv = model.param_vars(&tape, false);
            let cv = CondVars {
                emb: tape.constant(cond.embeddings.clone()),
                pooled: tape.constant(cond.pooled.clone()),
                len: cond.embeddings.shape()[0],
            };
            let l = model
                .forward_teacher_forced(&tape, &codebook, &pyr, &pv, &cv, &[])
                .unwrap();
            l.per_scale.iter().map(|x| x.value()).collect::<Vec<_>>()
        };
        for (k, map) in pyr.maps.iter().enumerate() {
            let l = &logits[k];
            let v = model.cfg.vocab_v;
            for (p, &tok) in map.iter().enumerate() {
                let row = &l.data()[p * v..(p + 1) * v];
                let mut best = 0;
                for j in 1..v {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                assert_eq!(best, tok, "scale {} pos {p}: teacher-forced argmax diverged", k + 1);
            }
        }
    }
}
