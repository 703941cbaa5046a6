//! Next-scale prediction transformer.
//!
//! The input sequence is the pooled text start token followed by the
//! interpolated dequantized token map of each previous scale. Self-attention
//! is block-causal over scale groups, every block cross-attends to the text
//! embeddings, and learnable K-V rows may be prepended to chosen blocks'
//! self-attention from a chosen scale onward.

pub mod text;

mod model;
mod train;

pub use model::{GroupForward, ParamVars, SamplerConfig};
pub use train::{final_scale_accuracy, pretrain, VarTrainConfig, VarTrainReport};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::msvq::ScaleSchedule;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryVisibility {
    /// Memory rows are visible to queries at the bound scale and all later
    /// scales (prefix rows in a causal model stay visible downstream).
    FromScaleOnward,
    /// Memory rows are visible only to queries at the bound scale.
    AtScaleOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryRole {
    Style,
    Content,
}

/// Learnable key/value rows prepended to self-attention K/V of the listed
/// blocks, for queries governed by [`MemoryVisibility`].
#[derive(Clone)]
pub struct KvMemorySet {
    pub role: MemoryRole,
    /// 1-based scale the memories bind to.
    pub scale_index: usize,
    /// 0-based transformer blocks that receive the rows.
    pub block_indices: Vec<usize>,
    /// Number of K-V rows (the paper's O).
    pub count: usize,
    /// `[count, d_head]` per (block, head), block-major.
    pub keys: Vec<Tensor>,
    pub values: Vec<Tensor>,
}

impl KvMemorySet {
    pub fn init(
        role: MemoryRole,
        scale_index: usize,
        block_indices: Vec<usize>,
        count: usize,
        n_heads: usize,
        d_head: usize,
        rng: &mut impl Rng,
    ) -> KvMemorySet {
        let slots = block_indices.len() * n_heads;
        let mut keys = Vec::with_capacity(slots);
        let mut values = Vec::with_capacity(slots);
        for _ in 0..slots {
            keys.push(Tensor::xavier_uniform(&[count, d_head], d_head, d_head, rng));
            values.push(Tensor::xavier_uniform(&[count, d_head], d_head, d_head, rng));
        }
        KvMemorySet { role, scale_index, block_indices, count, keys, values }
    }

    pub fn slot(&self, block_pos: usize, head: usize, n_heads: usize) -> usize {
        block_pos * n_heads + head
    }

    pub fn validate(&self, k_scales: usize, n_blocks: usize, n_heads: usize, d_head: usize) -> Result<()> {
        if self.scale_index == 0 || self.scale_index > k_scales {
            return Err(Error::Config(format!(
                "memory scale_index {} out of range [1, {k_scales}]",
                self.scale_index
            )));
        }
        if let Some(&b) = self.block_indices.iter().find(|&&b| b >= n_blocks) {
            return Err(Error::Config(format!("memory block index {b} out of range [0, {n_blocks})")));
        }
        let slots = self.block_indices.len() * n_heads;
        if self.keys.len() != slots || self.values.len() != slots {
            return Err(Error::Config("memory key/value slot count mismatch".into()));
        }
        for t in self.keys.iter().chain(self.values.iter()) {
            if t.shape() != [self.count, d_head] {
                return Err(Error::Config(format!(
                    "memory rows must be [{}, {d_head}], got {:?}",
                    self.count,
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::NonFinite("memory rows contain non-finite values".into()));
            }
        }
        Ok(())
    }

    /// All tensors of this set, keys then values, for optimizer slotting.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.keys.iter().chain(self.values.iter()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.keys.iter_mut().chain(self.values.iter_mut()).collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VarConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub ffn_hidden: usize,
    /// Codebook vocabulary size (logit width).
    pub vocab_v: usize,
    pub d_code: usize,
    pub sides: Vec<usize>,
    pub max_text_len: usize,
    pub memory_visibility: MemoryVisibility,
}

impl Default for VarConfig {
    fn default() -> Self {
        VarConfig {
            d_model: 64,
            n_heads: 4,
            n_blocks: 4,
            ffn_hidden: 256,
            vocab_v: 256,
            d_code: 16,
            sides: vec![1, 2, 3, 4, 5, 6, 8, 10, 13, 16],
            max_text_len: 24,
            memory_visibility: MemoryVisibility::FromScaleOnward,
        }
    }
}

impl VarConfig {
    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Clone)]
pub(crate) struct BlockParams {
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
    pub cq: Tensor,
    pub ck: Tensor,
    pub cv: Tensor,
    pub co: Tensor,
    pub ln3_g: Tensor,
    pub ln3_b: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl BlockParams {
    fn init(cfg: &VarConfig, rng: &mut impl Rng) -> BlockParams {
        let d = cfg.d_model;
        let f = cfg.ffn_hidden;
        let mut proj = || Tensor::xavier_uniform(&[d, d], d, d, rng);
        let (wq, wk, wv, wo) = (proj(), proj(), proj(), proj());
        let (cq, ck, cv, co) = (proj(), proj(), proj(), proj());
        BlockParams {
            ln1_g: Tensor::full(&[d], 1.0),
            ln1_b: Tensor::zeros(&[d]),
            wq,
            wk,
            wv,
            wo,
            ln2_g: Tensor::full(&[d], 1.0),
            ln2_b: Tensor::zeros(&[d]),
            cq,
            ck,
            cv,
            co,
            ln3_g: Tensor::full(&[d], 1.0),
            ln3_b: Tensor::zeros(&[d]),
            w1: Tensor::xavier_uniform(&[d, f], d, f, rng),
            b1: Tensor::zeros(&[f]),
            w2: Tensor::xavier_uniform(&[f, d], f, d, rng),
            b2: Tensor::zeros(&[d]),
        }
    }
}

/// The trained transformer: text embedding table, positional tables, input
/// projection, blocks and the logit head.
#[derive(Clone)]
pub struct VarModel {
    pub cfg: VarConfig,
    pub schedule: ScaleSchedule,
    pub(crate) embed_table: Tensor, // [W, d]
    pub(crate) text_pos: Tensor,    // [max_text_len, d]
    pub(crate) w_in: Tensor,        // [d_code, d]
    pub(crate) w_in_b: Tensor,      // [d]
    pub(crate) scale_emb: Tensor,   // [K, d]
    pub(crate) row_emb: Tensor,     // [final_side, d]
    pub(crate) col_emb: Tensor,     // [final_side, d]
    pub(crate) blocks: Vec<BlockParams>,
    pub(crate) ln_f_g: Tensor,
    pub(crate) ln_f_b: Tensor,
    pub(crate) head_w: Tensor, // [d, V]
    pub(crate) head_b: Tensor, // [V]
    trained: bool,
}

impl VarModel {
    pub fn new(cfg: VarConfig, rng: &mut impl Rng) -> Result<VarModel> {
        if cfg.d_model % cfg.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by {} heads",
                cfg.d_model, cfg.n_heads
            )));
        }
        let schedule = ScaleSchedule::new(cfg.sides.clone())?;
        let d = cfg.d_model;
        let final_side = schedule.final_side();
        Ok(VarModel {
            embed_table: Tensor::randn(&[text::vocab_size(), d], 0.1, rng),
            text_pos: Tensor::randn(&[cfg.max_text_len, d], 0.05, rng),
            w_in: Tensor::xavier_uniform(&[cfg.d_code, d], cfg.d_code, d, rng),
            w_in_b: Tensor::zeros(&[d]),
            scale_emb: Tensor::randn(&[schedule.k(), d], 0.05, rng),
            row_emb: Tensor::randn(&[final_side, d], 0.05, rng),
            col_emb: Tensor::randn(&[final_side, d], 0.05, rng),
            blocks: (0..cfg.n_blocks).map(|_| BlockParams::init(&cfg, rng)).collect(),
            ln_f_g: Tensor::full(&[d], 1.0),
            ln_f_b: Tensor::zeros(&[d]),
            head_w: Tensor::randn(&[d, cfg.vocab_v], 0.01, rng),
            head_b: Tensor::zeros(&[cfg.vocab_v]),
            schedule,
            cfg,
            trained: false,
        })
    }

    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn embed_table(&self) -> &Tensor {
        &self.embed_table
    }

    pub fn text_pos(&self) -> &Tensor {
        &self.text_pos
    }

    /// Embedding row of a single vocabulary word.
    pub fn word_embedding(&self, word: &str) -> Result<Tensor> {
        let id = text::word_id(word)?;
        let d = self.cfg.d_model;
        Ok(Tensor::from_vec(
            vec![1, d],
            self.embed_table.data()[id * d..(id + 1) * d].to_vec(),
        ))
    }

    /// Stable (name, tensor) listing of every trainable parameter.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("embed_table".into(), &self.embed_table),
            ("text_pos".into(), &self.text_pos),
            ("w_in".into(), &self.w_in),
            ("w_in_b".into(), &self.w_in_b),
            ("scale_emb".into(), &self.scale_emb),
            ("row_emb".into(), &self.row_emb),
            ("col_emb".into(), &self.col_emb),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (name, t) in [
                ("ln1_g", &b.ln1_g),
                ("ln1_b", &b.ln1_b),
                ("wq", &b.wq),
                ("wk", &b.wk),
                ("wv", &b.wv),
                ("wo", &b.wo),
                ("ln2_g", &b.ln2_g),
                ("ln2_b", &b.ln2_b),
                ("cq", &b.cq),
                ("ck", &b.ck),
                ("cv", &b.cv),
                ("co", &b.co),
                ("ln3_g", &b.ln3_g),
                ("ln3_b", &b.ln3_b),
                ("w1", &b.w1),
                ("b1", &b.b1),
                ("w2", &b.w2),
                ("b2", &b.b2),
            ] {
                out.push((format!("block{i}.{name}"), t));
            }
        }
        out.push(("ln_f_g".into(), &self.ln_f_g));
        out.push(("ln_f_b".into(), &self.ln_f_b));
        out.push(("head_w".into(), &self.head_w));
        out.push(("head_b".into(), &self.head_b));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("embed_table".into(), &mut self.embed_table),
            ("text_pos".into(), &mut self.text_pos),
            ("w_in".into(), &mut self.w_in),
            ("w_in_b".into(), &mut self.w_in_b),
            ("scale_emb".into(), &mut self.scale_emb),
            ("row_emb".into(), &mut self.row_emb),
            ("col_emb".into(), &mut self.col_emb),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (name, t) in [
                ("ln1_g", &mut b.ln1_g),
                ("ln1_b", &mut b.ln1_b),
                ("wq", &mut b.wq),
                ("wk", &mut b.wk),
                ("wv", &mut b.wv),
                ("wo", &mut b.wo),
                ("ln2_g", &mut b.ln2_g),
                ("ln2_b", &mut b.ln2_b),
                ("cq", &mut b.cq),
                ("ck", &mut b.ck),
                ("cv", &mut b.cv),
                ("co", &mut b.co),
                ("ln3_g", &mut b.ln3_g),
                ("ln3_b", &mut b.ln3_b),
                ("w1", &mut b.w1),
                ("b1", &mut b.b1),
                ("w2", &mut b.w2),
                ("b2", &mut b.b2),
            ] {
                out.push((format!("block{i}.{name}"), t));
            }
        }
        out.push(("ln_f_g".into(), &mut self.ln_f_g));
        out.push(("ln_f_b".into(), &mut self.ln_f_b));
        out.push(("head_w".into(), &mut self.head_w));
        out.push(("head_b".into(), &mut self.head_b));
        out
    }
}
