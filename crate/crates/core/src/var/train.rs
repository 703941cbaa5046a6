//! Backbone pretraining: teacher-forced cross-entropy summed over scales,
//! Adam over all parameters, caption-variant augmentation per step.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::MemoryVars;
use super::text::{build_condition, parse_prompt};
use super::VarModel;
use crate::error::{Error, Result};
use crate::msvq::{Codebook, TokenMapPyramid};
use crate::optim::{Adam, AdamConfig};
use crate::rng::stream;
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VarTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Optional hard cap on optimizer steps (used by memorization checks).
    pub max_steps: Option<usize>,
}

impl Default for VarTrainConfig {
    fn default() -> Self {
        VarTrainConfig { epochs: 50, batch_size: 8, lr: 3e-3, max_steps: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VarTrainReport {
    pub steps: u64,
    pub final_total_loss: f64,
    pub initial_total_loss: f64,
}

/// One pretraining item: the encoded pyramid plus the caption factors.
#[derive(Clone)]
pub struct TrainItem {
    pub pyramid: TokenMapPyramid,
    pub content_word: String,
    pub style_word: String,
    /// -1 small, 0 neutral, +1 big — drives size-modifier captions.
    pub size_class: i8,
}

impl TrainItem {
    pub fn size_class_of(scale: f64) -> i8 {
        if scale > 1.05 {
            1
        } else if scale < 0.95 {
            -1
        } else {
            0
        }
    }
}

/// Trains the transformer on encoded pyramids. Single-threaded and
/// deterministic for a fixed seed; non-finite loss aborts with a diagnostic.
pub fn pretrain(
    model: &mut VarModel,
    codebook: &Codebook,
    items: &[TrainItem],
    cfg: &VarTrainConfig,
    seed: u64,
) -> Result<VarTrainReport> {
    if items.is_empty() {
        return Err(Error::Config("pretraining corpus is empty".into()));
    }
    let sizes: Vec<usize> = model.named_tensors().iter().map(|(_, t)| t.numel()).collect();
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr), &sizes);
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut last_loss = f64::NAN;
    let mut first_loss = None;
    let mut steps = 0u64;
    'outer: for epoch in 0..cfg.epochs {
        let mut shuffle_rng = stream(seed, "var/shuffle", epoch as u64);
        order.shuffle(&mut shuffle_rng);
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grad_acc: Vec<Tensor> = Vec::new();
            let mut batch_loss = 0.0;
            for (ii, &i) in batch.iter().enumerate() {
                let mut caption_rng =
                    stream(seed, "var/caption", (epoch * 1_000_003 + bi * 1009 + ii) as u64);
                let (loss, grads) = item_grads(model, codebook, &items[i], &mut caption_rng)?;
                batch_loss += loss;
                if grad_acc.is_empty() {
                    grad_acc = grads;
                } else {
                    for (a, g) in grad_acc.iter_mut().zip(grads.iter()) {
                        *a = a.add(g);
                    }
                }
            }
            batch_loss /= batch.len() as f64;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "pretraining loss became non-finite at epoch {epoch} (last finite loss {last_loss})"
                )));
            }
            if first_loss.is_none() {
                first_loss = Some(batch_loss);
            }
            last_loss = batch_loss;
            let scale = 1.0 / batch.len() as f64;
            let grads: Vec<Tensor> = grad_acc.iter().map(|g| g.scale(scale)).collect();
            let mut named = model.named_tensors_mut();
            let mut params: Vec<&mut Tensor> = named.iter_mut().map(|(_, t)| &mut **t).collect();
            opt.step(&mut params, &grads);
            steps += 1;
            if let Some(cap) = cfg.max_steps {
                if steps as usize >= cap {
                    break 'outer;
                }
            }
        }
    }
    model.mark_trained();
    Ok(VarTrainReport {
        steps,
        final_total_loss: last_loss,
        initial_total_loss: first_loss.unwrap_or(f64::NAN),
    })
}

/// Total Eq-style summed loss and parameter gradients for one item.
fn item_grads(
    model: &VarModel,
    codebook: &Codebook,
    item: &TrainItem,
    caption_rng: &mut impl Rng,
) -> Result<(f64, Vec<Tensor>)> {
    let caption = super::text::caption_variant(
        &item.content_word,
        &item.style_word,
        item.size_class,
        caption_rng,
    );
    let toks = parse_prompt(&caption)?;
    let tape = Tape::new();
    let pv = model.param_vars(&tape, true);
    let cond = build_condition(
        &tape,
        pv.embed_table,
        pv.text_pos,
        &toks,
        None,
        None,
        model.cfg.max_text_len,
    )?;
    let logits = model.forward_groups(
        &tape,
        codebook,
        &item.pyramid.maps,
        model.schedule.k(),
        &pv,
        &cond,
        &[] as &[MemoryVars],
    )?;
    let mut total: Option<crate::tensor::Var> = None;
    for (l, targets) in logits.iter().zip(item.pyramid.maps.iter()) {
        let ce = l.cross_entropy(targets)?;
        total = Some(match total {
            Some(acc) => acc.add(ce),
            None => ce,
        });
    }
    let total = total.unwrap();
    let grads = tape.backward(total);
    let vars = VarModel::param_var_list(&pv);
    let out: Vec<Tensor> = vars.iter().map(|v| grads.get(*v).unwrap()).collect();
    Ok((total.item(), out))
}

/// Greedy final-scale token accuracy under teacher forcing of all previous
/// ground-truth scales.
pub fn final_scale_accuracy(
    model: &VarModel,
    codebook: &Codebook,
    items: &[TrainItem],
) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for item in items {
        let caption = format!(
            "a photo of a {} in {} style",
            item.content_word, item.style_word
        );
        let toks = parse_prompt(&caption)?;
        let tape = Tape::new();
        let pv = model.param_vars(&tape, false);
        let cond = build_condition(
            &tape,
            pv.embed_table,
            pv.text_pos,
            &toks,
            None,
            None,
            model.cfg.max_text_len,
        )?;
        let logits = model.forward_groups(
            &tape,
            codebook,
            &item.pyramid.maps,
            model.schedule.k(),
            &pv,
            &cond,
            &[] as &[MemoryVars],
        )?;
        let last = logits.last().unwrap().value();
        let v = model.cfg.vocab_v;
        let targets = item.pyramid.maps.last().unwrap();
        for (p, &t) in targets.iter().enumerate() {
            let row = &last.data()[p * v..(p + 1) * v];
            let mut best = 0;
            for j in 1..v {
                if row[j] > row[best] {
                    best = j;
                }
            }
            correct += (best == t) as usize;
            total += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}

/// Mean per-scale loss of an untrained or trained model on one item, for
/// initialization sanity checks.
pub fn mean_per_scale_loss(
    model: &VarModel,
    codebook: &Codebook,
    item: &TrainItem,
) -> Result<f64> {
    let caption = format!(
        "a photo of a {} in {} style",
        item.content_word, item.style_word
    );
    let toks = parse_prompt(&caption)?;
    let tape = Tape::new();
    let pv = model.param_vars(&tape, false);
    let cond = build_condition(
        &tape,
        pv.embed_table,
        pv.text_pos,
        &toks,
        None,
        None,
        model.cfg.max_text_len,
    )?;
    let logits = model.forward_groups(
        &tape,
        codebook,
        &item.pyramid.maps,
        model.schedule.k(),
        &pv,
        &cond,
        &[] as &[MemoryVars],
    )?;
    let mut sum = 0.0;
    for (l, targets) in logits.iter().zip(item.pyramid.maps.iter()) {
        sum += l.cross_entropy(targets)?.item();
    }
    Ok(sum / model.schedule.k() as f64)
}
