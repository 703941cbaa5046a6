//! VQ-VAE training: reconstruction through a straight-through estimator,
//! codebook loss toward the encoder latent, and an L2 commitment term.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{MsvqConfig, MsvqModel};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::rng::stream;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MsvqTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub commitment: f64,
}

impl Default for MsvqTrainConfig {
    fn default() -> Self {
        MsvqTrainConfig { epochs: 30, batch_size: 8, lr: 2e-3, commitment: 0.25 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MsvqTrainReport {
    pub epochs: usize,
    pub final_train_loss: f64,
    pub codebook_usage: f64,
    pub guard_triggers: usize,
    pub min_code_distance: f64,
}

/// Trains encoder, decoder and codebook on a corpus of `[side, side, 3]`
/// images. Deterministic for a fixed seed; aborts with a diagnostic if the
/// loss goes non-finite.
pub fn train_vqvae(
    corpus: &[Tensor],
    cfg: MsvqConfig,
    train: &MsvqTrainConfig,
    seed: u64,
) -> Result<(MsvqModel, MsvqTrainReport)> {
    if corpus.is_empty() {
        return Err(Error::Config("vqvae training corpus is empty".into()));
    }
    let mut init_rng = stream(seed, "vqvae/init", 0);
    let mut model = MsvqModel::new(cfg, &mut init_rng)?;

    // Parameter order: conv weights+biases, then the codebook.
    let sizes: Vec<usize> = {
        let mut s = Vec::new();
        for c in model.convs() {
            s.push(c.weight.numel());
            s.push(c.bias.numel());
        }
        s.push(model.codebook.vectors().numel());
        s
    };
    let mut opt = Adam::new(AdamConfig::with_lr(train.lr), &sizes);

    let n = corpus.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut last_loss = f64::NAN;
    let mut guard_triggers = 0usize;
    for epoch in 0..train.epochs {
        let mut shuffle_rng = stream(seed, "vqvae/shuffle", epoch as u64);
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut usage = vec![false; model.codebook.vocab()];
        for batch in order.chunks(train.batch_size) {
            let mut grad_acc: Vec<Tensor> = Vec::new();
            let mut batch_loss = 0.0;
            for &i in batch {
                let (loss, grads, used, guarded) = step_grads(&model, &corpus[i], train.commitment);
                batch_loss += loss;
                guard_triggers += guarded;
                for u in used {
                    usage[u] = true;
                }
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
                    "vqvae loss became non-finite at epoch {epoch} (last finite loss {last_loss})"
                )));
            }
            last_loss = batch_loss;
            epoch_loss = batch_loss;
            let scale = 1.0 / batch.len() as f64;
            let mut grads: Vec<Tensor> = grad_acc.iter().map(|g| g.scale(scale)).collect();
            // Entry 0 of the codebook stays pinned at zero.
            let cb_grad = grads.last_mut().unwrap();
            let mut data = cb_grad.data().to_vec();
            for c in 0..model.cfg.d_code {
                data[c] = 0.0;
            }
            *cb_grad = Tensor::from_vec(cb_grad.shape().to_vec(), data);

            let mut cb = model.codebook.vectors().clone();
            {
                let mut convs = model.convs_mut();
                let mut params: Vec<&mut Tensor> = Vec::new();
                for c in convs.iter_mut() {
                    params.push(&mut c.weight);
                    params.push(&mut c.bias);
                }
                params.push(&mut cb);
                opt.step(&mut params, &grads);
            }
            model.codebook.set_vectors(cb);
        }
        let _ = epoch_loss;

        // Revive codes unused this epoch (except the pinned zero entry) by
        // snapping them to latent positions of a random corpus image.
        if epoch + 1 < train.epochs {
            let mut revive_rng = stream(seed, "vqvae/revive", epoch as u64);
            let dead: Vec<usize> = (1..model.codebook.vocab()).filter(|&v| !usage[v]).collect();
            if !dead.is_empty() {
                let img = &corpus[revive_rng.gen_range(0..n)];
                let latent = model.encode_latent(img)?;
                let d = model.cfg.d_code;
                let positions = latent.grid.numel() / d;
                let mut data = model.codebook.vectors().data().to_vec();
                for v in dead {
                    let p = revive_rng.gen_range(0..positions);
                    for c in 0..d {
                        data[v * d + c] =
                            latent.grid.data()[p * d + c] + revive_rng.gen_range(-1e-3..1e-3);
                    }
                }
                model
                    .codebook
                    .set_vectors(Tensor::from_vec(vec![model.codebook.vocab(), d], data));
            }
        }
    }

    model.mark_trained();

    // Usage measured over the whole corpus with the final codebook.
    let mut usage = vec![false; model.codebook.vocab()];
    for img in corpus {
        let latent = model.encode_latent(img)?;
        let (pyr, _) = model.quantize_latent(&latent);
        for map in &pyr.maps {
            for &t in map {
                usage[t] = true;
            }
        }
    }
    let used = usage.iter().filter(|&&u| u).count();

    let report = MsvqTrainReport {
        epochs: train.epochs,
        final_train_loss: last_loss,
        codebook_usage: used as f64 / model.codebook.vocab() as f64,
        guard_triggers,
        min_code_distance: model.codebook.min_pairwise_distance(),
    };
    Ok((model, report))
}

/// One image's loss and gradients (conv params in order, then codebook).
/// Also returns the set of code indices used, for dead-code revival.
fn step_grads(model: &MsvqModel, img: &Tensor, commitment: f64) -> (f64, Vec<Tensor>, Vec<usize>, usize) {
    let tape = Tape::new();
    // Leaves for every trainable tensor.
    let mut ws = Vec::new();
    let mut bs = Vec::new();
    for c in model.convs() {
        ws.push(tape.leaf(c.weight.clone()));
        bs.push(tape.leaf(c.bias.clone()));
    }
    let cb = tape.leaf(model.codebook.vectors().clone());
    let params = super::ConvParams { w: ws.clone(), b: bs.clone() };

    let x = tape.constant(img.clone());
    let z = model.encoder_forward(x, &params);

    // Quantize with the current codebook values; token selection is not
    // differentiable, gradients reach the codebook through the gathers below.
    let trace = model.quantize_trace(&super::LatentImage { grid: z.value() });
    let pyr = &trace.pyramid;
    let guarded = pyr.maps.iter().filter(|m| !m.is_empty() && m.iter().all(|&t| t == 0)).count();
    let mut used = Vec::new();
    for map in &pyr.maps {
        used.extend_from_slice(map);
    }
    used.sort_unstable();
    used.dedup();

    let big = model.schedule.final_side();
    let d = model.cfg.d_code;
    let mut fhat: Option<Var> = None;
    // Each scale's codes are pulled toward the residual patch they quantized.
    let mut l_codebook: Option<Var> = None;
    for (i, map) in pyr.maps.iter().enumerate() {
        let side = model.schedule.sides()[i];
        let q = cb.gather_rows(map);
        let target = tape.constant(trace.downs[i].reshape(vec![side * side, d]));
        let dq = q.sub(target);
        let term = dq.mul(dq).mean_all();
        l_codebook = Some(match l_codebook {
            Some(acc) => acc.add(term),
            None => term,
        });
        let up = q.reshape(vec![side, side, d]).interpolate(big).expect("square map");
        fhat = Some(match fhat {
            Some(acc) => acc.add(up),
            None => up,
        });
    }
    let fhat = fhat.unwrap();
    let l_codebook = l_codebook.unwrap();

    // Straight-through: decoder sees the quantized features, the encoder
    // receives the reconstruction gradient unchanged.
    let ste = z.add(fhat.sub(z).detach());
    let recon = model.decoder_forward(ste, &params);
    let diff = recon.sub(x);
    let l_rec = diff.mul(diff).mean_all();
    let dc = z.sub(fhat.detach());
    let l_commit = dc.mul(dc).mean_all();
    let loss = l_rec.add(l_codebook).add(l_commit.scale(commitment));
    if std::env::var("VQDEBUG").is_ok() {
        eprintln!(
            "rec {:.5} cb {:.5} commit {:.5} |z| {:.3} |cbv| {:.3} guards {}",
            l_rec.item(),
            l_codebook.item(),
            l_commit.item(),
            z.value().frob_norm(),
            model.codebook.vectors().frob_norm(),
            guarded
        );
    }

    let grads = tape.backward(loss);
    let mut out = Vec::new();
    for (w, b) in ws.iter().zip(bs.iter()) {
        out.push(grads.get(*w).unwrap());
        out.push(grads.get(*b).unwrap());
    }
    out.push(grads.get(cb).unwrap());
    (loss.item(), out, used, guarded)
}

/// Mean per-pixel-channel squared reconstruction error over a set of images.
pub fn reconstruction_mse(model: &MsvqModel, images: &[Tensor]) -> Result<f64> {
    let mut total = 0.0;
    for img in images {
        let pyr = model.encode(img)?;
        let rec = model.decode(&pyr)?;
        total += rec.mse(img);
    }
    Ok(total / images.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_corpus_rejected() {
        let r = train_vqvae(&[], MsvqConfig::default(), &MsvqTrainConfig::default(), 1);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn degenerate_corpus_memorizes() {
        // A corpus of identical images reaches near-zero reconstruction error
        // and uses at least one codebook entry.
        let cfg = MsvqConfig {
            image_side: 16,
            d_code: 4,
            vocab: 16,
            schedule: vec![1, 2, 4],
            enc_widths: (8, 12),
            dec_widths: (12, 8, 6),
            monotone_guard: true,
        };
        // Two-tone halves with a red block; coarse enough for the 4x4 latent.
        let img = {
            let mut data = vec![0.15; 16 * 16 * 3];
            for y in 0..16 {
                for x in 0..16 {
                    let p = (y * 16 + x) * 3;
                    if x >= 8 {
                        data[p..p + 3].copy_from_slice(&[0.75, 0.75, 0.7]);
                    }
                    if (4..8).contains(&y) && (4..8).contains(&x) {
                        data[p..p + 3].copy_from_slice(&[0.9, 0.1, 0.1]);
                    }
                }
            }
            Tensor::from_vec(vec![16, 16, 3], data)
        };
        let corpus = vec![img; 8];
        let train = MsvqTrainConfig { epochs: 250, batch_size: 4, lr: 3e-3, commitment: 0.25 };
        let (model, report) = train_vqvae(&corpus, cfg, &train, 7).unwrap();
        let mse = reconstruction_mse(&model, &corpus[..1]).unwrap();
        assert!(mse < 5e-3, "degenerate corpus should memorize, mse = {mse}");
        assert!(report.codebook_usage > 0.0);
    }
}
