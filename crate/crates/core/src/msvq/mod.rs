//! Miniature multi-scale residual vector-quantized autoencoder.
//!
//! The encoder maps a `[64, 64, 3]` image to a `[16, 16, d_code]` latent,
//! which is quantized scale by scale: at each side in the schedule the
//! current residual is downsampled, snapped to the nearest codebook vector,
//! and the upsampled quantized contribution is subtracted. Decoding sums the
//! per-scale contributions at the final side and runs the conv decoder.

pub mod conv;
mod train;

pub use train::{reconstruction_mse, train_vqvae, MsvqTrainConfig, MsvqTrainReport};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};
use conv::Conv2d;

/// VQ vocabulary shared across scales. Entry 0 is pinned to the zero vector
/// so a "no contribution" token always exists; the trainer never updates it.
#[derive(Clone)]
pub struct Codebook {
    vectors: Tensor, // [V, d_code]
}

impl Codebook {
    pub fn new(vectors: Tensor) -> Codebook {
        assert_eq!(vectors.shape().len(), 2);
        Codebook { vectors }
    }

    pub fn init(vocab: usize, d_code: usize, rng: &mut impl Rng) -> Codebook {
        let mut data = Tensor::randn(&[vocab, d_code], 0.3, rng).data().to_vec();
        for c in 0..d_code {
            data[c] = 0.0;
        }
        Codebook { vectors: Tensor::from_vec(vec![vocab, d_code], data) }
    }

    pub fn vocab(&self) -> usize {
        self.vectors.shape()[0]
    }

    pub fn d_code(&self) -> usize {
        self.vectors.shape()[1]
    }

    pub fn vectors(&self) -> &Tensor {
        &self.vectors
    }

    pub fn set_vectors(&mut self, v: Tensor) {
        assert_eq!(v.shape(), self.vectors.shape());
        self.vectors = v;
    }

    /// Nearest code index by L2; ties break to the lowest index.
    pub fn nearest(&self, query: &[f64]) -> usize {
        let d = self.d_code();
        debug_assert_eq!(query.len(), d);
        let data = self.vectors.data();
        let mut best = 0usize;
        let mut best_d2 = f64::INFINITY;
        for v in 0..self.vocab() {
            let row = &data[v * d..(v + 1) * d];
            let mut d2 = 0.0;
            for c in 0..d {
                let diff = row[c] - query[c];
                d2 += diff * diff;
            }
            if d2 < best_d2 {
                best_d2 = d2;
                best = v;
            }
        }
        best
    }

    /// Dequantizes a token grid to a `[side, side, d_code]` map.
    pub fn lookup_map(&self, tokens: &[usize], side: usize) -> Tensor {
        let d = self.d_code();
        assert_eq!(tokens.len(), side * side);
        let data = self.vectors.data();
        let mut out = vec![0.0; side * side * d];
        for (p, &t) in tokens.iter().enumerate() {
            out[p * d..(p + 1) * d].copy_from_slice(&data[t * d..(t + 1) * d]);
        }
        Tensor::from_vec(vec![side, side, d], out)
    }

    /// Pairwise distinctness of trained code vectors (duplicate detection).
    pub fn min_pairwise_distance(&self) -> f64 {
        let (v, d) = (self.vocab(), self.d_code());
        let data = self.vectors.data();
        let mut min = f64::INFINITY;
        for i in 0..v {
            for j in (i + 1)..v {
                let mut d2 = 0.0;
                for c in 0..d {
                    let diff = data[i * d + c] - data[j * d + c];
                    d2 += diff * diff;
                }
                min = min.min(d2.sqrt());
            }
        }
        min
    }
}

/// Strictly ascending token-map sides, first entry 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleSchedule {
    sides: Vec<usize>,
}

impl ScaleSchedule {
    pub fn new(sides: Vec<usize>) -> Result<ScaleSchedule> {
        if sides.is_empty() {
            return Err(Error::Config("schedule must have at least one scale".into()));
        }
        if sides[0] != 1 {
            return Err(Error::Config("schedule must start at side 1".into()));
        }
        if !sides.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(format!("schedule sides must be strictly ascending: {sides:?}")));
        }
        Ok(ScaleSchedule { sides })
    }

    pub fn k(&self) -> usize {
        self.sides.len()
    }

    pub fn sides(&self) -> &[usize] {
        &self.sides
    }

    pub fn side(&self, scale: usize) -> usize {
        self.sides[scale - 1]
    }

    pub fn final_side(&self) -> usize {
        *self.sides.last().unwrap()
    }
}

/// The multi-scale token maps `maps[k]`, each `sides[k] * sides[k]` codebook
/// indices in row-major order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenMapPyramid {
    pub schedule: ScaleSchedule,
    pub maps: Vec<Vec<usize>>,
}

impl TokenMapPyramid {
    pub fn validate(&self, vocab: usize) -> Result<()> {
        if self.maps.len() != self.schedule.k() {
            return Err(Error::Shape(format!(
                "pyramid has {} maps for a {}-scale schedule",
                self.maps.len(),
                self.schedule.k()
            )));
        }
        for (i, map) in self.maps.iter().enumerate() {
            let side = self.schedule.sides()[i];
            if map.len() != side * side {
                return Err(Error::Shape(format!("scale {} map has {} tokens, want {}", i + 1, map.len(), side * side)));
            }
            if let Some(&bad) = map.iter().find(|&&t| t >= vocab) {
                return Err(Error::Shape(format!("token {bad} out of range [0, {vocab})")));
            }
        }
        Ok(())
    }
}

/// Continuous encoder output at the final schedule side.
#[derive(Clone)]
pub struct LatentImage {
    pub grid: Tensor, // [S, S, d_code]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MsvqConfig {
    pub image_side: usize,
    pub d_code: usize,
    pub vocab: usize,
    pub schedule: Vec<usize>,
    pub enc_widths: (usize, usize),
    pub dec_widths: (usize, usize, usize),
    /// If a scale's nearest-code contribution would increase the cumulative
    /// residual error, emit the zero code for that whole scale instead.
    pub monotone_guard: bool,
}

impl Default for MsvqConfig {
    fn default() -> Self {
        MsvqConfig {
            image_side: 64,
            d_code: 16,
            vocab: 256,
            schedule: vec![1, 2, 3, 4, 5, 6, 8, 10, 13, 16],
            enc_widths: (24, 48),
            dec_widths: (48, 24, 12),
            monotone_guard: true,
        }
    }
}

/// Trained encoder/decoder/codebook triple.
#[derive(Clone)]
pub struct MsvqModel {
    pub cfg: MsvqConfig,
    pub schedule: ScaleSchedule,
    pub codebook: Codebook,
    enc1: Conv2d,
    enc2: Conv2d,
    enc_out: Conv2d,
    dec_in: Conv2d,
    dec1: Conv2d,
    dec2: Conv2d,
    dec_out: Conv2d,
    up1: std::sync::Arc<Vec<i64>>,
    up2: std::sync::Arc<Vec<i64>>,
    trained: bool,
}

/// Index table for a 2x nearest-neighbor upsample of `[side, side, c]`.
fn nearest_up2_indices(side: usize, c: usize) -> Vec<i64> {
    let out = side * 2;
    let mut idx = Vec::with_capacity(out * out * c);
    for y in 0..out {
        for x in 0..out {
            let p = ((y / 2) * side + x / 2) * c;
            for ch in 0..c {
                idx.push((p + ch) as i64);
            }
        }
    }
    idx
}

impl MsvqModel {
    pub fn new(cfg: MsvqConfig, rng: &mut impl Rng) -> Result<MsvqModel> {
        let schedule = ScaleSchedule::new(cfg.schedule.clone())?;
        let latent = cfg.image_side / 4;
        if schedule.final_side() != latent {
            return Err(Error::Config(format!(
                "schedule final side {} must equal latent side {}",
                schedule.final_side(),
                latent
            )));
        }
        let (e1, e2) = cfg.enc_widths;
        let (d1, d2, d3) = cfg.dec_widths;
        let side = cfg.image_side;
        Ok(MsvqModel {
            codebook: Codebook::init(cfg.vocab, cfg.d_code, rng),
            enc1: Conv2d::new(side, 3, e1, 3, 2, 1, rng),
            enc2: Conv2d::new(side / 2, e1, e2, 3, 2, 1, rng),
            enc_out: Conv2d::new(side / 4, e2, cfg.d_code, 1, 1, 0, rng),
            dec_in: Conv2d::new(side / 4, cfg.d_code, d1, 1, 1, 0, rng),
            dec1: Conv2d::new(side / 2, d1, d2, 3, 1, 1, rng),
            dec2: Conv2d::new(side, d2, d3, 3, 1, 1, rng),
            dec_out: Conv2d::new(side, d3, 3, 1, 1, 0, rng),
            up1: std::sync::Arc::new(nearest_up2_indices(side / 4, d1)),
            up2: std::sync::Arc::new(nearest_up2_indices(side / 2, d2)),
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

    pub(crate) fn convs_mut(&mut self) -> Vec<&mut Conv2d> {
        vec![
            &mut self.enc1,
            &mut self.enc2,
            &mut self.enc_out,
            &mut self.dec_in,
            &mut self.dec1,
            &mut self.dec2,
            &mut self.dec_out,
        ]
    }

    pub(crate) fn convs(&self) -> Vec<&Conv2d> {
        vec![&self.enc1, &self.enc2, &self.enc_out, &self.dec_in, &self.dec1, &self.dec2, &self.dec_out]
    }

    /// Encoder forward on a tape. `img` is `[side, side, 3]`. The tanh head
    /// bounds the latent so codebook and commitment targets cannot run away.
    pub(crate) fn encoder_forward<'t>(&self, img: Var<'t>, params: &ConvParams<'t>) -> Var<'t> {
        let h = self.enc1.forward(img, params.w[0], params.b[0]).silu();
        let h = self.enc2.forward(h, params.w[1], params.b[1]).silu();
        self.enc_out.forward(h, params.w[2], params.b[2]).tanh()
    }

    /// Decoder forward on a tape. `feat` is `[S, S, d_code]`; output is a
    /// sigmoid-bounded `[side, side, 3]` image. Upsampling is 2x nearest
    /// followed by a conv, which keeps high-frequency texture sharp.
    pub(crate) fn decoder_forward<'t>(&self, feat: Var<'t>, params: &ConvParams<'t>) -> Var<'t> {
        let s = self.cfg.image_side;
        let (d1, d2) = (self.cfg.dec_widths.0, self.cfg.dec_widths.1);
        let h = self.dec_in.forward(feat, params.w[3], params.b[3]).silu();
        let h = h.gather_flat(&self.up1, vec![s / 2, s / 2, d1]);
        let h = self.dec1.forward(h, params.w[4], params.b[4]).silu();
        let h = h.gather_flat(&self.up2, vec![s, s, d2]);
        let h = self.dec2.forward(h, params.w[5], params.b[5]).silu();
        self.dec_out.forward(h, params.w[6], params.b[6]).sigmoid()
    }

    pub(crate) fn const_params<'t>(&self, tape: &'t Tape) -> ConvParams<'t> {
        let mut w = Vec::new();
        let mut b = Vec::new();
        for c in self.convs() {
            w.push(tape.constant(c.weight.clone()));
            b.push(tape.constant(c.bias.clone()));
        }
        ConvParams { w, b }
    }

    /// Continuous latent of an image (the encoder output).
    pub fn encode_latent(&self, image: &Tensor) -> Result<LatentImage> {
        let (h, w, c) = image.expect_map3()?;
        if h != self.cfg.image_side || w != self.cfg.image_side || c != 3 {
            return Err(Error::Shape(format!(
                "expected [{0}, {0}, 3] image, got [{h}, {w}, {c}]",
                self.cfg.image_side
            )));
        }
        let tape = Tape::new();
        let img = tape.constant(image.clone());
        let params = self.const_params(&tape);
        let grid = self.encoder_forward(img, &params).value();
        Ok(LatentImage { grid })
    }

    /// Residual multi-scale quantization of a latent. Returns the pyramid and
    /// the cumulative residual L2 after each scale.
    pub fn quantize_latent(&self, latent: &LatentImage) -> (TokenMapPyramid, Vec<f64>) {
        let trace = self.quantize_trace(latent);
        (trace.pyramid, trace.errors)
    }

    /// Quantization with the per-scale downsampled residual targets kept,
    /// for codebook training.
    pub(crate) fn quantize_trace(&self, latent: &LatentImage) -> QuantizeTrace {
        let d = self.cfg.d_code;
        let big = self.schedule.final_side();
        let mut residual = latent.grid.clone();
        let mut maps = Vec::with_capacity(self.schedule.k());
        let mut errors = Vec::with_capacity(self.schedule.k());
        let mut downs = Vec::with_capacity(self.schedule.k());
        for &side in self.schedule.sides() {
            let down = residual.interpolate_bilinear(side).expect("square residual");
            let mut tokens = Vec::with_capacity(side * side);
            for p in 0..side * side {
                tokens.push(self.codebook.nearest(&down.data()[p * d..(p + 1) * d]));
            }
            let up = self
                .codebook
                .lookup_map(&tokens, side)
                .interpolate_bilinear(big)
                .expect("square map");
            let next = residual.sub(&up);
            downs.push(down);
            if self.cfg.monotone_guard && next.frob_norm() > residual.frob_norm() {
                // Zero-code map: contribution is exactly zero, error unchanged.
                maps.push(vec![0usize; side * side]);
                errors.push(residual.frob_norm());
                continue;
            }
            residual = next;
            errors.push(residual.frob_norm());
            maps.push(tokens);
        }
        QuantizeTrace {
            pyramid: TokenMapPyramid { schedule: self.schedule.clone(), maps },
            errors,
            downs,
        }
    }

    /// Residual multi-scale quantization of an image.
    pub fn encode(&self, image: &Tensor) -> Result<TokenMapPyramid> {
        if !self.trained {
            return Err(Error::MissingArtifact("msvq model is untrained".into()));
        }
        let latent = self.encode_latent(image)?;
        Ok(self.quantize_latent(&latent).0)
    }

    /// Sum of per-scale interpolated dequantized maps at the final side —
    /// the decoder input.
    pub fn dequant_sum(&self, pyramid: &TokenMapPyramid) -> Result<Tensor> {
        pyramid.validate(self.cfg.vocab)?;
        if pyramid.schedule != self.schedule {
            return Err(Error::Shape("pyramid schedule does not match the model".into()));
        }
        let big = self.schedule.final_side();
        let mut sum = Tensor::zeros(&[big, big, self.cfg.d_code]);
        for (i, map) in pyramid.maps.iter().enumerate() {
            let side = self.schedule.sides()[i];
            let up = self.codebook.lookup_map(map, side).interpolate_bilinear(big)?;
            sum = sum.add(&up);
        }
        Ok(sum)
    }

    /// Runs the decoder on an arbitrary final-side feature map.
    pub fn decode_latent(&self, feat: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let params = self.const_params(&tape);
        let f = tape.constant(feat.clone());
        Ok(self.decoder_forward(f, &params).value())
    }

    /// Dequantize, sum across scales and decode to an image in [0, 1].
    pub fn decode(&self, pyramid: &TokenMapPyramid) -> Result<Tensor> {
        if !self.trained {
            return Err(Error::MissingArtifact("msvq model is untrained".into()));
        }
        let feat = self.dequant_sum(pyramid)?;
        self.decode_latent(&feat)
    }

    /// Copy of the pyramid with scale `k` (1-based) replaced by the zero
    /// residual, removing its contribution from the decode sum.
    pub fn ablate_scale(&self, pyramid: &TokenMapPyramid, k: usize) -> Result<TokenMapPyramid> {
        if k == 0 || k > self.schedule.k() {
            return Err(Error::Shape(format!("scale {k} out of range [1, {}]", self.schedule.k())));
        }
        let mut out = pyramid.clone();
        out.maps[k - 1] = vec![0usize; out.maps[k - 1].len()];
        Ok(out)
    }
}

pub(crate) struct ConvParams<'t> {
    pub w: Vec<Var<'t>>,
    pub b: Vec<Var<'t>>,
}

pub(crate) struct QuantizeTrace {
    pub pyramid: TokenMapPyramid,
    pub errors: Vec<f64>,
    /// Downsampled residual each scale quantized, the codebook-loss target.
    pub downs: Vec<Tensor>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny_model() -> MsvqModel {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let cfg = MsvqConfig {
            image_side: 16,
            d_code: 4,
            vocab: 32,
            schedule: vec![1, 2, 4],
            enc_widths: (8, 12),
            dec_widths: (12, 8, 6),
            monotone_guard: true,
        };
        let mut m = MsvqModel::new(cfg, &mut rng).unwrap();
        m.mark_trained();
        m
    }

    #[test]
    fn schedule_validation() {
        assert!(ScaleSchedule::new(vec![1, 2, 3]).is_ok());
        assert!(ScaleSchedule::new(vec![2, 3]).is_err());
        assert!(ScaleSchedule::new(vec![1, 3, 3]).is_err());
        assert!(ScaleSchedule::new(vec![]).is_err());
    }

    #[test]
    fn untrained_encode_rejected() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let m = MsvqModel::new(
            MsvqConfig {
                image_side: 16,
                d_code: 4,
                vocab: 32,
                schedule: vec![1, 2, 4],
                enc_widths: (8, 12),
                dec_widths: (12, 8, 6),
                monotone_guard: true,
            },
            &mut rng,
        )
        .unwrap();
        let img = Tensor::zeros(&[16, 16, 3]);
        assert!(matches!(m.encode(&img), Err(Error::MissingArtifact(_))));
    }

    #[test]
    fn encode_tokens_in_range_and_monotone() {
        let m = tiny_model();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let img = Tensor::from_vec(
            vec![16, 16, 3],
            (0..16 * 16 * 3).map(|_| rand::Rng::gen_range(&mut rng, 0.0..1.0)).collect(),
        );
        let latent = m.encode_latent(&img).unwrap();
        let (pyr, errs) = m.quantize_latent(&latent);
        pyr.validate(m.cfg.vocab).unwrap();
        for w in errs.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "residual error increased: {errs:?}");
        }
    }

    #[test]
    fn single_code_latent_roundtrip() {
        // A latent equal to the upsampled code-7 vector at scale 1 quantizes
        // to code 7 at scale 1 and the zero code everywhere after.
        let m = tiny_model();
        let d = m.cfg.d_code;
        let code: Vec<f64> = m.codebook.vectors().data()[7 * d..8 * d].to_vec();
        let grid = Tensor::from_vec(vec![1, 1, d], code)
            .interpolate_bilinear(m.schedule.final_side())
            .unwrap();
        let (pyr, errs) = m.quantize_latent(&LatentImage { grid });
        assert_eq!(pyr.maps[0], vec![7]);
        for map in &pyr.maps[1..] {
            assert!(map.iter().all(|&t| t == 0), "later scales should hit the zero code");
        }
        assert!(errs.last().unwrap() < &1e-9);
    }

    #[test]
    fn dequant_sum_is_linear_in_scales() {
        // Eq-4 structure: the decode input is exactly the sum of per-scale terms.
        let m = tiny_model();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let maps: Vec<Vec<usize>> = m
            .schedule
            .sides()
            .iter()
            .map(|&s| (0..s * s).map(|_| rand::Rng::gen_range(&mut rng, 0..m.cfg.vocab)).collect())
            .collect();
        let pyr = TokenMapPyramid { schedule: m.schedule.clone(), maps };
        let total = m.dequant_sum(&pyr).unwrap();
        let mut acc = Tensor::zeros(total.shape());
        for k in 1..=m.schedule.k() {
            // isolate scale k by zeroing all others
            let mut solo = pyr.clone();
            for (j, map) in solo.maps.iter_mut().enumerate() {
                if j + 1 != k {
                    *map = vec![0; map.len()];
                }
            }
            acc = acc.add(&m.dequant_sum(&solo).unwrap());
        }
        assert!(total.max_abs_diff(&acc) < 1e-12);
    }

    #[test]
    fn ablation_partitions_the_sum() {
        let m = tiny_model();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let maps: Vec<Vec<usize>> = m
            .schedule
            .sides()
            .iter()
            .map(|&s| (0..s * s).map(|_| rand::Rng::gen_range(&mut rng, 0..m.cfg.vocab)).collect())
            .collect();
        let pyr = TokenMapPyramid { schedule: m.schedule.clone(), maps };
        let full = m.dequant_sum(&pyr).unwrap();
        // Sum of removed contributions over all scales recovers the input.
        let mut removed = Tensor::zeros(full.shape());
        for k in 1..=m.schedule.k() {
            let abl = m.ablate_scale(&pyr, k).unwrap();
            removed = removed.add(&full.sub(&m.dequant_sum(&abl).unwrap()));
        }
        assert!(full.max_abs_diff(&removed) < 1e-12);
        assert!(m.ablate_scale(&pyr, 0).is_err());
        assert!(m.ablate_scale(&pyr, 99).is_err());
    }

    #[test]
    fn ablating_zero_scale_changes_nothing() {
        let m = tiny_model();
        let mut pyr = TokenMapPyramid {
            schedule: m.schedule.clone(),
            maps: m.schedule.sides().iter().map(|&s| vec![1usize; s * s]).collect(),
        };
        let last = m.schedule.k();
        pyr.maps[last - 1] = vec![0; pyr.maps[last - 1].len()];
        let img_full = m.decode(&pyr).unwrap();
        let img_abl = m.decode(&m.ablate_scale(&pyr, last).unwrap()).unwrap();
        assert!(img_full.max_abs_diff(&img_abl) < 1e-12);
    }
}
