//! Oracle scorers over the known generative factors.
//!
//! Content: binarize the image against an estimated background color, then
//! take the best template IoU over a small pose grid. Style: chi-squared
//! palette-histogram similarity combined with a band-energy texture match
//! against cached per-style reference signatures. Both map to [0, 1].

use std::sync::OnceLock;

use super::{coverage, render, FactorSpec, IMAGE_SIDE, SHAPE_NAMES, STYLES};
use crate::tensor::Tensor;

const MASK_WORDS: usize = IMAGE_SIDE * IMAGE_SIDE / 64;

/// Packed 64x64 boolean mask.
#[derive(Clone)]
pub struct BitMask {
    words: [u64; MASK_WORDS],
    count: u32,
}

impl BitMask {
    fn from_fn(mut f: impl FnMut(usize, usize) -> bool) -> BitMask {
        let mut words = [0u64; MASK_WORDS];
        let mut count = 0;
        for py in 0..IMAGE_SIDE {
            for px in 0..IMAGE_SIDE {
                if f(px, py) {
                    let bit = py * IMAGE_SIDE + px;
                    words[bit / 64] |= 1 << (bit % 64);
                    count += 1;
                }
            }
        }
        BitMask { words, count }
    }

    pub fn iou(&self, other: &BitMask) -> f64 {
        if self.count == 0 && other.count == 0 {
            return 1.0;
        }
        let mut inter = 0u32;
        let mut union = 0u32;
        for (a, b) in self.words.iter().zip(other.words.iter()) {
            inter += (a & b).count_ones();
            union += (a | b).count_ones();
        }
        inter as f64 / union.max(1) as f64
    }

    pub fn count(&self) -> u32 {
        self.count
    }
}

/// Estimated background color: per-channel median over the border pixels.
fn background_color(img: &Tensor) -> [f64; 3] {
    let side = IMAGE_SIDE;
    let mut chans: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut push = |px: usize, py: usize| {
        let p = (py * side + px) * 3;
        for c in 0..3 {
            chans[c].push(img.data()[p + c]);
        }
    };
    for x in 0..side {
        push(x, 0);
        push(x, side - 1);
    }
    for y in 1..side - 1 {
        push(0, y);
        push(side - 1, y);
    }
    let mut bg = [0.0; 3];
    for c in 0..3 {
        chans[c].sort_by(|a, b| a.partial_cmp(b).unwrap());
        bg[c] = chans[c][chans[c].len() / 2];
    }
    bg
}

/// Foreground mask: pixels far from the estimated background color.
pub fn fg_mask(img: &Tensor) -> BitMask {
    let bg = background_color(img);
    let side = IMAGE_SIDE;
    BitMask::from_fn(|px, py| {
        let p = (py * side + px) * 3;
        let mut d2 = 0.0;
        for c in 0..3 {
            let d = img.data()[p + c] - bg[c];
            d2 += d * d;
        }
        d2.sqrt() > 0.25
    })
}

struct TemplateBank {
    poses: Vec<super::Jitter>,
    masks: Vec<BitMask>,
}

fn template_mask(shape: usize, pose: super::Jitter) -> BitMask {
    let spec = FactorSpec { content: shape, style: 0, seed: 0, jitter: pose };
    BitMask::from_fn(|px, py| coverage(&spec, px, py) > 0.5)
}

fn template_bank(shape: usize) -> &'static TemplateBank {
    static BANKS: OnceLock<Vec<TemplateBank>> = OnceLock::new();
    let banks = BANKS.get_or_init(|| {
        let shifts: Vec<f64> = vec![-6.0, -4.0, -2.0, 0.0, 2.0, 4.0, 6.0];
        let scales: Vec<f64> = (0..9).map(|i| 0.84 + i as f64 * 0.04).collect();
        let rots: Vec<f64> = (-3..=3).map(|i| i as f64 * 0.11).collect();
        (0..SHAPE_NAMES.len())
            .map(|shape| {
                let mut poses = Vec::new();
                let mut masks = Vec::new();
                for &dx in &shifts {
                    for &dy in &shifts {
                        for &scale in &scales {
                            for &rot in &rots {
                                let pose = super::Jitter { dx, dy, scale, rot };
                                poses.push(pose);
                                masks.push(template_mask(shape, pose));
                            }
                        }
                    }
                }
                TemplateBank { poses, masks }
            })
            .collect()
    });
    &banks[shape]
}

/// Best-aligned template IoU of the image's foreground against a shape
/// family, in [0, 1]. A coarse cached pose grid finds the neighborhood, a
/// local refinement pass settles the alignment.
pub fn score_content(img: &Tensor, content_id: usize) -> f64 {
    assert!(content_id < SHAPE_NAMES.len(), "content id out of range");
    let mask = fg_mask(img);
    if mask.count() == 0 {
        return 0.0;
    }
    let bank = template_bank(content_id);
    let mut best = 0.0;
    let mut best_pose = super::Jitter::NONE;
    for (pose, t) in bank.poses.iter().zip(bank.masks.iter()) {
        let iou = mask.iou(t);
        if iou > best {
            best = iou;
            best_pose = *pose;
        }
    }
    // Refine around the best coarse pose.
    for &ddx in &[-1.0, -0.5, 0.0, 0.5, 1.0] {
        for &ddy in &[-1.0, -0.5, 0.0, 0.5, 1.0] {
            for &ds in &[-0.03, -0.015, 0.0, 0.015, 0.03] {
                for &dr in &[-0.055, 0.0, 0.055] {
                    if ddx == 0.0 && ddy == 0.0 && ds == 0.0 && dr == 0.0 {
                        continue;
                    }
                    let pose = super::Jitter {
                        dx: best_pose.dx + ddx,
                        dy: best_pose.dy + ddy,
                        scale: best_pose.scale + ds,
                        rot: best_pose.rot + dr,
                    };
                    let iou = mask.iou(&template_mask(content_id, pose));
                    if iou > best {
                        best = iou;
                    }
                }
            }
        }
    }
    best
}

const HIST_BINS: usize = 4;
const BAND_DELTAS: [usize; 4] = [1, 2, 4, 8];

/// Area-invariant style descriptor: foreground and background palette
/// histograms normalized separately, plus texture band energies computed
/// over pixel pairs that both lie in the foreground.
#[derive(Clone)]
pub struct StyleSignature {
    fg_hist: Vec<f64>,
    bg_hist: Vec<f64>,
    bands: [f64; BAND_DELTAS.len()],
}

pub fn style_signature(img: &Tensor) -> StyleSignature {
    let side = IMAGE_SIDE;
    let mask = fg_mask(img);
    let in_fg = |px: usize, py: usize| {
        let bit = py * side + px;
        mask.words[bit / 64] >> (bit % 64) & 1 == 1
    };
    let mut fg_hist = vec![0.0; HIST_BINS * HIST_BINS * HIST_BINS];
    let mut bg_hist = vec![0.0; HIST_BINS * HIST_BINS * HIST_BINS];
    let mut lum = vec![0.0; side * side];
    for py in 0..side {
        for px in 0..side {
            let p = py * side + px;
            let r = img.data()[p * 3];
            let g = img.data()[p * 3 + 1];
            let b = img.data()[p * 3 + 2];
            let bin = |v: f64| ((v * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
            let slot = (bin(r) * HIST_BINS + bin(g)) * HIST_BINS + bin(b);
            if in_fg(px, py) {
                fg_hist[slot] += 1.0;
            } else {
                bg_hist[slot] += 1.0;
            }
            lum[p] = 0.299 * r + 0.587 * g + 0.114 * b;
        }
    }
    for hist in [&mut fg_hist, &mut bg_hist] {
        let total: f64 = hist.iter().sum();
        if total > 0.0 {
            for h in hist.iter_mut() {
                *h /= total;
            }
        }
    }
    let mut bands = [0.0; BAND_DELTAS.len()];
    for (bi, &delta) in BAND_DELTAS.iter().enumerate() {
        let mut acc = 0.0;
        let mut n = 0usize;
        for y in 0..side {
            for x in 0..side - delta {
                if in_fg(x, y) && in_fg(x + delta, y) {
                    let d = lum[y * side + x + delta] - lum[y * side + x];
                    acc += d * d;
                    n += 1;
                }
            }
        }
        for y in 0..side - delta {
            for x in 0..side {
                if in_fg(x, y) && in_fg(x, y + delta) {
                    let d = lum[(y + delta) * side + x] - lum[y * side + x];
                    acc += d * d;
                    n += 1;
                }
            }
        }
        bands[bi] = if n > 0 { acc / n as f64 } else { 0.0 };
    }
    StyleSignature { fg_hist, bg_hist, bands }
}

fn chi2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&p, &q)| {
            let s = p + q;
            if s < 1e-12 {
                0.0
            } else {
                (p - q) * (p - q) / s
            }
        })
        .sum::<f64>()
        * 0.5
}

fn band_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(&x, &y)| ((1.0 + x).ln() - (1.0 + y).ln()).abs()).sum()
}

/// Similarity of two signatures in [0, 1].
pub fn signature_similarity(a: &StyleSignature, b: &StyleSignature) -> f64 {
    let d = 2.5 * chi2(&a.fg_hist, &b.fg_hist)
        + 1.5 * chi2(&a.bg_hist, &b.bg_hist)
        + 1.6 * band_distance(&a.bands, &b.bands);
    (-d).exp()
}

fn style_reference(style_id: usize) -> &'static StyleSignature {
    static REFS: OnceLock<Vec<StyleSignature>> = OnceLock::new();
    let refs = REFS.get_or_init(|| {
        (0..STYLES.len())
            .map(|style| {
                // Average signature over canonical renders with four shapes.
                let mut fg_hist = vec![0.0; HIST_BINS * HIST_BINS * HIST_BINS];
                let mut bg_hist = vec![0.0; HIST_BINS * HIST_BINS * HIST_BINS];
                let mut bands = [0.0; BAND_DELTAS.len()];
                let shapes = [0usize, 1, 2, 3, 4, 5, 6, 7];
                for &shape in &shapes {
                    let (img, _) = render(&FactorSpec::canonical(shape, style)).unwrap();
                    let sig = style_signature(&img);
                    for (h, s) in fg_hist.iter_mut().zip(sig.fg_hist.iter()) {
                        *h += s / shapes.len() as f64;
                    }
                    for (h, s) in bg_hist.iter_mut().zip(sig.bg_hist.iter()) {
                        *h += s / shapes.len() as f64;
                    }
                    for (b, s) in bands.iter_mut().zip(sig.bands.iter()) {
                        *b += s / shapes.len() as f64;
                    }
                }
                StyleSignature { fg_hist, bg_hist, bands }
            })
            .collect()
    });
    &refs[style_id]
}

/// Similarity of an image to a style family's reference signature, in [0, 1].
pub fn score_style(img: &Tensor, style_id: usize) -> f64 {
    assert!(style_id < STYLES.len(), "style id out of range");
    signature_similarity(&style_signature(img), style_reference(style_id))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn own_factors_score_high() {
        for shape in 0..8 {
            for style in [0usize, 3, 6] {
                let (img, _) = render(&FactorSpec::sample(shape, style, 17)).unwrap();
                let c = score_content(&img, shape);
                assert!(c > 0.9, "shape {shape} style {style}: content score {c}");
            }
        }
        for style in 0..8 {
            for shape in [0usize, 2, 5] {
                let (img, _) = render(&FactorSpec::sample(shape, style, 23)).unwrap();
                let s = score_style(&img, style);
                assert!(s > 0.9, "style {style} shape {shape}: style score {s}");
            }
        }
    }

    #[test]
    fn disjoint_factors_score_low_on_average() {
        // Separation measured over the full factor grid with fixed seeds.
        let mut cross_c = 0.0;
        let mut nc = 0.0;
        for shape in 0..8usize {
            for style in 0..8usize {
                let (img, _) = render(&FactorSpec::sample(shape, style, 17 + style as u64)).unwrap();
                for other in 0..8usize {
                    if other != shape {
                        cross_c += score_content(&img, other);
                        nc += 1.0;
                    }
                }
            }
        }
        assert!(cross_c / nc < 0.5, "mean cross-content {}", cross_c / nc);
        let mut cross_s = 0.0;
        let mut ns = 0.0;
        for style in 0..8usize {
            for shape in 0..8usize {
                let (img, _) = render(&FactorSpec::sample(shape, style, 55)).unwrap();
                for other in 0..8usize {
                    if other != style {
                        cross_s += score_style(&img, other);
                        ns += 1.0;
                    }
                }
            }
        }
        assert!(cross_s / ns < 0.5, "mean cross-style {}", cross_s / ns);
    }

    #[test]
    fn blank_image_scores_zero_content() {
        let img = Tensor::full(&[64, 64, 3], 0.5);
        for shape in 0..8 {
            assert_eq!(score_content(&img, shape), 0.0);
        }
    }

    #[test]
    fn factor_independence() {
        // Swapping style moves the expected content score by < 0.05, and
        // swapping content moves the expected style score by < 0.05.
        let seeds: Vec<u64> = (0..100).collect();
        let mean_content = |style: usize| {
            seeds
                .iter()
                .map(|&s| {
                    let (img, _) = render(&FactorSpec::sample(3, style, s)).unwrap();
                    score_content(&img, 3)
                })
                .sum::<f64>()
                / seeds.len() as f64
        };
        let a = mean_content(1);
        let b = mean_content(4);
        assert!((a - b).abs() < 0.05, "content shift {a} vs {b}");
        let mean_style = |shape: usize| {
            seeds
                .iter()
                .map(|&s| {
                    let (img, _) = render(&FactorSpec::sample(shape, 2, s)).unwrap();
                    score_style(&img, 2)
                })
                .sum::<f64>()
                / seeds.len() as f64
        };
        let a = mean_style(0);
        let b = mean_style(6);
        assert!((a - b).abs() < 0.05, "style shift {a} vs {b}");
    }
}
