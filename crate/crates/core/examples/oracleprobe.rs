use scalesplit::synth::oracle::{score_content, score_style};
use scalesplit::synth::{render, FactorSpec, SHAPE_NAMES};

fn main() {
    // full content cross matrix
    let mut worst: Vec<(f64, usize, usize)> = Vec::new();
    let mut own_worst: Vec<(f64, usize, usize)> = Vec::new();
    let mut cross_sum = 0.0;
    let mut cross_n = 0.0;
    for shape in 0..8usize {
        for style in 0..8usize {
            let (img, _) = render(&FactorSpec::sample(shape, style, 17 + style as u64)).unwrap();
            let own = score_content(&img, shape);
            own_worst.push((own, shape, style));
            for other in 0..8usize {
                if other == shape { continue; }
                let s = score_content(&img, other);
                cross_sum += s;
                cross_n += 1.0;
                worst.push((s, shape, other));
            }
        }
    }
    worst.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    own_worst.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    println!("content cross mean: {:.3}", cross_sum / cross_n);
    for (s, a, b) in worst.iter().take(14) {
        println!("  high cross: {} as {} -> {:.3}", SHAPE_NAMES[*a], SHAPE_NAMES[*b], s);
    }
    for (s, a, st) in own_worst.iter().take(6) {
        println!("  low own: {} (style {}) -> {:.3}", SHAPE_NAMES[*a], st, s);
    }
    // style own stats across all shapes/styles/seeds
    let mut mn = 1.0f64; let mut sum = 0.0; let mut n = 0.0;
    let mut worst_s = (0, 0);
    for style in 0..8usize {
        for shape in 0..8usize {
            for seed in [23u64, 99] {
                let (img, _) = render(&FactorSpec::sample(shape, style, seed)).unwrap();
                let s = score_style(&img, style);
                if s < mn { mn = s; worst_s = (style, shape); }
                sum += s; n += 1.0;
            }
        }
    }
    println!("style own mean {:.3} min {:.3} at style {} shape {}", sum / n, mn, worst_s.0, worst_s.1);
    let mut cx = 0.0; let mut cn = 0.0; let mut cmax = 0.0f64;
    for style in 0..8usize {
        for other in 0..8usize {
            if style == other { continue; }
            let (img, _) = render(&FactorSpec::sample(1, style, 55)).unwrap();
            let s = score_style(&img, other);
            cx += s; cn += 1.0; cmax = cmax.max(s);
        }
    }
    println!("style cross mean {:.3} max {:.3}", cx / cn, cmax);
}
