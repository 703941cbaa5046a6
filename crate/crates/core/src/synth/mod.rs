//! Procedural content/style image generator with ground-truth factors.
//!
//! Content is one of eight shape families, style is a palette+texture combo.
//! Renders are 64x64 RGB in [0, 1], deterministic per seed, with bounded
//! jitter in position, scale and rotation. Oracle scorers over the known
//! factors live in [`oracle`].

pub mod corpus;
pub mod img;
pub mod oracle;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::Tensor;

pub const IMAGE_SIDE: usize = 64;
const BASE_RADIUS: f64 = 20.0;

pub const SHAPE_NAMES: [&str; 8] =
    ["circle", "bowtie", "triangle", "star", "cross", "ring", "diamond", "crescent"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Texture {
    Solid,
    Stripes,
    Checker,
    Dots,
}

#[derive(Clone, Copy, Debug)]
pub struct StyleDef {
    pub name: &'static str,
    pub texture: Texture,
    pub fg: [f64; 3],
    pub fg2: [f64; 3],
    pub bg: [f64; 3],
}

pub const STYLES: [StyleDef; 8] = [
    StyleDef { name: "ruby", texture: Texture::Solid, fg: [0.85, 0.10, 0.15], fg2: [0.85, 0.10, 0.15], bg: [0.10, 0.08, 0.09] },
    StyleDef { name: "azure", texture: Texture::Stripes, fg: [0.15, 0.45, 0.90], fg2: [0.70, 0.85, 1.00], bg: [0.04, 0.07, 0.18] },
    StyleDef { name: "jade", texture: Texture::Checker, fg: [0.05, 0.70, 0.40], fg2: [0.00, 0.30, 0.18], bg: [0.90, 0.95, 0.90] },
    StyleDef { name: "amber", texture: Texture::Dots, fg: [0.98, 0.70, 0.10], fg2: [0.55, 0.28, 0.05], bg: [0.22, 0.13, 0.04] },
    StyleDef { name: "slate", texture: Texture::Solid, fg: [0.45, 0.50, 0.58], fg2: [0.45, 0.50, 0.58], bg: [0.93, 0.94, 0.96] },
    StyleDef { name: "violet", texture: Texture::Stripes, fg: [0.55, 0.20, 0.80], fg2: [0.85, 0.70, 0.95], bg: [0.08, 0.04, 0.12] },
    StyleDef { name: "coral", texture: Texture::Checker, fg: [1.00, 0.45, 0.35], fg2: [0.72, 0.18, 0.12], bg: [0.98, 0.92, 0.86] },
    StyleDef { name: "ivory", texture: Texture::Dots, fg: [0.95, 0.93, 0.85], fg2: [0.72, 0.68, 0.58], bg: [0.18, 0.20, 0.24] },
];

pub fn shape_id(name: &str) -> Result<usize> {
    SHAPE_NAMES
        .iter()
        .position(|&s| s == name)
        .ok_or_else(|| Error::UnknownId(format!("unknown shape '{name}'")))
}

pub fn style_id(name: &str) -> Result<usize> {
    STYLES
        .iter()
        .position(|s| s.name == name)
        .ok_or_else(|| Error::UnknownId(format!("unknown style '{name}'")))
}

/// Bounded pose perturbation of a render.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub dx: f64,
    pub dy: f64,
    pub scale: f64,
    pub rot: f64,
}

impl Jitter {
    pub const NONE: Jitter = Jitter { dx: 0.0, dy: 0.0, scale: 1.0, rot: 0.0 };

    pub fn sample(rng: &mut impl rand::Rng) -> Jitter {
        Jitter {
            dx: rng.gen_range(-5.0..=5.0),
            dy: rng.gen_range(-5.0..=5.0),
            scale: rng.gen_range(0.88..=1.12),
            rot: rng.gen_range(-0.30..=0.30),
        }
    }
}

/// Ground-truth generative factors of one render.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub content: usize,
    pub style: usize,
    pub seed: u64,
    pub jitter: Jitter,
}

impl FactorSpec {
    /// Jitter drawn deterministically from the seed.
    pub fn sample(content: usize, style: usize, seed: u64) -> FactorSpec {
        let mut rng = stream(seed, "synth/jitter", (content * 8 + style) as u64);
        FactorSpec { content, style, seed, jitter: Jitter::sample(&mut rng) }
    }

    pub fn canonical(content: usize, style: usize) -> FactorSpec {
        FactorSpec { content, style, seed: 0, jitter: Jitter::NONE }
    }

    pub fn validate(&self) -> Result<()> {
        if self.content >= SHAPE_NAMES.len() {
            return Err(Error::UnknownId(format!("content id {} out of range", self.content)));
        }
        if self.style >= STYLES.len() {
            return Err(Error::UnknownId(format!("style id {} out of range", self.style)));
        }
        Ok(())
    }
}

/// Whether a point in unit shape coordinates lies inside the shape.
pub(crate) fn inside_shape(shape: usize, x: f64, y: f64) -> bool {
    match shape {
        0 => x * x + y * y <= 1.0,
        1 => x.abs() <= 1.0 && y.abs() <= 0.88 * x.abs() + 0.10,
        2 => {
            // Wide triangle, apex up: vertices (0,-0.95), (1.15,0.8), (-1.15,0.8).
            let (ax, ay) = (0.0, -0.95);
            let (bx, by) = (1.15, 0.8);
            let (cx, cy) = (-1.15, 0.8);
            let s1 = (bx - ax) * (y - ay) - (by - ay) * (x - ax);
            let s2 = (cx - bx) * (y - by) - (cy - by) * (x - bx);
            let s3 = (ax - cx) * (y - cy) - (ay - cy) * (x - cx);
            (s1 >= 0.0 && s2 >= 0.0 && s3 >= 0.0) || (s1 <= 0.0 && s2 <= 0.0 && s3 <= 0.0)
        }
        3 => {
            // Five-point star: radius alternates between 1.18 and 0.46.
            let r = (x * x + y * y).sqrt();
            if r < 1e-12 {
                return true;
            }
            let theta = y.atan2(x) + std::f64::consts::FRAC_PI_2;
            let sector = std::f64::consts::TAU / 10.0;
            let mut t = theta.rem_euclid(2.0 * sector);
            if t > sector {
                t = 2.0 * sector - t;
            }
            // Linear spoke profile from outer tip (t = 0) to inner notch.
            let frac = t / sector;
            r <= 1.18 * (1.0 - frac) + 0.46 * frac
        }
        4 => (x.abs() <= 0.30 && y.abs() <= 1.08) || (y.abs() <= 0.30 && x.abs() <= 1.08),
        5 => {
            let r2 = x * x + y * y;
            (0.68 * 0.68..=1.10 * 1.10).contains(&r2)
        }
        6 => x.abs() / 0.55 + y.abs() / 1.28 <= 1.0,
        7 => {
            let inside_big = x * x + y * y <= 1.05 * 1.05;
            let hx = x - 0.46;
            inside_big && hx * hx + y * y >= 0.74 * 0.74
        }
        _ => false,
    }
}

fn texture_color(style: &StyleDef, px: f64, py: f64) -> [f64; 3] {
    match style.texture {
        Texture::Solid => style.fg,
        Texture::Stripes => {
            if ((px / 8.0).floor() as i64).rem_euclid(2) == 0 {
                style.fg
            } else {
                style.fg2
            }
        }
        Texture::Checker => {
            let cell = ((px / 8.0).floor() as i64 + (py / 8.0).floor() as i64).rem_euclid(2);
            if cell == 0 {
                style.fg
            } else {
                style.fg2
            }
        }
        Texture::Dots => {
            let mx = px.rem_euclid(12.0) - 6.0;
            let my = py.rem_euclid(12.0) - 6.0;
            if mx * mx + my * my <= 3.2 * 3.2 {
                style.fg2
            } else {
                style.fg
            }
        }
    }
}

/// Foreground coverage of a pixel, 2x2 supersampled.
pub(crate) fn coverage(spec: &FactorSpec, px: usize, py: usize) -> f64 {
    let j = &spec.jitter;
    let cx = IMAGE_SIDE as f64 / 2.0 + j.dx;
    let cy = IMAGE_SIDE as f64 / 2.0 + j.dy;
    let (sin, cos) = j.rot.sin_cos();
    let mut hits = 0;
    for sy in 0..2 {
        for sx in 0..2 {
            let fx = px as f64 + 0.25 + 0.5 * sx as f64;
            let fy = py as f64 + 0.25 + 0.5 * sy as f64;
            let ux = (fx - cx) / BASE_RADIUS;
            let uy = (fy - cy) / BASE_RADIUS;
            let rx = (cos * ux + sin * uy) / j.scale;
            let ry = (-sin * ux + cos * uy) / j.scale;
            if inside_shape(spec.content, rx, ry) {
                hits += 1;
            }
        }
    }
    hits as f64 / 4.0
}

/// Renders the spec to a `[64, 64, 3]` image and its caption.
pub fn render(spec: &FactorSpec) -> Result<(Tensor, String)> {
    spec.validate()?;
    let style = &STYLES[spec.style];
    let side = IMAGE_SIDE;
    let mut data = vec![0.0; side * side * 3];
    for py in 0..side {
        for px in 0..side {
            let cov = coverage(spec, px, py);
            let tex = texture_color(style, px as f64, py as f64);
            let p = (py * side + px) * 3;
            for c in 0..3 {
                data[p + c] = cov * tex[c] + (1.0 - cov) * style.bg[c];
            }
        }
    }
    let caption = format!(
        "a photo of a {} in {} style",
        SHAPE_NAMES[spec.content], style.name
    );
    Ok((Tensor::from_vec(vec![side, side, 3], data), caption))
}
