//! PNG read/write for `[h, w, 3]` float images in [0, 1].

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn write_png(path: &Path, img: &Tensor) -> Result<()> {
    let (h, w, c) = img.expect_map3()?;
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::RgbImage::from_raw(w as u32, h as u32, bytes)
        .ok_or_else(|| Error::Shape("image buffer size mismatch".into()))?;
    buf.save(path)?;
    Ok(())
}

pub fn read_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path)?.into_rgb8();
    let (w, h) = img.dimensions();
    let data: Vec<f64> = img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
    Ok(Tensor::from_vec(vec![h as usize, w as usize, 3], data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_at_u8_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let (img, _) = crate::synth::render(&crate::synth::FactorSpec::sample(2, 3, 5)).unwrap();
        write_png(&path, &img).unwrap();
        let back = read_png(&path).unwrap();
        assert_eq!(back.shape(), img.shape());
        assert!(img.max_abs_diff(&back) <= 0.5 / 255.0 + 1e-9);
    }
}
