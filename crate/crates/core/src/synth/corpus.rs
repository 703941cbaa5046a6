//! Corpus assembly: train/val/probe splits over the non-holdout factor grid,
//! plus the held-out pairs used as factorization sources.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{render, FactorSpec, SHAPE_NAMES, STYLES};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Probe,
    Holdout,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub train_renders: usize,
    pub val_renders: usize,
    pub probe_renders: usize,
    /// (content, style) pairs excluded from training; factorization sources.
    pub holdout_pairs: Vec<(usize, usize)>,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            train_renders: 540,
            val_renders: 60,
            probe_renders: 35,
            holdout_pairs: vec![(0, 2), (3, 0), (4, 1), (2, 7), (5, 6)],
            seed: 1,
        }
    }
}

#[derive(Clone)]
pub struct CorpusItem {
    pub image: Tensor,
    pub spec: FactorSpec,
    pub caption: String,
    pub split: Split,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub caption: String,
    pub content: String,
    pub style: String,
    pub seed: u64,
    pub split: Split,
}

/// Renders the full corpus in memory. Deterministic per config.
pub fn build_corpus(cfg: &CorpusConfig) -> Result<Vec<CorpusItem>> {
    for &(c, s) in &cfg.holdout_pairs {
        if c >= SHAPE_NAMES.len() || s >= STYLES.len() {
            return Err(Error::Config(format!("holdout pair ({c}, {s}) out of range")));
        }
    }
    let mut pairs = Vec::new();
    for c in 0..SHAPE_NAMES.len() {
        for s in 0..STYLES.len() {
            if !cfg.holdout_pairs.contains(&(c, s)) {
                pairs.push((c, s));
            }
        }
    }
    let mut items = Vec::new();
    let mut emit = |split: Split, count: usize, tag: &str| -> Result<()> {
        for i in 0..count {
            let (c, s) = pairs[i % pairs.len()];
            let seed = crate::rng::stream(cfg.seed, tag, i as u64).next_u64();
            let spec = FactorSpec::sample(c, s, seed);
            let (image, caption) = render(&spec)?;
            items.push(CorpusItem { image, spec, caption, split });
        }
        Ok(())
    };
    emit(Split::Train, cfg.train_renders, "corpus/train")?;
    emit(Split::Val, cfg.val_renders, "corpus/val")?;
    emit(Split::Probe, cfg.probe_renders, "corpus/probe")?;
    for (i, &(c, s)) in cfg.holdout_pairs.iter().enumerate() {
        let seed = crate::rng::stream(cfg.seed, "corpus/holdout", i as u64).next_u64();
        let spec = FactorSpec::sample(c, s, seed);
        let (image, caption) = render(&spec)?;
        items.push(CorpusItem { image, spec, caption, split: Split::Holdout });
    }
    Ok(items)
}

use rand::RngCore;

/// Writes corpus images as PNGs plus a line-delimited JSON manifest.
pub fn write_corpus(dir: &Path, items: &[CorpusItem]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = std::io::BufWriter::new(std::fs::File::create(dir.join("manifest.jsonl"))?);
    let mut counters = std::collections::HashMap::new();
    for item in items {
        let split = format!("{:?}", item.split).to_lowercase();
        let n = counters.entry(split.clone()).or_insert(0usize);
        let file = format!("{split}_{n:04}.png");
        *n += 1;
        super::img::write_png(&dir.join(&file), &item.image)?;
        let entry = ManifestEntry {
            file,
            caption: item.caption.clone(),
            content: SHAPE_NAMES[item.spec.content].to_string(),
            style: STYLES[item.spec.style].name.to_string(),
            seed: item.spec.seed,
            split: item.split,
        };
        writeln!(manifest, "{}", serde_json::to_string(&entry)?)?;
    }
    Ok(())
}

/// Reads a corpus back from a manifest directory.
pub fn read_corpus(dir: &Path) -> Result<Vec<CorpusItem>> {
    let file = std::fs::File::open(dir.join("manifest.jsonl"))
        .map_err(|_| Error::MissingArtifact(format!("no manifest.jsonl under {}", dir.display())))?;
    let mut items = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let entry: ManifestEntry = serde_json::from_str(&line?)?;
        let image = super::img::read_png(&dir.join(&entry.file))?;
        let content = super::shape_id(&entry.content)?;
        let style = super::style_id(&entry.style)?;
        items.push(CorpusItem {
            image,
            spec: FactorSpec::sample(content, style, entry.seed),
            caption: entry.caption,
            split: entry.split,
        });
    }
    Ok(items)
}

pub fn split<'a>(items: &'a [CorpusItem], which: Split) -> Vec<&'a CorpusItem> {
    items.iter().filter(|i| i.split == which).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_splits_and_holdout_exclusion() {
        let cfg = CorpusConfig { train_renders: 64, val_renders: 8, probe_renders: 5, ..Default::default() };
        let items = build_corpus(&cfg).unwrap();
        assert_eq!(split(&items, Split::Train).len(), 64);
        assert_eq!(split(&items, Split::Val).len(), 8);
        assert_eq!(split(&items, Split::Probe).len(), 5);
        assert_eq!(split(&items, Split::Holdout).len(), 5);
        for item in split(&items, Split::Train) {
            assert!(
                !cfg.holdout_pairs.contains(&(item.spec.content, item.spec.style)),
                "holdout pair leaked into training"
            );
        }
    }

    #[test]
    fn corpus_roundtrips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CorpusConfig { train_renders: 4, val_renders: 2, probe_renders: 1, ..Default::default() };
        let items = build_corpus(&cfg).unwrap();
        write_corpus(dir.path(), &items).unwrap();
        let back = read_corpus(dir.path()).unwrap();
        assert_eq!(back.len(), items.len());
        for (a, b) in items.iter().zip(back.iter()) {
            assert_eq!(a.caption, b.caption);
            assert_eq!(a.split, b.split);
            assert!(a.image.max_abs_diff(&b.image) <= 0.5 / 255.0 + 1e-9);
        }
    }
}
