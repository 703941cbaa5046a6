//! Toy closed-vocabulary text conditioning.
//!
//! A learnable embedding table over ~60 words stands in for a pretrained
//! text encoder. Prompts are whitespace-tokenized; `<y_c>` and `<y_s>` mark
//! the learnable content/style placeholder rows. The pooled start token is
//! the arithmetic mean of the embedded sequence.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const WORDS: [&str; 64] = [
    // template and function words
    "a", "an", "the", "photo", "of", "object", "in", "style", "on", "with", "and", "background",
    // nouns
    "picture", "image", "shape", "pattern", "scene", "figure",
    // context adjectives
    "bright", "dark", "plain", "soft", "bold", "light", "deep", "pale",
    // pose/size modifiers
    "small", "big", "tiny", "large", "giant", "little", "rotated", "tilted", "upright", "slanted",
    "centered", "shifted", "left", "right", "high", "low",
    // counts
    "one", "two", "three", "four", "many", "single",
    // shapes
    "circle", "bowtie", "triangle", "star", "cross", "ring", "diamond", "crescent",
    // styles
    "ruby", "azure", "jade", "amber", "slate", "violet", "coral", "ivory",
];

pub fn vocab_size() -> usize {
    WORDS.len()
}

fn word_index() -> &'static HashMap<&'static str, usize> {
    static INDEX: OnceLock<HashMap<&'static str, usize>> = OnceLock::new();
    INDEX.get_or_init(|| WORDS.iter().enumerate().map(|(i, &w)| (w, i)).collect())
}

pub fn word_id(word: &str) -> Result<usize> {
    word_index()
        .get(word)
        .copied()
        .ok_or_else(|| Error::UnknownId(format!("word '{word}' not in the toy vocabulary")))
}

/// One slot of a prompt: a vocabulary word or a learnable placeholder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PromptTok {
    Word(usize),
    Content,
    Style,
}

/// Tokenizes a prompt. `<y_c>` and `<y_s>` become placeholder slots.
pub fn parse_prompt(text: &str) -> Result<Vec<PromptTok>> {
    text.split_whitespace()
        .map(|w| match w {
            "<y_c>" => Ok(PromptTok::Content),
            "<y_s>" => Ok(PromptTok::Style),
            w => word_id(w).map(PromptTok::Word),
        })
        .collect()
}

/// Token length of a prompt once placeholders expand to `n` rows each.
pub fn expanded_len(toks: &[PromptTok], n_content: usize, n_style: usize) -> usize {
    toks.iter()
        .map(|t| match t {
            PromptTok::Word(_) => 1,
            PromptTok::Content => n_content,
            PromptTok::Style => n_style,
        })
        .sum()
}

/// Tape-level condition: the embedded sequence and its pooled start row.
#[derive(Clone, Copy)]
pub struct CondVars<'t> {
    pub emb: Var<'t>,    // [n, d_model]
    pub pooled: Var<'t>, // [1, d_model]
    pub len: usize,
}

/// Embeds a prompt on the tape. `table` is `[W, d]`, `pos` is `[L, d]`;
/// placeholder slots take rows from `content`/`style` vars, so gradients
/// flow into them. Position rows are added to every embedded token.
pub fn build_condition<'t>(
    tape: &'t Tape,
    table: Var<'t>,
    pos: Var<'t>,
    toks: &[PromptTok],
    content: Option<Var<'t>>,
    style: Option<Var<'t>>,
    max_len: usize,
) -> Result<CondVars<'t>> {
    let _ = tape;
    if toks.is_empty() {
        return Err(Error::Config("empty prompt".into()));
    }
    let mut segments: Vec<Var<'t>> = Vec::new();
    let mut word_run: Vec<usize> = Vec::new();
    let mut n = 0usize;
    let mut flush =
        |segments: &mut Vec<Var<'t>>, word_run: &mut Vec<usize>| {
            if !word_run.is_empty() {
                segments.push(table.gather_rows(word_run));
                word_run.clear();
            }
        };
    for tok in toks {
        match tok {
            PromptTok::Word(id) => {
                word_run.push(*id);
                n += 1;
            }
            PromptTok::Content => {
                flush(&mut segments, &mut word_run);
                let c = content
                    .ok_or_else(|| Error::Config("prompt has <y_c> but no content rows".into()))?;
                n += c.shape()[0];
                segments.push(c);
            }
            PromptTok::Style => {
                flush(&mut segments, &mut word_run);
                let s = style
                    .ok_or_else(|| Error::Config("prompt has <y_s> but no style rows".into()))?;
                n += s.shape()[0];
                segments.push(s);
            }
        }
    }
    flush(&mut segments, &mut word_run);
    if n > max_len {
        return Err(Error::Config(format!("prompt expands to {n} tokens, max {max_len}")));
    }
    let seq = if segments.len() == 1 { segments[0] } else { Var::concat_rows(&segments) };
    let positions: Vec<usize> = (0..n).collect();
    let emb = seq.add(pos.gather_rows(&positions));
    let pooled = emb.mean_axis0().reshape(vec![1, emb.shape()[1]]);
    Ok(CondVars { emb, pooled, len: n })
}

/// Value-level condition, for storage and generation.
#[derive(Clone)]
pub struct TextCondition {
    pub embeddings: Tensor, // [n, d_model]
    pub pooled: Tensor,     // [1, d_model]
}

impl TextCondition {
    pub fn build(
        table: &Tensor,
        pos: &Tensor,
        toks: &[PromptTok],
        content: Option<&Tensor>,
        style: Option<&Tensor>,
        max_len: usize,
    ) -> Result<TextCondition> {
        let tape = Tape::new();
        let cond = build_condition(
            &tape,
            tape.constant(table.clone()),
            tape.constant(pos.clone()),
            toks,
            content.map(|t| tape.constant(t.clone())),
            style.map(|t| tape.constant(t.clone())),
            max_len,
        )?;
        Ok(TextCondition { embeddings: cond.emb.value(), pooled: cond.pooled.value() })
    }
}

/// Caption templates used during backbone pretraining. Sampling drops the
/// content or style clause a third of the time so partial prompts stay
/// in-distribution at inference.
pub fn caption_variant(
    content_word: &str,
    style_word: &str,
    size_class: i8,
    rng: &mut impl rand::Rng,
) -> String {
    let size = match size_class {
        1 => ["big", "large"][rng.gen_range(0..2)],
        -1 => ["small", "little"][rng.gen_range(0..2)],
        _ => "",
    };
    let u: f64 = rng.gen();
    if u < 0.40 {
        match rng.gen_range(0..4) {
            0 => format!("a photo of a {content_word} in {style_word} style"),
            1 => format!("a photo of a {content_word} object in {style_word} style"),
            2 => format!("a picture of a {content_word} object in {style_word} style"),
            _ => format!("an image of a {content_word} in {style_word} style"),
        }
    } else if u < 0.55 {
        if size.is_empty() {
            format!("a photo of a {content_word} object in {style_word} style")
        } else {
            format!("a photo of a {size} {content_word} object in {style_word} style")
        }
    } else if u < 0.775 {
        match rng.gen_range(0..2) {
            0 => format!("a photo of a {content_word}"),
            _ => format!("a photo of a {content_word} object"),
        }
    } else {
        match rng.gen_range(0..2) {
            0 => format!("a photo of an object in {style_word} style"),
            _ => format!("a picture of an object in {style_word} style"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn parse_template_prompt() {
        let toks = parse_prompt("a photo of a <y_c> object in <y_s> style").unwrap();
        assert_eq!(toks.len(), 9);
        assert_eq!(toks[4], PromptTok::Content);
        assert_eq!(toks[7], PromptTok::Style);
        assert!(parse_prompt("a photo of a wombat").is_err());
    }

    #[test]
    fn pooled_start_is_mean_of_rows() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let d = 8;
        let table = Tensor::randn(&[vocab_size(), d], 0.5, &mut rng);
        let pos = Tensor::randn(&[16, d], 0.1, &mut rng);
        let toks = parse_prompt("a photo of a circle").unwrap();
        let cond = TextCondition::build(&table, &pos, &toks, None, None, 16).unwrap();
        let n = cond.embeddings.shape()[0];
        for c in 0..d {
            let mean: f64 =
                (0..n).map(|r| cond.embeddings.data()[r * d + c]).sum::<f64>() / n as f64;
            assert_eq!(cond.pooled.data()[c], mean, "pooled must equal the row mean exactly");
        }
    }

    #[test]
    fn placeholders_require_rows() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let table = Tensor::randn(&[vocab_size(), 4], 0.5, &mut rng);
        let pos = Tensor::randn(&[24, 4], 0.1, &mut rng);
        let toks = parse_prompt("a <y_c> object").unwrap();
        assert!(TextCondition::build(&table, &pos, &toks, None, None, 24).is_err());
        let rows = Tensor::randn(&[4, 4], 0.1, &mut rng);
        let cond = TextCondition::build(&table, &pos, &toks, Some(&rows), None, 24).unwrap();
        assert_eq!(cond.embeddings.shape()[0], 6);
    }

    #[test]
    fn caption_variants_tokenize() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let caption = caption_variant("circle", "jade", rng.gen_range(-1..=1), &mut rng);
            parse_prompt(&caption).unwrap_or_else(|e| panic!("bad caption '{caption}': {e}"));
        }
    }
}
