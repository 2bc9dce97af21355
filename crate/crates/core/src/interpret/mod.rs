//! Gradient saliency of a class logit with respect to the input tokens.

mod render;

pub use render::{parse_tsv, render_html, render_tsv, write_saliency};

use serde::{Deserialize, Serialize};

use crate::embedding::{tokenize, TokenizerMode};
use crate::error::{Error, Result};
use crate::model::{Example, ForwardOptions, Network};
use crate::structuralizer::N_CLASSES;
use crate::tensor::Tape;

/// How the per-channel embedding gradient of a token is reduced to a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Signed sum over channels.
    #[default]
    Sum,
    /// Euclidean norm over channels (non-negative).
    L2,
}

/// Per-token influence on one class logit.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub note_id: String,
    pub tokens: Vec<String>,
    pub values: Vec<f64>,
    pub target_class: usize,
}

impl SaliencyMap {
    /// Token indices ordered by descending `|value|`, earlier tokens first on ties.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.values.len()).collect();
        idx.sort_by(|&a, &b| self.values[b].abs().total_cmp(&self.values[a].abs()));
        idx
    }
}

/// Surface strings of the tokens the model sees for `text`, truncated to
/// `seq_len`; text without tokens is shown as a single unknown marker.
pub fn visible_tokens(text: &str, mode: TokenizerMode, seq_len: usize) -> Vec<String> {
    let mut toks: Vec<String> = tokenize(text, mode).into_iter().take(seq_len).collect();
    if toks.is_empty() {
        toks.push("<unk>".to_string());
    }
    toks
}

/// Gradient of the `target_class` logit with respect to the embedded text,
/// reduced over channels for each real token. Runs in evaluation mode, so
/// the result does not depend on any other note.
pub fn saliency(
    network: &Network,
    example: &Example,
    tokens: &[String],
    target_class: usize,
    reduction: Reduction,
) -> Result<SaliencyMap> {
    if target_class >= N_CLASSES {
        return Err(Error::contract(format!("target class {target_class} outside [0, {N_CLASSES})")));
    }
    if !network.config().variant.uses_text() {
        return Err(Error::contract("saliency needs a model with a text stream"));
    }
    if tokens.len() != example.length {
        return Err(Error::contract(format!(
            "note {}: {} display tokens for {} real positions",
            example.id,
            tokens.len(),
            example.length
        )));
    }
    let tape = Tape::new();
    let params = network.store().bind(&tape);
    let opts = ForwardOptions { train: false, rng: None, trace: false, input_grads: true };
    let fwd = network.forward(&tape, &params, &[example], opts)?;
    let logit = fwd.logits.pick(target_class)?;
    tape.backward(logit)?;
    let input = fwd.text_input.expect("input gradients requested");
    let grad = input.grad().unwrap_or_else(|| vec![0.0; input.value().numel()]);
    let (c, l) = (network.config().channels, network.config().seq_len);
    let values: Vec<f64> = (0..example.length)
        .map(|t| {
            let col = (0..c).map(|ch| grad[ch * l + t]);
            match reduction {
                Reduction::Sum => col.sum(),
                Reduction::L2 => col.map(|g| g * g).sum::<f64>().sqrt(),
            }
        })
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract(format!("note {}: non-finite saliency", example.id)));
    }
    Ok(SaliencyMap { note_id: example.id.clone(), tokens: tokens.to_vec(), values, target_class })
}
