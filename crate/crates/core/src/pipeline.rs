//! Glue from raw notes to model-ready examples: normalize, extract, build
//! the vocabulary, encode.

use crate::embedding::{train_word2vec, TokenizerMode, Vocabulary, Word2VecConfig};
use crate::error::{Error, Result};
use crate::model::{fit_struct_scale, Example, ModelConfig, Network};
use crate::structuralizer::{extract, preprocess, FieldSchema, RawNote, RuleTable, StructuredRecord};

pub fn structuralize(notes: &[RawNote], rules: &RuleTable, schema: &FieldSchema) -> Vec<StructuredRecord> {
    notes.iter().map(|n| extract(&preprocess(n, rules), schema)).collect()
}

/// Vocabulary over the residual text of `records`.
pub fn build_vocab(records: &[StructuredRecord], mode: TokenizerMode, min_count: usize) -> Result<Vocabulary> {
    let texts: Vec<&str> = records.iter().map(|r| r.residual_text.as_str()).collect();
    Vocabulary::build(&texts, mode, min_count)
}

/// Encodes each note's residual text and attaches its structured vector.
/// Unlabelled notes get all-zero labels.
pub fn to_examples(
    notes: &[RawNote],
    records: &[StructuredRecord],
    vocab: &Vocabulary,
    mode: TokenizerMode,
    seq_len: usize,
) -> Result<Vec<Example>> {
    if notes.len() != records.len() {
        return Err(Error::contract("one structured record per note is required"));
    }
    notes
        .iter()
        .zip(records)
        .map(|(note, rec)| {
            let seq = vocab.encode(&rec.residual_text, mode, seq_len)?;
            Ok(Example {
                id: note.id.clone(),
                ids: seq.ids,
                length: seq.true_length,
                structured: rec.values.clone(),
                labels: note.labels.unwrap_or_default(),
            })
        })
        .collect()
}

/// Everything needed to turn raw notes into examples for one model.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub rules: RuleTable,
    pub schema: FieldSchema,
    pub vocab: Vocabulary,
    pub mode: TokenizerMode,
    pub seq_len: usize,
}

impl Pipeline {
    /// Fits the vocabulary on `train`.
    pub fn fit(train: &[RawNote], rules: RuleTable, schema: FieldSchema, mode: TokenizerMode, seq_len: usize, min_count: usize) -> Result<Self> {
        let records = structuralize(train, &rules, &schema);
        let vocab = build_vocab(&records, mode, min_count)?;
        Ok(Pipeline { rules, schema, vocab, mode, seq_len })
    }

    pub fn records(&self, notes: &[RawNote]) -> Vec<StructuredRecord> {
        structuralize(notes, &self.rules, &self.schema)
    }

    pub fn examples(&self, notes: &[RawNote]) -> Result<Vec<Example>> {
        to_examples(notes, &self.records(notes), &self.vocab, self.mode, self.seq_len)
    }
}

/// A freshly initialized network for `examples`: the structured-input
/// scale is fitted on them and, when `pretrain` is given, the embedding is
/// initialized by skip-gram training on their token ids.
pub fn init_network(config: ModelConfig, examples: &[Example], seed: u64, pretrain: Option<&Word2VecConfig>) -> Result<Network> {
    let fields = config.fields;
    let channels = config.channels;
    let vocab_size = config.vocab_size;
    let variant = config.variant;
    let mut net = Network::new(config, seed)?;
    if variant.uses_struct() {
        net.set_struct_scale(&fit_struct_scale(examples, fields))?;
    }
    if let Some(w2v) = pretrain.filter(|_| variant.uses_text()) {
        let cfg = Word2VecConfig { dim: channels, ..w2v.clone() };
        let corpus: Vec<Vec<usize>> = examples.iter().map(|e| e.ids[..e.length].to_vec()).collect();
        let table = train_word2vec(&corpus, vocab_size, &cfg)?;
        net.set_embedding(table.weights())?;
    }
    Ok(net)
}
