//! Shared fixtures for the benchmarks.

use finegrain_core::embedding::TokenizerMode;
use finegrain_core::model::{Example, ModelConfig, Network};
use finegrain_core::pipeline::{init_network, Pipeline};
use finegrain_core::structuralizer::{FieldSchema, RawNote, RuleTable};
use finegrain_core::synth::{generate, GeneratorConfig, Preset};

/// `n` notes from the mixed synthetic preset.
pub fn mixed_notes(n: usize, seed: u64) -> Vec<RawNote> {
    generate(&GeneratorConfig::preset(Preset::Mixed, n, seed)).expect("preset config is valid").raw()
}

/// Model-ready examples for `notes`, with the pipeline fitted on them.
pub fn examples(notes: &[RawNote], mode: TokenizerMode, seq_len: usize) -> (Pipeline, Vec<Example>) {
    let pipeline = Pipeline::fit(notes, RuleTable::builtin(), FieldSchema::builtin(), mode, seq_len, 1)
        .expect("pipeline fits on generated notes");
    let ex = pipeline.examples(notes).expect("examples encode");
    (pipeline, ex)
}

/// A freshly initialized network sized for `pipeline`.
pub fn network(pipeline: &Pipeline, examples: &[Example], channels: usize, blocks: usize) -> Network {
    let cfg = ModelConfig {
        channels,
        seq_len: pipeline.seq_len,
        fields: pipeline.schema.len(),
        vocab_size: pipeline.vocab.len(),
        n_blocks: blocks,
        tokenizer: pipeline.mode,
        ..ModelConfig::default()
    };
    init_network(cfg, examples, 0, None).expect("network builds")
}
