//! The two-stream classifier: stems, infusion blocks, attentive fusion and
//! the classification head, plus training and checkpoint bundles.

mod artifact;
mod config;
mod network;
mod train;

pub use artifact::{BundleManifest, ModelBundle, CHECKPOINT_FILE, MANIFEST_FILE, SCHEMA_FILE, VOCAB_FILE};
pub use config::{ModelConfig, TrainConfig, Variant};
pub use network::{
    attentive_fusion, decide, infuse_with, param_count, Attention, BlockTrace, Example, Forward, ForwardOptions,
    ForwardTrace, FusionLayers, FusionOutput, Network,
};
pub use train::{fit_struct_scale, mean_loss, predict, scored_set, train, EpochRecord, TrainOutcome};

#[cfg(test)]
mod tests;
