use serde::{Deserialize, Serialize};

use crate::embedding::TokenizerMode;
use crate::error::{Error, Result};
use crate::structuralizer::N_CLASSES;

/// Which parts of the two-stream network are built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Infusion blocks and attentive fusion.
    #[default]
    Full,
    /// Infusion blocks; fusion reduces to pooling and channel merge.
    InfusionOnly,
    /// Plain ResBlocks per stream followed by attentive fusion.
    FusionOnly,
    /// Two independent ResBlock streams whose pooled outputs are concatenated.
    Baseline,
    /// Residual text stream alone.
    TextOnly,
    /// Structured stream alone.
    StructOnly,
}

impl Variant {
    pub const ALL: [Variant; 6] =
        [Variant::Full, Variant::InfusionOnly, Variant::FusionOnly, Variant::Baseline, Variant::TextOnly, Variant::StructOnly];

    pub fn uses_text(self) -> bool {
        self != Variant::StructOnly
    }

    pub fn uses_struct(self) -> bool {
        self != Variant::TextOnly
    }

    pub fn infusion(self) -> bool {
        matches!(self, Variant::Full | Variant::InfusionOnly)
    }

    pub fn fusion_transfer(self) -> bool {
        matches!(self, Variant::Full | Variant::FusionOnly)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::InfusionOnly => "infusion-only",
            Variant::FusionOnly => "fusion-only",
            Variant::Baseline => "baseline",
            Variant::TextOnly => "text-only",
            Variant::StructOnly => "struct-only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown model variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Embedding and feature channels `C`.
    pub channels: usize,
    /// Text length `L` after padding or truncation.
    pub seq_len: usize,
    /// Structured width `F`; fixed by the schema.
    pub fields: usize,
    /// Token vocabulary size including the two reserved ids.
    pub vocab_size: usize,
    /// Bottleneck ratio `r` of ResBlocks and domain-transfer layers.
    pub reduction: usize,
    pub n_blocks: usize,
    /// Per-stream block counts; `None` means `n_blocks`.
    pub depth_text: Option<usize>,
    pub depth_struct: Option<usize>,
    pub n_classes: usize,
    pub dropout: f64,
    /// Head hidden width; `None` means `channels`.
    pub hidden: Option<usize>,
    pub variant: Variant,
    pub tokenizer: TokenizerMode,
    /// Whether the embedding table is updated during training.
    pub train_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            seq_len: 256,
            fields: 19,
            vocab_size: 2,
            reduction: 4,
            n_blocks: 4,
            depth_text: None,
            depth_struct: None,
            n_classes: N_CLASSES,
            dropout: 0.5,
            hidden: None,
            variant: Variant::Full,
            tokenizer: TokenizerMode::Char,
            train_embeddings: true,
        }
    }
}

impl ModelConfig {
    pub fn depth_text(&self) -> usize {
        self.depth_text.unwrap_or(self.n_blocks)
    }

    pub fn depth_struct(&self) -> usize {
        self.depth_struct.unwrap_or(self.n_blocks)
    }

    pub fn hidden(&self) -> usize {
        self.hidden.unwrap_or(self.channels)
    }

    pub fn bottleneck(&self) -> usize {
        self.channels / self.reduction
    }

    /// Number of leading blocks that exchange information between streams.
    pub fn infusion_blocks(&self) -> usize {
        if self.variant.infusion() {
            self.depth_text().min(self.depth_struct())
        } else {
            0
        }
    }

    /// Width of the fused vector fed to the head.
    pub fn fused_width(&self) -> usize {
        match self.variant {
            Variant::TextOnly => self.channels,
            Variant::StructOnly => self.fields,
            _ => self.channels + self.fields,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.channels == 0 || self.seq_len == 0 || self.fields == 0 {
            return fail("channels, seq_len and fields must be positive".into());
        }
        if self.reduction == 0 || !self.channels.is_multiple_of(self.reduction) {
            return fail(format!("channels {} not divisible by reduction {}", self.channels, self.reduction));
        }
        if self.uses_fusion_padding() && self.fields > self.seq_len {
            return fail(format!("fields {} exceed seq_len {}; fusion pads the structured stream to L", self.fields, self.seq_len));
        }
        if self.n_classes != N_CLASSES {
            return fail(format!("n_classes must be {N_CLASSES}"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.vocab_size < 2 {
            return fail("vocab_size must include the pad and unknown ids".into());
        }
        if self.hidden() == 0 {
            return fail("hidden width must be positive".into());
        }
        if self.variant.infusion() && self.infusion_blocks() == 0 {
            return fail("infusion variants need at least one block per stream".into());
        }
        Ok(())
    }

    fn uses_fusion_padding(&self) -> bool {
        self.variant.uses_text() && self.variant.uses_struct()
    }
}

/// Training-loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Momentum of the batch-norm running averages.
    pub bn_momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 50,
            patience: None,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            bn_momentum: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::config("bn_momentum must lie in [0, 1]"));
        }
        Ok(())
    }
}
