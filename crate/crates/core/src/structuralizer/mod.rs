//! Text normalization and lab-result extraction.
//!
//! A [`RuleTable`] rewrites raw note text in seven ordered rule classes.
//! A [`FieldSchema`] then pulls each configured field out of the cleaned
//! text, producing a fixed-width numeric vector (absent fields are zero)
//! and the residual text with every matched span removed.

mod corpus;
mod density;
mod extract;
mod rules;
mod schema;

pub use corpus::{read_corpus, write_corpus, CleanNote, Gender, NoteMeta, RawNote, N_CLASSES, CLASS_NAMES};
pub use density::{density_report, prune_schema, DensityReport, FieldDensity, DEFAULT_PRUNE_THRESHOLD};
pub use extract::{extract, parse_sign, StructuredRecord};
pub use rules::{preprocess, Rule, RuleClass, RuleTable};
pub use schema::{FieldKind, FieldSchema, FieldSpec};

/// Rule table shipped with the crate.
pub const DEFAULT_RULES: &str = include_str!("../../config/rules.toml");
/// The retained 19-field schema.
pub const DEFAULT_SCHEMA: &str = include_str!("../../config/schema.toml");
/// Candidate schema: the retained fields plus sparse fields that density
/// pruning is expected to drop.
pub const CANDIDATE_SCHEMA: &str = include_str!("../../config/schema_candidate.toml");

#[cfg(test)]
mod tests;
