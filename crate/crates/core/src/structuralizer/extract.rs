use serde::{Deserialize, Serialize};

use super::rules::collapse_whitespace;
use super::{CleanNote, FieldSchema};

/// Cap on clean-up passes that delete spans re-formed by earlier deletions.
const MAX_SWEEPS: usize = 8;

/// A note's structured vector plus the text left after extraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuredRecord {
    pub id: String,
    pub values: Vec<f64>,
    pub present: Vec<bool>,
    pub residual_text: String,
    /// Fields whose pattern matched but whose capture failed to convert.
    #[serde(default)]
    pub warnings: usize,
}

/// Maps a sign string to a number: a run of n `+` is +n, a run of n `-`
/// is −n, and `k+` is +k. Anything else is rejected.
pub fn parse_sign(s: &str) -> Option<f64> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    if s.chars().all(|c| c == '+') {
        return Some(s.chars().count() as f64);
    }
    if s.chars().all(|c| c == '-' || c == '\u{2212}') {
        return Some(-(s.chars().count() as f64));
    }
    let digits = s.strip_suffix('+')?;
    if !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit()) {
        return digits.parse::<f64>().ok();
    }
    None
}

/// Pulls every schema field out of `note`.
///
/// Fields are visited in schema order and the first match of each pattern
/// supplies the value. All matches of a visited pattern are removed from
/// the text so a repeated field cannot be read twice or leak into the
/// residual. Unmatched fields are zero with `present = false`.
pub fn extract(note: &CleanNote, schema: &FieldSchema) -> StructuredRecord {
    let n = schema.len();
    let mut values = vec![0.0; n];
    let mut present = vec![false; n];
    let mut warnings = 0;
    let mut text = note.text.clone();
    for (i, field) in schema.fields().iter().enumerate() {
        let Some(caps) = field.pattern.captures(&text) else { continue };
        match field.convert(&caps[1]) {
            Some(v) => {
                values[i] = v;
                present[i] = true;
            }
            None => {
                warnings += 1;
                log::debug!("note {}: field {} captured unparseable {:?}", note.id, field.name, &caps[1]);
            }
        }
        text = field.pattern.replace_all(&text, " ").into_owned();
    }
    let mut residual = tidy(&text);
    for _ in 0..MAX_SWEEPS {
        let mut changed = false;
        for field in schema.fields() {
            if field.pattern.is_match(&residual) {
                residual = field.pattern.replace_all(&residual, " ").into_owned();
                changed = true;
            }
        }
        if !changed {
            break;
        }
        residual = tidy(&residual);
    }
    StructuredRecord {
        id: note.id.clone(),
        values,
        present,
        residual_text: residual,
        warnings,
    }
}

/// Collapses whitespace and drops separators orphaned by span deletion.
fn tidy(text: &str) -> String {
    let mut tokens: Vec<&str> = Vec::new();
    for tok in text.split_whitespace() {
        let is_sep = matches!(tok, "," | ";");
        if is_sep && tokens.last().is_none_or(|t| matches!(*t, "," | ";" | ":" | ".")) {
            continue;
        }
        tokens.push(tok);
    }
    while tokens.last().is_some_and(|t| matches!(*t, "," | ";")) {
        tokens.pop();
    }
    let joined = tokens.join(" ");
    let joined = joined.replace(" ,", ",").replace(" ;", ";");
    let trimmed = joined.trim_start_matches([',', ';', ' ']);
    collapse_whitespace(trimmed)
}
