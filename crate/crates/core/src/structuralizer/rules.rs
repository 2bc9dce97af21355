use std::path::Path;

use regex::Regex;
use serde::Deserialize;

use super::{CleanNote, RawNote};
use crate::error::{Error, Result};

/// Upper bound on whole-table passes while searching for a fixed point.
const MAX_PASSES: usize = 16;

/// The seven preprocessing classes, applied in this order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum RuleClass {
    CommentRemoval = 1,
    EmphasisStripping = 2,
    SpacingRemoval = 3,
    PunctuationUnification = 4,
    TypoCorrection = 5,
    MeasurementUnification = 6,
    PhrasingUnification = 7,
}

impl RuleClass {
    pub fn from_index(i: u8) -> Option<Self> {
        use RuleClass::*;
        Some(match i {
            1 => CommentRemoval,
            2 => EmphasisStripping,
            3 => SpacingRemoval,
            4 => PunctuationUnification,
            5 => TypoCorrection,
            6 => MeasurementUnification,
            7 => PhrasingUnification,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Rule {
    pub class: RuleClass,
    pub name: String,
    pub pattern: Regex,
    pub replace: String,
}

#[derive(Deserialize)]
struct RuleFile {
    #[serde(default)]
    rule: Vec<RuleEntry>,
}

#[derive(Deserialize)]
struct RuleEntry {
    class: u8,
    #[serde(default)]
    name: String,
    pattern: String,
    #[serde(default)]
    replace: String,
}

/// Ordered rewrite rules grouped by [`RuleClass`]. Patterns are compiled
/// at load time.
#[derive(Clone, Debug, Default)]
pub struct RuleTable {
    rules: Vec<Rule>,
}

impl RuleTable {
    pub fn from_toml_str(src: &str) -> Result<Self> {
        let file: RuleFile = toml::from_str(src).map_err(|e| Error::config(format!("rule table: {e}")))?;
        let mut rules = Vec::with_capacity(file.rule.len());
        for (i, entry) in file.rule.into_iter().enumerate() {
            let class = RuleClass::from_index(entry.class)
                .ok_or_else(|| Error::config(format!("rule {i} ({}): class {} not in 1..=7", entry.name, entry.class)))?;
            let pattern = Regex::new(&entry.pattern)
                .map_err(|e| Error::config(format!("rule {i} ({}): bad pattern: {e}", entry.name)))?;
            rules.push(Rule { class, name: entry.name, pattern, replace: entry.replace });
        }
        // stable: file order is kept within a class
        rules.sort_by_key(|r| r.class);
        Ok(RuleTable { rules })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&src).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn builtin() -> Self {
        Self::from_toml_str(super::DEFAULT_RULES).expect("shipped rule table is valid")
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    fn apply_once(&self, text: &str) -> String {
        let mut out = text.to_string();
        for rule in &self.rules {
            if rule.pattern.is_match(&out) {
                out = rule.pattern.replace_all(&out, rule.replace.as_str()).into_owned();
            }
        }
        collapse_whitespace(&out)
    }

    /// Applies the table repeatedly until the text stops changing, so the
    /// result is a fixed point.
    pub fn normalize(&self, text: &str) -> String {
        let mut current = collapse_whitespace(text);
        for _ in 0..MAX_PASSES {
            let next = self.apply_once(&current);
            if next == current {
                return next;
            }
            current = next;
        }
        log::warn!("rule table did not reach a fixed point after {MAX_PASSES} passes");
        current
    }
}

pub(crate) fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn preprocess(raw: &RawNote, rules: &RuleTable) -> CleanNote {
    CleanNote {
        id: raw.id.clone(),
        text: rules.normalize(&raw.text),
    }
}
