//! Synthetic clinical notes with planted label rules.
//!
//! Every note is assembled from neutral filler words, disease trigger
//! words and lab results written in the phrasing the default schema
//! extracts. A disease is present exactly when its rule holds on the
//! planted content, so labels can be re-derived from the structuralized
//! note and learning results have a known ceiling.

mod catalog;
mod generate;
mod stats;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::structuralizer::{CLASS_NAMES, N_CLASSES};

pub use catalog::{filler_words, template, FieldTemplate, Render, AGE_SCALE, CATALOG, SIGN_VALUES};
pub use generate::{
    derive_labels, generate, read_splits, split_sizes, write_splits, GeneratedNote, Planted, Provenance, SynthCorpus,
    PROVENANCE_FILE, REFERENCE_SPLIT, SPLIT_NAMES,
};
pub use stats::{corpus_stats, CorpusStats, Panel, AGE_BINS};

/// Which modality carries the label signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Labels follow from trigger words alone.
    TextOnly,
    /// Labels follow from numeric thresholds alone.
    StructOnly,
    /// Labels need a trigger word and a threshold together.
    Mixed,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::TextOnly, Preset::StructOnly, Preset::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            Preset::TextOnly => "text-only",
            Preset::StructOnly => "struct-only",
            Preset::Mixed => "mixed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::config(format!("unknown preset {s:?}; expected text-only, struct-only or mixed")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Logic {
    /// Every listed condition must hold.
    And,
    /// Any listed condition suffices.
    Or,
}

/// `field > above`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub field: String,
    pub above: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiseaseRule {
    pub class: String,
    /// Any one of these words marks the text condition.
    #[serde(default)]
    pub triggers: Vec<String>,
    #[serde(default)]
    pub predicate: Option<Predicate>,
    pub logic: Logic,
}

/// Value range and presence rate of one rendered field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldGen {
    pub name: String,
    #[serde(default)]
    pub range: [f64; 2],
    #[serde(default)]
    pub decimals: usize,
    pub presence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Chance that a field is written in a non-canonical form.
    pub variant_rate: f64,
    /// Chance of a near-miss spelling of some trigger word.
    pub distractor_rate: f64,
    /// Chance of a bracketed comment, which may name a trigger.
    pub comment_rate: f64,
    /// Chance of a "Dr note: ..." aside.
    pub aside_rate: f64,
    /// Chance that a planted trigger is wrapped in asterisks.
    pub emphasis_rate: f64,
    /// Chance that a field separator is written full-width.
    pub fullwidth_rate: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            variant_rate: 0.3,
            distractor_rate: 0.3,
            comment_rate: 0.1,
            aside_rate: 0.05,
            emphasis_rate: 0.1,
            fullwidth_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_notes: usize,
    pub seed: u64,
    pub preset: Preset,
    /// Probability that a note carries one, two or three diseases.
    pub cooccurrence: [f64; 3],
    /// One rule per class, in class order.
    pub rules: Vec<DiseaseRule>,
    /// For a negative class whose rule needs both a trigger and a
    /// threshold: chance of planting only the trigger, and only the value.
    pub decoy_rates: [f64; 2],
    /// Thresholded values keep this fraction of the field range away from
    /// the threshold.
    pub margin: f64,
    pub fields: Vec<FieldGen>,
    pub filler_words: usize,
    /// Inclusive range of filler words in the complaint sentence.
    pub complaint_words: [usize; 2],
    pub noise: NoiseConfig,
    pub male_rate: f64,
    pub age_days: [u32; 2],
    /// Relative admission frequency per calendar month.
    pub month_weights: [f64; 12],
    /// Train/validation/test sizes; defaults to the reference proportions.
    #[serde(default)]
    pub split: Option<[usize; 3]>,
}

const DEFAULT_TRIGGERS: [[&str; 2]; N_CLASSES] =
    [["pulmora", "lobrent"], ["narivex", "sorthal"], ["brakulo", "tesmira"], ["wheelon", "astrava"]];
const DEFAULT_PREDICATES: [(&str, f64); N_CLASSES] = [("CRP", 20.0), ("Temp", 38.0), ("BR", 30.0), ("PCO2", 45.0)];

fn default_fields() -> Vec<FieldGen> {
    let f = |name: &str, lo: f64, hi: f64, decimals: usize, presence: f64| FieldGen {
        name: name.into(),
        range: [lo, hi],
        decimals,
        presence,
    };
    vec![
        f("Gender", 0.0, 0.0, 0, 0.97),
        f("Age", 0.0, 0.0, 0, 0.97),
        f("Temp", 35.8, 40.5, 1, 0.95),
        f("HR", 70.0, 170.0, 0, 0.95),
        f("BR", 15.0, 50.0, 0, 0.9),
        f("SBP", 80.0, 130.0, 0, 0.7),
        f("DBP", 45.0, 85.0, 0, 0.7),
        f("Weight", 3.0, 60.0, 1, 0.05),
        f("SPO2", 88.0, 100.0, 0, 0.8),
        f("WBC", 3.0, 25.0, 1, 0.7),
        f("N", 20.0, 85.0, 1, 0.7),
        f("CRP", 0.5, 80.0, 1, 0.65),
        f("HGB", 90.0, 150.0, 0, 0.7),
        f("RBC", 3.5, 5.5, 2, 0.04),
        f("PLT", 100.0, 500.0, 0, 0.7),
        f("LY", 10.0, 70.0, 1, 0.7),
        f("ALT", 5.0, 80.0, 0, 0.06),
        f("BPH", 7.2, 7.5, 2, 0.3),
        f("PCO2", 25.0, 65.0, 1, 0.3),
        f("PO2", 50.0, 110.0, 1, 0.3),
        f("K", 3.0, 5.5, 1, 0.5),
        f("Na", 130.0, 148.0, 0, 0.5),
        f("BLO", 0.0, 0.0, 0, 0.04),
        f("PRO", 0.0, 0.0, 0, 0.05),
        f("LEU", 0.0, 0.0, 0, 0.03),
    ]
}

impl GeneratorConfig {
    pub fn preset(preset: Preset, n_notes: usize, seed: u64) -> Self {
        let rules = (0..N_CLASSES)
            .map(|k| {
                let triggers = DEFAULT_TRIGGERS[k].iter().map(|s| s.to_string()).collect();
                let (field, above) = DEFAULT_PREDICATES[k];
                let predicate = Some(Predicate { field: field.into(), above });
                let (triggers, predicate) = match preset {
                    Preset::TextOnly => (triggers, None),
                    Preset::StructOnly => (Vec::new(), predicate),
                    Preset::Mixed => (triggers, predicate),
                };
                DiseaseRule { class: CLASS_NAMES[k].into(), triggers, predicate, logic: Logic::And }
            })
            .collect();
        GeneratorConfig {
            n_notes,
            seed,
            preset,
            cooccurrence: [0.775, 0.222, 0.003],
            rules,
            decoy_rates: [0.3, 0.3],
            margin: 0.05,
            fields: default_fields(),
            filler_words: 150,
            complaint_words: [8, 16],
            noise: NoiseConfig::default(),
            male_rate: 0.55,
            age_days: [28, 5113],
            month_weights: [1.6, 1.5, 1.2, 1.0, 0.8, 0.7, 0.6, 0.6, 0.8, 1.0, 1.2, 1.5],
            split: None,
        }
    }

    pub fn field(&self, name: &str) -> Option<&FieldGen> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// Trigger words with one letter changed, used as distractors.
    pub fn distractors(&self) -> Vec<String> {
        let triggers: HashSet<&str> = self.rules.iter().flat_map(|r| r.triggers.iter().map(String::as_str)).collect();
        let mut out: Vec<String> = Vec::new();
        for rule in &self.rules {
            for t in &rule.triggers {
                let mut chars: Vec<char> = t.chars().collect();
                if let Some(last) = chars.last_mut() {
                    *last = if *last == 'y' { 'x' } else { 'y' };
                }
                let word: String = chars.into_iter().collect();
                if !triggers.contains(word.as_str()) && !out.contains(&word) {
                    out.push(word);
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::config(m));
        if self.n_notes == 0 {
            return err("n_notes must be positive".into());
        }
        let total: f64 = self.cooccurrence.iter().sum();
        if self.cooccurrence.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (total - 1.0).abs() > 1e-9 {
            return err(format!("co-occurrence targets must be probabilities summing to 1, got {:?}", self.cooccurrence));
        }
        for (p, name) in [
            (self.noise.variant_rate, "variant_rate"),
            (self.noise.distractor_rate, "distractor_rate"),
            (self.noise.comment_rate, "comment_rate"),
            (self.noise.aside_rate, "aside_rate"),
            (self.noise.emphasis_rate, "emphasis_rate"),
            (self.noise.fullwidth_rate, "fullwidth_rate"),
            (self.male_rate, "male_rate"),
            (self.decoy_rates[0], "decoy_rates[0]"),
            (self.decoy_rates[1], "decoy_rates[1]"),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return err(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.decoy_rates[0] + self.decoy_rates[1] > 1.0 {
            return err("decoy rates must sum to at most 1".into());
        }
        if !(0.0..0.5).contains(&self.margin) {
            return err(format!("margin must lie in [0, 0.5), got {}", self.margin));
        }
        if self.month_weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) || self.month_weights.iter().sum::<f64>() <= 0.0 {
            return err("month weights must be non-negative with a positive sum".into());
        }
        if self.age_days[0] > self.age_days[1] {
            return err("age_days range is reversed".into());
        }
        if self.complaint_words[0] < 2 || self.complaint_words[0] > self.complaint_words[1] {
            return err("complaint_words must be an ordered range starting at 2 or more".into());
        }
        if self.filler_words < 2 {
            return err("need at least two filler words".into());
        }
        let mut seen = HashSet::new();
        for f in &self.fields {
            let Some(t) = template(&f.name) else {
                return err(format!("no rendering template for field {}", f.name));
            };
            if !seen.insert(f.name.as_str()) {
                return err(format!("field {} listed twice", f.name));
            }
            if !(0.0..=1.0).contains(&f.presence) {
                return err(format!("field {}: presence must lie in [0, 1]", f.name));
            }
            if t.render == Render::Numeric && !(f.range[0] < f.range[1] && f.range.iter().all(|v| v.is_finite() && *v >= 0.0)) {
                return err(format!("field {}: range must be non-negative and increasing", f.name));
            }
        }
        self.validate_rules()
    }

    fn validate_rules(&self) -> Result<()> {
        let err = |m: String| Err(Error::config(m));
        if self.rules.len() != N_CLASSES {
            return err(format!("need one rule per class ({N_CLASSES}), got {}", self.rules.len()));
        }
        let fillers: HashSet<String> = filler_words(self.filler_words).into_iter().collect();
        let mut triggers = HashSet::new();
        let mut fields = HashSet::new();
        for (k, rule) in self.rules.iter().enumerate() {
            if rule.class != CLASS_NAMES[k] {
                return err(format!("rule {k} is for {:?}, expected {:?}", rule.class, CLASS_NAMES[k]));
            }
            if rule.triggers.is_empty() && rule.predicate.is_none() {
                return err(format!("rule for {} has neither a trigger nor a predicate", rule.class));
            }
            for t in &rule.triggers {
                let plain = !t.is_empty() && t.chars().all(|c| c.is_alphanumeric());
                if !plain {
                    return err(format!("trigger {t:?} must be a single alphanumeric word"));
                }
                if fillers.contains(t) {
                    return err(format!("trigger {t:?} collides with a filler word"));
                }
                if !triggers.insert(t.clone()) {
                    return err(format!("trigger {t:?} is shared between rules"));
                }
            }
            if let Some(p) = &rule.predicate {
                let Some(gen) = self.field(&p.field) else {
                    return err(format!("rule for {}: predicate field {} is not generated", rule.class, p.field));
                };
                if template(&p.field).map(|t| t.render) != Some(Render::Numeric) {
                    return err(format!("rule for {}: predicate field {} is not numeric", rule.class, p.field));
                }
                let band = self.margin * (gen.range[1] - gen.range[0]);
                if !(p.above - band > gen.range[0] && p.above + band < gen.range[1]) {
                    return err(format!(
                        "rule for {}: threshold {} leaves no room on both sides within {:?}",
                        rule.class, p.above, gen.range
                    ));
                }
                if !fields.insert(p.field.as_str()) {
                    return err(format!("field {} drives more than one rule", p.field));
                }
            }
        }
        if self.distractors().iter().any(|d| fillers.contains(d)) {
            return err("a distractor spelling collides with a filler word".into());
        }
        if let Some(split) = self.split {
            if split.iter().sum::<usize>() != self.n_notes {
                return err(format!("split {split:?} does not sum to n_notes = {}", self.n_notes));
            }
        }
        Ok(())
    }
}
