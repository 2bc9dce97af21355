use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::catalog::{dropped_tens_temperature, filler_words, template, Render, AGE_SCALE, SIGN_VALUES, VITALS};
use super::{GeneratorConfig, Logic};
use crate::embedding::{tokenize, TokenizerMode};
use crate::error::{Error, Result};
use crate::structuralizer::{
    parse_sign, read_corpus, write_corpus, FieldSchema, Gender, NoteMeta, RawNote, StructuredRecord, N_CLASSES,
};

/// Train/validation/test sizes the default split is proportional to.
pub const REFERENCE_SPLIT: [usize; 3] = [11100, 1821, 1776];
pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];
pub const PROVENANCE_FILE: &str = "provenance.json";

/// Ground truth behind one generated note.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Planted {
    /// Present fields with the value extraction must recover, in config
    /// order.
    pub values: Vec<(String, f64)>,
    /// The trigger word written for each class, whether or not the class
    /// is positive.
    pub triggers: [Option<String>; N_CLASSES],
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedNote {
    pub note: RawNote,
    pub planted: Planted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub notes: Vec<GeneratedNote>,
    pub split: [usize; 3],
}

impl SynthCorpus {
    /// Notes of split `k` in the order of [`SPLIT_NAMES`].
    pub fn part(&self, k: usize) -> &[GeneratedNote] {
        let start: usize = self.split[..k].iter().sum();
        &self.notes[start..start + self.split[k]]
    }

    pub fn raw(&self) -> Vec<RawNote> {
        self.notes.iter().map(|g| g.note.clone()).collect()
    }
}

/// Splits `n` in the reference proportions, rounding train and validation
/// to nearest and giving the remainder to test.
pub fn split_sizes(n: usize) -> [usize; 3] {
    let total: usize = REFERENCE_SPLIT.iter().sum();
    let share = |k: usize| (n * REFERENCE_SPLIT[k] + total / 2) / total;
    let train = share(0);
    let val = share(1).min(n - train);
    [train, val, n - train - val]
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Level {
    High,
    Low,
}

struct Context {
    fillers: Vec<String>,
    distractors: Vec<String>,
    months: WeightedIndex<f64>,
}

/// Generates the corpus. Note `i` draws from its own ChaCha stream, so the
/// output does not depend on generation order.
pub fn generate(config: &GeneratorConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let ctx = Context {
        fillers: filler_words(config.filler_words),
        distractors: config.distractors(),
        months: WeightedIndex::new(config.month_weights).map_err(|e| Error::config(format!("month weights: {e}")))?,
    };
    let notes = (0..config.n_notes).map(|i| generate_note(config, &ctx, i)).collect::<Result<Vec<_>>>()?;
    Ok(SynthCorpus { notes, split: config.split.unwrap_or_else(|| split_sizes(config.n_notes)) })
}

fn generate_note(cfg: &GeneratorConfig, ctx: &Context, i: usize) -> Result<GeneratedNote> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(i as u64);

    let meta = NoteMeta {
        age_days: rng.gen_range(cfg.age_days[0]..=cfg.age_days[1]),
        gender: if rng.gen_bool(cfg.male_rate) { Gender::Male } else { Gender::Female },
        admit_month: ctx.months.sample(&mut rng) as u8 + 1,
    };

    let u: f64 = rng.gen();
    let n_labels = if u < cfg.cooccurrence[0] {
        1
    } else if u < cfg.cooccurrence[0] + cfg.cooccurrence[1] {
        2
    } else {
        3
    };
    let mut labels = [0u8; N_CLASSES];
    for k in rand::seq::index::sample(&mut rng, N_CLASSES, n_labels) {
        labels[k] = 1;
    }

    let mut triggers: [Option<String>; N_CLASSES] = Default::default();
    let mut levels: HashMap<&str, Level> = HashMap::new();
    for (k, rule) in cfg.rules.iter().enumerate() {
        let has_t = !rule.triggers.is_empty();
        let pred = rule.predicate.as_ref();
        let (phrase, high) = match (labels[k] == 1, rule.logic) {
            (true, Logic::And) => (has_t, pred.is_some()),
            (true, Logic::Or) => match (has_t, pred.is_some()) {
                (true, true) => [(true, false), (false, true), (true, true)][rng.gen_range(0..3)],
                other => other,
            },
            (false, Logic::And) if has_t && pred.is_some() => {
                let u: f64 = rng.gen();
                (u < cfg.decoy_rates[0], u >= cfg.decoy_rates[0] && u < cfg.decoy_rates[0] + cfg.decoy_rates[1])
            }
            (false, _) => (false, false),
        };
        if phrase {
            triggers[k] = Some(rule.triggers[rng.gen_range(0..rule.triggers.len())].clone());
        }
        if let Some(p) = pred {
            levels.insert(p.field.as_str(), if high { Level::High } else { Level::Low });
        }
    }

    // Field segments.
    let mut vitals = Vec::new();
    let mut labs = Vec::new();
    let mut values = Vec::new();
    for gen in &cfg.fields {
        let t = template(&gen.name).expect("validated");
        let level = levels.get(gen.name.as_str()).copied();
        let present = level == Some(Level::High) || rng.gen_bool(gen.presence);
        if !present {
            continue;
        }
        let (text, value) = match t.render {
            Render::Gender => {
                let g = if meta.gender == Gender::Male { "male" } else { "female" };
                (g.to_string(), if meta.gender == Gender::Male { 1.0 } else { 0.0 })
            }
            Render::AgeDays => (meta.age_days.to_string(), meta.age_days as f64 * AGE_SCALE),
            Render::Sign => {
                let s = SIGN_VALUES[rng.gen_range(0..SIGN_VALUES.len())];
                (s.to_string(), parse_sign(s).expect("valid sign"))
            }
            Render::Numeric => {
                let [lo, hi] = gen.range;
                let (lo, hi) = match (level, cfg.rules.iter().find_map(|r| r.predicate.as_ref().filter(|p| p.field == gen.name))) {
                    (Some(lvl), Some(p)) => {
                        let band = cfg.margin * (hi - lo);
                        if lvl == Level::High {
                            (p.above + band, hi)
                        } else {
                            (lo, p.above - band)
                        }
                    }
                    _ => (lo, hi),
                };
                let s = format!("{:.*}", gen.decimals, rng.gen_range(lo..=hi));
                let v: f64 = s.parse().expect("formatted float");
                (s, v)
            }
        };
        let mut forms: Vec<String> = Vec::new();
        if rng.gen_bool(cfg.noise.variant_rate) {
            forms.extend(t.forms[1..].iter().map(|f| f.replace("{v}", &text)));
            if gen.name == "Temp" {
                forms.extend(dropped_tens_temperature(&text));
            }
        }
        let rendered = if forms.is_empty() {
            t.forms[0].replace("{v}", &text)
        } else {
            forms.swap_remove(rng.gen_range(0..forms.len()))
        };
        values.push((gen.name.clone(), value));
        if VITALS.contains(&gen.name.as_str()) {
            vitals.push(rendered);
        } else {
            labs.push(rendered);
        }
    }
    vitals.shuffle(&mut rng);
    labs.shuffle(&mut rng);

    // Free text: triggers and distractors sit anywhere but the final slot so
    // they never touch sentence punctuation.
    let pick = |rng: &mut ChaCha8Rng| ctx.fillers[rng.gen_range(0..ctx.fillers.len())].clone();
    let n_words = rng.gen_range(cfg.complaint_words[0]..=cfg.complaint_words[1]);
    let mut complaint: Vec<String> = (0..n_words).map(|_| pick(&mut rng)).collect();
    for t in triggers.iter().flatten() {
        let word = if rng.gen_bool(cfg.noise.emphasis_rate) { format!("*{t}*") } else { t.clone() };
        let at = rng.gen_range(0..complaint.len());
        complaint.insert(at, word);
    }
    if !ctx.distractors.is_empty() && rng.gen_bool(cfg.noise.distractor_rate) {
        let d = ctx.distractors[rng.gen_range(0..ctx.distractors.len())].clone();
        let at = rng.gen_range(0..complaint.len());
        complaint.insert(at, d);
    }
    let mut parts = vec![format!("{}.", complaint.join(" "))];
    if rng.gen_bool(cfg.noise.comment_rate) {
        let mut words = vec![pick(&mut rng), pick(&mut rng)];
        let all: Vec<&String> = cfg.rules.iter().flat_map(|r| &r.triggers).collect();
        if !all.is_empty() && rng.gen_bool(0.5) {
            words.push(all[rng.gen_range(0..all.len())].clone());
        }
        parts.push(format!("[{}]", words.join(" ")));
    }
    if rng.gen_bool(cfg.noise.aside_rate) {
        parts.push(format!("Dr note: {} {}.", pick(&mut rng), pick(&mut rng)));
    }
    for group in [vitals, labs] {
        if group.is_empty() {
            continue;
        }
        let mut s = String::new();
        for (j, seg) in group.iter().enumerate() {
            if j > 0 {
                s.push_str(if rng.gen_bool(cfg.noise.fullwidth_rate) { "，" } else { ", " });
            }
            s.push_str(seg);
        }
        s.push('.');
        parts.push(s);
    }
    let tail = rng.gen_range(0..=4);
    if tail > 0 {
        let words: Vec<String> = (0..tail).map(|_| pick(&mut rng)).collect();
        parts.push(format!("{}.", words.join(" ")));
    }

    let note = RawNote { id: format!("syn-{i:06}"), text: parts.join(" "), labels: Some(labels), meta: Some(meta) };
    Ok(GeneratedNote { note, planted: Planted { values, triggers } })
}

/// Re-derives a note's labels from its structured record with `config`'s
/// rules. Trigger words are matched as whole words of the residual text.
pub fn derive_labels(record: &StructuredRecord, schema: &FieldSchema, config: &GeneratorConfig) -> Result<[u8; N_CLASSES]> {
    let words: Vec<String> = tokenize(&record.residual_text, TokenizerMode::Word)
        .into_iter()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()).to_string())
        .collect();
    let mut labels = [0u8; N_CLASSES];
    for (k, rule) in config.rules.iter().enumerate() {
        let text = (!rule.triggers.is_empty()).then(|| rule.triggers.iter().any(|t| words.contains(t)));
        let value = match &rule.predicate {
            Some(p) => {
                let idx = schema
                    .index_of(&p.field)
                    .ok_or_else(|| Error::config(format!("schema lacks predicate field {}", p.field)))?;
                Some(record.values[idx] > p.above)
            }
            None => None,
        };
        let hit = match rule.logic {
            Logic::And => text.unwrap_or(true) && value.unwrap_or(true),
            Logic::Or => text.unwrap_or(false) || value.unwrap_or(false),
        };
        labels[k] = hit as u8;
    }
    Ok(labels)
}

/// Sidecar written next to a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub version: String,
    pub seed: u64,
    pub config: GeneratorConfig,
    pub split: BTreeMap<String, usize>,
    /// SHA-256 of each split file.
    pub files: BTreeMap<String, String>,
}

/// Writes `train.jsonl`, `val.jsonl`, `test.jsonl` and the provenance
/// sidecar into `dir`.
pub fn write_splits(dir: &Path, corpus: &SynthCorpus, config: &GeneratorConfig) -> Result<Provenance> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = BTreeMap::new();
    let mut split = BTreeMap::new();
    for (k, name) in SPLIT_NAMES.iter().enumerate() {
        let file = format!("{name}.jsonl");
        let path = dir.join(&file);
        let notes: Vec<RawNote> = corpus.part(k).iter().map(|g| g.note.clone()).collect();
        write_corpus(&path, &notes)?;
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        files.insert(file, hex::encode(Sha256::digest(&bytes)));
        split.insert(name.to_string(), notes.len());
    }
    let prov = Provenance {
        generator: "finegrain-synth".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: config.seed,
        config: config.clone(),
        split,
        files,
    };
    let path = dir.join(PROVENANCE_FILE);
    let json = serde_json::to_string_pretty(&prov).expect("provenance serializes");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(prov)
}

/// Reads the three split files written by [`write_splits`].
pub fn read_splits(dir: &Path) -> Result<[Vec<RawNote>; 3]> {
    let read = |name: &str| read_corpus(&dir.join(format!("{name}.jsonl")));
    Ok([read(SPLIT_NAMES[0])?, read(SPLIT_NAMES[1])?, read(SPLIT_NAMES[2])?])
}
