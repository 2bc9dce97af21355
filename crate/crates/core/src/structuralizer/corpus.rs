use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_CLASSES: usize = 4;
pub const CLASS_NAMES: [&str; N_CLASSES] = ["pneumonia", "rti", "bronchitis", "asthma"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoteMeta {
    pub age_days: u32,
    pub gender: Gender,
    pub admit_month: u8,
}

/// A clinical note as it arrives: free text plus optional labels in the
/// order of [`CLASS_NAMES`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawNote {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<[u8; N_CLASSES]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<NoteMeta>,
}

impl RawNote {
    pub fn validate(&self) -> Result<()> {
        if let Some(labels) = &self.labels {
            if labels.iter().any(|&l| l > 1) {
                return Err(Error::contract(format!("note {}: labels must be 0 or 1", self.id)));
            }
            if labels.iter().all(|&l| l == 0) {
                return Err(Error::contract(format!("note {}: at least one label must be set", self.id)));
            }
        }
        if let Some(meta) = &self.meta {
            if !(1..=12).contains(&meta.admit_month) {
                return Err(Error::contract(format!("note {}: admit_month {} outside 1..=12", self.id, meta.admit_month)));
            }
        }
        Ok(())
    }
}

/// Normalized note text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanNote {
    pub id: String,
    pub text: String,
}

/// Reads a corpus file with one JSON object per line; blank lines are
/// skipped. Ids must be unique.
pub fn read_corpus(path: &Path) -> Result<Vec<RawNote>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut notes = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ctx = || format!("{}:{}", path.display(), lineno + 1);
        let note: RawNote = serde_json::from_str(&line).map_err(|e| Error::parse(ctx(), e))?;
        note.validate().map_err(|e| Error::parse(ctx(), e))?;
        if !seen.insert(note.id.clone()) {
            return Err(Error::parse(ctx(), format!("duplicate note id {}", note.id)));
        }
        notes.push(note);
    }
    Ok(notes)
}

pub fn write_corpus(path: &Path, notes: &[RawNote]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for note in notes {
        let line = serde_json::to_string(note).expect("note serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
