use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    /// Captured text parses as a float, optionally multiplied by `scale`.
    Numeric,
    /// Runs of `+`/`-` become ±n; the `k+` form becomes +k.
    Sign,
    /// Captured text is looked up in `map`.
    Category,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct FieldEntry {
    name: String,
    #[serde(default)]
    unit: String,
    kind: FieldKind,
    pattern: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scale: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    map: BTreeMap<String, f64>,
}

#[derive(Clone, Debug)]
pub struct FieldSpec {
    pub name: String,
    pub unit: String,
    pub kind: FieldKind,
    pub pattern: Regex,
    pub scale: Option<f64>,
    pub map: BTreeMap<String, f64>,
}

impl FieldSpec {
    fn from_entry(entry: FieldEntry) -> Result<Self> {
        let pattern = Regex::new(&entry.pattern)
            .map_err(|e| Error::config(format!("field {}: bad pattern: {e}", entry.name)))?;
        if pattern.captures_len() != 2 {
            return Err(Error::config(format!(
                "field {}: pattern must have exactly one capture group, found {}",
                entry.name,
                pattern.captures_len() - 1
            )));
        }
        if entry.kind == FieldKind::Category && entry.map.is_empty() {
            return Err(Error::config(format!("field {}: category kind needs a map", entry.name)));
        }
        if entry.scale.is_some_and(|s| !s.is_finite() || s == 0.0) {
            return Err(Error::config(format!("field {}: scale must be finite and non-zero", entry.name)));
        }
        Ok(FieldSpec {
            name: entry.name,
            unit: entry.unit,
            kind: entry.kind,
            pattern,
            scale: entry.scale,
            map: entry.map,
        })
    }

    fn to_entry(&self) -> FieldEntry {
        FieldEntry {
            name: self.name.clone(),
            unit: self.unit.clone(),
            kind: self.kind,
            pattern: self.pattern.as_str().to_string(),
            scale: self.scale,
            map: self.map.clone(),
        }
    }

    /// Converts a captured string into the field's value.
    pub fn convert(&self, captured: &str) -> Option<f64> {
        let captured = captured.trim();
        let v = match self.kind {
            FieldKind::Numeric => captured.parse::<f64>().ok().filter(|v| v.is_finite())? * self.scale.unwrap_or(1.0),
            FieldKind::Sign => super::parse_sign(captured)?,
            FieldKind::Category => *self.map.get(&captured.to_lowercase())?,
        };
        Some(v)
    }
}

#[derive(Serialize, Deserialize)]
struct SchemaFile {
    field: Vec<FieldEntry>,
}

/// Ordered field registry; a field's position is its index in the
/// structured vector.
#[derive(Clone, Debug)]
pub struct FieldSchema {
    fields: Vec<FieldSpec>,
}

impl FieldSchema {
    pub fn new(fields: Vec<FieldSpec>) -> Result<Self> {
        let mut seen = HashSet::new();
        for f in &fields {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::config(format!("duplicate field name {}", f.name)));
            }
        }
        Ok(FieldSchema { fields })
    }

    pub fn from_toml_str(src: &str) -> Result<Self> {
        let file: SchemaFile = toml::from_str(src).map_err(|e| Error::config(format!("schema: {e}")))?;
        let fields = file.field.into_iter().map(FieldSpec::from_entry).collect::<Result<Vec<_>>>()?;
        Self::new(fields)
    }

    pub fn to_toml_string(&self) -> String {
        let file = SchemaFile {
            field: self.fields.iter().map(FieldSpec::to_entry).collect(),
        };
        toml::to_string(&file).expect("schema serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&src).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    pub fn builtin() -> Self {
        Self::from_toml_str(super::DEFAULT_SCHEMA).expect("shipped schema is valid")
    }

    pub fn candidate() -> Self {
        Self::from_toml_str(super::CANDIDATE_SCHEMA).expect("shipped candidate schema is valid")
    }

    pub fn fields(&self) -> &[FieldSpec] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.fields.iter().map(|f| f.name.as_str()).collect()
    }

    /// Keeps the fields at `indices` (ascending) in their original order.
    pub(crate) fn select(&self, indices: &[usize]) -> Self {
        FieldSchema {
            fields: indices.iter().map(|&i| self.fields[i].clone()).collect(),
        }
    }

    /// Hex SHA-256 over the canonical serialization.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }
}
