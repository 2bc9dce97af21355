use serde::{Deserialize, Serialize};

use super::{FieldSchema, StructuredRecord};
use crate::error::{Error, Result};

pub const DEFAULT_PRUNE_THRESHOLD: f64 = 0.075;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldDensity {
    pub name: String,
    pub non_empty: usize,
    pub total: usize,
    pub density: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub fields: Vec<FieldDensity>,
}

impl DensityReport {
    /// Indices of fields whose density is strictly above `threshold`.
    pub fn retained(&self, threshold: f64) -> Result<Vec<usize>> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::config(format!("prune threshold {threshold} outside (0, 1)")));
        }
        let keep: Vec<usize> = self
            .fields
            .iter()
            .enumerate()
            .filter(|(_, f)| f.density > threshold)
            .map(|(i, _)| i)
            .collect();
        if keep.is_empty() {
            return Err(Error::config(format!("no field has density above {threshold}")));
        }
        Ok(keep)
    }
}

/// Per-field presence ratios over records extracted with `schema`.
pub fn density_report(records: &[StructuredRecord], schema: &FieldSchema) -> Result<DensityReport> {
    if records.is_empty() {
        return Err(Error::contract("density report over an empty corpus"));
    }
    if let Some(r) = records.iter().find(|r| r.present.len() != schema.len()) {
        return Err(Error::contract(format!(
            "record {} has {} fields, schema has {}",
            r.id,
            r.present.len(),
            schema.len()
        )));
    }
    let total = records.len();
    let fields = schema
        .fields()
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let non_empty = records.iter().filter(|r| r.present[i]).count();
            FieldDensity {
                name: spec.name.clone(),
                non_empty,
                total,
                density: non_empty as f64 / total as f64,
            }
        })
        .collect();
    Ok(DensityReport { fields })
}

/// Keeps the schema fields whose density is strictly above `threshold`.
pub fn prune_schema(report: &DensityReport, schema: &FieldSchema, threshold: f64) -> Result<FieldSchema> {
    let names: Vec<&str> = report.fields.iter().map(|f| f.name.as_str()).collect();
    if names != schema.names() {
        return Err(Error::contract("density report does not describe this schema"));
    }
    Ok(schema.select(&report.retained(threshold)?))
}
