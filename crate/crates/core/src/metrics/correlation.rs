use serde::Serialize;

use crate::error::{Error, Result};
use crate::structuralizer::{FieldSchema, StructuredRecord, CLASS_NAMES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Correlation {
    pub cov: f64,
    /// Cyclic shift that maximizes the covariance (lowest on ties).
    pub shift: usize,
    pub n: usize,
    /// Set when the field has zero variance and `cov` is 0 by convention.
    pub degenerate: bool,
}

/// Maximum over cyclic shifts `k` of `Σᵢ x[(i + k) mod N] · y[i] / N`,
/// with `x` standardized to zero mean and unit (population) variance.
/// Both vectors must already be restricted to notes where the field is
/// present.
pub fn correlation(x: &[f64], y: &[u8]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::contract(format!("field has {} values but {} labels", x.len(), y.len())));
    }
    let n = x.len();
    if n == 0 {
        return Err(Error::contract("correlation needs at least one sample"));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if var <= f64::EPSILON * mean.abs().max(1.0) {
        return Ok(Correlation { cov: 0.0, shift: 0, n, degenerate: true });
    }
    let sd = var.sqrt();
    let z: Vec<f64> = x.iter().map(|v| (v - mean) / sd).collect();
    let mut best = (f64::NEG_INFINITY, 0);
    for k in 0..n {
        let s: f64 = (0..n).filter(|&i| y[i] != 0).map(|i| z[(i + k) % n]).sum::<f64>() / n as f64;
        if s > best.0 {
            best = (s, k);
        }
    }
    Ok(Correlation { cov: best.0, shift: best.1, n, degenerate: false })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationEntry {
    pub field: String,
    pub disease: String,
    #[serde(flatten)]
    pub value: Correlation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    /// Field-major, classes in label order. Fields never present are absent.
    pub entries: Vec<CorrelationEntry>,
}

impl CorrelationReport {
    pub fn get(&self, field: &str, disease: &str) -> Option<&Correlation> {
        self.entries.iter().find(|e| e.field == field && e.disease == disease).map(|e| &e.value)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<10} {:<12} {:>8} {:>6} {:>6}\n", "field", "disease", "cov", "shift", "n");
        for e in &self.entries {
            let mark = if e.value.degenerate { " (constant field)" } else { "" };
            out.push_str(&format!(
                "{:<10} {:<12} {:>8.4} {:>6} {:>6}{mark}\n",
                e.field, e.disease, e.value.cov, e.value.shift, e.value.n
            ));
        }
        out
    }
}

/// Correlation of every schema field with every disease label, each
/// computed over the notes where that field was extracted.
pub fn correlation_report(records: &[StructuredRecord], labels: &[[u8; 4]], schema: &FieldSchema) -> Result<CorrelationReport> {
    if records.len() != labels.len() {
        return Err(Error::contract("one label row per record required"));
    }
    let mut entries = Vec::new();
    for (j, field) in schema.fields().iter().enumerate() {
        let rows: Vec<usize> = (0..records.len()).filter(|&i| records[i].present[j]).collect();
        if rows.is_empty() {
            continue;
        }
        let x: Vec<f64> = rows.iter().map(|&i| records[i].values[j]).collect();
        for (k, disease) in CLASS_NAMES.iter().enumerate() {
            let y: Vec<u8> = rows.iter().map(|&i| labels[i][k]).collect();
            entries.push(CorrelationEntry {
                field: field.name.clone(),
                disease: disease.to_string(),
                value: correlation(&x, &y)?,
            });
        }
    }
    Ok(CorrelationReport { entries })
}
