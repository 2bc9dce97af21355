use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::structuralizer::CLASS_NAMES;

use super::ranking::average_precision;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Per-note sigmoid scores paired with binary labels for the four classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    pub scores: Vec<[f64; 4]>,
    pub labels: Vec<[u8; 4]>,
}

impl ScoredSet {
    pub fn new(scores: Vec<[f64; 4]>, labels: Vec<[u8; 4]>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::contract(format!("{} score rows but {} label rows", scores.len(), labels.len())));
        }
        if let Some(s) = scores.iter().flatten().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::contract(format!("score {s} outside [0, 1]")));
        }
        if labels.iter().flatten().any(|&l| l > 1) {
            return Err(Error::contract("labels must be 0 or 1"));
        }
        Ok(Self { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn column(&self, k: usize) -> (Vec<f64>, Vec<u8>) {
        (self.scores.iter().map(|r| r[k]).collect(), self.labels.iter().map(|r| r[k]).collect())
    }

    /// The subset at `indices`, with repeats allowed.
    pub fn select(&self, indices: &[usize]) -> ScoredSet {
        ScoredSet {
            scores: indices.iter().map(|&i| self.scores[i]).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn map(&self) -> Option<f64> {
        super::ranking::mean_average_precision(&self.scores, &self.labels).0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub name: String,
    /// `None` when the class has no positives.
    pub ap: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `[[TN, FP], [FN, TP]]`.
    pub confusion: [[u64; 2]; 2],
    /// Set when a zero denominator forced one of the ratios to 0.
    pub zero_division: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub n: usize,
    pub threshold: f64,
    pub classes: Vec<ClassMetrics>,
    pub map: Option<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub warnings: Vec<String>,
}

fn ratio(num: u64, den: u64, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class and macro metrics with decisions taken as `score > threshold`.
pub fn summarize(set: &ScoredSet, threshold: f64) -> MetricsReport {
    let mut classes = Vec::with_capacity(4);
    let mut warnings = Vec::new();
    for (k, name) in CLASS_NAMES.iter().enumerate() {
        let (scores, labels) = set.column(k);
        let mut m = [[0u64; 2]; 2];
        for (&s, &l) in scores.iter().zip(&labels) {
            m[l as usize][(s > threshold) as usize] += 1;
        }
        let (tp, fp, fn_) = (m[1][1], m[0][1], m[1][0]);
        let mut zero_division = false;
        let precision = ratio(tp, tp + fp, &mut zero_division);
        let recall = ratio(tp, tp + fn_, &mut zero_division);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            zero_division = true;
            0.0
        };
        let ap = average_precision(&scores, &labels);
        if ap.is_none() {
            warnings.push(format!("class {name} has no positives; excluded from mAP"));
            log::warn!("class {name} has no positives; excluded from mAP");
        }
        if zero_division {
            warnings.push(format!("class {name}: zero denominator, ratio reported as 0"));
        }
        classes.push(ClassMetrics { name: name.to_string(), ap, precision, recall, f1, confusion: m, zero_division });
    }
    let aps: Vec<f64> = classes.iter().filter_map(|c| c.ap).collect();
    let map = (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64);
    let mean = |f: fn(&ClassMetrics) -> f64| classes.iter().map(f).sum::<f64>() / classes.len() as f64;
    MetricsReport {
        n: set.len(),
        threshold,
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        map,
        classes,
        warnings,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

impl MetricsReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "notes: {}  threshold: {}", self.n, self.threshold);
        let _ = writeln!(out, "{:<12} {:>7} {:>7} {:>7} {:>7} {:>6} {:>6} {:>6} {:>6}", "class", "AP", "P", "R", "F1", "TN", "FP", "FN", "TP");
        for c in &self.classes {
            let [[tn, fp], [fn_, tp]] = c.confusion;
            let _ = writeln!(
                out,
                "{:<12} {:>7} {:>7.4} {:>7.4} {:>7.4} {:>6} {:>6} {:>6} {:>6}",
                c.name,
                fmt_opt(c.ap),
                c.precision,
                c.recall,
                c.f1,
                tn,
                fp,
                fn_,
                tp
            );
        }
        let _ = writeln!(
            out,
            "{:<12} {:>7} {:>7.4} {:>7.4} {:>7.4}",
            "macro",
            fmt_opt(self.map),
            self.macro_precision,
            self.macro_recall,
            self.macro_f1
        );
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

/// Score file: one note per line, `id s1 s2 s3 s4 l1 l2 l3 l4`, tab
/// separated. The id column is optional when reading.
pub fn write_scores(path: &Path, ids: &[String], set: &ScoredSet) -> Result<()> {
    if ids.len() != set.len() {
        return Err(Error::contract("one id per scored note required"));
    }
    let mut out = String::new();
    for ((id, s), l) in ids.iter().zip(&set.scores).zip(&set.labels) {
        let _ = writeln!(out, "{id}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}", s[0], s[1], s[2], s[3], l[0], l[1], l[2], l[3]);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: &Path) -> Result<(Vec<String>, ScoredSet)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ctx = |line: usize| format!("{}:{}", path.display(), line + 1);
    let mut ids = Vec::new();
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let (id, nums) = match cols.len() {
            8 => (format!("{}", ids.len()), &cols[..]),
            9 => (cols[0].to_string(), &cols[1..]),
            k => return Err(Error::parse(ctx(n), format!("expected 8 or 9 columns, found {k}"))),
        };
        let mut s = [0.0; 4];
        let mut l = [0u8; 4];
        for k in 0..4 {
            s[k] = nums[k].parse().map_err(|e| Error::parse(ctx(n), e))?;
            l[k] = nums[k + 4].parse().map_err(|e| Error::parse(ctx(n), e))?;
        }
        ids.push(id);
        scores.push(s);
        labels.push(l);
    }
    Ok((ids, ScoredSet::new(scores, labels)?))
}
