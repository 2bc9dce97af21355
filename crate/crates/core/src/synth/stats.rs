use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::structuralizer::{Gender, RawNote, CLASS_NAMES, N_CLASSES};

/// Lower edges of the age bins, in years.
pub const AGE_BINS: [(f64, &str); 5] = [(0.0, "<1"), (1.0, "1-3"), (3.0, "3-6"), (6.0, "6-12"), (12.0, ">=12")];

/// One histogram. Notes lacking the underlying field are counted in
/// `unavailable` instead of a bin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Panel {
    pub name: String,
    pub bins: Vec<(String, usize)>,
    pub unavailable: usize,
}

impl Panel {
    fn new(name: &str, labels: impl IntoIterator<Item = String>) -> Self {
        Panel { name: name.into(), bins: labels.into_iter().map(|l| (l, 0)).collect(), unavailable: 0 }
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|(_, c)| c).sum::<usize>() + self.unavailable
    }

    pub fn count(&self, label: &str) -> Option<usize> {
        self.bins.iter().find(|(l, _)| l == label).map(|(_, c)| *c)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("bin\tcount\n");
        for (label, count) in &self.bins {
            let _ = writeln!(out, "{label}\t{count}");
        }
        let _ = writeln!(out, "unavailable\t{}", self.unavailable);
        out
    }
}

/// Cohort histograms: age, gender, admission month, labels per note and
/// per-disease counts. The disease panel counts a note once per label, so
/// only its per-note companion `label_count` sums to the corpus size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub n: usize,
    pub age: Panel,
    pub gender: Panel,
    pub admit_month: Panel,
    pub label_count: Panel,
    pub disease: Panel,
}

pub fn corpus_stats(notes: &[RawNote]) -> CorpusStats {
    let mut age = Panel::new("age", AGE_BINS.iter().map(|(_, l)| l.to_string()));
    let mut gender = Panel::new("gender", ["male".to_string(), "female".to_string()]);
    let mut month = Panel::new("admit_month", (1..=12).map(|m| m.to_string()));
    let mut label_count = Panel::new("label_count", (1..=N_CLASSES).map(|m| m.to_string()));
    let mut disease = Panel::new("disease", CLASS_NAMES.iter().map(|s| s.to_string()));

    for note in notes {
        match &note.meta {
            Some(meta) => {
                let years = meta.age_days as f64 / 365.25;
                let bin = AGE_BINS.iter().rposition(|(lo, _)| years >= *lo).unwrap_or(0);
                age.bins[bin].1 += 1;
                gender.bins[if meta.gender == Gender::Male { 0 } else { 1 }].1 += 1;
                month.bins[usize::from(meta.admit_month.clamp(1, 12)) - 1].1 += 1;
            }
            None => {
                age.unavailable += 1;
                gender.unavailable += 1;
                month.unavailable += 1;
            }
        }
        match &note.labels {
            Some(labels) => {
                let k = labels.iter().filter(|&&l| l == 1).count();
                if k == 0 {
                    label_count.unavailable += 1;
                } else {
                    label_count.bins[k - 1].1 += 1;
                }
                for (c, &l) in labels.iter().enumerate() {
                    disease.bins[c].1 += usize::from(l == 1);
                }
            }
            None => {
                label_count.unavailable += 1;
                disease.unavailable += 1;
            }
        }
    }
    CorpusStats { n: notes.len(), age, gender, admit_month: month, label_count, disease }
}

impl CorpusStats {
    pub fn panels(&self) -> [&Panel; 5] {
        [&self.age, &self.gender, &self.admit_month, &self.label_count, &self.disease]
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("notes: {}\n", self.n);
        for panel in self.panels() {
            let _ = writeln!(out, "\n{}", panel.name);
            for (label, count) in &panel.bins {
                let share = if self.n == 0 { 0.0 } else { 100.0 * *count as f64 / self.n as f64 };
                let _ = writeln!(out, "  {label:<12} {count:>7} {share:>6.1}%");
            }
            if panel.unavailable > 0 {
                let _ = writeln!(out, "  {:<12} {:>7}", "unavailable", panel.unavailable);
            }
        }
        out
    }

    /// Writes one `<panel>.tsv` per panel into `dir`.
    pub fn write_plot_data(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for panel in self.panels() {
            let path = dir.join(format!("{}.tsv", panel.name));
            fs::write(&path, panel.to_tsv()).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
