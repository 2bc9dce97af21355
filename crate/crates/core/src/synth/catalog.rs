//! How each schema field is written into note text, including the
//! non-canonical spellings that the default rule table normalizes.

/// Years per day, matching the `scale` of the shipped `Age` field.
pub const AGE_SCALE: f64 = 0.0027378507871321013;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Render {
    Numeric,
    Sign,
    Gender,
    AgeDays,
}

#[derive(Debug, Clone, Copy)]
pub struct FieldTemplate {
    pub name: &'static str,
    pub render: Render,
    /// `{v}` is replaced by the rendered value. The first entry is the
    /// canonical form matched directly by the schema pattern.
    pub forms: &'static [&'static str],
}

pub const SIGN_VALUES: [&str; 6] = ["-", "+", "++", "+++", "2+", "3+"];

pub const CATALOG: &[FieldTemplate] = &[
    FieldTemplate { name: "Gender", render: Render::Gender, forms: &["Gender {v}", "Gender: {v}"] },
    FieldTemplate { name: "Age", render: Render::AgeDays, forms: &["Age {v} days", "Age: {v} days"] },
    FieldTemplate {
        name: "Temp",
        render: Render::Numeric,
        forms: &["T {v} degrees C", "Temperature: {v}℃", "T ({v} degrees C)", "Temp {v} degress C"],
    },
    FieldTemplate {
        name: "HR",
        render: Render::Numeric,
        forms: &["HR {v} /min", "heart rate {v} bpm", "pulse: {v}/min", "HR={v} beats/min"],
    },
    FieldTemplate {
        name: "BR",
        render: Render::Numeric,
        forms: &["BR {v} /min", "RR {v} breaths/min", "respiratory rate: {v}/min"],
    },
    FieldTemplate { name: "SBP", render: Render::Numeric, forms: &["SBP {v} mmHg", "SBP: {v}mmhg"] },
    FieldTemplate { name: "DBP", render: Render::Numeric, forms: &["DBP {v} mmHg", "DBP: {v}mmhg"] },
    FieldTemplate { name: "Weight", render: Render::Numeric, forms: &["Weight {v} kg"] },
    FieldTemplate { name: "SPO2", render: Render::Numeric, forms: &["SPO2 {v}%", "SpO2 {v} %", "SaO2: {v}％"] },
    FieldTemplate {
        name: "WBC",
        render: Render::Numeric,
        forms: &["WBC {v}e9/L", "WBC {v} x 10^9/L", "WBC: {v}×10^9/L"],
    },
    FieldTemplate { name: "N", render: Render::Numeric, forms: &["N {v}%", "N: {v} %"] },
    FieldTemplate { name: "CRP", render: Render::Numeric, forms: &["CRP {v} mg/L", "CRP: {v}mg/l"] },
    FieldTemplate {
        name: "HGB",
        render: Render::Numeric,
        forms: &["Hemoglobin {v}g/L", "Hb {v} g/L", "Haemoglobin {v}g/L", "HGB: {v}g/L"],
    },
    FieldTemplate { name: "RBC", render: Render::Numeric, forms: &["RBC {v}e12/L", "RBC {v} x 10^12/L"] },
    FieldTemplate { name: "PLT", render: Render::Numeric, forms: &["PLT {v}e9/L", "PLT {v} x 10^9/L"] },
    FieldTemplate { name: "LY", render: Render::Numeric, forms: &["LY {v}%", "LY: {v} %"] },
    FieldTemplate { name: "ALT", render: Render::Numeric, forms: &["ALT {v} U/L"] },
    FieldTemplate { name: "BPH", render: Render::Numeric, forms: &["pH {v}", "blood pH {v}", "PH: {v}"] },
    FieldTemplate { name: "PCO2", render: Render::Numeric, forms: &["PCO2 {v} mmHg", "PCO2: {v}mmhg"] },
    FieldTemplate { name: "PO2", render: Render::Numeric, forms: &["PO2 {v} mmHg", "PO2: {v}mmhg"] },
    FieldTemplate { name: "K", render: Render::Numeric, forms: &["K {v} mmol/L", "K: {v}mmol/l"] },
    FieldTemplate { name: "Na", render: Render::Numeric, forms: &["Na {v} mmol/L", "Na: {v}mmol/l"] },
    FieldTemplate { name: "BLO", render: Render::Sign, forms: &["Occult Blood {v}", "Occult Blood: {v}"] },
    FieldTemplate { name: "PRO", render: Render::Sign, forms: &["Protein {v}", "Protein: {v}"] },
    FieldTemplate { name: "LEU", render: Render::Sign, forms: &["Leucocyte Esterase {v}", "Leucocyte Esterase: {v}"] },
];

/// Fields written in the first (vital signs) sentence; the rest go in the
/// lab sentence.
pub const VITALS: &[&str] = &["Gender", "Age", "Temp", "HR", "BR", "SBP", "DBP", "SPO2", "Weight"];

pub fn template(name: &str) -> Option<&'static FieldTemplate> {
    CATALOG.iter().find(|t| t.name == name)
}

/// Temperature with its tens digit dropped, which the typo rule restores.
/// Only defined where the rule applies: 36.0 to 39.9.
pub fn dropped_tens_temperature(rendered: &str) -> Option<String> {
    let rest = rendered.strip_prefix('3')?;
    let (units, frac) = rest.split_once('.')?;
    (units.len() == 1 && matches!(units, "6" | "7" | "8" | "9") && frac.len() == 1).then(|| format!("T {rest} degrees C"))
}

/// Four-letter consonant-vowel words used as neutral filler text.
pub fn filler_words(n: usize) -> Vec<String> {
    const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
    const VOWELS: &[u8] = b"aeiou";
    let total = (CONSONANTS.len() * VOWELS.len()).pow(2);
    (0..n.min(total))
        .map(|i| {
            let mut k = (i * 37) % total;
            let mut word = [0u8; 4];
            for (j, slot) in word.iter_mut().enumerate() {
                let alphabet = if j % 2 == 0 { CONSONANTS } else { VOWELS };
                *slot = alphabet[k % alphabet.len()];
                k /= alphabet.len();
            }
            String::from_utf8(word.to_vec()).expect("ascii")
        })
        .collect()
}
