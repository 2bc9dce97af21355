use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn raw(text: &str) -> RawNote {
    RawNote { id: "n".into(), text: text.into(), labels: None, meta: None }
}

fn clean(text: &str) -> CleanNote {
    CleanNote { id: "n".into(), text: text.into() }
}

fn schema_of(entries: &[(&str, &str)]) -> FieldSchema {
    let src: String = entries
        .iter()
        .map(|(name, pat)| format!("[[field]]\nname = \"{name}\"\nkind = \"numeric\"\npattern = '{pat}'\n\n"))
        .collect();
    FieldSchema::from_toml_str(&src).unwrap()
}

#[test]
fn emphasis_brackets_are_stripped() {
    let rules = RuleTable::builtin();
    assert_eq!(preprocess(&raw("T (37.8 degrees C)"), &rules).text, "T 37.8 degrees C");
    assert_eq!(preprocess(&raw("T （37.8 degrees C）"), &rules).text, "T 37.8 degrees C");
}

#[test]
fn temperature_typo_is_corrected() {
    let rules = RuleTable::builtin();
    assert_eq!(preprocess(&raw("T 6.5 degrees C"), &rules).text, "T 36.5 degrees C");
    // already-correct readings are left alone
    assert_eq!(preprocess(&raw("T 36.5 degrees C"), &rules).text, "T 36.5 degrees C");
}

#[test]
fn rule_classes_cover_the_representative_cases() {
    let rules = RuleTable::builtin();
    let cases = [
        ("cough (+) for 2 days", "cough for 2 days"),
        ("cough [dr: recheck later] mild", "cough mild"),
        ("**wheeze** noted", "wheeze noted"),
        ("cough，fever：yes", "cough, fever: yes"),
        ("WBC 8.5×10^9/L", "WBC 8.5e9/L"),
        ("HR: 120bpm", "HR 120 /min"),
        ("Hb 123 g/L", "Hemoglobin 123g/L"),
        ("Temp 38.2℃", "T 38.2 degrees C"),
        ("SpO2 97 %", "SPO2 97%"),
        ("K 4.1mmol/l", "K 4.1 mmol/L"),
        ("a    b\t\nc", "a b c"),
    ];
    for (input, want) in cases {
        assert_eq!(preprocess(&raw(input), &rules).text, want, "input {input:?}");
    }
    let classes: Vec<u8> = rules.rules().iter().map(|r| r.class as u8).collect();
    assert!(classes.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(classes.iter().copied().collect::<std::collections::BTreeSet<_>>().len(), 7);
}

#[test]
fn malformed_rule_fails_at_load_time() {
    let bad = "[[rule]]\nclass = 3\npattern = '(unclosed'\n";
    assert!(matches!(RuleTable::from_toml_str(bad), Err(Error::Config(_))));
    let bad_class = "[[rule]]\nclass = 8\npattern = 'x'\n";
    assert!(matches!(RuleTable::from_toml_str(bad_class), Err(Error::Config(_))));
}

#[test]
fn paper_hemoglobin_pattern_extracts_and_removes_span() {
    let schema = schema_of(&[("HGB", "Hemoglobin ([0-9]+[.]?[0-9]*)g/L")]);
    let rec = extract(&clean("Hemoglobin 123g/L, cough for 3 days"), &schema);
    assert_eq!(rec.values, vec![123.0]);
    assert_eq!(rec.present, vec![true]);
    assert_eq!(rec.residual_text, "cough for 3 days");
}

#[test]
fn sign_fields_map_runs_and_counts() {
    let schema = FieldSchema::candidate();
    let leu = schema.index_of("LEU").unwrap();
    let rec = extract(&clean("Leucocyte Esterase ++"), &schema);
    assert_eq!(rec.values[leu], 2.0);
    assert!(rec.present[leu]);
    assert_eq!(rec.residual_text, "");
    let rec = extract(&clean("Leucocyte Esterase: 3+ and Protein -"), &schema);
    assert_eq!(rec.values[leu], 3.0);
    assert_eq!(rec.values[schema.index_of("PRO").unwrap()], -1.0);

    assert_eq!(parse_sign("+"), Some(1.0));
    assert_eq!(parse_sign("---"), Some(-3.0));
    assert_eq!(parse_sign("12+"), Some(12.0));
    assert_eq!(parse_sign("+-"), None);
    assert_eq!(parse_sign(""), None);
    assert_eq!(parse_sign("+3"), None);
}

#[test]
fn note_without_fields_is_zero_filled() {
    let schema = FieldSchema::builtin();
    let text = "cough and mild fever for 3 days";
    let rec = extract(&clean(text), &schema);
    assert_eq!(rec.values, vec![0.0; schema.len()]);
    assert_eq!(rec.present, vec![false; schema.len()]);
    assert_eq!(rec.residual_text, text);
}

#[test]
fn unparseable_capture_counts_a_warning() {
    let src = "[[field]]\nname = \"G\"\nkind = \"category\"\npattern = 'Gender (\\w+)'\n[field.map]\nmale = 1.0\n";
    let schema = FieldSchema::from_toml_str(src).unwrap();
    let rec = extract(&clean("Gender unknown today"), &schema);
    assert_eq!(rec.warnings, 1);
    assert!(!rec.present[0]);
    assert_eq!(rec.values[0], 0.0);
    assert_eq!(rec.residual_text, "today");
}

#[test]
fn repeated_field_uses_first_match_and_removes_all() {
    let schema = schema_of(&[("K", "\\bK ([0-9.]+) mmol/L")]);
    let rec = extract(&clean("K 4.1 mmol/L then K 3.9 mmol/L later"), &schema);
    assert_eq!(rec.values, vec![4.1]);
    assert_eq!(rec.residual_text, "then later");
}

#[test]
fn schema_validation() {
    let two_groups = "[[field]]\nname = \"A\"\nkind = \"numeric\"\npattern = '(a)(b)'\n";
    assert!(matches!(FieldSchema::from_toml_str(two_groups), Err(Error::Config(_))));
    let none = "[[field]]\nname = \"A\"\nkind = \"numeric\"\npattern = 'ab'\n";
    assert!(matches!(FieldSchema::from_toml_str(none), Err(Error::Config(_))));
    let dup = "[[field]]\nname = \"A\"\nkind = \"numeric\"\npattern = '(a)'\n[[field]]\nname = \"A\"\nkind = \"numeric\"\npattern = '(b)'\n";
    assert!(matches!(FieldSchema::from_toml_str(dup), Err(Error::Config(_))));
    let bad = "[[field]]\nname = \"A\"\nkind = \"numeric\"\npattern = '(a'\n";
    assert!(matches!(FieldSchema::from_toml_str(bad), Err(Error::Config(_))));
    let cat = "[[field]]\nname = \"A\"\nkind = \"category\"\npattern = '(a)'\n";
    assert!(matches!(FieldSchema::from_toml_str(cat), Err(Error::Config(_))));

    let schema = FieldSchema::builtin();
    assert_eq!(schema.len(), 19);
    let reparsed = FieldSchema::from_toml_str(&schema.to_toml_string()).unwrap();
    assert_eq!(reparsed.names(), schema.names());
    assert_eq!(reparsed.fingerprint(), schema.fingerprint());
}

fn record(present: &[bool]) -> StructuredRecord {
    StructuredRecord {
        id: String::new(),
        values: present.iter().map(|&p| p as u8 as f64).collect(),
        present: present.to_vec(),
        residual_text: String::new(),
        warnings: 0,
    }
}

#[test]
fn density_is_exact_ratio() {
    let schema = schema_of(&[("A", "a([0-9])"), ("B", "b([0-9])")]);
    let recs = [record(&[true, true]), record(&[false, true]), record(&[true, true])];
    let rep = density_report(&recs, &schema).unwrap();
    assert!((rep.fields[0].density - 2.0 / 3.0).abs() < 1e-9);
    assert_eq!(rep.fields[0].non_empty, 2);
    assert_eq!(rep.fields[0].total, 3);
    assert_eq!(rep.fields[1].density, 1.0);
    assert!(matches!(density_report(&[], &schema), Err(Error::Contract(_))));
}

#[test]
fn density_matches_planted_presence_within_three_sigma() {
    let probs = [0.9, 0.5, 0.08, 0.02];
    let schema = schema_of(&[("A", "a([0-9])"), ("B", "b([0-9])"), ("C", "c([0-9])"), ("D", "d([0-9])")]);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 5000;
    let recs: Vec<_> = (0..n).map(|_| record(&probs.map(|p| rng.gen::<f64>() < p))).collect();
    let rep = density_report(&recs, &schema).unwrap();
    for (f, p) in rep.fields.iter().zip(probs) {
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((f.density - p).abs() <= 3.0 * sigma, "{} density {} vs {p}", f.name, f.density);
    }
}

fn report(entries: &[(&str, f64)]) -> DensityReport {
    DensityReport {
        fields: entries
            .iter()
            .map(|&(name, density)| FieldDensity { name: name.into(), non_empty: 0, total: 0, density })
            .collect(),
    }
}

#[test]
fn pruning_threshold_is_strict() {
    let schema = schema_of(&[("A", "a([0-9])"), ("B", "b([0-9])")]);
    let pruned = prune_schema(&report(&[("A", 0.10), ("B", 0.05)]), &schema, 0.075).unwrap();
    assert_eq!(pruned.names(), vec!["A"]);
    let err = prune_schema(&report(&[("A", 0.075), ("B", 0.075)]), &schema, 0.075);
    assert!(matches!(err, Err(Error::Config(_))));
    assert!(matches!(report(&[("A", 0.5)]).retained(1.0), Err(Error::Config(_))));
    assert!(matches!(report(&[("A", 0.5)]).retained(0.0), Err(Error::Config(_))));
}

/// Field densities of the full candidate list in the published appendix,
/// in table order; the retained fields are marked `true`.
pub(crate) const APPENDIX_DENSITIES: [(&str, f64, bool); 63] = [
    ("Gender", 0.3572, true), ("Age", 0.9989, true), ("Temp", 0.8130, true), ("HR", 0.7866, true),
    ("BR", 0.7810, true), ("SBP", 0.6175, true), ("DBP", 0.6175, true), ("Weight", 0.0341, false),
    ("SPO2", 0.0759, true), ("WBC", 0.7297, true), ("GRA", 0.0317, false), ("N", 0.6332, true),
    ("CRP", 0.6220, true), ("MCHC", 0.0026, false), ("HGB", 0.6815, true), ("MCH", 0.0013, false),
    ("HGB_A", 0.0003, false), ("MCV", 0.0035, false), ("RBC", 0.0401, false), ("PCV", 0.0053, false),
    ("Retic", 0.0068, false), ("PLT", 0.6823, true), ("PCT", 0.0002, false), ("LY", 0.4906, true),
    ("LY_A", 0.0021, false), ("AMS", 0.0037, false), ("Fbg", 0.0005, false), ("EOS", 0.0049, false),
    ("EOS_A", 0.0012, false), ("PCT_1", 0.0267, false), ("BASO", 0.0004, false), ("MONO_A", 0.0002, false),
    ("MONO", 0.0024, false), ("ALT", 0.0357, false), ("AST", 0.0242, false), ("ALB", 0.0087, false),
    ("TP", 0.0041, false), ("TG", 0.0028, false), ("BUREA", 0.0036, false), ("PUREA", 0.0033, false),
    ("CR", 0.0102, false), ("BPH", 0.1059, true), ("PPH", 0.0005, false), ("PCO2", 0.0950, true),
    ("PO2", 0.0925, true), ("SO2", 0.0344, false), ("FERR", 0.0003, false), ("TBIL", 0.0066, false),
    ("K", 0.0972, true), ("Na", 0.0857, true), ("Lac", 0.0242, false), ("Ca2", 0.0367, false),
    ("TC", 0.0037, false), ("UAIC", 0.0006, false), ("BUN", 0.0007, false), ("C3C", 0.0019, false),
    ("C4", 0.0010, false), ("BLO", 0.0443, false), ("PRO", 0.0540, false), ("PC_u", 0.0072, false),
    ("PC_s", 0.0020, false), ("PRBC_uL", 0.0241, false), ("PRBC_Hp", 0.0152, false),
];

#[test]
fn appendix_densities_retain_the_nineteen_selected_fields() {
    // The appendix lists 70 fields; the tail beyond these 63 is all below
    // 1.1% and does not affect the outcome.
    let rep = report(&APPENDIX_DENSITIES.map(|(n, d, _)| (n, d)));
    let kept: Vec<&str> = rep.retained(DEFAULT_PRUNE_THRESHOLD).unwrap().iter().map(|&i| APPENDIX_DENSITIES[i].0).collect();
    let bold: Vec<&str> = APPENDIX_DENSITIES.iter().filter(|e| e.2).map(|e| e.0).collect();
    assert_eq!(kept, bold);
    assert_eq!(kept.len(), 19);
    assert_eq!(kept, FieldSchema::builtin().names());
}

#[test]
fn candidate_schema_prunes_to_builtin_order() {
    let candidate = FieldSchema::candidate();
    let builtin = FieldSchema::builtin();
    let names = candidate.names();
    let idx: Vec<usize> = builtin.names().iter().map(|n| names.iter().position(|m| m == n).unwrap()).collect();
    assert!(idx.windows(2).all(|w| w[0] < w[1]), "builtin fields must be a subsequence of the candidate list");
}

fn render(field: &str, v: &str) -> String {
    match field {
        "Gender" => format!("Gender {v}"),
        "Age" => format!("Age {v} days"),
        "Temp" => format!("T {v} degrees C"),
        "HR" => format!("HR {v} /min"),
        "BR" => format!("BR {v} /min"),
        "SBP" => format!("SBP {v} mmHg"),
        "DBP" => format!("DBP {v} mmHg"),
        "SPO2" => format!("SPO2 {v}%"),
        "WBC" => format!("WBC {v}e9/L"),
        "N" => format!("N {v}%"),
        "CRP" => format!("CRP {v} mg/L"),
        "HGB" => format!("Hemoglobin {v}g/L"),
        "PLT" => format!("PLT {v}e9/L"),
        "LY" => format!("LY {v}%"),
        "BPH" => format!("pH {v}"),
        "PCO2" => format!("PCO2 {v} mmHg"),
        "PO2" => format!("PO2 {v} mmHg"),
        "K" => format!("K {v} mmol/L"),
        "Na" => format!("Na {v} mmol/L"),
        other => panic!("no renderer for {other}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn preprocess_is_idempotent(text in "[a-zA-Z0-9 ,.:;()（），：%+\\-\\[\\]*!℃×^/]{0,60}") {
        let rules = RuleTable::builtin();
        let once = preprocess(&raw(&text), &rules);
        let twice = preprocess(&raw(&once.text), &rules);
        prop_assert_eq!(&once.text, &twice.text);
        prop_assert!(!once.text.contains("  "));
    }

    #[test]
    fn rendered_fields_round_trip(
        present in proptest::collection::vec(any::<bool>(), 19),
        tenths in proptest::collection::vec(0u32..20000, 19),
        male in any::<bool>(),
        filler in proptest::collection::vec("[a-z]{3,8}", 1..6),
    ) {
        let schema = FieldSchema::builtin();
        let mut parts: Vec<String> = filler.clone();
        let mut expected = vec![0.0; 19];
        let mut rendered = Vec::new();
        for (i, field) in schema.fields().iter().enumerate() {
            if !present[i] {
                continue;
            }
            let (s, v) = match field.name.as_str() {
                "Gender" => {
                    let g = if male { "male" } else { "female" };
                    (g.to_string(), if male { 1.0 } else { 0.0 })
                }
                "Age" => (tenths[i].to_string(), tenths[i] as f64 * field.scale.unwrap()),
                _ => {
                    let s = format!("{:.1}", tenths[i] as f64 / 10.0);
                    let v = s.parse::<f64>().unwrap();
                    (s, v)
                }
            };
            expected[i] = v;
            let r = render(&field.name, &s);
            parts.insert(i % (parts.len() + 1), format!("{r},"));
            rendered.push(r);
        }
        let text = parts.join(" ");
        let cleaned = preprocess(&raw(&text), &RuleTable::builtin());
        let rec = extract(&cleaned, &schema);
        prop_assert_eq!(rec.values.len(), schema.len());
        prop_assert_eq!(&rec.values, &expected);
        prop_assert_eq!(&rec.present, &present);
        for r in &rendered {
            prop_assert!(!rec.residual_text.contains(r.as_str()), "{} left in {:?}", r, rec.residual_text);
        }
        for field in schema.fields() {
            prop_assert!(!field.pattern.is_match(&rec.residual_text));
        }
    }

    #[test]
    fn pruned_schema_is_a_subsequence(densities in proptest::collection::vec(0.0f64..1.0, 25), threshold in 0.01f64..0.99) {
        let schema = FieldSchema::candidate();
        let rep = report(&schema.names().iter().zip(&densities).map(|(n, &d)| (*n, d)).collect::<Vec<_>>());
        if let Ok(pruned) = prune_schema(&rep, &schema, threshold) {
            let names = schema.names();
            let mut pos = 0;
            for n in pruned.names() {
                let found = names[pos..].iter().position(|m| *m == n);
                prop_assert!(found.is_some());
                pos += found.unwrap() + 1;
            }
            for (f, d) in rep.fields.iter().zip(&densities) {
                prop_assert_eq!(pruned.index_of(&f.name).is_some(), *d > threshold);
            }
        }
    }
}
