use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use finegrain_core::embedding::{TokenizerMode, Word2VecConfig};
use finegrain_core::interpret::{saliency, visible_tokens, write_saliency, Reduction};
use finegrain_core::metrics::{
    bootstrap_ci, correlation_report, metric_permutation_test, read_scores, summarize, write_scores, ConfidenceInterval,
    MetricsReport, PermutationResult, ScoredSet,
};
use finegrain_core::model::{predict, train, ModelBundle, ModelConfig, TrainConfig, Variant};
use finegrain_core::pipeline::{init_network, to_examples, Pipeline};
use finegrain_core::structuralizer::{
    density_report, prune_schema, read_corpus, DensityReport, FieldSchema, RawNote, RuleTable, StructuredRecord,
    CLASS_NAMES, DEFAULT_RULES,
};
use finegrain_core::synth::{corpus_stats, generate, write_splits, GeneratorConfig, Preset, Provenance, SPLIT_NAMES};

use crate::args::*;
use crate::output::*;

const RULES_FILE: &str = "rules.toml";
const RECORDS_FILE: &str = "records.jsonl";
const DENSITY_FILE: &str = "density.tsv";

pub fn dispatch(cli: Cli) -> Result<()> {
    let Cli { seed, config, command } = cli;
    match command {
        Command::Synth(a) => synth(a, seed, config),
        Command::Stats(a) => stats(a),
        Command::Structuralize(a) => structuralize(a),
        Command::Prune(a) => prune(a),
        Command::Train(a) => train_cmd(a, seed, config),
        Command::Evaluate(a) => evaluate(a, seed),
        Command::Compare(a) => compare(a, seed),
        Command::Explain(a) => explain(a),
    }
}

fn load_rules(path: Option<&Path>) -> Result<(RuleTable, String)> {
    let text = match path {
        Some(p) => {
            require_file(p)?;
            fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?
        }
        None => DEFAULT_RULES.to_string(),
    };
    Ok((RuleTable::from_toml_str(&text)?, text))
}

fn load_schema(path: Option<&Path>, default: fn() -> FieldSchema) -> Result<FieldSchema> {
    match path {
        Some(p) => {
            require_file(p)?;
            Ok(FieldSchema::load(p)?)
        }
        None => Ok(default()),
    }
}

/// Notes of a corpus file, or of every split file in a directory.
fn read_notes(path: &Path) -> Result<Vec<RawNote>> {
    if path.is_dir() {
        let mut notes = Vec::new();
        for name in SPLIT_NAMES {
            let file = path.join(format!("{name}.jsonl"));
            if file.is_file() {
                notes.extend(read_corpus(&file)?);
            }
        }
        if notes.is_empty() {
            return Err(usage(format!("{}: no split files found", path.display())));
        }
        return Ok(notes);
    }
    require_file(path)?;
    Ok(read_corpus(path)?)
}

fn density_tsv(report: &DensityReport, threshold: Option<f64>) -> String {
    let mut out = String::from("field\tnon_empty\ttotal\tdensity");
    out.push_str(if threshold.is_some() { "\tretained\n" } else { "\n" });
    for f in &report.fields {
        let _ = write!(out, "{}\t{}\t{}\t{:.6}", f.name, f.non_empty, f.total, f.density);
        match threshold {
            Some(t) => {
                let _ = writeln!(out, "\t{}", f.density > t);
            }
            None => out.push('\n'),
        }
    }
    out
}

fn parse_class(s: &str) -> Result<usize> {
    if let Some(k) = CLASS_NAMES.iter().position(|c| c.eq_ignore_ascii_case(s)) {
        return Ok(k);
    }
    match s.parse::<usize>() {
        Ok(k) if k < CLASS_NAMES.len() => Ok(k),
        _ => Err(usage(format!("unknown class {s:?}; expected one of {CLASS_NAMES:?} or 0-3"))),
    }
}

// ---------------------------------------------------------------- synth

#[derive(Serialize)]
struct SynthSettings<'a> {
    out: &'a Path,
    generator: &'a GeneratorConfig,
}

fn synth(a: SynthArgs, seed: Option<u64>, config: Option<PathBuf>) -> Result<()> {
    let mut cfg = match &config {
        Some(path) if path.extension().is_some_and(|e| e == "json") => {
            require_file(path)?;
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<Provenance>(&text)
                .map(|p| p.config)
                .or_else(|_| serde_json::from_str::<GeneratorConfig>(&text))
                .map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        Some(path) => read_toml::<GeneratorConfig>(path)?,
        None => GeneratorConfig::preset(Preset::parse(&a.preset)?, a.n, 0),
    };
    if config.is_none() {
        cfg.n_notes = a.n;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(split) = &a.split {
        if split.len() != 3 {
            return Err(usage(format!("--split needs train,val,test sizes, got {} values", split.len())));
        }
        cfg.split = Some([split[0], split[1], split[2]]);
        cfg.n_notes = split.iter().sum();
    }
    let corpus = generate(&cfg)?;
    create_dir(&a.out)?;
    write_splits(&a.out, &corpus, &cfg)?;
    write_run_config(&a.out, "synth", &SynthSettings { out: &a.out, generator: &cfg })?;
    println!(
        "wrote {} notes ({} train / {} val / {} test) to {}",
        cfg.n_notes,
        corpus.split[0],
        corpus.split[1],
        corpus.split[2],
        a.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- stats

fn stats(a: StatsArgs) -> Result<()> {
    let notes = read_notes(&a.input)?;
    let stats = corpus_stats(&notes);
    print!("{}", stats.to_table());
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_json(&out.join("stats.json"), &stats)?;
        stats.write_plot_data(out)?;
        write_run_config(out, "stats", &serde_json::json!({ "in": a.input, "out": out }))?;
    }
    Ok(())
}

// ---------------------------------------------------------------- structuralize / prune

fn structuralize(a: StructuralizeArgs) -> Result<()> {
    let notes = read_notes(&a.input)?;
    let (rules, rules_text) = load_rules(a.rules.as_deref())?;
    let schema = load_schema(a.schema.as_deref(), FieldSchema::candidate)?;
    let records = finegrain_core::pipeline::structuralize(&notes, &rules, &schema);

    create_dir(&a.out)?;
    let path = a.out.join(RECORDS_FILE);
    let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for r in &records {
        writeln!(w, "{}", serde_json::to_string(r)?).with_context(|| format!("writing {}", path.display()))?;
    }
    w.flush()?;
    schema.save(&a.out.join("schema.toml"))?;
    write_text(&a.out.join(RULES_FILE), &rules_text)?;
    let report = density_report(&records, &schema)?;
    write_text(&a.out.join(DENSITY_FILE), &density_tsv(&report, None))?;
    let labelled: Option<Vec<[u8; 4]>> = notes.iter().map(|n| n.labels).collect();
    if let Some(labels) = labelled {
        let corr = correlation_report(&records, &labels, &schema)?;
        write_text(&a.out.join("correlation.tsv"), &corr.to_table())?;
    }
    write_run_config(&a.out, "structuralize", &serde_json::json!({
        "in": a.input,
        "schema": a.schema,
        "rules": a.rules,
        "out": a.out,
        "schema_sha256": schema.fingerprint(),
    }))?;
    let warnings: usize = records.iter().map(|r| r.warnings).sum();
    println!("structuralized {} notes over {} fields ({warnings} unparseable captures)", records.len(), schema.len());
    Ok(())
}

fn read_records(path: &Path) -> Result<Vec<StructuredRecord>> {
    require_file(path)?;
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| usage(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

fn prune(a: PruneArgs) -> Result<()> {
    require_dir(&a.input)?;
    let records = read_records(&a.input.join(RECORDS_FILE))?;
    let schema_path = a.schema.clone().unwrap_or_else(|| a.input.join("schema.toml"));
    let schema = load_schema(Some(&schema_path), FieldSchema::candidate)?;
    let report = density_report(&records, &schema)?;
    let pruned = prune_schema(&report, &schema, a.threshold)?;
    create_dir(&a.out)?;
    pruned.save(&a.out.join("schema.toml"))?;
    let table = density_tsv(&report, Some(a.threshold));
    write_text(&a.out.join(DENSITY_FILE), &table)?;
    write_run_config(&a.out, "prune", &serde_json::json!({
        "in": a.input,
        "schema": schema_path,
        "threshold": a.threshold,
        "out": a.out,
    }))?;
    print!("{table}");
    println!("retained {} of {} fields", pruned.len(), schema.len());
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DataSettings {
    min_count: usize,
    /// Skip-gram epochs used to initialize the embedding; none keeps the
    /// random initialization.
    pretrain_epochs: Option<usize>,
}

impl Default for DataSettings {
    fn default() -> Self {
        DataSettings { min_count: 1, pretrain_epochs: None }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainFile {
    model: ModelConfig,
    train: TrainConfig,
    data: DataSettings,
}

#[derive(Serialize)]
struct TrainSettings<'a> {
    corpus: &'a Path,
    schema: Option<&'a Path>,
    rules: Option<&'a Path>,
    out: &'a Path,
    #[serde(flatten)]
    resolved: &'a TrainFile,
}

fn train_cmd(a: TrainArgs, seed: Option<u64>, config: Option<PathBuf>) -> Result<()> {
    let mut s: TrainFile = match &config {
        Some(p) => read_toml(p)?,
        None => TrainFile::default(),
    };
    if let Some(v) = &a.variant {
        s.model.variant = Variant::parse(v)?;
    }
    if let Some(t) = &a.tokenizer {
        s.model.tokenizer = match t.as_str() {
            "char" => TokenizerMode::Char,
            "word" => TokenizerMode::Word,
            other => return Err(usage(format!("unknown tokenizer {other:?}; expected char or word"))),
        };
    }
    macro_rules! set {
        ($flag:expr, $field:expr) => {
            if let Some(v) = $flag {
                $field = v;
            }
        };
    }
    set!(a.channels, s.model.channels);
    set!(a.seq_len, s.model.seq_len);
    set!(a.blocks, s.model.n_blocks);
    set!(a.dropout, s.model.dropout);
    set!(a.epochs, s.train.max_epochs);
    set!(a.batch_size, s.train.batch_size);
    set!(a.lr, s.train.learning_rate);
    set!(a.min_count, s.data.min_count);
    set!(seed, s.train.seed);
    if a.patience.is_some() {
        s.train.patience = a.patience;
    }
    if a.pretrain_epochs.is_some() {
        s.data.pretrain_epochs = a.pretrain_epochs;
    }

    require_dir(&a.corpus)?;
    let train_notes = read_corpus(&corpus_file(&a.corpus, "train.jsonl")?)?;
    let val_path = a.corpus.join("val.jsonl");
    let val_notes = if val_path.is_file() { read_corpus(&val_path)? } else { Vec::new() };
    if train_notes.iter().chain(&val_notes).any(|n| n.labels.is_none()) {
        return Err(usage("every training and validation note needs labels"));
    }
    let (rules, rules_text) = load_rules(a.rules.as_deref())?;
    let schema = load_schema(a.schema.as_deref(), FieldSchema::builtin)?;
    let pipeline = Pipeline::fit(&train_notes, rules, schema, s.model.tokenizer, s.model.seq_len, s.data.min_count)?;
    s.model.fields = pipeline.schema.len();
    s.model.vocab_size = pipeline.vocab.len();
    s.model.validate()?;

    let train_ex = pipeline.examples(&train_notes)?;
    let val_ex = pipeline.examples(&val_notes)?;
    let w2v = s.data.pretrain_epochs.map(|epochs| Word2VecConfig { epochs, seed: s.train.seed, ..Word2VecConfig::default() });
    let network = init_network(s.model.clone(), &train_ex, s.train.seed, w2v.as_ref())?;
    log::info!("training {} parameters on {} notes", network.param_count(), train_ex.len());
    let outcome = train(network, &train_ex, &val_ex, &s.train)?;

    create_dir(&a.out)?;
    let bundle = ModelBundle::new(outcome.network, pipeline.vocab, pipeline.schema)?;
    bundle.save(&a.out)?;
    write_text(&a.out.join(RULES_FILE), &rules_text)?;
    let mut history = String::from("epoch\ttrain_loss\tval_map\n");
    for h in &outcome.history {
        let val = h.val_map.map_or("NA".to_string(), |m| format!("{m:?}"));
        let _ = writeln!(history, "{}\t{:?}\t{val}", h.epoch, h.train_loss);
    }
    write_text(&a.out.join("history.tsv"), &history)?;
    let settings = TrainSettings {
        corpus: &a.corpus,
        schema: a.schema.as_deref(),
        rules: a.rules.as_deref(),
        out: &a.out,
        resolved: &s,
    };
    write_run_config(&a.out, "train", &settings)?;
    match outcome.best_val_map {
        Some(m) => println!("best validation mAP {m:.4} at epoch {}", outcome.best_epoch),
        None => println!("trained {} epochs (no validation split)", outcome.history.len()),
    }
    Ok(())
}

// ---------------------------------------------------------------- evaluate / explain

fn load_bundle(dir: &Path) -> Result<(ModelBundle, Pipeline)> {
    require_dir(dir)?;
    let bundle = ModelBundle::load(dir)?;
    let rules_path = dir.join(RULES_FILE);
    let (rules, _) = load_rules(rules_path.is_file().then_some(rules_path.as_path()))?;
    let cfg = bundle.network.config();
    let pipeline = Pipeline {
        rules,
        schema: bundle.schema.clone(),
        vocab: bundle.vocab.clone(),
        mode: cfg.tokenizer,
        seq_len: cfg.seq_len,
    };
    Ok((bundle, pipeline))
}

#[derive(Serialize)]
struct Intervals {
    map: ConfidenceInterval,
    ap: Vec<Option<ConfidenceInterval>>,
}

#[derive(Serialize)]
struct Evaluation<'a> {
    report: &'a MetricsReport,
    bootstrap: Option<Intervals>,
}

fn evaluate(a: EvaluateArgs, seed: Option<u64>) -> Result<()> {
    let seed = seed.unwrap_or(0);
    let (bundle, pipeline) = load_bundle(&a.checkpoint)?;
    let notes = read_corpus(&corpus_file(&a.input, "test.jsonl")?)?;
    if notes.iter().any(|n| n.labels.is_none()) {
        return Err(usage("evaluation needs labels on every note"));
    }
    let examples = pipeline.examples(&notes)?;
    let predictions = predict(&bundle.network, &examples, a.threshold)?;
    let set = ScoredSet::new(predictions.iter().map(|p| p.0).collect(), examples.iter().map(|e| e.labels).collect())?;
    let report = summarize(&set, a.threshold);

    let bootstrap = if a.n_resamples == 0 {
        None
    } else {
        let map = bootstrap_ci(set.len(), |idx| set.select(idx).map(), a.n_resamples, a.level, seed)?;
        let mut ap = Vec::new();
        for k in 0..CLASS_NAMES.len() {
            let (scores, labels) = set.column(k);
            if !labels.contains(&1) {
                ap.push(None);
                continue;
            }
            let metric = |idx: &[usize]| {
                let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
                let l: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
                finegrain_core::metrics::average_precision(&s, &l)
            };
            ap.push(Some(bootstrap_ci(set.len(), metric, a.n_resamples, a.level, seed)?));
        }
        Some(Intervals { map, ap })
    };

    create_dir(&a.out)?;
    let ids: Vec<String> = examples.iter().map(|e| e.id.clone()).collect();
    write_scores(&a.out.join("scores.tsv"), &ids, &set)?;
    let mut table = report.to_table();
    if let Some(b) = &bootstrap {
        let _ = writeln!(table, "\n{:.0}% bootstrap intervals ({} resamples)", b.map.level * 100.0, b.map.n_resamples);
        let _ = writeln!(table, "  mAP         [{:.4}, {:.4}]", b.map.lo, b.map.hi);
        for (name, ci) in CLASS_NAMES.iter().zip(&b.ap) {
            if let Some(ci) = ci {
                let _ = writeln!(table, "  AP {name:<9}[{:.4}, {:.4}]", ci.lo, ci.hi);
            }
        }
    }
    write_text(&a.out.join("report.txt"), &table)?;
    write_json(&a.out.join("report.json"), &Evaluation { report: &report, bootstrap })?;
    write_run_config(&a.out, "evaluate", &serde_json::json!({
        "checkpoint": a.checkpoint,
        "in": a.input,
        "out": a.out,
        "threshold": a.threshold,
        "n_resamples": a.n_resamples,
        "level": a.level,
        "seed": seed,
    }))?;
    print!("{table}");
    Ok(())
}

fn explain(a: ExplainArgs) -> Result<()> {
    let reduction = match a.reduction.as_str() {
        "sum" => Reduction::Sum,
        "l2" => Reduction::L2,
        other => return Err(usage(format!("unknown reduction {other:?}; expected sum or l2"))),
    };
    let fixed_class = if a.class == "labels" { None } else { Some(parse_class(&a.class)?) };
    let (bundle, pipeline) = load_bundle(&a.checkpoint)?;
    let mut notes = read_corpus(&corpus_file(&a.input, "test.jsonl")?)?;
    if !a.notes.is_empty() {
        let known: HashSet<&str> = notes.iter().map(|n| n.id.as_str()).collect();
        if let Some(missing) = a.notes.iter().find(|id| !known.contains(id.as_str())) {
            return Err(usage(format!("note {missing:?} not found in {}", a.input.display())));
        }
        let wanted: HashSet<&str> = a.notes.iter().map(String::as_str).collect();
        notes.retain(|n| wanted.contains(n.id.as_str()));
    }
    let records = pipeline.records(&notes);
    let examples = to_examples(&notes, &records, &pipeline.vocab, pipeline.mode, pipeline.seq_len)?;
    create_dir(&a.out)?;
    let mut written = 0;
    for ((note, rec), ex) in notes.iter().zip(&records).zip(&examples) {
        let classes: Vec<usize> = match fixed_class {
            Some(k) => vec![k],
            None => (0..CLASS_NAMES.len()).filter(|&k| note.labels.is_some_and(|l| l[k] == 1)).collect(),
        };
        let tokens = visible_tokens(&rec.residual_text, pipeline.mode, pipeline.seq_len);
        for k in classes {
            let map = saliency(&bundle.network, ex, &tokens, k, reduction)?;
            write_saliency(&map, &a.out)?;
            let top: Vec<&str> = map.ranking().iter().take(3).map(|&i| map.tokens[i].as_str()).collect();
            println!("{}\t{}\t{}", note.id, CLASS_NAMES[k], top.join(" "));
            written += 1;
        }
    }
    write_run_config(&a.out, "explain", &serde_json::json!({
        "checkpoint": a.checkpoint,
        "in": a.input,
        "notes": a.notes,
        "class": a.class,
        "reduction": a.reduction,
        "out": a.out,
    }))?;
    log::info!("wrote {written} saliency maps");
    Ok(())
}

// ---------------------------------------------------------------- compare

#[derive(Serialize)]
struct Comparison<'a> {
    metric: String,
    a: &'a [PathBuf],
    b: &'a [PathBuf],
    mean_a: f64,
    mean_b: f64,
    result: PermutationResult,
}

fn compare(a: CompareArgs, seed: Option<u64>) -> Result<()> {
    let seed = seed.unwrap_or(0);
    if a.a.len() != a.b.len() {
        return Err(usage(format!("{} --a files but {} --b files", a.a.len(), a.b.len())));
    }
    let class = a.class.as_deref().map(parse_class).transpose()?;
    let metric = |s: &ScoredSet| match class {
        Some(k) => {
            let (scores, labels) = s.column(k);
            finegrain_core::metrics::average_precision(&scores, &labels)
        }
        None => s.map(),
    };
    let mut runs = Vec::new();
    for (pa, pb) in a.a.iter().zip(&a.b) {
        require_file(pa)?;
        require_file(pb)?;
        let (ids_a, set_a) = read_scores(pa)?;
        let (ids_b, set_b) = read_scores(pb)?;
        if ids_a != ids_b {
            return Err(usage(format!("{} and {} score different notes", pa.display(), pb.display())));
        }
        runs.push((set_a, set_b));
    }
    let mean = |pick: fn(&(ScoredSet, ScoredSet)) -> &ScoredSet| -> Result<f64> {
        let mut total = 0.0;
        for r in &runs {
            total += metric(pick(r)).ok_or_else(|| usage("metric undefined: no positive labels"))?;
        }
        Ok(total / runs.len() as f64)
    };
    let (mean_a, mean_b) = (mean(|r| &r.0)?, mean(|r| &r.1)?);
    let result = metric_permutation_test(&runs, metric, a.draws, seed)?;
    let name = class.map_or("mAP".to_string(), |k| format!("AP({})", CLASS_NAMES[k]));
    println!("{name}: A {mean_a:.4}  B {mean_b:.4}  difference {:+.4}  p = {:.4} ({} draws)", result.statistic, result.p_value, result.draws);
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_json(&out.join("compare.json"), &Comparison { metric: name, a: &a.a, b: &a.b, mean_a, mean_b, result })?;
        write_run_config(out, "compare", &serde_json::json!({
            "a": a.a,
            "b": a.b,
            "class": a.class,
            "draws": a.draws,
            "seed": seed,
            "out": out,
        }))?;
    }
    Ok(())
}
