use finegrain_core::embedding::{TokenizerMode, Word2VecConfig};
use finegrain_core::metrics::summarize;
use finegrain_core::model::{predict, scored_set, train, ModelBundle, ModelConfig, TrainConfig, Variant};
use finegrain_core::pipeline::{init_network, Pipeline};
use finegrain_core::structuralizer::{FieldSchema, RawNote, RuleTable};
use finegrain_core::synth::{generate, read_splits, write_splits, GeneratorConfig, Preset};
use finegrain_core::Error;

fn corpus(preset: Preset, n: usize, seed: u64) -> [Vec<RawNote>; 3] {
    let cfg = GeneratorConfig::preset(preset, n, seed);
    let c = generate(&cfg).unwrap();
    [0, 1, 2].map(|k| c.part(k).iter().map(|g| g.note.clone()).collect())
}

fn small_model(pipeline: &Pipeline, variant: Variant) -> ModelConfig {
    ModelConfig {
        channels: 8,
        seq_len: pipeline.seq_len,
        fields: pipeline.schema.len(),
        vocab_size: pipeline.vocab.len(),
        n_blocks: 1,
        dropout: 0.1,
        variant,
        tokenizer: pipeline.mode,
        ..ModelConfig::default()
    }
}

#[test]
fn every_variant_trains_through_the_public_pipeline() {
    let [tr, va, _] = corpus(Preset::Mixed, 300, 1);
    let p = Pipeline::fit(&tr, RuleTable::builtin(), FieldSchema::builtin(), TokenizerMode::Word, 40, 1).unwrap();
    let (tr, va) = (p.examples(&tr).unwrap(), p.examples(&va).unwrap());
    let tc = TrainConfig { max_epochs: 2, batch_size: 16, seed: 3, ..TrainConfig::default() };
    for variant in Variant::ALL {
        let net = init_network(small_model(&p, variant), &tr, 3, None).unwrap();
        let out = train(net, &tr, &va, &tc).unwrap();
        assert_eq!(out.history.len(), 2, "{}", variant.name());
        assert!(out.best_val_map.unwrap().is_finite());
    }
}

#[test]
fn pretrained_embeddings_are_skipped_for_struct_only() {
    let [tr, _, _] = corpus(Preset::Mixed, 120, 2);
    let p = Pipeline::fit(&tr, RuleTable::builtin(), FieldSchema::builtin(), TokenizerMode::Word, 40, 1).unwrap();
    let ex = p.examples(&tr).unwrap();
    let w2v = Word2VecConfig { epochs: 1, ..Word2VecConfig::default() };
    let a = init_network(small_model(&p, Variant::StructOnly), &ex, 1, Some(&w2v)).unwrap();
    let b = init_network(small_model(&p, Variant::StructOnly), &ex, 1, None).unwrap();
    assert_eq!(a.logits(&ex[..4]).unwrap(), b.logits(&ex[..4]).unwrap());
    let c = init_network(small_model(&p, Variant::Full), &ex, 1, Some(&w2v)).unwrap();
    let d = init_network(small_model(&p, Variant::Full), &ex, 1, None).unwrap();
    assert_ne!(c.logits(&ex[..4]).unwrap(), d.logits(&ex[..4]).unwrap());
}

#[test]
fn saved_bundle_scores_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = GeneratorConfig::preset(Preset::Mixed, 200, 4);
    cfg.split = Some([140, 30, 30]);
    write_splits(dir.path(), &generate(&cfg).unwrap(), &cfg).unwrap();
    let [tr, va, te] = read_splits(dir.path()).unwrap();

    let p = Pipeline::fit(&tr, RuleTable::builtin(), FieldSchema::builtin(), TokenizerMode::Char, 120, 2).unwrap();
    let (tr, va, te) = (p.examples(&tr).unwrap(), p.examples(&va).unwrap(), p.examples(&te).unwrap());
    let net = init_network(small_model(&p, Variant::Full), &tr, 5, None).unwrap();
    let tc = TrainConfig { max_epochs: 1, seed: 5, ..TrainConfig::default() };
    let out = train(net, &tr, &va, &tc).unwrap();

    let bundle = ModelBundle::new(out.network, p.vocab.clone(), p.schema.clone()).unwrap();
    let model_dir = dir.path().join("model");
    bundle.save(&model_dir).unwrap();
    let loaded = ModelBundle::load(&model_dir).unwrap();
    // the checkpoint stores f32, so compare against the same weights rounded
    let mut rounded = bundle.network.clone();
    let names: Vec<String> = rounded.store().params().map(|(k, _)| k.to_string()).collect();
    let round = |t: &[f64]| -> Vec<f64> { t.iter().map(|&x| x as f32 as f64).collect() };
    for name in names {
        let v = round(rounded.store().get(&name).unwrap().value.data());
        rounded.store_mut().set_value(&name, &v).unwrap();
    }
    let buffers: Vec<String> = rounded.store().buffers().map(|(k, _)| k.to_string()).collect();
    for name in buffers {
        let v = round(rounded.store().buffer(&name).unwrap().data());
        rounded.store_mut().set_buffer(&name, v).unwrap();
    }
    assert_eq!(scored_set(&rounded, &te).unwrap(), scored_set(&loaded.network, &te).unwrap());
    assert!(loaded.check_compatible(&FieldSchema::builtin()).is_ok());
    assert!(matches!(loaded.check_compatible(&FieldSchema::candidate()), Err(Error::Contract(_))));

    let preds = predict(&loaded.network, &te, 0.5).unwrap();
    let report = summarize(&scored_set(&loaded.network, &te).unwrap(), 0.5);
    let fired: u64 = preds.iter().map(|p| p.1.iter().map(|&d| d as u64).sum::<u64>()).sum();
    let tp_fp: u64 = report.classes.iter().map(|c| c.confusion[0][1] + c.confusion[1][1]).sum();
    assert_eq!(fired, tp_fp);
}

#[test]
fn schema_width_mismatch_is_refused() {
    let [tr, _, _] = corpus(Preset::StructOnly, 60, 6);
    let p = Pipeline::fit(&tr, RuleTable::builtin(), FieldSchema::builtin(), TokenizerMode::Word, 40, 1).unwrap();
    let mut cfg = small_model(&p, Variant::Full);
    cfg.fields = 18;
    let ex = p.examples(&tr).unwrap();
    let net = init_network(cfg, &ex, 0, None);
    assert!(net.is_err() || net.unwrap().logits(&ex[..1]).is_err());
}
