use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::embedding::{TokenizerMode, Vocabulary};
use crate::error::Error;
use crate::structuralizer::FieldSchema;
use crate::tensor::gradcheck::{central_difference, max_relative_error};
use crate::tensor::{Tape, Tensor, Var};

fn tiny(channels: usize, seq_len: usize, fields: usize, blocks: usize) -> ModelConfig {
    ModelConfig {
        channels,
        seq_len,
        fields,
        vocab_size: 20,
        n_blocks: blocks,
        dropout: 0.0,
        ..ModelConfig::default()
    }
}

fn examples(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let length = rng.gen_range(1..=cfg.seq_len);
            let mut ids: Vec<usize> = (0..length).map(|_| rng.gen_range(1..cfg.vocab_size)).collect();
            ids.resize(cfg.seq_len, 0);
            Example {
                id: format!("n{i}"),
                ids,
                length,
                structured: (0..cfg.fields).map(|_| if rng.gen_bool(0.7) { rng.gen_range(-2.0..2.0) } else { 0.0 }).collect(),
                labels: [0; 4].map(|_: u8| rng.gen_bool(0.4) as u8),
            }
        })
        .collect()
}

fn trace(net: &Network, batch: &[Example], train: bool) -> ForwardTrace {
    let tape = Tape::new();
    let params = net.store().bind(&tape);
    let refs: Vec<&Example> = batch.iter().collect();
    let opts = ForwardOptions { train, rng: None, trace: true, input_grads: false };
    net.forward(&tape, &params, &refs, opts).unwrap().trace.unwrap()
}

fn zero(net: &mut Network, name: &str) {
    let n = net.store().get(name).unwrap().value.numel();
    net.store_mut().set_value(name, &vec![0.0; n]).unwrap();
}

fn zero_prefix(net: &mut Network, prefix: &str, suffixes: &[&str]) {
    let names: Vec<String> = net
        .store()
        .params()
        .map(|(n, _)| n.to_string())
        .filter(|n| n.starts_with(prefix) && suffixes.iter().any(|s| n.ends_with(s)))
        .collect();
    assert!(!names.is_empty(), "no parameters under {prefix}");
    for n in names {
        zero(net, &n);
    }
}

fn row_sums(t: &Tensor) -> Vec<f64> {
    let n = *t.shape().last().unwrap();
    t.data().chunks(n).map(|r| r.iter().sum()).collect()
}

#[test]
fn config_validation() {
    assert!(ModelConfig { fields: 30, seq_len: 20, ..tiny(8, 20, 5, 1) }.validate().is_err());
    assert!(ModelConfig { channels: 10, ..tiny(8, 12, 5, 1) }.validate().is_err());
    assert!(ModelConfig { n_classes: 3, ..tiny(8, 12, 5, 1) }.validate().is_err());
    assert!(ModelConfig { dropout: 1.0, ..tiny(8, 12, 5, 1) }.validate().is_err());
    // single-stream variants do not pad the structured stream
    ModelConfig { fields: 30, variant: Variant::StructOnly, ..tiny(8, 20, 5, 1) }.validate().unwrap();
    assert!(matches!(Network::new(ModelConfig { fields: 30, ..tiny(8, 20, 5, 1) }, 0), Err(Error::Config(_))));
    assert_eq!(Variant::parse("infusion-only").unwrap(), Variant::InfusionOnly);
    assert!(Variant::parse("nope").is_err());
}

#[test]
fn default_stem_shapes() {
    let cfg = ModelConfig { vocab_size: 30, ..ModelConfig::default() };
    let net = Network::new(cfg.clone(), 1).unwrap();
    let tr = trace(&net, &examples(&cfg, 1, 2), false);
    assert_eq!(tr.t_stem.as_ref().unwrap().shape(), &[1, 64, 256]);
    assert_eq!(tr.s_stem.as_ref().unwrap().shape(), &[1, 64, 19]);
    assert_eq!(tr.m.as_ref().unwrap().shape(), &[1, 1, 83]);
    assert_eq!(tr.logits.as_ref().unwrap().shape(), &[1, 1, 4]);
}

/// Learnable scalars for the default configuration, tallied layer by layer.
#[test]
fn default_parameter_count_is_pinned() {
    let cfg = ModelConfig { vocab_size: 1000, ..ModelConfig::default() };
    let (c, h, f, v) = (64usize, 16usize, 19usize, 1000usize);
    let conv = |o: usize, i: usize, k: usize| o * i * k + o;
    let affine = |n: usize| 2 * n;
    let res = conv(h, c, 1) + affine(h) + conv(h, h, 3) + affine(h) + conv(c, h, 1) + affine(c);
    let transfer = conv(h, c, 1) + affine(h) + conv(c, h, 1);
    let infuse = conv(1, c, 1) + transfer;
    let expected = v * c
        + conv(c, c, 3) + affine(c) + conv(c, c, 3)
        + conv(c, 1, 1)
        + 4 * 2 * (res + infuse)
        + 2 * conv(1, c, 1) + 2 * transfer
        + conv(1, c, 1)
        + (c + f) * c + c + c * 4 + 4;
    assert_eq!(param_count(&cfg), expected);
    assert_eq!(expected, 141_743);
    assert_eq!(Network::new(cfg, 0).unwrap().param_count(), expected);
}

#[test]
fn zero_text_stem_gives_zero_output() {
    let cfg = tiny(8, 12, 5, 1);
    let mut net = Network::new(cfg.clone(), 3).unwrap();
    for n in ["text_stem.conv1.weight", "text_stem.conv1.bias", "text_stem.conv2.weight", "text_stem.conv2.bias"] {
        zero(&mut net, n);
    }
    let tr = trace(&net, &examples(&cfg, 3, 4), true);
    assert!(tr.t_stem.unwrap().data().iter().all(|&x| x == 0.0));
}

#[test]
fn zero_structured_input_yields_bias_columns() {
    let cfg = tiny(8, 12, 5, 1);
    let net = Network::new(cfg.clone(), 3).unwrap();
    let mut ex = examples(&cfg, 1, 4);
    ex[0].structured = vec![0.0; 5];
    let s = trace(&net, &ex, false).s_stem.unwrap();
    let bias = net.store().get("struct_stem.conv.bias").unwrap().value.data().to_vec();
    for c in 0..8 {
        assert!(s.data()[c * 5..(c + 1) * 5].iter().all(|&x| x == bias[c]));
    }
}

#[test]
fn res_block_with_silent_branch_is_relu() {
    let cfg = tiny(8, 12, 5, 1);
    let mut net = Network::new(cfg.clone(), 5).unwrap();
    zero(&mut net, "text_blocks.0.res.bn3.gamma");
    zero(&mut net, "struct_blocks.0.res.bn3.gamma");
    let tr = trace(&net, &examples(&cfg, 2, 6), true);
    for (stem, res) in [(&tr.t_stem, &tr.blocks[0].t_res), (&tr.s_stem, &tr.blocks[0].s_res)] {
        let stem = stem.as_ref().unwrap();
        let res = res.as_ref().unwrap();
        assert_eq!(stem.shape(), res.shape());
        for (a, b) in stem.data().iter().zip(res.data()) {
            assert_eq!(a.max(0.0), *b);
        }
    }
}

#[test]
fn infusion_hand_example() {
    let tape = Tape::new();
    let main = tape.constant(Tensor::zeros(&[1, 2, 3]));
    let source = tape.constant(Tensor::new(vec![1, 2, 2], vec![1.0, 3.0, 2.0, 0.0]).unwrap());
    let squeezed = tape.constant(Tensor::zeros(&[1, 1, 2]));
    let (out, alpha, rw) = infuse_with(&main, &source, &squeezed, None, |v: &Var| Ok(*v)).unwrap();
    assert_eq!(alpha.value().data(), &[0.5, 0.5]);
    assert_eq!(rw.value().data(), &[2.0, 1.0]);
    assert_eq!(out.value().data(), &[2.0, 2.0, 2.0, 1.0, 1.0, 1.0]);
}

#[test]
fn uniform_infusion_weights_give_row_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let src: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let tape = Tape::new();
    let source = tape.constant(Tensor::new(vec![1, 3, 4], src.clone()).unwrap());
    let main = tape.constant(Tensor::zeros(&[1, 3, 5]));
    let squeezed = tape.constant(Tensor::full(&[1, 1, 4], 0.7));
    let (_, _, rw) = infuse_with(&main, &source, &squeezed, None, |v: &Var| Ok(*v)).unwrap();
    for c in 0..3 {
        let mean = src[c * 4..(c + 1) * 4].iter().sum::<f64>() / 4.0;
        assert!((rw.value().data()[c] - mean).abs() < 1e-15);
    }
    // with a length mask, only the valid prefix is averaged
    let (_, alpha, rw) = infuse_with(&main, &source, &squeezed, Some(&[2]), |v: &Var| Ok(*v)).unwrap();
    assert_eq!(alpha.value().data(), &[0.5, 0.5, 0.0, 0.0]);
    assert!((rw.value().data()[0] - (src[0] + src[1]) / 2.0).abs() < 1e-15);
}

#[test]
fn silent_infusion_reduces_blocks_to_independent_resblocks() {
    let cfg = tiny(8, 12, 5, 2);
    let mut net = Network::new(cfg.clone(), 7).unwrap();
    zero_prefix(&mut net, "text_blocks", &["infuse.transfer.conv2.weight", "infuse.transfer.conv2.bias"]);
    zero_prefix(&mut net, "struct_blocks", &["infuse.transfer.conv2.weight", "infuse.transfer.conv2.bias"]);
    let tr = trace(&net, &examples(&cfg, 3, 8), false);
    for b in &tr.blocks {
        assert_eq!(b.t_out, b.t_res);
        assert_eq!(b.s_out, b.s_res);
    }
}

fn pointwise<'t>(tape: &'t Tape, w: Vec<f64>, b: f64) -> impl Fn(&Var<'t>) -> crate::Result<Var<'t>> + 't {
    let w = tape.constant(Tensor::new(vec![1, 2, 1], w).unwrap());
    let b = tape.constant(Tensor::new(vec![1], vec![b]).unwrap());
    move |x| x.conv1d(&w, &b, 0)
}

fn ident<'t>(v: &Var<'t>) -> crate::Result<Var<'t>> {
    Ok(*v)
}

#[test]
fn fusion_hand_example() {
    // C=2, L=3, F=2, one note whose text has 2 real tokens
    let t_m = [[1.0, 2.0, 0.0], [0.0, 1.0, 3.0]];
    let s_m = [[1.0, 2.0], [3.0, 0.0]];
    let tape = Tape::new();
    let tv = tape.constant(Tensor::new(vec![1, 2, 3], t_m.concat()).unwrap());
    let sv = tape.constant(Tensor::new(vec![1, 2, 2], s_m.concat()).unwrap());
    let text_dist = pointwise(&tape, vec![1.0, 0.0], 0.0);
    let struct_dist = pointwise(&tape, vec![0.0, 1.0], 0.0);
    let merge = pointwise(&tape, vec![1.0, 1.0], 0.5);
    let layers = FusionLayers {
        text_dist: &text_dist,
        struct_dist: &struct_dist,
        merge: &merge,
        text_transfer: &ident,
        struct_transfer: &ident,
    };
    let out = attentive_fusion(&tv, &sv, &[2], &layers).unwrap();

    // text distribution over the first two positions of channel 0 scores [1, 2]
    let e = std::f64::consts::E;
    let t_p = [1.0 / (1.0 + e), e / (1.0 + e), 0.0];
    // structured scores come from channel 1 of the padded stream: [3, 0, 0]
    let z = e.powi(3) + 2.0;
    let s_p = [e.powi(3) / z, 1.0 / z, 1.0 / z];
    let s_pad = [[1.0, 2.0, 0.0], [3.0, 0.0, 0.0]];
    let a_s: Vec<f64> = (0..2).map(|c| (0..3).map(|l| s_p[l] * t_m[c][l]).sum()).collect();
    let a_t: Vec<f64> = (0..2).map(|c| (0..3).map(|l| t_p[l] * s_pad[c][l]).sum()).collect();
    let t_c: Vec<f64> = (0..2).map(|c| (0..3).map(|l| t_m[c][l] + a_t[c]).fold(f64::MIN, f64::max)).collect();
    let s_o: Vec<Vec<f64>> = (0..2).map(|c| (0..2).map(|f| s_m[c][f] + a_s[c]).collect()).collect();
    let s_c: Vec<f64> = (0..2).map(|f| s_o[0][f] + s_o[1][f] + 0.5).collect();
    let expected = [t_c, s_c].concat();

    let att = out.attention.as_ref().unwrap();
    for (got, want) in att.t_p.value().data().iter().zip(t_p) {
        assert!((got - want).abs() < 1e-12);
    }
    for (got, want) in att.a_s.value().data().iter().zip(&a_s) {
        assert!((got - want).abs() < 1e-12);
    }
    assert_eq!(out.m.value().shape(), &[1, 1, 4]);
    for (got, want) in out.m.value().data().iter().zip(&expected) {
        assert!((got - want).abs() < 1e-12, "{:?} vs {expected:?}", out.m.value().data());
    }
}

#[test]
fn silent_fusion_transfer_pools_and_merges_stream_outputs() {
    let cfg = tiny(8, 12, 5, 1);
    let mut net = Network::new(cfg.clone(), 9).unwrap();
    zero_prefix(&mut net, "fusion.", &["transfer.conv2.weight", "transfer.conv2.bias"]);
    let tr = trace(&net, &examples(&cfg, 2, 10), false);
    let t_m = tr.t_m.unwrap();
    let t_c = tr.t_c.unwrap();
    for b in 0..2 {
        for c in 0..8 {
            let row = &t_m.data()[(b * 8 + c) * 12..(b * 8 + c + 1) * 12];
            assert_eq!(t_c.data()[b * 8 + c], row.iter().copied().fold(f64::MIN, f64::max));
        }
    }
    assert_eq!(tr.s_o.unwrap(), tr.s_m.unwrap());
}

#[test]
fn silent_exchange_matches_baseline_build() {
    let cfg = tiny(8, 12, 5, 2);
    let mut full = Network::new(cfg.clone(), 11).unwrap();
    zero_prefix(&mut full, "text_blocks", &["infuse.transfer.conv2.weight", "infuse.transfer.conv2.bias"]);
    zero_prefix(&mut full, "struct_blocks", &["infuse.transfer.conv2.weight", "infuse.transfer.conv2.bias"]);
    zero_prefix(&mut full, "fusion.", &["transfer.conv2.weight", "transfer.conv2.bias"]);
    let mut base = Network::new(ModelConfig { variant: Variant::Baseline, ..cfg.clone() }, 99).unwrap();
    let shared: Vec<(String, Vec<f64>)> = base
        .store()
        .params()
        .map(|(n, _)| (n.to_string(), full.store().get(n).unwrap().value.data().to_vec()))
        .collect();
    for (n, v) in shared {
        base.store_mut().set_value(&n, &v).unwrap();
    }
    let ex = examples(&cfg, 4, 12);
    assert_eq!(full.logits(&ex).unwrap(), base.logits(&ex).unwrap());
}

#[test]
fn head_with_zero_weights_emits_final_bias() {
    let cfg = tiny(8, 12, 5, 1);
    let mut net = Network::new(cfg.clone(), 13).unwrap();
    zero(&mut net, "head.fc1.weight");
    zero(&mut net, "head.fc2.weight");
    let bias = net.store().get("head.fc2.bias").unwrap().value.data().to_vec();
    for row in net.logits(&examples(&cfg, 3, 1)).unwrap() {
        assert_eq!(row.to_vec(), bias);
    }
}

#[test]
fn decisions_use_strict_threshold() {
    let (p, d) = decide(&[0.0; 4], 0.5);
    assert_eq!(p, [0.5; 4]);
    assert_eq!(d, [0; 4]);
    assert_eq!(decide(&[3.0, -3.0, 3.0, -3.0], 0.5).1, [1, 0, 1, 0]);
}

#[test]
fn trace_shapes_and_distributions() {
    let cfg = tiny(8, 12, 5, 2);
    let net = Network::new(cfg.clone(), 15).unwrap();
    let ex = examples(&cfg, 3, 16);
    let tr = trace(&net, &ex, false);
    let (b, c, l, f) = (3, 8, 12, 5);
    assert_eq!(tr.embedded.as_ref().unwrap().shape(), &[b, c, l]);
    assert_eq!(tr.structured.as_ref().unwrap().shape(), &[b, 1, f]);
    assert_eq!(tr.blocks.len(), 2);
    for bt in &tr.blocks {
        assert_eq!(bt.t_res.as_ref().unwrap().shape(), &[b, c, l]);
        assert_eq!(bt.s_res.as_ref().unwrap().shape(), &[b, c, f]);
        assert_eq!(bt.s0.as_ref().unwrap().shape(), &[b, 1, f]);
        assert_eq!(bt.t0.as_ref().unwrap().shape(), &[b, 1, l]);
        assert_eq!(bt.s_reweighted.as_ref().unwrap().shape(), &[b, c, 1]);
        assert_eq!(bt.t_out.as_ref().unwrap().shape(), &[b, c, l]);
        assert_eq!(bt.s_out.as_ref().unwrap().shape(), &[b, c, f]);
        for s in row_sums(bt.alpha.as_ref().unwrap()) {
            assert!((s - 1.0).abs() < 1e-9);
        }
        let beta = bt.beta.as_ref().unwrap();
        for (i, s) in row_sums(beta).into_iter().enumerate() {
            assert!((s - 1.0).abs() < 1e-9);
            assert!(beta.data()[i * l + ex[i].length..(i + 1) * l].iter().all(|&x| x == 0.0));
        }
    }
    let t_p = tr.t_p.as_ref().unwrap();
    for (i, s) in row_sums(t_p).into_iter().enumerate() {
        assert!((s - 1.0).abs() < 1e-9);
        assert!(t_p.data()[i * l + ex[i].length..(i + 1) * l].iter().all(|&x| x == 0.0));
    }
    for s in row_sums(tr.s_p.as_ref().unwrap()) {
        assert!((s - 1.0).abs() < 1e-9);
    }
    assert_eq!(tr.a_s.as_ref().unwrap().shape(), &[b, 1, c]);
    assert_eq!(tr.t_o.as_ref().unwrap().shape(), &[b, c, l]);
    assert_eq!(tr.s_o.as_ref().unwrap().shape(), &[b, c, f]);
    assert_eq!(tr.t_c.as_ref().unwrap().shape(), &[b, 1, c]);
    assert_eq!(tr.s_c.as_ref().unwrap().shape(), &[b, 1, f]);
    assert_eq!(tr.m.as_ref().unwrap().shape(), &[b, 1, c + f]);
}

#[test]
fn eval_forward_is_batch_independent() {
    let cfg = tiny(8, 12, 5, 2);
    let net = Network::new(cfg.clone(), 17).unwrap();
    let ex = examples(&cfg, 5, 18);
    let together = net.logits(&ex).unwrap();
    let mut reversed = ex.clone();
    reversed.reverse();
    let mut back = net.logits(&reversed).unwrap();
    back.reverse();
    assert_eq!(together, back);
    for (i, e) in ex.iter().enumerate() {
        assert_eq!(net.logits(std::slice::from_ref(e)).unwrap()[0], together[i]);
    }
    let twins = vec![ex[0].clone(), ex[0].clone()];
    let out = net.logits(&twins).unwrap();
    assert_eq!(out[0], out[1]);
    assert_eq!(net.logits(&ex).unwrap(), together);
}

#[test]
fn forward_rejects_mismatched_inputs() {
    let cfg = tiny(8, 12, 5, 1);
    let net = Network::new(cfg.clone(), 1).unwrap();
    let mut ex = examples(&cfg, 1, 1);
    ex[0].structured.push(1.0);
    assert!(matches!(net.logits(&ex), Err(Error::Contract(_))));
}

/// Training-mode BCE over a fixed batch as a function of every parameter.
fn loss_fn<'a>(net: &'a Network, batch: &[Example]) -> impl Fn(&[f64]) -> f64 + 'a {
    let batch: Vec<Example> = batch.to_vec();
    move |flat: &[f64]| {
        let mut n = net.clone();
        let mut off = 0;
        let names: Vec<String> = n.store().params().map(|(k, _)| k.to_string()).collect();
        for name in names {
            let len = n.store().get(&name).unwrap().value.numel();
            n.store_mut().set_value(&name, &flat[off..off + len]).unwrap();
            off += len;
        }
        let tape = Tape::new();
        let params = n.store().bind(&tape);
        let refs: Vec<&Example> = batch.iter().collect();
        let opts = ForwardOptions { train: true, rng: None, trace: false, input_grads: false };
        let fwd = n.forward(&tape, &params, &refs, opts).unwrap();
        let t: Vec<f64> = refs.iter().flat_map(|e| e.labels.map(f64::from)).collect();
        fwd.logits.bce_with_logits(&t).unwrap().value().item()
    }
}

fn analytic_grad(net: &Network, batch: &[Example]) -> (Vec<f64>, Vec<f64>) {
    let tape = Tape::new();
    let params = net.store().bind(&tape);
    let refs: Vec<&Example> = batch.iter().collect();
    let opts = ForwardOptions { train: true, rng: None, trace: false, input_grads: false };
    let fwd = net.forward(&tape, &params, &refs, opts).unwrap();
    let t: Vec<f64> = refs.iter().flat_map(|e| e.labels.map(f64::from)).collect();
    tape.backward(fwd.logits.bce_with_logits(&t).unwrap()).unwrap();
    let mut store = net.store().clone();
    store.zero_grad();
    params.accumulate_into(&mut store).unwrap();
    let grads = store.params().flat_map(|(_, p)| p.grad.clone()).collect();
    let values = store.params().flat_map(|(_, p)| p.value.data().to_vec()).collect();
    (values, grads)
}

#[test]
fn parameter_gradients_match_finite_differences_on_sampled_coordinates() {
    let cfg = tiny(8, 12, 5, 1);
    let net = Network::new(cfg.clone(), 21).unwrap();
    let batch = examples(&cfg, 3, 22);
    let (values, grads) = analytic_grad(&net, &batch);
    let f = loss_fn(&net, &batch);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    // the first C entries are the frozen pad row of the embedding table
    let picks: Vec<usize> = (0..200).map(|_| rng.gen_range(cfg.channels..values.len())).collect();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for &i in &picks {
        let g = central_difference(|x: &[f64]| {
            let mut v = values.clone();
            v[i] = x[0];
            f(&v)
        }, &[values[i]], 1e-4);
        analytic.push(grads[i]);
        numeric.push(g[0]);
    }
    let err = max_relative_error(&analytic, &numeric, 1e-3);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn training_reduces_loss_and_is_reproducible() {
    let cfg = ModelConfig { dropout: 0.5, ..tiny(8, 12, 5, 1) };
    let data = examples(&cfg, 8, 30);
    let net = Network::new(cfg.clone(), 31).unwrap();
    let before = mean_loss(&net, &data).unwrap();
    let tcfg = TrainConfig { batch_size: 4, max_epochs: 1, learning_rate: 1e-2, seed: 5, ..TrainConfig::default() };
    let a = train(net.clone(), &data, &[], &tcfg).unwrap();
    let after = mean_loss(&a.network, &data).unwrap();
    assert!(after < before, "{after} !< {before}");

    let tcfg = TrainConfig { max_epochs: 3, ..tcfg };
    let a = train(net.clone(), &data, &data, &tcfg).unwrap();
    let b = train(net, &data, &data, &tcfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.best_epoch, b.best_epoch);
    let pa: Vec<f64> = a.network.store().params().flat_map(|(_, p)| p.value.data().to_vec()).collect();
    let pb: Vec<f64> = b.network.store().params().flat_map(|(_, p)| p.value.data().to_vec()).collect();
    assert_eq!(pa, pb);
    let best = a.history.iter().filter_map(|h| h.val_map).fold(f64::MIN, f64::max);
    assert_eq!(a.best_val_map, Some(best));
}

#[test]
fn non_finite_loss_aborts_training() {
    let cfg = tiny(8, 12, 5, 1);
    let mut data = examples(&cfg, 4, 1);
    data[2].structured[0] = f64::NAN;
    let net = Network::new(cfg, 2).unwrap();
    let err = train(net, &data, &[], &TrainConfig { max_epochs: 1, ..TrainConfig::default() }).unwrap_err();
    assert!(matches!(err, Error::Diverged { epoch: 1, step: 1, .. }), "{err}");
}

#[test]
fn frozen_embeddings_stay_fixed() {
    let cfg = ModelConfig { train_embeddings: false, ..tiny(8, 12, 5, 1) };
    let data = examples(&cfg, 6, 3);
    let net = Network::new(cfg, 4).unwrap();
    let before = net.store().get("embedding.weight").unwrap().value.clone();
    let out = train(net, &data, &[], &TrainConfig { max_epochs: 1, batch_size: 3, ..TrainConfig::default() }).unwrap();
    assert_eq!(out.network.store().get("embedding.weight").unwrap().value, before);
}

#[test]
fn single_stream_and_asymmetric_variants_run() {
    for variant in Variant::ALL {
        let cfg = ModelConfig { variant, depth_text: Some(2), depth_struct: Some(1), ..tiny(8, 12, 5, 2) };
        let net = Network::new(cfg.clone(), 5).unwrap();
        assert_eq!(net.param_count(), param_count(&cfg));
        let ex = examples(&cfg, 2, 6);
        let tr = trace(&net, &ex, false);
        assert_eq!(tr.m.unwrap().shape(), &[2, 1, cfg.fused_width()]);
        assert_eq!(tr.blocks.len(), if variant == Variant::StructOnly { 1 } else { 2 });
    }
}

fn bundle(dir: &std::path::Path) -> ModelBundle {
    let schema = FieldSchema::builtin();
    let vocab = Vocabulary::build(&["cough fever wheeze"], TokenizerMode::Word, 1).unwrap();
    let cfg = ModelConfig { fields: schema.len(), vocab_size: vocab.len(), ..tiny(8, 24, 19, 1) };
    let b = ModelBundle::new(Network::new(cfg, 1).unwrap(), vocab, schema).unwrap();
    b.save(dir).unwrap();
    b
}

#[test]
fn bundle_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let saved = bundle(dir.path());
    let loaded = ModelBundle::load(dir.path()).unwrap();
    assert_eq!(loaded.network.config(), saved.network.config());
    assert_eq!(loaded.vocab, saved.vocab);
    let (a, b) = (saved.network.store(), loaded.network.store());
    for ((na, pa), (nb, pb)) in a.params().zip(b.params()) {
        assert_eq!(na, nb);
        for (x, y) in pa.value.data().iter().zip(pb.value.data()) {
            assert_eq!(*x as f32 as f64, *y);
        }
    }
    loaded.check_compatible(&FieldSchema::builtin()).unwrap();
    assert!(loaded.check_compatible(&FieldSchema::candidate()).is_err());
}

#[test]
fn bundle_refuses_tampered_files() {
    let dir = tempfile::tempdir().unwrap();
    bundle(dir.path());
    std::fs::write(dir.path().join(VOCAB_FILE), "cough\nfever\n").unwrap();
    assert!(matches!(ModelBundle::load(dir.path()), Err(Error::Contract(_))));

    let dir = tempfile::tempdir().unwrap();
    bundle(dir.path());
    let schema = FieldSchema::candidate().to_toml_string();
    std::fs::write(dir.path().join(SCHEMA_FILE), schema).unwrap();
    assert!(matches!(ModelBundle::load(dir.path()), Err(Error::Contract(_))));
}
