use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::structuralizer::N_CLASSES;
use crate::tensor::{Axis, BatchStats, BoundParams, NormMode, ParamStore, Tape, Tensor, Var};

use super::config::ModelConfig;

/// One note in model-ready form.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    /// Token ids padded or truncated to `seq_len`.
    pub ids: Vec<usize>,
    /// Number of real tokens at the front of `ids`.
    pub length: usize,
    /// Structured field values in schema order.
    pub structured: Vec<f64>,
    pub labels: [u8; N_CLASSES],
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Uniform(f64),
    Zeros,
    Ones,
}

#[derive(Debug, Clone)]
struct Spec {
    name: String,
    shape: Vec<usize>,
    init: Init,
    buffer: bool,
}

fn conv_specs(specs: &mut Vec<Spec>, name: &str, cout: usize, cin: usize, k: usize) {
    let bound = 1.0 / ((cin * k) as f64).sqrt();
    specs.push(Spec { name: format!("{name}.weight"), shape: vec![cout, cin, k], init: Init::Uniform(bound), buffer: false });
    specs.push(Spec { name: format!("{name}.bias"), shape: vec![cout], init: Init::Uniform(bound), buffer: false });
}

fn linear_specs(specs: &mut Vec<Spec>, name: &str, dout: usize, din: usize) {
    let bound = 1.0 / (din as f64).sqrt();
    specs.push(Spec { name: format!("{name}.weight"), shape: vec![dout, din], init: Init::Uniform(bound), buffer: false });
    specs.push(Spec { name: format!("{name}.bias"), shape: vec![dout], init: Init::Uniform(bound), buffer: false });
}

fn affine_specs(specs: &mut Vec<Spec>, name: &str, ch: usize, running: bool) {
    specs.push(Spec { name: format!("{name}.gamma"), shape: vec![ch], init: Init::Ones, buffer: false });
    specs.push(Spec { name: format!("{name}.beta"), shape: vec![ch], init: Init::Zeros, buffer: false });
    if running {
        specs.push(Spec { name: format!("{name}.running_mean"), shape: vec![ch], init: Init::Zeros, buffer: true });
        specs.push(Spec { name: format!("{name}.running_var"), shape: vec![ch], init: Init::Ones, buffer: true });
    }
}

fn res_specs(specs: &mut Vec<Spec>, name: &str, c: usize, h: usize) {
    conv_specs(specs, &format!("{name}.conv1"), h, c, 1);
    affine_specs(specs, &format!("{name}.bn1"), h, true);
    conv_specs(specs, &format!("{name}.conv2"), h, h, 3);
    affine_specs(specs, &format!("{name}.bn2"), h, true);
    conv_specs(specs, &format!("{name}.conv3"), c, h, 1);
    affine_specs(specs, &format!("{name}.bn3"), c, true);
}

fn transfer_specs(specs: &mut Vec<Spec>, name: &str, c: usize, h: usize) {
    conv_specs(specs, &format!("{name}.conv1"), h, c, 1);
    affine_specs(specs, &format!("{name}.ln"), h, false);
    conv_specs(specs, &format!("{name}.conv2"), c, h, 1);
}

fn param_specs(cfg: &ModelConfig) -> Vec<Spec> {
    let (c, h) = (cfg.channels, cfg.bottleneck());
    let v = cfg.variant;
    let mut s = Vec::new();
    if v.uses_text() {
        let bound = 1.0 / (c as f64).sqrt();
        s.push(Spec { name: "embedding.weight".into(), shape: vec![cfg.vocab_size, c], init: Init::Uniform(bound), buffer: false });
        conv_specs(&mut s, "text_stem.conv1", c, c, 3);
        affine_specs(&mut s, "text_stem.bn", c, true);
        conv_specs(&mut s, "text_stem.conv2", c, c, 3);
    }
    if v.uses_struct() {
        s.push(Spec { name: "input.struct_scale".into(), shape: vec![cfg.fields], init: Init::Ones, buffer: true });
        conv_specs(&mut s, "struct_stem.conv", c, 1, 1);
    }
    let infused = cfg.infusion_blocks();
    for (stream, used, depth) in [("text", v.uses_text(), cfg.depth_text()), ("struct", v.uses_struct(), cfg.depth_struct())] {
        if !used {
            continue;
        }
        for i in 0..depth {
            res_specs(&mut s, &format!("{stream}_blocks.{i}.res"), c, h);
            if i < infused {
                conv_specs(&mut s, &format!("{stream}_blocks.{i}.infuse.squeeze"), 1, c, 1);
                transfer_specs(&mut s, &format!("{stream}_blocks.{i}.infuse.transfer"), c, h);
            }
        }
    }
    if v.fusion_transfer() {
        conv_specs(&mut s, "fusion.text_dist", 1, c, 1);
        conv_specs(&mut s, "fusion.struct_dist", 1, c, 1);
        transfer_specs(&mut s, "fusion.text_transfer", c, h);
        transfer_specs(&mut s, "fusion.struct_transfer", c, h);
    }
    if v.uses_struct() {
        conv_specs(&mut s, "fusion.merge", 1, c, 1);
    }
    linear_specs(&mut s, "head.fc1", cfg.hidden(), cfg.fused_width());
    linear_specs(&mut s, "head.fc2", cfg.n_classes, cfg.hidden());
    s
}

/// Number of learnable scalars for `config`, buffers excluded.
pub fn param_count(config: &ModelConfig) -> usize {
    param_specs(config).iter().filter(|s| !s.buffer).map(|s| s.shape.iter().product::<usize>()).sum()
}

/// Intermediates of one infusion block, batch-first.
#[derive(Debug, Clone, Serialize)]
pub struct BlockTrace {
    /// ResBlock outputs `T_r`, `S_r`; `None` for a stream past its depth.
    pub t_res: Option<Tensor>,
    pub s_res: Option<Tensor>,
    /// Squeezed structured features `S₀` `[B, 1, F]` and their softmax `α`.
    pub s0: Option<Tensor>,
    pub alpha: Option<Tensor>,
    /// Squeezed text features `[B, 1, L]` and their length-masked softmax `β`.
    pub t0: Option<Tensor>,
    pub beta: Option<Tensor>,
    /// Reweighted infusion vectors `[B, C, 1]` before domain transfer.
    pub s_reweighted: Option<Tensor>,
    pub t_reweighted: Option<Tensor>,
    pub t_out: Option<Tensor>,
    pub s_out: Option<Tensor>,
}

/// Named intermediates of a forward pass, batch-first.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ForwardTrace {
    /// Embedded text `[B, C, L]`.
    pub embedded: Option<Tensor>,
    /// Scaled structured input `[B, 1, F]`.
    pub structured: Option<Tensor>,
    pub t_stem: Option<Tensor>,
    pub s_stem: Option<Tensor>,
    pub blocks: Vec<BlockTrace>,
    /// Stream outputs entering fusion: `T_m` `[B, C, L]`, `S_m` `[B, C, F]`.
    pub t_m: Option<Tensor>,
    pub s_m: Option<Tensor>,
    /// Attention distributions `S_p`, `T_p` `[B, 1, L]`.
    pub s_p: Option<Tensor>,
    pub t_p: Option<Tensor>,
    /// Cross-attended vectors `A_s = S_p·T_mᵀ`, `A_t = T_p·S_mᵀ` `[B, 1, C]`.
    pub a_s: Option<Tensor>,
    pub a_t: Option<Tensor>,
    pub t_o: Option<Tensor>,
    pub s_o: Option<Tensor>,
    /// Pooled text `T_c` `[B, 1, C]` and merged structure `S_c` `[B, 1, F]`.
    pub t_c: Option<Tensor>,
    pub s_c: Option<Tensor>,
    /// Fused vector `M` `[B, 1, W]`.
    pub m: Option<Tensor>,
    /// Logits `P_o` `[B, 1, 4]`.
    pub logits: Option<Tensor>,
}

pub struct ForwardOptions<'r> {
    pub train: bool,
    /// Dropout randomness; required when `train` is set and dropout is active.
    pub rng: Option<&'r mut ChaCha8Rng>,
    pub trace: bool,
    /// Record the embedded text and structured input as differentiable leaves.
    pub input_grads: bool,
}

impl ForwardOptions<'_> {
    pub fn eval() -> Self {
        Self { train: false, rng: None, trace: false, input_grads: false }
    }
}

pub struct Forward<'t> {
    /// `[B, 1, 4]`.
    pub logits: Var<'t>,
    /// Leaves holding the embedded text `[B, C, L]` and scaled structured
    /// input `[B, 1, F]`, present when `input_grads` was requested.
    pub text_input: Option<Var<'t>>,
    pub struct_input: Option<Var<'t>>,
    /// Batch statistics of every training-mode batch norm, by layer name.
    pub bn_stats: Vec<(String, BatchStats)>,
    pub trace: Option<ForwardTrace>,
}

/// The two-stream classifier: configuration plus its parameters.
#[derive(Debug, Clone)]
pub struct Network {
    config: ModelConfig,
    store: ParamStore,
}

impl Network {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for spec in param_specs(&config) {
            let n: usize = spec.shape.iter().product();
            let data = match spec.init {
                Init::Uniform(b) => (0..n).map(|_| rng.gen_range(-b..b)).collect(),
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
            };
            let t = Tensor::new(spec.shape, data)?;
            if spec.buffer {
                store.insert_buffer(spec.name, t)?;
            } else {
                store.insert(spec.name, t)?;
            }
        }
        if config.variant.uses_text() {
            let c = config.channels;
            store.get_mut("embedding.weight")?.value.data_mut()[..c].fill(0.0);
        }
        Ok(Self { config, store })
    }

    /// Rebuilds a network from stored parameters, checking that every
    /// expected tensor is present with the right shape.
    pub fn from_store(config: ModelConfig, store: ParamStore) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config);
        for spec in &specs {
            let shape = if spec.buffer {
                store.buffer(&spec.name)?.shape().to_vec()
            } else {
                store.get(&spec.name)?.value.shape().to_vec()
            };
            if shape != spec.shape {
                return Err(Error::contract(format!("{}: stored shape {shape:?}, expected {:?}", spec.name, spec.shape)));
            }
        }
        if store.len() + store.buffers().count() != specs.len() {
            return Err(Error::contract("parameter store holds tensors the configuration does not use"));
        }
        Ok(Self { config, store })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn into_store(self) -> ParamStore {
        self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.num_scalars()
    }

    /// Replaces the embedding table, keeping the pad row at zero.
    pub fn set_embedding(&mut self, table: &Tensor) -> Result<()> {
        let c = self.config.channels;
        let mut data = table.data().to_vec();
        if table.shape() != [self.config.vocab_size, c] {
            return Err(Error::contract(format!("embedding table shape {:?} does not match config", table.shape())));
        }
        data[..c].fill(0.0);
        self.store.set_value("embedding.weight", &data)
    }

    /// Per-field divisors applied to structured inputs.
    pub fn set_struct_scale(&mut self, scale: &[f64]) -> Result<()> {
        if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::config("structured scales must be positive and finite"));
        }
        self.store.set_buffer("input.struct_scale", scale.to_vec())
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        params: &BoundParams<'t>,
        batch: &[&Example],
        opts: ForwardOptions<'_>,
    ) -> Result<Forward<'t>> {
        let cfg = &self.config;
        if batch.is_empty() {
            return Err(Error::contract("forward needs a non-empty batch"));
        }
        for ex in batch {
            if cfg.variant.uses_text() && (ex.ids.len() != cfg.seq_len || ex.length == 0 || ex.length > cfg.seq_len) {
                return Err(Error::contract(format!("note {}: token sequence does not match seq_len {}", ex.id, cfg.seq_len)));
            }
            if cfg.variant.uses_struct() && ex.structured.len() != cfg.fields {
                return Err(Error::contract(format!(
                    "note {}: {} structured values, schema width is {}",
                    ex.id,
                    ex.structured.len(),
                    cfg.fields
                )));
            }
        }
        let mut cx = Ctx {
            net: self,
            params,
            train: opts.train,
            stats: Vec::new(),
            trace: opts.trace.then(ForwardTrace::default),
        };
        let lengths: Vec<usize> = batch.iter().map(|e| e.length).collect();
        let f = cfg.fields;
        let b = batch.len();

        let mut text_input = None;
        let mut t = None;
        if cfg.variant.uses_text() {
            let table = if cfg.train_embeddings {
                params.get("embedding.weight")?
            } else {
                tape.constant(self.store.get("embedding.weight")?.value.clone())
            };
            let ids: Vec<Vec<usize>> = batch.iter().map(|e| e.ids.clone()).collect();
            let mut emb = table.embedding(&ids)?;
            if opts.input_grads {
                emb = tape.variable((*emb.value()).clone());
                text_input = Some(emb);
            }
            cx.record(|tr| &mut tr.embedded, &emb);
            let h = cx.conv(&emb, "text_stem.conv1", 1)?;
            let h = cx.batch_norm(&h, "text_stem.bn")?.relu();
            let h = cx.conv(&h, "text_stem.conv2", 1)?;
            cx.record(|tr| &mut tr.t_stem, &h);
            t = Some(h);
        }

        let mut struct_input = None;
        let mut s = None;
        if cfg.variant.uses_struct() {
            let scale = self.store.buffer("input.struct_scale")?.data().to_vec();
            let mut data = Vec::with_capacity(b * f);
            for ex in batch {
                data.extend(ex.structured.iter().zip(&scale).map(|(v, s)| v / s));
            }
            let value = Tensor::new(vec![b, 1, f], data)?;
            let x = if opts.input_grads { tape.variable(value) } else { tape.constant(value) };
            if opts.input_grads {
                struct_input = Some(x);
            }
            cx.record(|tr| &mut tr.structured, &x);
            let h = cx.conv(&x, "struct_stem.conv", 0)?;
            cx.record(|tr| &mut tr.s_stem, &h);
            s = Some(h);
        }

        let (dt, ds) = (
            if cfg.variant.uses_text() { cfg.depth_text() } else { 0 },
            if cfg.variant.uses_struct() { cfg.depth_struct() } else { 0 },
        );
        let infused = cfg.infusion_blocks();
        for i in 0..dt.max(ds) {
            let t_r = match t {
                Some(x) if i < dt => Some(cx.res_block(&x, &format!("text_blocks.{i}.res"))?),
                other => other,
            };
            let s_r = match s {
                Some(x) if i < ds => Some(cx.res_block(&x, &format!("struct_blocks.{i}.res"))?),
                other => other,
            };
            let mut bt = BlockTrace {
                t_res: (i < dt).then(|| t_r.map(|v| (*v.value()).clone())).flatten(),
                s_res: (i < ds).then(|| s_r.map(|v| (*v.value()).clone())).flatten(),
                s0: None,
                alpha: None,
                t0: None,
                beta: None,
                s_reweighted: None,
                t_reweighted: None,
                t_out: None,
                s_out: None,
            };
            if i < infused {
                let (tr, sr) = (t_r.expect("text stream"), s_r.expect("struct stream"));
                let into_text = cx.infuse(&tr, &sr, None, &format!("text_blocks.{i}.infuse"))?;
                let into_struct = cx.infuse(&sr, &tr, Some(&lengths), &format!("struct_blocks.{i}.infuse"))?;
                if cx.trace.is_some() {
                    bt.s0 = Some((*into_text.squeezed.value()).clone());
                    bt.alpha = Some((*into_text.weights.value()).clone());
                    bt.s_reweighted = Some((*into_text.reweighted.value()).clone());
                    bt.t0 = Some((*into_struct.squeezed.value()).clone());
                    bt.beta = Some((*into_struct.weights.value()).clone());
                    bt.t_reweighted = Some((*into_struct.reweighted.value()).clone());
                }
                t = Some(into_text.out);
                s = Some(into_struct.out);
            } else {
                t = t_r;
                s = s_r;
            }
            if let Some(tr) = cx.trace.as_mut() {
                bt.t_out = t.map(|v| (*v.value()).clone());
                bt.s_out = s.map(|v| (*v.value()).clone());
                tr.blocks.push(bt);
            }
        }

        if let Some(x) = &t {
            cx.record(|tr| &mut tr.t_m, x);
        }
        if let Some(x) = &s {
            cx.record(|tr| &mut tr.s_m, x);
        }
        let fused = match (t, s) {
            (Some(t_m), Some(s_m)) => {
                let out = if cfg.variant.fusion_transfer() {
                    let text_dist = |v: &Var<'t>| cx.conv(v, "fusion.text_dist", 0);
                    let struct_dist = |v: &Var<'t>| cx.conv(v, "fusion.struct_dist", 0);
                    let merge = |v: &Var<'t>| cx.conv(v, "fusion.merge", 0);
                    let text_transfer = |v: &Var<'t>| cx.transfer(v, "fusion.text_transfer");
                    let struct_transfer = |v: &Var<'t>| cx.transfer(v, "fusion.struct_transfer");
                    let layers = FusionLayers {
                        text_dist: &text_dist,
                        struct_dist: &struct_dist,
                        merge: &merge,
                        text_transfer: &text_transfer,
                        struct_transfer: &struct_transfer,
                    };
                    attentive_fusion(&t_m, &s_m, &lengths, &layers)?
                } else {
                    let t_c = t_m.max_pool_length()?;
                    let s_c = cx.conv(&s_m, "fusion.merge", 0)?;
                    let m = t_c.concat(&s_c)?;
                    FusionOutput { attention: None, t_o: t_m, s_o: s_m, t_c, s_c, m }
                };
                if let Some(att) = &out.attention {
                    cx.record(|tr| &mut tr.s_p, &att.s_p);
                    cx.record(|tr| &mut tr.t_p, &att.t_p);
                    cx.record(|tr| &mut tr.a_s, &att.a_s);
                    cx.record(|tr| &mut tr.a_t, &att.a_t);
                }
                cx.record(|tr| &mut tr.t_o, &out.t_o);
                cx.record(|tr| &mut tr.s_o, &out.s_o);
                cx.record(|tr| &mut tr.t_c, &out.t_c);
                cx.record(|tr| &mut tr.s_c, &out.s_c);
                out.m
            }
            (Some(t_m), None) => {
                let t_c = t_m.max_pool_length()?;
                cx.record(|tr| &mut tr.t_c, &t_c);
                t_c
            }
            (None, Some(s_m)) => {
                let s_c = cx.conv(&s_m, "fusion.merge", 0)?;
                cx.record(|tr| &mut tr.s_c, &s_c);
                s_c
            }
            (None, None) => unreachable!("validated config uses at least one stream"),
        };
        cx.record(|tr| &mut tr.m, &fused);

        let dropped = match opts.rng {
            Some(rng) => fused.dropout(cfg.dropout, opts.train, rng)?,
            None if opts.train && cfg.dropout > 0.0 => {
                return Err(Error::contract("training-mode forward with dropout needs a random generator"));
            }
            None => fused,
        };
        let h = dropped.linear(&params.get("head.fc1.weight")?, &params.get("head.fc1.bias")?)?.relu();
        let logits = h.linear(&params.get("head.fc2.weight")?, &params.get("head.fc2.bias")?)?;
        cx.record(|tr| &mut tr.logits, &logits);

        Ok(Forward { logits, text_input, struct_input, bn_stats: cx.stats, trace: cx.trace })
    }

    /// Eval-mode logits for every example, computed in chunks.
    pub fn logits(&self, examples: &[Example]) -> Result<Vec<[f64; N_CLASSES]>> {
        const CHUNK: usize = 64;
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(CHUNK) {
            let tape = Tape::new();
            let params = self.store.bind(&tape);
            let refs: Vec<&Example> = chunk.iter().collect();
            let fwd = self.forward(&tape, &params, &refs, ForwardOptions::eval())?;
            let v = fwd.logits.value();
            for row in v.data().chunks(N_CLASSES) {
                out.push([row[0], row[1], row[2], row[3]]);
            }
        }
        Ok(out)
    }

    /// Eval-mode sigmoid scores.
    pub fn scores(&self, examples: &[Example]) -> Result<Vec<[f64; N_CLASSES]>> {
        Ok(self.logits(examples)?.into_iter().map(|r| r.map(crate::tensor::sigmoid)).collect())
    }

    /// Folds training-mode batch statistics into the running averages; the
    /// stored variance is the unbiased estimate.
    pub fn update_running_stats(&mut self, stats: &[(String, BatchStats)], momentum: f64) -> Result<()> {
        for (name, st) in stats {
            let mean_key = format!("{name}.running_mean");
            let var_key = format!("{name}.running_var");
            let correction = if st.count > 1 { st.count as f64 / (st.count - 1) as f64 } else { 1.0 };
            let mean: Vec<f64> = self
                .store
                .buffer(&mean_key)?
                .data()
                .iter()
                .zip(&st.mean)
                .map(|(r, m)| (1.0 - momentum) * r + momentum * m)
                .collect();
            let var: Vec<f64> = self
                .store
                .buffer(&var_key)?
                .data()
                .iter()
                .zip(&st.var)
                .map(|(r, v)| (1.0 - momentum) * r + momentum * v * correction)
                .collect();
            self.store.set_buffer(&mean_key, mean)?;
            self.store.set_buffer(&var_key, var)?;
        }
        Ok(())
    }
}

/// Probabilities and thresholded decisions from logits; a class fires when
/// its probability is strictly above `threshold`.
pub fn decide(logits: &[f64; N_CLASSES], threshold: f64) -> ([f64; N_CLASSES], [u8; N_CLASSES]) {
    let probs = logits.map(crate::tensor::sigmoid);
    (probs, probs.map(|p| (p > threshold) as u8))
}

struct Infused<'t> {
    out: Var<'t>,
    squeezed: Var<'t>,
    weights: Var<'t>,
    reweighted: Var<'t>,
}

struct Ctx<'a, 't> {
    net: &'a Network,
    params: &'a BoundParams<'t>,
    train: bool,
    stats: Vec<(String, BatchStats)>,
    trace: Option<ForwardTrace>,
}

impl<'t> Ctx<'_, 't> {
    fn record(&mut self, slot: impl FnOnce(&mut ForwardTrace) -> &mut Option<Tensor>, v: &Var<'t>) {
        if let Some(tr) = self.trace.as_mut() {
            *slot(tr) = Some((*v.value()).clone());
        }
    }

    fn conv(&self, x: &Var<'t>, name: &str, padding: usize) -> Result<Var<'t>> {
        x.conv1d(&self.params.get(&format!("{name}.weight"))?, &self.params.get(&format!("{name}.bias"))?, padding)
    }

    fn batch_norm(&mut self, x: &Var<'t>, name: &str) -> Result<Var<'t>> {
        let gamma = self.params.get(&format!("{name}.gamma"))?;
        let beta = self.params.get(&format!("{name}.beta"))?;
        if self.train {
            let (y, stats) = x.batch_norm(&gamma, &beta, NormMode::Train)?;
            if let Some(st) = stats {
                self.stats.push((name.to_string(), st));
            }
            Ok(y)
        } else {
            let store = &self.net.store;
            let mean = store.buffer(&format!("{name}.running_mean"))?;
            let var = store.buffer(&format!("{name}.running_var"))?;
            Ok(x.batch_norm(&gamma, &beta, NormMode::Eval { mean: mean.data(), var: var.data() })?.0)
        }
    }

    fn layer_norm(&self, x: &Var<'t>, name: &str) -> Result<Var<'t>> {
        x.layer_norm(&self.params.get(&format!("{name}.gamma"))?, &self.params.get(&format!("{name}.beta"))?)
    }

    /// Bottleneck residual block: 1×1 reduce, 3-wide conv, 1×1 expand, each
    /// batch-normalized, plus the identity and a final ReLU.
    fn res_block(&mut self, x: &Var<'t>, name: &str) -> Result<Var<'t>> {
        let h = self.conv(x, &format!("{name}.conv1"), 0)?;
        let h = self.batch_norm(&h, &format!("{name}.bn1"))?.relu();
        let h = self.conv(&h, &format!("{name}.conv2"), 1)?;
        let h = self.batch_norm(&h, &format!("{name}.bn2"))?.relu();
        let h = self.conv(&h, &format!("{name}.conv3"), 0)?;
        let h = self.batch_norm(&h, &format!("{name}.bn3"))?;
        Ok(x.add(&h)?.relu())
    }

    /// Domain transfer of a `[B, C, 1]` vector: 1×1 conv to `C/r`, layer
    /// norm, 1×1 conv back to `C`.
    fn transfer(&self, x: &Var<'t>, name: &str) -> Result<Var<'t>> {
        let h = self.conv(x, &format!("{name}.conv1"), 0)?;
        let h = self.layer_norm(&h, &format!("{name}.ln"))?;
        self.conv(&h, &format!("{name}.conv2"), 0)
    }

    fn infuse(&self, main: &Var<'t>, source: &Var<'t>, lengths: Option<&[usize]>, name: &str) -> Result<Infused<'t>> {
        let squeezed = self.conv(source, &format!("{name}.squeeze"), 0)?;
        let transfer = |v: &Var<'t>| self.transfer(v, &format!("{name}.transfer"));
        adaptive_feature_infusion(main, source, &squeezed, lengths, transfer)
    }
}

/// Softmax-pools `source` along its length with weights `softmax(squeezed)`
/// (masked to `lengths` when given), passes the pooled `[B, C, 1]` vector
/// through `transfer`, and adds it to every position of `main`.
fn adaptive_feature_infusion<'t>(
    main: &Var<'t>,
    source: &Var<'t>,
    squeezed: &Var<'t>,
    lengths: Option<&[usize]>,
    transfer: impl Fn(&Var<'t>) -> Result<Var<'t>>,
) -> Result<Infused<'t>> {
    let weights = squeezed.masked_softmax(lengths)?;
    let reweighted = source.matmul(&weights.transpose()?)?;
    let n_main = *main.shape().last().expect("rank checked by conv");
    let out = main.add(&transfer(&reweighted)?.replicate(Axis::Cols, n_main)?)?;
    Ok(Infused { out, squeezed: *squeezed, weights, reweighted })
}

/// Public entry to the infusion step with an arbitrary transfer map, for
/// inspecting the pooling algebra in isolation.
pub fn infuse_with<'t>(
    main: &Var<'t>,
    source: &Var<'t>,
    squeezed: &Var<'t>,
    lengths: Option<&[usize]>,
    transfer: impl Fn(&Var<'t>) -> Result<Var<'t>>,
) -> Result<(Var<'t>, Var<'t>, Var<'t>)> {
    let r = adaptive_feature_infusion(main, source, squeezed, lengths, transfer)?;
    Ok((r.out, r.weights, r.reweighted))
}

/// Layers of the attentive fusion module, as maps on tape variables.
pub struct FusionLayers<'a, 't> {
    /// `[B, C, L] -> [B, 1, L]` scores for the text distribution `T_p`.
    pub text_dist: &'a dyn Fn(&Var<'t>) -> Result<Var<'t>>,
    /// `[B, C, L] -> [B, 1, L]` scores for the structured distribution `S_p`.
    pub struct_dist: &'a dyn Fn(&Var<'t>) -> Result<Var<'t>>,
    /// `[B, C, F] -> [B, 1, F]` channel merge producing `S_c`.
    pub merge: &'a dyn Fn(&Var<'t>) -> Result<Var<'t>>,
    /// `[B, C, 1] -> [B, C, 1]` domain transfers applied to `A_t` and `A_s`.
    pub text_transfer: &'a dyn Fn(&Var<'t>) -> Result<Var<'t>>,
    pub struct_transfer: &'a dyn Fn(&Var<'t>) -> Result<Var<'t>>,
}

pub struct Attention<'t> {
    pub s_p: Var<'t>,
    pub t_p: Var<'t>,
    pub a_s: Var<'t>,
    pub a_t: Var<'t>,
}

pub struct FusionOutput<'t> {
    pub attention: Option<Attention<'t>>,
    pub t_o: Var<'t>,
    pub s_o: Var<'t>,
    pub t_c: Var<'t>,
    pub s_c: Var<'t>,
    pub m: Var<'t>,
}

/// Cross-attentive fusion of the text stream `t_m` `[B, C, L]` and the
/// structured stream `s_m` `[B, C, F]`.
///
/// The structured stream is zero-padded to `L`. Each stream yields a
/// distribution over positions (the text one masked to `lengths`), which
/// pools the *other* stream into a `C`-vector. After domain transfer each
/// vector is broadcast along the length axis and added to its stream; the
/// structured stream is then cropped back to `F`. The text stream is
/// max-pooled, the structured stream channel-merged, and both concatenated.
pub fn attentive_fusion<'t>(
    t_m: &Var<'t>,
    s_m: &Var<'t>,
    lengths: &[usize],
    layers: &FusionLayers<'_, 't>,
) -> Result<FusionOutput<'t>> {
    let l = *t_m.shape().last().expect("rank-3 text stream");
    let f = *s_m.shape().last().expect("rank-3 structured stream");
    let s_pad = s_m.pad_length(l)?;
    let s_p = (layers.struct_dist)(&s_pad)?.softmax()?;
    let t_p = (layers.text_dist)(t_m)?.masked_softmax(Some(lengths))?;
    let a_s = s_p.matmul(&t_m.transpose()?)?;
    let a_t = t_p.matmul(&s_pad.transpose()?)?;
    let t_add = (layers.text_transfer)(&a_t.transpose()?)?.replicate(Axis::Cols, l)?;
    let s_add = (layers.struct_transfer)(&a_s.transpose()?)?.replicate(Axis::Cols, l)?;
    let t_o = t_m.add(&t_add)?;
    let s_o = s_pad.add(&s_add)?.crop_length(f)?;
    let t_c = t_o.max_pool_length()?;
    let s_c = (layers.merge)(&s_o)?;
    let m = t_c.concat(&s_c)?;
    Ok(FusionOutput { attention: Some(Attention { s_p, t_p, a_s, a_t }), t_o, s_o, t_c, s_c, m })
}
