use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::ScoredSet;
use crate::structuralizer::N_CLASSES;
use crate::tensor::{bce_mean, Adam, AdamConfig, Tape};

use super::config::TrainConfig;
use super::network::{Example, ForwardOptions, Network};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch, in training mode.
    pub train_loss: f64,
    pub val_map: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation mAP.
    pub network: Network,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_map: Option<f64>,
}

/// Per-field divisor for structured inputs: the mean magnitude of the
/// field's non-zero training values, or 1 when it never appears.
pub fn fit_struct_scale(examples: &[Example], fields: usize) -> Vec<f64> {
    let mut sum = vec![0.0; fields];
    let mut count = vec![0usize; fields];
    for ex in examples {
        for (j, v) in ex.structured.iter().enumerate().take(fields) {
            if *v != 0.0 {
                sum[j] += v.abs();
                count[j] += 1;
            }
        }
    }
    sum.iter().zip(&count).map(|(s, &c)| if c == 0 { 1.0 } else { s / c as f64 }).collect()
}

/// Eval-mode mean binary cross-entropy over `examples`.
pub fn mean_loss(network: &Network, examples: &[Example]) -> Result<f64> {
    let logits = network.logits(examples)?;
    let z: Vec<f64> = logits.iter().flatten().copied().collect();
    let t: Vec<f64> = examples.iter().flat_map(|e| e.labels.map(f64::from)).collect();
    Ok(bce_mean(&z, &t))
}

pub fn scored_set(network: &Network, examples: &[Example]) -> Result<ScoredSet> {
    let scores = network.scores(examples)?;
    ScoredSet::new(scores, examples.iter().map(|e| e.labels).collect())
}

/// Minibatch Adam on the mean BCE loss, keeping the parameters of the epoch
/// with the highest validation mAP (the last epoch when `val` is empty).
pub fn train(mut network: Network, train: &[Example], val: &[Example], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    let mut adam = Adam::new(AdamConfig { lr: cfg.learning_rate, beta1: cfg.beta1, beta2: cfg.beta2, eps: cfg.eps });
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(2);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Network)> = None;
    let mut last_improved = 0;
    let mut step = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let tape = Tape::new();
            let params = network.store().bind(&tape);
            let opts = ForwardOptions { train: true, rng: Some(&mut dropout_rng), trace: false, input_grads: false };
            let fwd = network.forward(&tape, &params, &batch, opts)?;
            let targets: Vec<f64> = batch.iter().flat_map(|e| e.labels.map(f64::from)).collect();
            let loss = fwd.logits.bce_with_logits(&targets)?;
            let value = loss.value().item();
            step += 1;
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, step, loss: value });
            }
            tape.backward(loss)?;
            network.store_mut().zero_grad();
            params.accumulate_into(network.store_mut())?;
            adam.step(network.store_mut());
            network.update_running_stats(&fwd.bn_stats, cfg.bn_momentum)?;
            loss_sum += value;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;
        let val_map = if val.is_empty() { None } else { scored_set(&network, val)?.map() };
        log::info!(
            "epoch {epoch}: train loss {train_loss:.5}, val mAP {}",
            val_map.map_or("n/a".to_string(), |m| format!("{m:.4}"))
        );
        history.push(EpochRecord { epoch, train_loss, val_map });

        let score = val_map.unwrap_or(f64::NEG_INFINITY);
        let improved = match &best {
            None => true,
            Some((b, _, _)) => score > *b || (val.is_empty()),
        };
        if improved {
            best = Some((score, epoch, network.clone()));
            last_improved = epoch;
        }
        if let Some(p) = cfg.patience {
            if epoch - last_improved >= p {
                log::info!("no validation improvement for {p} epochs; stopping");
                break;
            }
        }
    }

    match best {
        Some((score, best_epoch, net)) => Ok(TrainOutcome {
            network: net,
            history,
            best_epoch,
            best_val_map: score.is_finite().then_some(score),
        }),
        None => Ok(TrainOutcome { network, history, best_epoch: 0, best_val_map: None }),
    }
}

/// Sigmoid probabilities and strict-threshold decisions for each example.
pub fn predict(network: &Network, examples: &[Example], threshold: f64) -> Result<Vec<([f64; N_CLASSES], [u8; N_CLASSES])>> {
    Ok(network.logits(examples)?.iter().map(|z| super::network::decide(z, threshold)).collect())
}
