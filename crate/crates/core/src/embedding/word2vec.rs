use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::table::EmbeddingTable;
use super::vocab::UNK_ID;

/// Skip-gram with negative sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Word2VecConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for Word2VecConfig {
    fn default() -> Self {
        Self { dim: 64, window: 5, negatives: 5, epochs: 5, learning_rate: 0.025, seed: 0 }
    }
}

impl Word2VecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("word2vec dim must be positive"));
        }
        if self.window == 0 {
            return Err(Error::config("word2vec window must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("word2vec learning_rate must be positive"));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Trains input vectors for a vocabulary of `vocab_size` ids over the given
/// id sequences. Reserved ids (pad, unknown) are dropped from the stream, so
/// their rows keep the initial values. The starting table is
/// `EmbeddingTable::random` drawn from `seed`.
pub fn train_word2vec(corpus: &[Vec<usize>], vocab_size: usize, config: &Word2VecConfig) -> Result<EmbeddingTable> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::contract("word2vec corpus is empty"));
    }
    if let Some(&bad) = corpus.iter().flatten().find(|&&id| id >= vocab_size) {
        return Err(Error::contract(format!("token id {bad} out of range for vocabulary of {vocab_size}")));
    }
    let dim = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = EmbeddingTable::random(vocab_size, dim, &mut rng)?;
    let sentences: Vec<Vec<usize>> =
        corpus.iter().map(|s| s.iter().copied().filter(|&id| id > UNK_ID).collect()).collect();
    let total: usize = sentences.iter().map(Vec::len).sum();
    if config.epochs == 0 || total == 0 {
        return Ok(init);
    }

    let mut counts = vec![0.0f64; vocab_size];
    for &id in sentences.iter().flatten() {
        counts[id] += 1.0;
    }
    let noise = WeightedIndex::new(counts.iter().map(|c| c.powf(0.75)))
        .map_err(|e| Error::contract(format!("negative-sampling table: {e}")))?;

    let mut input = init.into_weights().into_data();
    let mut output = vec![0.0f64; vocab_size * dim];
    let mut grad = vec![0.0f64; dim];
    rng.set_stream(1);
    let budget = (config.epochs * total) as f64;
    let mut seen = 0usize;

    for _ in 0..config.epochs {
        for sent in &sentences {
            for (pos, &center) in sent.iter().enumerate() {
                let lr = (config.learning_rate * (1.0 - seen as f64 / budget)).max(config.learning_rate * 1e-4);
                seen += 1;
                let reach = config.window - rng.gen_range(0..config.window);
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach).min(sent.len() - 1);
                for ctx_pos in lo..=hi {
                    if ctx_pos == pos {
                        continue;
                    }
                    let ctx = sent[ctx_pos];
                    let in_row = ctx * dim;
                    grad.fill(0.0);
                    for k in 0..=config.negatives {
                        let (target, label) = if k == 0 {
                            (center, 1.0)
                        } else {
                            let t = noise.sample(&mut rng);
                            if t == center {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let out_row = target * dim;
                        let dot: f64 = (0..dim).map(|j| input[in_row + j] * output[out_row + j]).sum();
                        let g = (label - sigmoid(dot)) * lr;
                        for j in 0..dim {
                            grad[j] += g * output[out_row + j];
                            output[out_row + j] += g * input[in_row + j];
                        }
                    }
                    for j in 0..dim {
                        input[in_row + j] += grad[j];
                    }
                }
            }
        }
    }
    EmbeddingTable::new(Tensor::new(vec![vocab_size, dim], input)?, true)
}
