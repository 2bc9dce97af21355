use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

use super::vocab::{TokenSequence, PAD_ID};

/// A `V × C` matrix of token vectors whose pad row is pinned to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    weights: Tensor,
    pub trainable: bool,
}

impl EmbeddingTable {
    pub fn new(weights: Tensor, trainable: bool) -> Result<Self> {
        let &[vocab, dim] = weights.shape() else {
            return Err(Error::contract(format!("embedding table must be rank 2, got {:?}", weights.shape())));
        };
        if vocab < 2 || dim == 0 {
            return Err(Error::contract("embedding table needs at least the two reserved rows"));
        }
        let mut weights = weights;
        weights.data_mut()[PAD_ID * dim..(PAD_ID + 1) * dim].fill(0.0);
        Ok(Self { weights, trainable })
    }

    /// Uniform initialization in `[-1/sqrt(C), 1/sqrt(C)]`.
    pub fn random<R: Rng + ?Sized>(vocab: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("embedding dimension must be positive"));
        }
        let bound = 1.0 / (dim as f64).sqrt();
        let data = (0..vocab * dim).map(|_| rng.gen_range(-bound..bound)).collect();
        Self::new(Tensor::new(vec![vocab, dim], data)?, true)
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn into_weights(self) -> Tensor {
        self.weights
    }

    pub fn row(&self, id: usize) -> &[f64] {
        let c = self.dim();
        &self.weights.data()[id * c..(id + 1) * c]
    }

    /// Looks up `seq` and returns the channel-major `C × L` text matrix.
    pub fn embed(&self, seq: &TokenSequence) -> Result<Tensor> {
        let tape = Tape::new();
        let table = tape.constant(self.weights.clone());
        let out = table.embedding(std::slice::from_ref(&seq.ids))?;
        let value = out.value();
        Tensor::new(vec![self.dim(), seq.ids.len()], value.data().to_vec())
    }
}
