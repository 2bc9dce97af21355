//! Tokenization, vocabularies and the token embedding table.

mod table;
mod vocab;
mod word2vec;

pub use table::EmbeddingTable;
pub use vocab::{tokenize, TokenSequence, TokenizerMode, Vocabulary, PAD_ID, UNK_ID};
pub use word2vec::{train_word2vec, Word2VecConfig};

#[cfg(test)]
mod tests;
