use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::tensor::gradcheck::{central_difference, max_relative_error};
use crate::tensor::{Tape, Tensor};

#[test]
fn vocabulary_orders_by_frequency_then_token() {
    let v = Vocabulary::build(&["a b a"], TokenizerMode::Word, 1).unwrap();
    assert_eq!(v.id("a"), 2);
    assert_eq!(v.id("b"), 3);
    assert_eq!(v.len(), 4);
    let v = Vocabulary::build(&["a b a"], TokenizerMode::Word, 2).unwrap();
    assert_eq!(v.id("a"), 2);
    assert_eq!(v.id("b"), UNK_ID);

    let v = Vocabulary::build(&["dcba", "cd"], TokenizerMode::Char, 1).unwrap();
    assert_eq!(v.corpus_tokens(), ["c", "d", "a", "b"]);
}

#[test]
fn vocabulary_errors() {
    let empty: [&str; 0] = [];
    assert!(matches!(Vocabulary::build(&empty, TokenizerMode::Char, 1), Err(Error::Contract(_))));
    assert!(matches!(Vocabulary::build(&["a"], TokenizerMode::Char, 0), Err(Error::Config(_))));
    assert!(Vocabulary::from_tokens(vec!["x".into(), "x".into()]).is_err());
}

#[test]
fn vocabulary_build_is_deterministic_and_round_trips() {
    let corpus = ["the cough the fever", "fever cough rash", "a b c the"];
    let a = Vocabulary::build(&corpus, TokenizerMode::Word, 1).unwrap();
    let b = Vocabulary::build(&corpus, TokenizerMode::Word, 1).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_lines(), b.to_lines());
    let back = Vocabulary::from_lines(&a.to_lines()).unwrap();
    assert_eq!(back, a);
    assert_eq!(back.fingerprint(), a.fingerprint());
    for (line, tok) in a.to_lines().lines().enumerate() {
        assert_eq!(a.id(tok), line + 2);
    }
}

#[test]
fn encode_pads_truncates_and_maps_unknowns() {
    let v = Vocabulary::build(&["abcdefghij"], TokenizerMode::Char, 1).unwrap();
    let s = v.encode("ab", TokenizerMode::Char, 4).unwrap();
    assert_eq!(s.ids, vec![v.id("a"), v.id("b"), PAD_ID, PAD_ID]);
    assert_eq!(s.true_length, 2);
    let s = v.encode("abcdefghij", TokenizerMode::Char, 4).unwrap();
    assert_eq!(s.ids, vec![v.id("a"), v.id("b"), v.id("c"), v.id("d")]);
    assert_eq!(s.true_length, 4);
    let s = v.encode("z", TokenizerMode::Char, 2).unwrap();
    assert_eq!(s.ids, vec![UNK_ID, PAD_ID]);
    let s = v.encode("", TokenizerMode::Char, 3).unwrap();
    assert_eq!(s.ids, vec![UNK_ID, PAD_ID, PAD_ID]);
    assert_eq!(s.true_length, 1);
    assert!(matches!(v.encode("a", TokenizerMode::Char, 0), Err(Error::Config(_))));
}

#[test]
fn pad_row_is_zero_and_all_pad_embeds_to_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let table = EmbeddingTable::random(6, 4, &mut rng).unwrap();
    assert!(table.row(PAD_ID).iter().all(|&x| x == 0.0));
    let out = table.embed(&TokenSequence { ids: vec![0, 0, 0], true_length: 1 }).unwrap();
    assert_eq!(out.shape(), &[4, 3]);
    assert!(out.data().iter().all(|&x| x == 0.0));
}

#[test]
fn one_hot_table_embeds_unit_columns() {
    let mut data = vec![0.0; 5 * 5];
    for i in 1..5 {
        data[i * 5 + i] = 1.0;
    }
    let table = EmbeddingTable::new(Tensor::new(vec![5, 5], data).unwrap(), false).unwrap();
    let out = table.embed(&TokenSequence { ids: vec![2, 3], true_length: 2 }).unwrap();
    // column 0 is e2 and column 1 is e3, channel-major
    let col = |t: usize| (0..5).map(|c| out.data()[c * 2 + t]).collect::<Vec<_>>();
    assert_eq!(col(0), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
    assert_eq!(col(1), vec![0.0, 0.0, 0.0, 1.0, 0.0]);
    assert!(table.embed(&TokenSequence { ids: vec![5], true_length: 1 }).is_err());
}

#[test]
fn lookup_gradient_counts_uses_per_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let table = EmbeddingTable::random(5, 3, &mut rng).unwrap();
    let ids = vec![vec![2, 3, 2, 0], vec![4, 2, 0, 0]];
    let tape = Tape::new();
    let w = tape.variable(table.weights().clone());
    let out = w.embedding(&ids).unwrap();
    tape.backward(out.sum()).unwrap();
    let g = w.grad().unwrap();

    let loss = |x: &[f64]| {
        let t = Tape::new();
        let w = t.constant(Tensor::new(vec![5, 3], x.to_vec()).unwrap());
        let v = w.embedding(&ids).unwrap().value();
        v.data().iter().sum::<f64>()
    };
    let numeric = central_difference(loss, table.weights().data(), 1e-6);
    let mut numeric = numeric;
    // the pad row is frozen: it contributes zero columns whatever its value
    numeric[..3].fill(0.0);
    assert!(max_relative_error(&g, &numeric, 1e-3) < 1e-6);
    assert_eq!(&g[..3], &[0.0; 3]);
    assert_eq!(&g[6..9], &[3.0; 3]);
    assert_eq!(&g[9..12], &[1.0; 3]);
    assert_eq!(&g[12..15], &[1.0; 3]);
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn cooccurrence_corpus() -> (Vocabulary, Vec<Vec<usize>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    use rand::seq::SliceRandom;
    // x and y always share a sentence drawn from one filler pool; z only
    // appears with a disjoint pool
    let pool_xy = ["p", "q", "r", "s"];
    let pool_z = ["t", "u", "v", "w"];
    let mut sents = Vec::new();
    for i in 0..400 {
        let mut words: Vec<&str>;
        if i % 2 == 0 {
            words = (0..6).map(|_| *pool_xy.choose(&mut rng).unwrap()).collect();
            words.extend(["x", "y"]);
        } else {
            words = (0..6).map(|_| *pool_z.choose(&mut rng).unwrap()).collect();
            words.push("z");
        }
        words.shuffle(&mut rng);
        sents.push(words.join(" "));
    }
    let vocab = Vocabulary::build(&sents, TokenizerMode::Word, 1).unwrap();
    let ids = sents.iter().map(|s| vocab.encode_all(s, TokenizerMode::Word)).collect();
    (vocab, ids)
}

#[test]
fn skip_gram_pulls_cooccurring_tokens_together() {
    let (vocab, ids) = cooccurrence_corpus();
    let cfg = Word2VecConfig { dim: 16, window: 8, negatives: 5, epochs: 10, learning_rate: 0.025, seed: 1 };
    let table = train_word2vec(&ids, vocab.len(), &cfg).unwrap();
    let (x, y, z) = (vocab.id("x"), vocab.id("y"), vocab.id("z"));
    let xy = cosine(table.row(x), table.row(y));
    let xz = cosine(table.row(x), table.row(z));
    assert!(xy > xz, "cos(x,y)={xy} cos(x,z)={xz}");
    assert!(table.row(PAD_ID).iter().all(|&v| v == 0.0));
}

#[test]
fn skip_gram_zero_epochs_returns_initialization() {
    let (vocab, ids) = cooccurrence_corpus();
    let cfg = Word2VecConfig { dim: 8, epochs: 0, seed: 11, ..Default::default() };
    let table = train_word2vec(&ids, vocab.len(), &cfg).unwrap();
    let init = EmbeddingTable::random(vocab.len(), 8, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    assert_eq!(table, init);
}

#[test]
fn skip_gram_is_deterministic() {
    let (vocab, ids) = cooccurrence_corpus();
    let cfg = Word2VecConfig { dim: 8, epochs: 2, seed: 4, ..Default::default() };
    let a = train_word2vec(&ids, vocab.len(), &cfg).unwrap();
    let b = train_word2vec(&ids, vocab.len(), &cfg).unwrap();
    assert_eq!(a.weights().data(), b.weights().data());
    let c = train_word2vec(&ids, vocab.len(), &Word2VecConfig { seed: 5, ..cfg.clone() }).unwrap();
    assert_ne!(a.weights().data(), c.weights().data());
}

#[test]
fn skip_gram_validates_config() {
    let ids = vec![vec![2, 3]];
    let bad = Word2VecConfig { window: 0, ..Default::default() };
    assert!(matches!(train_word2vec(&ids, 4, &bad), Err(Error::Config(_))));
    assert!(matches!(train_word2vec(&[], 4, &Word2VecConfig::default()), Err(Error::Contract(_))));
    assert!(matches!(train_word2vec(&[vec![9]], 4, &Word2VecConfig::default()), Err(Error::Contract(_))));
}

proptest! {
    #[test]
    fn embedded_shape_is_fixed_and_pad_columns_zero(text in "[a-f ]{0,30}", len in 1usize..12) {
        let vocab = Vocabulary::build(&["abcd"], TokenizerMode::Char, 1).unwrap();
        let table = EmbeddingTable::random(vocab.len(), 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let seq = vocab.encode(&text, TokenizerMode::Char, len).unwrap();
        prop_assert!(seq.true_length >= 1 && seq.true_length <= len);
        prop_assert!(seq.ids[seq.true_length..].iter().all(|&i| i == PAD_ID));
        let out = table.embed(&seq).unwrap();
        prop_assert_eq!(out.shape(), &[3, len]);
        for t in seq.true_length..len {
            for c in 0..3 {
                prop_assert_eq!(out.data()[c * len + t], 0.0);
            }
        }
    }
}
