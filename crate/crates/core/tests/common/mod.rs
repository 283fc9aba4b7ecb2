#![allow(dead_code)]

use duplex_core::corpus::{Corpus, Utterance};
use duplex_core::graph::Graph;
use duplex_core::toy_data::{generate, ToySpec};
use duplex_core::training::{batch_loss, Batch};
use duplex_core::vocab::{TokenId, DELAY, NUM_SPECIALS, RECOG, TRANS};
use duplex_core::{Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small corpus with short utterances for fast tests.
pub fn small_corpus(n: usize, seed: u64) -> Corpus {
    let spec = ToySpec { min_len: 2, max_len: 5, seed, ..ToySpec::default() };
    generate(&spec, n).expect("valid spec")
}

/// Model with dropout disabled.
pub fn model(corpus: &Corpus, d_model: usize, lambda: f64, wait_k: usize, seed: u64) -> Model {
    let cfg = ModelConfig {
        d_model,
        d_ff: 2 * d_model,
        dropout: 0.0,
        lambda_cross: lambda,
        wait_k,
        ..ModelConfig::toy(corpus.vocab.len())
    };
    Model::new(cfg, seed).expect("valid config")
}

pub fn loss_of(model: &Model, utts: &[&Utterance]) -> f64 {
    let batch = Batch::new(utts, model.config().wait_k).unwrap();
    let mut g = Graph::new(model.params());
    batch_loss(model, &mut g, &batch).unwrap().1.loss
}

/// Random well-formed stream pair of length `len`.
pub fn random_streams(rng: &mut ChaCha8Rng, len: usize, vocab: usize, k: usize) -> (Vec<TokenId>, Vec<TokenId>) {
    let mut tok = || rng.gen_range(NUM_SPECIALS..vocab) as TokenId;
    let rec: Vec<TokenId> = std::iter::once(RECOG).chain((1..len).map(|_| tok())).collect();
    let tr: Vec<TokenId> = (0..len)
        .map(|j| if j == 0 { TRANS } else if j <= k { DELAY } else { tok() })
        .collect();
    (rec, tr)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
