//! Seeded synthetic "speechified" triplet corpora.
//!
//! Every source token owns a random prototype feature vector; an utterance's
//! frames are its tokens' prototypes, each repeated `frames_per_token` times,
//! plus Gaussian noise. Tokens listed in an ambiguity pair share a prototype,
//! so the acoustics cannot tell them apart while their translations differ.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{Corpus, Utterance};
use crate::error::{Error, Result};
use crate::frontend::{self, FeatureSequence};
use crate::vocab::{TokenId, Vocabulary, NUM_SPECIALS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TranslationRule {
    /// Token-by-token dictionary image.
    Map,
    /// Dictionary image with adjacent pairs swapped.
    MapSwap,
    /// Dictionary image reversed.
    MapReverse,
}

impl std::str::FromStr for TranslationRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MAP" => Ok(TranslationRule::Map),
            "MAP_SWAP" => Ok(TranslationRule::MapSwap),
            "MAP_REVERSE" => Ok(TranslationRule::MapReverse),
            _ => Err(Error::Config(format!("unknown translation rule {s:?}"))),
        }
    }
}

impl std::fmt::Display for TranslationRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TranslationRule::Map => "MAP",
            TranslationRule::MapSwap => "MAP_SWAP",
            TranslationRule::MapReverse => "MAP_REVERSE",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToySpec {
    /// Number of content tokens per language.
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub frames_per_token: usize,
    /// Frame dimension before stacking.
    pub feature_dim: usize,
    pub noise_std: f64,
    pub translation_rule: TranslationRule,
    /// Pairs of source-token indices (`0..vocab_size`) sharing a prototype.
    pub ambiguity_pairs: Vec<(usize, usize)>,
    pub num_stack: usize,
    pub downsample_factor: usize,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            vocab_size: 40,
            min_len: 4,
            max_len: 12,
            frames_per_token: 4,
            feature_dim: 80,
            noise_std: 0.3,
            translation_rule: TranslationRule::MapSwap,
            ambiguity_pairs: (0..6).map(|i| (2 * i, 2 * i + 1)).collect(),
            num_stack: 4,
            downsample_factor: 3,
            seed: 1,
        }
    }
}

impl ToySpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 4 {
            return Err(Error::Config(format!("vocab_size must be ≥ 4, got {}", self.vocab_size)));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "need 1 ≤ min_len ≤ max_len, got {} / {}",
                self.min_len, self.max_len
            )));
        }
        if self.frames_per_token == 0 || self.feature_dim == 0 {
            return Err(Error::Config("frames_per_token and feature_dim must be ≥ 1".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config(format!("noise_std must be ≥ 0, got {}", self.noise_std)));
        }
        if self.num_stack == 0 || self.downsample_factor == 0 {
            return Err(Error::Config("num_stack and downsample_factor must be ≥ 1".into()));
        }
        let mut seen = vec![false; self.vocab_size];
        for &(a, b) in &self.ambiguity_pairs {
            if a >= self.vocab_size || b >= self.vocab_size || a == b {
                return Err(Error::Config(format!("invalid ambiguity pair ({a}, {b})")));
            }
            for t in [a, b] {
                if std::mem::replace(&mut seen[t], true) {
                    return Err(Error::Config(format!("token {t} appears in two ambiguity pairs")));
                }
            }
        }
        Ok(())
    }
}

/// Everything about a toy language that is fixed by the seed: vocabulary,
/// dictionary, and acoustic prototypes.
#[derive(Clone, Debug)]
pub struct ToyLanguage {
    pub spec: ToySpec,
    pub vocab: Vocabulary,
    /// `dictionary[i]` is the target-token index translating source token `i`.
    pub dictionary: Vec<usize>,
    /// `prototype_of[i]` indexes `prototypes` for source token `i`.
    pub prototype_of: Vec<usize>,
    pub prototypes: Vec<Vec<f64>>,
}

impl ToyLanguage {
    pub fn new(spec: &ToySpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let n = spec.vocab_size;
        let sources = (0..n).map(|i| format!("s{i}"));
        let targets = (0..n).map(|i| format!("t{i}"));
        let vocab = Vocabulary::new(sources.chain(targets))?;

        let mut dictionary: Vec<usize> = (0..n).collect();
        dictionary.shuffle(&mut rng);

        let mut prototype_of: Vec<usize> = (0..n).collect();
        for &(a, b) in &spec.ambiguity_pairs {
            prototype_of[b] = prototype_of[a];
        }
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let prototypes = (0..n)
            .map(|_| (0..spec.feature_dim).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        Ok(ToyLanguage { spec: spec.clone(), vocab, dictionary, prototype_of, prototypes })
    }

    pub fn source_id(&self, i: usize) -> TokenId {
        (NUM_SPECIALS + i) as TokenId
    }

    pub fn target_id(&self, i: usize) -> TokenId {
        (NUM_SPECIALS + self.spec.vocab_size + i) as TokenId
    }

    /// Source-token index of a transcription token id.
    pub fn source_index(&self, id: TokenId) -> Option<usize> {
        let i = (id as usize).checked_sub(NUM_SPECIALS)?;
        (i < self.spec.vocab_size).then_some(i)
    }

    pub fn translate(&self, transcription: &[TokenId]) -> Vec<TokenId> {
        let mut image: Vec<TokenId> = transcription
            .iter()
            .map(|&id| {
                let i = self.source_index(id).expect("transcription holds source tokens");
                self.target_id(self.dictionary[i])
            })
            .collect();
        match self.spec.translation_rule {
            TranslationRule::Map => {}
            TranslationRule::MapSwap => {
                for pair in image.chunks_exact_mut(2) {
                    pair.swap(0, 1);
                }
            }
            TranslationRule::MapReverse => image.reverse(),
        }
        image
    }

    /// Unstacked frames for a transcription with the given noise source.
    pub fn render_frames(&self, transcription: &[TokenId], rng: &mut impl Rng) -> Result<FeatureSequence> {
        let spec = &self.spec;
        let mut frames = Vec::with_capacity(transcription.len() * spec.frames_per_token * spec.feature_dim);
        let noise = Normal::new(0.0, spec.noise_std.max(0.0)).expect("finite std");
        for &id in transcription {
            let i = self.source_index(id).ok_or_else(|| Error::Input(format!("token {id} is not a source token")))?;
            let proto = &self.prototypes[self.prototype_of[i]];
            for _ in 0..spec.frames_per_token {
                for &p in proto {
                    let n = if spec.noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
                    frames.push(p + n);
                }
            }
        }
        FeatureSequence::new(frames, spec.feature_dim, 10.0, false)
    }

    /// A waveform rendering of a transcription for exercising the audio
    /// front end: each token is a 40 ms two-tone burst whose frequencies are
    /// a function of its prototype.
    pub fn render_waveform(&self, transcription: &[TokenId], sample_rate: u32) -> Vec<f64> {
        let per_token = (sample_rate as f64 * 0.04) as usize;
        let mut out = Vec::with_capacity(per_token * transcription.len() + 400);
        for &id in transcription {
            let Some(i) = self.source_index(id) else { continue };
            let p = self.prototype_of[i] as f64;
            let (f1, f2) = (200.0 + 90.0 * p, 2500.0 + 60.0 * p);
            for s in 0..per_token {
                let t = s as f64 / sample_rate as f64;
                out.push(0.3 * (2.0 * PI * f1 * t).sin() + 0.2 * (2.0 * PI * f2 * t).sin());
            }
        }
        // Trailing silence so short utterances still fill one analysis window.
        out.extend(std::iter::repeat_n(0.0, sample_rate as usize / 40));
        out
    }
}

/// Generates `n_utts` utterances with ids `utt00000…`.
pub fn generate(spec: &ToySpec, n_utts: usize) -> Result<Corpus> {
    if n_utts == 0 {
        return Err(Error::Input("n_utts must be ≥ 1".into()));
    }
    Ok(generate_splits(spec, &[("utt", n_utts)])?.pop().expect("one split"))
}

/// Generates consecutive splits that share one language (vocabulary,
/// dictionary, prototypes). Utterance ids are `<split><index>`.
pub fn generate_splits(spec: &ToySpec, splits: &[(&str, usize)]) -> Result<Vec<Corpus>> {
    let lang = ToyLanguage::new(spec)?;
    // Utterances draw from a stream separate from the language's.
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x005e_ed0f_da7a);
    let mut out = Vec::with_capacity(splits.len());
    for &(name, n) in splits {
        let mut utterances = Vec::with_capacity(n);
        for k in 0..n {
            let len = rng.gen_range(spec.min_len..=spec.max_len);
            let transcription: Vec<TokenId> =
                (0..len).map(|_| lang.source_id(rng.gen_range(0..spec.vocab_size))).collect();
            let translation = lang.translate(&transcription);
            let raw = lang.render_frames(&transcription, &mut rng)?;
            let features = frontend::stack_downsample(&raw, spec.num_stack, spec.downsample_factor)?.quantize_f32();
            utterances.push(Utterance { id: format!("{name}{k:05}"), features, transcription, translation });
        }
        out.push(Corpus { vocab: lang.vocab.clone(), utterances });
    }
    Ok(out)
}
