//! Dual-decoder speech recognition and translation with interactive
//! attention between the two decoder streams.

pub mod checkpoint;
pub mod corpus;
pub mod experiment;
pub mod error;
pub mod frontend;
pub mod graph;
pub mod inference;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod toy_data;
pub mod training;
pub mod vocab;

pub use error::{Error, Result};
pub use corpus::{Corpus, Utterance};
pub use frontend::{FeatureSequence, FrontendConfig};
pub use inference::{BeamConfig, DecodeResult, DualHypothesis};
pub use model::{Mask, Model, ModelConfig};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
pub use vocab::{TokenId, Vocabulary};
pub use training::{TrainConfig, Trainer};
