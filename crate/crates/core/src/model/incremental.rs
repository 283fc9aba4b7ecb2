//! Step-by-step decoding with per-layer key/value caches.
//!
//! A step feeds one new token to each stream of every active pair. The new
//! rows attend to the cached keys/values of their own stream and, through the
//! interactive sub-layer, of the partner stream, both including the row fed at
//! the current step. This matches the packed training forward row for row.

use std::rc::Rc;

use super::{DecoderBlocks, Model};
use crate::error::{Error, Result};
use crate::graph::{AttnBlock, Graph};
use crate::tensor::{self, Tensor};
use crate::vocab::{TokenId, RECOG, TRANS};

/// Source-attention keys and values of one utterance, per decoder layer.
#[derive(Clone, Debug)]
pub struct DecodeContext {
    keys: Vec<Tensor>,
    values: Vec<Tensor>,
}

impl DecodeContext {
    pub fn memory_len(&self) -> usize {
        self.keys.first().map_or(0, Tensor::rows)
    }
}

/// Tokens fed to one stream so far and their cached keys/values.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamState {
    fed: Vec<TokenId>,
    /// Row-major `fed.len() × d_model` per layer.
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

impl StreamState {
    fn new(layers: usize) -> Self {
        StreamState { fed: Vec::new(), keys: vec![Vec::new(); layers], values: vec![Vec::new(); layers] }
    }

    pub fn fed(&self) -> &[TokenId] {
        &self.fed
    }

    pub fn len(&self) -> usize {
        self.fed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fed.is_empty()
    }
}

/// Both streams of one beam entry. The streams always hold the same number
/// of positions.
#[derive(Clone, Debug, PartialEq)]
pub struct PairState {
    pub rec: StreamState,
    pub tr: StreamState,
}

impl PairState {
    pub fn len(&self) -> usize {
        self.rec.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rec.is_empty()
    }
}

/// Next-token log-probabilities of both streams after one step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub rec: Vec<f64>,
    pub tr: Vec<f64>,
}

impl Model {
    /// Precomputes source-attention keys/values for an encoder output.
    pub fn decode_context(&self, memory: &Tensor) -> Result<DecodeContext> {
        if memory.rank() != 2 || memory.cols() != self.cfg.d_model || memory.rows() == 0 {
            return Err(Error::Shape(format!("memory of shape {:?}", memory.shape())));
        }
        let mut g = Graph::new(&self.params);
        let mem = g.constant(memory.clone());
        let mut keys = Vec::new();
        let mut values = Vec::new();
        for layer in self.decoder_layers() {
            let (k, v) = self.source_kv(&mut g, layer, mem)?;
            keys.push(g.value(k).clone());
            values.push(g.value(v).clone());
        }
        Ok(DecodeContext { keys, values })
    }

    pub fn empty_pair(&self) -> PairState {
        let n = self.cfg.n_layers;
        PairState { rec: StreamState::new(n), tr: StreamState::new(n) }
    }

    /// Feeds `next[i] = (rec token, tr token)` to pair `i` and returns the
    /// log-probabilities for the following position of each stream.
    pub fn step(
        &self,
        ctx: &DecodeContext,
        pairs: &mut [PairState],
        next: &[(TokenId, TokenId)],
    ) -> Result<Vec<StepOutput>> {
        if pairs.len() != next.len() {
            return Err(Error::Input(format!("{} tokens for {} pairs", next.len(), pairs.len())));
        }
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let d = self.cfg.d_model;
        let mut ids = Vec::with_capacity(2 * pairs.len());
        let mut positions = Vec::with_capacity(2 * pairs.len());
        for (pair, &(r, t)) in pairs.iter().zip(next) {
            if pair.rec.len() != pair.tr.len() {
                return Err(Error::Contract("pair streams out of lockstep".into()));
            }
            if pair.is_empty() && (r != RECOG || t != TRANS) {
                return Err(Error::Input("first decoder step must feed <recog> and <trans>".into()));
            }
            ids.extend([r, t]);
            positions.extend([pair.len(), pair.len()]);
        }

        // Query row 2i is pair i's recognition stream, 2i+1 its translation
        // stream. After appending, the key rows are laid out pair by pair as
        // [rec cache][tr cache].
        let mut own = Vec::with_capacity(2 * pairs.len());
        let mut partner = Vec::with_capacity(2 * pairs.len());
        let mut source = Vec::with_capacity(2 * pairs.len());
        let mut k0 = 0;
        for (i, pair) in pairs.iter().enumerate() {
            let n = pair.len() + 1;
            let (rec0, tr0) = (k0, k0 + n);
            own.push(AttnBlock::dense(2 * i, 1, rec0, n));
            own.push(AttnBlock::dense(2 * i + 1, 1, tr0, n));
            partner.push(AttnBlock::dense(2 * i, 1, tr0, n));
            partner.push(AttnBlock::dense(2 * i + 1, 1, rec0, n));
            source.push(AttnBlock::dense(2 * i, 2, 0, ctx.memory_len()));
            k0 += 2 * n;
        }
        let blocks = DecoderBlocks {
            own: Rc::from(own),
            partner: Some(Rc::from(partner)),
            source: Rc::from(source),
        };

        let mut g = Graph::new(&self.params);
        let mut x = self.embed(&mut g, &ids, &positions)?;
        for (l, layer) in self.decoder_layers().iter().enumerate() {
            let (q, k_new, v_new) = self.interactive_qkv(&mut g, layer, x)?;
            let (kn, vn) = (g.value(k_new), g.value(v_new));
            let mut k_all = Vec::with_capacity(k0 * d);
            let mut v_all = Vec::with_capacity(k0 * d);
            for (i, pair) in pairs.iter_mut().enumerate() {
                for (s, stream) in [&mut pair.rec, &mut pair.tr].into_iter().enumerate() {
                    let r = 2 * i + s;
                    stream.keys[l].extend_from_slice(kn.row(r));
                    stream.values[l].extend_from_slice(vn.row(r));
                    k_all.extend_from_slice(&stream.keys[l]);
                    v_all.extend_from_slice(&stream.values[l]);
                }
            }
            let k = g.constant(Tensor::matrix(k0, d, k_all)?);
            let v = g.constant(Tensor::matrix(k0, d, v_all)?);
            let mk = g.constant(ctx.keys[l].clone());
            let mv = g.constant(ctx.values[l].clone());
            x = self.decoder_layer_from_qkv(&mut g, layer, x, (q, k, v), &blocks, (mk, mv))?;
        }
        let logits = self.output_logits(&mut g, x)?;
        g.check_finite()?;
        let lp = tensor::log_softmax_rows(g.value(logits));
        let mut out = Vec::with_capacity(pairs.len());
        for (i, (pair, &(r, t))) in pairs.iter_mut().zip(next).enumerate() {
            pair.rec.fed.push(r);
            pair.tr.fed.push(t);
            out.push(StepOutput { rec: lp.row(2 * i).to_vec(), tr: lp.row(2 * i + 1).to_vec() });
        }
        Ok(out)
    }

    /// Builds a pair state by feeding `rec` and `tr` position by position.
    /// Returns the state and the output of the last step.
    pub fn replay(
        &self,
        ctx: &DecodeContext,
        rec: &[TokenId],
        tr: &[TokenId],
    ) -> Result<(PairState, Option<StepOutput>)> {
        if rec.len() != tr.len() {
            return Err(Error::Input(format!("replay streams of length {} and {}", rec.len(), tr.len())));
        }
        let mut pair = [self.empty_pair()];
        let mut last = None;
        for (&r, &t) in rec.iter().zip(tr) {
            last = self.step(ctx, &mut pair, &[(r, t)])?.pop();
        }
        let [pair] = pair;
        Ok((pair, last))
    }
}
