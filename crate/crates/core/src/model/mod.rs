//! Shared acoustic encoder and the parameter-shared interactive decoder.
//!
//! Both decoder streams (recognition and translation) run through one set of
//! decoder weights. In every decoder layer the masked self-attention
//! sub-layer is replaced by an interactive sub-layer: each stream attends to
//! its own prefix (`H_self`) and, with the same projections, to the partner
//! stream's prefix at the same depth (`H_cross`), and the two are fused as
//! `H_self + λ·H_cross` before the residual connection and layer norm.

mod config;
mod incremental;
mod masks;

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use config::ModelConfig;
pub use incremental::{DecodeContext, PairState, StepOutput, StreamState};
pub use masks::{build_masks, Mask};

use crate::error::{Error, Result};
use crate::frontend::FeatureSequence;
use crate::graph::{AttnBlock, Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{self, Tensor};
use crate::vocab::{TokenId, DELAY, PAD, RECOG, TRANS};

#[derive(Clone, Debug)]
pub(crate) struct AttnParams {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
}

#[derive(Clone, Debug)]
pub(crate) struct NormParams {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
pub(crate) struct FeedForwardParams {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
pub(crate) struct EncoderLayer {
    attn: AttnParams,
    ln_attn: NormParams,
    ff: FeedForwardParams,
    ln_ff: NormParams,
}

#[derive(Clone, Debug)]
pub(crate) struct DecoderLayer {
    interactive: AttnParams,
    ln_interactive: NormParams,
    source: AttnParams,
    ln_source: NormParams,
    ff: FeedForwardParams,
    ln_ff: NormParams,
}

#[derive(Clone, Debug)]
struct Handles {
    input_w: ParamId,
    input_b: ParamId,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    embedding: ParamId,
    output_w: ParamId,
    output_b: ParamId,
}

/// Every parameter name and shape, in creation order.
fn param_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let mut out = Vec::new();
    let attn = |out: &mut Vec<(String, Vec<usize>)>, p: &str| {
        for m in ["q", "k", "v", "o"] {
            out.push((format!("{p}.w{m}"), vec![d, d]));
            out.push((format!("{p}.b{m}"), vec![d]));
        }
    };
    let norm = |out: &mut Vec<(String, Vec<usize>)>, p: &str| {
        out.push((format!("{p}.gain"), vec![d]));
        out.push((format!("{p}.bias"), vec![d]));
    };
    let ff = |out: &mut Vec<(String, Vec<usize>)>, p: &str| {
        out.push((format!("{p}.w1"), vec![d, cfg.d_ff]));
        out.push((format!("{p}.b1"), vec![cfg.d_ff]));
        out.push((format!("{p}.w2"), vec![cfg.d_ff, d]));
        out.push((format!("{p}.b2"), vec![d]));
    };
    out.push(("encoder.input.w".into(), vec![cfg.input_dim, d]));
    out.push(("encoder.input.b".into(), vec![d]));
    for l in 0..cfg.n_layers {
        let p = format!("encoder.{l}");
        attn(&mut out, &format!("{p}.attn"));
        norm(&mut out, &format!("{p}.ln_attn"));
        ff(&mut out, &format!("{p}.ff"));
        norm(&mut out, &format!("{p}.ln_ff"));
    }
    for l in 0..cfg.n_layers {
        let p = format!("decoder.{l}");
        attn(&mut out, &format!("{p}.interactive"));
        norm(&mut out, &format!("{p}.ln_interactive"));
        attn(&mut out, &format!("{p}.source"));
        norm(&mut out, &format!("{p}.ln_source"));
        ff(&mut out, &format!("{p}.ff"));
        norm(&mut out, &format!("{p}.ln_ff"));
    }
    out.push(("decoder.embedding".into(), vec![cfg.vocab_size, d]));
    out.push(("decoder.output.w".into(), vec![d, cfg.vocab_size]));
    out.push(("decoder.output.b".into(), vec![cfg.vocab_size]));
    out
}

impl Handles {
    fn resolve(cfg: &ModelConfig, ps: &ParamStore) -> Result<Self> {
        for (name, shape) in param_layout(cfg) {
            let t = ps
                .by_name(&name)
                .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape(format!("{name} has shape {:?}, expected {shape:?}", t.shape())));
            }
        }
        let id = |n: String| ps.require(&n);
        let attn = |p: String| -> Result<AttnParams> {
            Ok(AttnParams {
                wq: id(format!("{p}.wq"))?,
                bq: id(format!("{p}.bq"))?,
                wk: id(format!("{p}.wk"))?,
                bk: id(format!("{p}.bk"))?,
                wv: id(format!("{p}.wv"))?,
                bv: id(format!("{p}.bv"))?,
                wo: id(format!("{p}.wo"))?,
                bo: id(format!("{p}.bo"))?,
            })
        };
        let norm = |p: String| -> Result<NormParams> {
            Ok(NormParams { gain: id(format!("{p}.gain"))?, bias: id(format!("{p}.bias"))? })
        };
        let ff = |p: String| -> Result<FeedForwardParams> {
            Ok(FeedForwardParams {
                w1: id(format!("{p}.w1"))?,
                b1: id(format!("{p}.b1"))?,
                w2: id(format!("{p}.w2"))?,
                b2: id(format!("{p}.b2"))?,
            })
        };
        let encoder = (0..cfg.n_layers)
            .map(|l| {
                Ok(EncoderLayer {
                    attn: attn(format!("encoder.{l}.attn"))?,
                    ln_attn: norm(format!("encoder.{l}.ln_attn"))?,
                    ff: ff(format!("encoder.{l}.ff"))?,
                    ln_ff: norm(format!("encoder.{l}.ln_ff"))?,
                })
            })
            .collect::<Result<_>>()?;
        let decoder = (0..cfg.n_layers)
            .map(|l| {
                Ok(DecoderLayer {
                    interactive: attn(format!("decoder.{l}.interactive"))?,
                    ln_interactive: norm(format!("decoder.{l}.ln_interactive"))?,
                    source: attn(format!("decoder.{l}.source"))?,
                    ln_source: norm(format!("decoder.{l}.ln_source"))?,
                    ff: ff(format!("decoder.{l}.ff"))?,
                    ln_ff: norm(format!("decoder.{l}.ln_ff"))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Handles {
            input_w: id("encoder.input.w".into())?,
            input_b: id("encoder.input.b".into())?,
            encoder,
            decoder,
            embedding: id("decoder.embedding".into())?,
            output_w: id("decoder.output.w".into())?,
            output_b: id("decoder.output.b".into())?,
        })
    }
}

/// Sinusoidal position table, `max_positions × d_model`.
pub fn sinusoidal_positions(max_positions: usize, d_model: usize) -> Tensor {
    let mut t = Tensor::zeros(&[max_positions, d_model]);
    for pos in 0..max_positions {
        let row = t.row_mut(pos);
        for i in (0..d_model).step_by(2) {
            let angle = pos as f64 / 10_000f64.powf(i as f64 / d_model as f64);
            row[i] = angle.sin();
            if i + 1 < d_model {
                row[i + 1] = angle.cos();
            }
        }
    }
    t
}

/// Encoder output for a packed batch of utterances.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub memory: Var,
    /// `(first row, frame count)` of each utterance in `memory`.
    pub segments: Vec<(usize, usize)>,
}

/// Decoder input for one utterance: both streams, padded to equal length.
#[derive(Clone, Copy, Debug)]
pub struct DualInput<'a> {
    pub rec: &'a [TokenId],
    pub tr: &'a [TokenId],
}

/// Row placement of each utterance's two streams in the packed decoder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ItemLayout {
    pub rec_start: usize,
    pub tr_start: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DualLayout {
    pub rows: usize,
    pub items: Vec<ItemLayout>,
}

/// Attention blocks for one decoder pass.
pub(crate) struct DecoderBlocks {
    pub(crate) own: Rc<[AttnBlock]>,
    /// `None` runs a standard decoder with no partner stream.
    pub(crate) partner: Option<Rc<[AttnBlock]>>,
    pub(crate) source: Rc<[AttnBlock]>,
}

/// Intermediate results of one interactive sub-layer for inspection.
#[derive(Clone, Debug)]
pub struct InteractiveOutput {
    pub h_self: Tensor,
    pub h_cross: Tensor,
    /// `h_self + λ·h_cross`, before the residual connection.
    pub h_final: Tensor,
    /// `LayerNorm(h_own + h_final)`.
    pub output: Tensor,
}

#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    params: ParamStore,
    handles: Handles,
    positions: Tensor,
}

impl Model {
    /// A freshly initialized model (Xavier-uniform weights, zero biases,
    /// unit layer-norm gains, `N(0, 1/d)` embeddings).
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new();
        let emb = Normal::new(0.0, (cfg.d_model as f64).powf(-0.5)).expect("finite std");
        for (name, shape) in param_layout(&cfg) {
            let numel: usize = shape.iter().product();
            let data: Vec<f64> = if name.ends_with(".gain") {
                vec![1.0; numel]
            } else if name == "decoder.embedding" {
                (0..numel).map(|_| emb.sample(&mut rng)).collect()
            } else if shape.len() == 2 {
                let a = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                (0..numel).map(|_| rng.gen_range(-a..a)).collect()
            } else {
                vec![0.0; numel]
            };
            ps.insert(name, Tensor::new(shape, data)?)?;
        }
        Model::from_params(cfg, ps)
    }

    /// Wraps an existing parameter store, checking names and shapes.
    pub fn from_params(cfg: ModelConfig, params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        let handles = Handles::resolve(&cfg, &params)?;
        let positions = sinusoidal_positions(cfg.max_positions, cfg.d_model);
        Ok(Model { cfg, params, handles, positions })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Changes λ and k without touching any weight.
    pub fn set_interaction(&mut self, lambda_cross: f64, wait_k: usize) -> Result<()> {
        let cfg = ModelConfig { lambda_cross, wait_k, ..self.cfg.clone() };
        cfg.validate()?;
        self.cfg = cfg;
        Ok(())
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    fn project(&self, g: &mut Graph, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let y = g.matmul(x, Var::Param(w))?;
        g.add_row(y, Var::Param(b))
    }

    fn feed_forward(&self, g: &mut Graph, x: Var, p: &FeedForwardParams) -> Result<Var> {
        let h = self.project(g, x, p.w1, p.b1)?;
        let h = g.relu(h);
        self.project(g, h, p.w2, p.b2)
    }

    fn residual_norm(&self, g: &mut Graph, x: Var, sub: Var, ln: &NormParams) -> Result<Var> {
        let sub = g.dropout(sub, self.cfg.dropout);
        let r = g.add(x, sub)?;
        g.layer_norm(r, Var::Param(ln.gain), Var::Param(ln.bias), self.cfg.ln_eps)
    }

    fn position_rows(&self, lens: impl IntoIterator<Item = usize>) -> Result<Tensor> {
        let d = self.cfg.d_model;
        let mut data = Vec::new();
        for len in lens {
            if len > self.cfg.max_positions {
                return Err(Error::Input(format!(
                    "sequence of {len} positions exceeds max_positions {}",
                    self.cfg.max_positions
                )));
            }
            data.extend_from_slice(&self.positions.data()[..len * d]);
        }
        let rows = data.len() / d;
        Tensor::matrix(rows, d, data)
    }

    /// Positional rows for explicit position indices.
    fn positions_at(&self, positions: &[usize]) -> Result<Tensor> {
        let d = self.cfg.d_model;
        let mut data = Vec::with_capacity(positions.len() * d);
        for &p in positions {
            if p >= self.cfg.max_positions {
                return Err(Error::Input(format!(
                    "position {p} exceeds max_positions {}",
                    self.cfg.max_positions
                )));
            }
            data.extend_from_slice(self.positions.row(p));
        }
        Tensor::matrix(positions.len(), d, data)
    }

    /// Encodes a packed batch of stacked feature sequences.
    pub fn encode_batch(&self, g: &mut Graph, feats: &[&FeatureSequence]) -> Result<Encoded> {
        let mut data = Vec::new();
        let mut segments = Vec::with_capacity(feats.len());
        let mut row = 0;
        for fs in feats {
            if fs.dim() != self.cfg.input_dim {
                return Err(Error::Shape(format!(
                    "features of dimension {} for a model expecting {}",
                    fs.dim(),
                    self.cfg.input_dim
                )));
            }
            segments.push((row, fs.num_frames()));
            row += fs.num_frames();
            data.extend_from_slice(fs.data());
        }
        let pe = self.position_rows(segments.iter().map(|s| s.1))?;
        let x = g.constant(Tensor::matrix(row, self.cfg.input_dim, data)?);
        let h = self.project(g, x, self.handles.input_w, self.handles.input_b)?;
        let pe = g.constant(pe);
        let h = g.add(h, pe)?;
        let mut h = g.dropout(h, self.cfg.dropout);
        let blocks: Rc<[AttnBlock]> =
            segments.iter().map(|&(s, n)| AttnBlock::dense(s, n, s, n)).collect();
        for layer in &self.handles.encoder {
            let a = self.multi_head(g, &layer.attn, h, h, blocks.clone())?;
            h = self.residual_norm(g, h, a, &layer.ln_attn)?;
            let f = self.feed_forward(g, h, &layer.ff)?;
            h = self.residual_norm(g, h, f, &layer.ln_ff)?;
        }
        Ok(Encoded { memory: h, segments })
    }

    fn multi_head(
        &self,
        g: &mut Graph,
        p: &AttnParams,
        xq: Var,
        xkv: Var,
        blocks: Rc<[AttnBlock]>,
    ) -> Result<Var> {
        let q = self.project(g, xq, p.wq, p.bq)?;
        let k = self.project(g, xkv, p.wk, p.bk)?;
        let v = self.project(g, xkv, p.wv, p.bv)?;
        let o = g.attention(q, k, v, blocks, self.cfg.n_heads)?;
        self.project(g, o, p.wo, p.bo)
    }

    /// `(H_self, H_cross)` from already projected queries, keys and values.
    /// Both use the interactive sub-layer's output projection; its bias is
    /// added on the self path only, so a query row with no visible partner
    /// position gets an exactly zero `H_cross`.
    fn interactive_parts(
        &self,
        g: &mut Graph,
        p: &AttnParams,
        (q, k, v): (Var, Var, Var),
        blocks: &DecoderBlocks,
    ) -> Result<(Var, Option<Var>)> {
        let heads = self.cfg.n_heads;
        let o_self = g.attention(q, k, v, blocks.own.clone(), heads)?;
        let h_self = self.project(g, o_self, p.wo, p.bo)?;
        let h_cross = match &blocks.partner {
            Some(partner) => {
                let o_cross = g.attention(q, k, v, partner.clone(), heads)?;
                Some(g.matmul(o_cross, Var::Param(p.wo))?)
            }
            None => None,
        };
        Ok((h_self, h_cross))
    }

    /// One decoder layer given the interactive sub-layer's projections.
    /// `memory_kv` are the source-attention keys/values of the encoder output.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn decoder_layer_from_qkv(
        &self,
        g: &mut Graph,
        layer: &DecoderLayer,
        x: Var,
        qkv: (Var, Var, Var),
        blocks: &DecoderBlocks,
        memory_kv: (Var, Var),
    ) -> Result<Var> {
        let (h_self, h_cross) = self.interactive_parts(g, &layer.interactive, qkv, blocks)?;
        let fused = match h_cross {
            Some(c) => {
                let scaled = g.scale(c, self.cfg.lambda_cross);
                g.add(h_self, scaled)?
            }
            None => h_self,
        };
        let x1 = self.residual_norm(g, x, fused, &layer.ln_interactive)?;
        let src = &layer.source;
        let q = self.project(g, x1, src.wq, src.bq)?;
        let o = g.attention(q, memory_kv.0, memory_kv.1, blocks.source.clone(), self.cfg.n_heads)?;
        let a = self.project(g, o, src.wo, src.bo)?;
        let x2 = self.residual_norm(g, x1, a, &layer.ln_source)?;
        let f = self.feed_forward(g, x2, &layer.ff)?;
        self.residual_norm(g, x2, f, &layer.ln_ff)
    }

    pub(crate) fn interactive_qkv(&self, g: &mut Graph, layer: &DecoderLayer, x: Var) -> Result<(Var, Var, Var)> {
        let p = &layer.interactive;
        Ok((
            self.project(g, x, p.wq, p.bq)?,
            self.project(g, x, p.wk, p.bk)?,
            self.project(g, x, p.wv, p.bv)?,
        ))
    }

    pub(crate) fn source_kv(&self, g: &mut Graph, layer: &DecoderLayer, memory: Var) -> Result<(Var, Var)> {
        let p = &layer.source;
        Ok((self.project(g, memory, p.wk, p.bk)?, self.project(g, memory, p.wv, p.bv)?))
    }

    pub(crate) fn decoder_layers(&self) -> &[DecoderLayer] {
        &self.handles.decoder
    }

    /// Scaled token embeddings plus positional encodings for explicit positions.
    pub(crate) fn embed(&self, g: &mut Graph, ids: &[TokenId], positions: &[usize]) -> Result<Var> {
        let vocab = self.cfg.vocab_size;
        let idx: Vec<usize> = ids
            .iter()
            .map(|&t| {
                if (t as usize) < vocab {
                    Ok(t as usize)
                } else {
                    Err(Error::Input(format!("token id {t} ≥ vocab_size {vocab}")))
                }
            })
            .collect::<Result<_>>()?;
        let e = g.gather(Var::Param(self.handles.embedding), &idx)?;
        let e = g.scale(e, (self.cfg.d_model as f64).sqrt());
        let pe = g.constant(self.positions_at(positions)?);
        let e = g.add(e, pe)?;
        Ok(g.dropout(e, self.cfg.dropout))
    }

    pub(crate) fn output_logits(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.project(g, x, self.handles.output_w, self.handles.output_b)
    }

    fn check_streams(&self, rec: &[TokenId], tr: &[TokenId]) -> Result<()> {
        if rec.is_empty() || tr.is_empty() {
            return Err(Error::Input("decoder streams must be non-empty".into()));
        }
        if rec.len() != tr.len() {
            return Err(Error::Input(format!(
                "streams must be padded to equal length, got {} and {}",
                rec.len(),
                tr.len()
            )));
        }
        if rec[0] != RECOG {
            return Err(Error::Input("recognition stream must start with <recog>".into()));
        }
        if tr[0] != TRANS {
            return Err(Error::Input("translation stream must start with <trans>".into()));
        }
        let k = self.cfg.wait_k.min(tr.len() - 1);
        if tr[1..=k].iter().any(|&t| t != DELAY) {
            return Err(Error::Input(format!(
                "translation stream must begin with {} <delay> tokens",
                self.cfg.wait_k
            )));
        }
        Ok(())
    }

    /// Interactive decoder over a packed batch. Returns logits for every
    /// decoder row; see [`DualLayout`] for the row placement.
    pub fn dual_forward_batch(
        &self,
        g: &mut Graph,
        enc: &Encoded,
        items: &[DualInput<'_>],
    ) -> Result<(Var, DualLayout)> {
        if items.len() != enc.segments.len() {
            return Err(Error::Input(format!(
                "{} decoder items for {} encoded utterances",
                items.len(),
                enc.segments.len()
            )));
        }
        let mut ids = Vec::new();
        let mut positions = Vec::new();
        let mut layout = DualLayout { rows: 0, items: Vec::with_capacity(items.len()) };
        let mut own = Vec::with_capacity(2 * items.len());
        let mut partner = Vec::with_capacity(2 * items.len());
        let mut source = Vec::with_capacity(2 * items.len());
        for (item, &(m0, mlen)) in items.iter().zip(&enc.segments) {
            self.check_streams(item.rec, item.tr)?;
            let len = item.rec.len();
            let rec_start = layout.rows;
            let tr_start = rec_start + len;
            layout.rows += 2 * len;
            ids.extend_from_slice(item.rec);
            ids.extend_from_slice(item.tr);
            positions.extend(0..len);
            positions.extend(0..len);
            let pad_rec: Vec<bool> = item.rec.iter().map(|&t| t == PAD).collect();
            let pad_tr: Vec<bool> = item.tr.iter().map(|&t| t == PAD).collect();
            let (self_rec, cross_rec) = build_masks(len, len, &pad_rec, &pad_tr);
            let (self_tr, cross_tr) = build_masks(len, len, &pad_tr, &pad_rec);
            own.push(AttnBlock::masked(rec_start, rec_start, &self_rec));
            own.push(AttnBlock::masked(tr_start, tr_start, &self_tr));
            partner.push(AttnBlock::masked(rec_start, tr_start, &cross_rec));
            partner.push(AttnBlock::masked(tr_start, rec_start, &cross_tr));
            source.push(AttnBlock::dense(rec_start, len, m0, mlen));
            source.push(AttnBlock::dense(tr_start, len, m0, mlen));
            layout.items.push(ItemLayout { rec_start, tr_start, len });
        }
        let blocks = DecoderBlocks { own: own.into(), partner: Some(partner.into()), source: source.into() };
        let logits = self.decode_rows(g, enc.memory, &ids, &positions, &blocks)?;
        Ok((logits, layout))
    }

    /// Standard (non-interactive) decoder over independent token sequences,
    /// sharing the same weights. Sequence `i` reads memory segment
    /// `memory_of[i]`. Returns logits and each sequence's first row.
    pub fn standard_forward_batch(
        &self,
        g: &mut Graph,
        enc: &Encoded,
        seqs: &[&[TokenId]],
        memory_of: &[usize],
    ) -> Result<(Var, Vec<usize>)> {
        let mut ids = Vec::new();
        let mut positions = Vec::new();
        let mut starts = Vec::with_capacity(seqs.len());
        let mut own = Vec::new();
        let mut source = Vec::new();
        for (seq, &m) in seqs.iter().zip(memory_of) {
            let &(m0, mlen) = enc
                .segments
                .get(m)
                .ok_or_else(|| Error::Input(format!("memory segment {m} out of range")))?;
            let start = ids.len();
            let len = seq.len();
            starts.push(start);
            ids.extend_from_slice(seq);
            positions.extend(0..len);
            let pad: Vec<bool> = seq.iter().map(|&t| t == PAD).collect();
            let (self_mask, _) = build_masks(len, len, &pad, &pad);
            own.push(AttnBlock::masked(start, start, &self_mask));
            source.push(AttnBlock::dense(start, len, m0, mlen));
        }
        let blocks = DecoderBlocks { own: own.into(), partner: None, source: source.into() };
        let logits = self.decode_rows(g, enc.memory, &ids, &positions, &blocks)?;
        Ok((logits, starts))
    }

    fn decode_rows(
        &self,
        g: &mut Graph,
        memory: Var,
        ids: &[TokenId],
        positions: &[usize],
        blocks: &DecoderBlocks,
    ) -> Result<Var> {
        let mut x = self.embed(g, ids, positions)?;
        for layer in &self.handles.decoder {
            let mem_kv = self.source_kv(g, layer, memory)?;
            let qkv = self.interactive_qkv(g, layer, x)?;
            x = self.decoder_layer_from_qkv(g, layer, x, qkv, blocks, mem_kv)?;
        }
        self.output_logits(g, x)
    }

    /// Encoder output (`T' × d_model`) for one utterance.
    pub fn encode(&self, features: &FeatureSequence) -> Result<Tensor> {
        let mut g = Graph::new(&self.params);
        let enc = self.encode_batch(&mut g, &[features])?;
        g.check_finite()?;
        Ok(g.value(enc.memory).clone())
    }

    fn constant_memory(g: &mut Graph, memory: &Tensor) -> Encoded {
        let rows = memory.rows();
        Encoded { memory: g.constant(memory.clone()), segments: vec![(0, rows)] }
    }

    /// Logits of both streams (`L × vocab` each) for one utterance.
    pub fn dual_forward(&self, memory: &Tensor, rec: &[TokenId], tr: &[TokenId]) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new(&self.params);
        let enc = Self::constant_memory(&mut g, memory);
        let (logits, layout) = self.dual_forward_batch(&mut g, &enc, &[DualInput { rec, tr }])?;
        g.check_finite()?;
        let it = &layout.items[0];
        let all = g.value(logits);
        Ok((all.slice_rows(it.rec_start, it.len), all.slice_rows(it.tr_start, it.len)))
    }

    /// Logits of a standard decoder forward on one token sequence.
    pub fn standard_forward(&self, memory: &Tensor, tokens: &[TokenId]) -> Result<Tensor> {
        let mut g = Graph::new(&self.params);
        let enc = Self::constant_memory(&mut g, memory);
        let (logits, _) = self.standard_forward_batch(&mut g, &enc, &[tokens], &[0])?;
        g.check_finite()?;
        Ok(g.value(logits).clone())
    }

    /// Runs the interactive sub-layer of decoder layer `layer` on explicit
    /// hidden states. `h_own` and `h_partner` must come from the same depth.
    pub fn interactive_attention(
        &self,
        layer: usize,
        h_own: &Tensor,
        h_partner: &Tensor,
        self_mask: &Mask,
        cross_mask: &Mask,
        lambda: f64,
    ) -> Result<InteractiveOutput> {
        let dl = self
            .handles
            .decoder
            .get(layer)
            .ok_or_else(|| Error::Input(format!("no decoder layer {layer}")))?;
        let (n_own, n_partner) = (h_own.rows(), h_partner.rows());
        if self_mask.rows() != n_own || self_mask.cols() != n_own {
            return Err(Error::Shape(format!("self mask {}x{} for {n_own} positions", self_mask.rows(), self_mask.cols())));
        }
        if cross_mask.rows() != n_own || cross_mask.cols() != n_partner {
            return Err(Error::Shape(format!(
                "cross mask {}x{} for {n_own} x {n_partner} positions",
                cross_mask.rows(),
                cross_mask.cols()
            )));
        }
        let mut g = Graph::new(&self.params);
        let x = g.constant(Tensor::concat_rows(&[h_own, h_partner])?);
        let qkv = self.interactive_qkv(&mut g, dl, x)?;
        let blocks = DecoderBlocks {
            own: vec![AttnBlock::masked(0, 0, self_mask)].into(),
            partner: Some(vec![AttnBlock::masked(0, n_own, cross_mask)].into()),
            source: Vec::new().into(),
        };
        let (h_self, h_cross) = self.interactive_parts(&mut g, &dl.interactive, qkv, &blocks)?;
        let h_cross = h_cross.expect("partner blocks present");
        let scaled = g.scale(h_cross, lambda);
        let h_final = g.add(h_self, scaled)?;
        let own_x = g.constant(h_own.clone());
        let h_final_own = g.value(h_final).slice_rows(0, n_own);
        let h_final_own = g.constant(h_final_own);
        let r = g.add(own_x, h_final_own)?;
        let ln = &dl.ln_interactive;
        let out = g.layer_norm(r, Var::Param(ln.gain), Var::Param(ln.bias), self.cfg.ln_eps)?;
        g.check_finite()?;
        Ok(InteractiveOutput {
            h_self: g.value(h_self).slice_rows(0, n_own),
            h_cross: g.value(h_cross).slice_rows(0, n_own),
            h_final: g.value(h_final).slice_rows(0, n_own),
            output: g.value(out).clone(),
        })
    }
}

/// Multi-head scaled dot-product attention without projections. Masked
/// entries get a −1e9 score; fully masked query rows output zeros.
pub fn scaled_dot_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    mask: Option<&Mask>,
    heads: usize,
) -> Result<Tensor> {
    let ps = ParamStore::new();
    let mut g = Graph::new(&ps);
    let (nq, nk) = (q.rows(), k.rows());
    let block = match mask {
        Some(m) => {
            if m.rows() != nq || m.cols() != nk {
                return Err(Error::Shape(format!("mask {}x{} for {nq} queries and {nk} keys", m.rows(), m.cols())));
            }
            AttnBlock::masked(0, 0, m)
        }
        None => AttnBlock::dense(0, nq, 0, nk),
    };
    let (qv, kv, vv) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
    let out = g.attention(qv, kv, vv, vec![block].into(), heads)?;
    Ok(g.value(out).clone())
}

/// Row-wise log-softmax of a logits matrix.
pub fn log_probs(logits: &Tensor) -> Tensor {
    tensor::log_softmax_rows(logits)
}
