//! Synchronous paired-beam search and greedy decoding.
//!
//! Both streams advance one token per step. Each stream keeps its own beam:
//! candidates are ranked per stream, pruned to the beam size, and then the
//! surviving recognition and translation hypotheses are paired rank to rank
//! (clamping to the last hypothesis when one stream has fewer). A pair whose
//! members come from different parents gets a freshly replayed cache.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::model::{DecodeContext, Model, StepOutput};
use crate::tensor::Tensor;
use crate::vocab::{is_special, TokenId, DELAY, EOS, NUM_SPECIALS, RECOG, TRANS};

#[derive(Clone, Debug, PartialEq)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Steps before forced termination; `None` uses `2·T' + 10`.
    pub max_len: Option<usize>,
    /// GNMT length-penalty exponent.
    pub length_penalty: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig { beam_size: 4, max_len: None, length_penalty: 0.6 }
    }
}

/// One stream of a hypothesis. `tokens` are the emitted tokens, excluding the
/// start label but including forced DELAYs and EOS. A finished stream keeps
/// emitting EOS so both streams of a pair always have equal length.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamHyp {
    pub tokens: Vec<TokenId>,
    pub score: f64,
    pub done: bool,
}

impl StreamHyp {
    fn start() -> Self {
        StreamHyp { tokens: Vec::new(), score: 0.0, done: false }
    }

    /// Content tokens (no special labels).
    pub fn content(&self) -> Vec<TokenId> {
        strip_specials(&self.tokens)
    }

    /// Score divided by the GNMT penalty `((5 + len) / 6)^α` over content tokens.
    pub fn normalized_score(&self, alpha: f64) -> f64 {
        let len = self.tokens.iter().filter(|&&t| !is_special(t)).count() as f64;
        self.score / ((5.0 + len) / 6.0).powf(alpha)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualHypothesis {
    pub rec: StreamHyp,
    pub tr: StreamHyp,
}

impl DualHypothesis {
    pub fn done(&self) -> bool {
        self.rec.done && self.tr.done
    }

    pub fn joint_score(&self, alpha: f64) -> f64 {
        self.rec.normalized_score(alpha) + self.tr.normalized_score(alpha)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeResult {
    pub best: DualHypothesis,
    /// Final beam in pair-rank order.
    pub beam: Vec<DualHypothesis>,
    /// True when `max_len` was reached before any pair finished.
    pub truncated: bool,
    pub steps: usize,
}

impl DecodeResult {
    pub fn transcription(&self) -> Vec<TokenId> {
        self.best.rec.content()
    }

    pub fn translation(&self) -> Vec<TokenId> {
        self.best.tr.content()
    }
}

/// Drops PAD, EOS, RECOG, TRANS and DELAY.
pub fn strip_specials(tokens: &[TokenId]) -> Vec<TokenId> {
    tokens.iter().copied().filter(|&t| !is_special(t)).collect()
}

/// Default step budget `2·T' + 10`, capped so positions stay in range.
pub fn step_budget(model: &Model, memory_len: usize, cfg: &BeamConfig) -> usize {
    let want = cfg.max_len.unwrap_or(2 * memory_len + 10);
    want.min(model.config().max_positions).max(1)
}

/// Tokens a stream may emit: EOS and content tokens.
fn emittable(t: usize) -> bool {
    t == EOS as usize || t >= NUM_SPECIALS
}

/// Token fed to a stream at the next step: the start label or the last
/// emitted token.
fn next_input(h: &StreamHyp, start: TokenId) -> TokenId {
    *h.tokens.last().unwrap_or(&start)
}

/// The first `n` inputs fed to a stream: the start label, then the emitted
/// tokens.
fn fed_inputs(h: &StreamHyp, start: TokenId, n: usize) -> Vec<TokenId> {
    std::iter::once(start).chain(h.tokens.iter().copied()).take(n).collect()
}

/// A candidate extension of one stream.
#[derive(Clone, Debug)]
struct Cand {
    parent: usize,
    hyp: StreamHyp,
}

/// Expands one stream of every pair and keeps the best `beam` distinct
/// prefixes. Ties go to the lower parent index, then the lower token id.
fn expand(
    stream: &[&StreamHyp],
    logprobs: &[&[f64]],
    forced: Option<TokenId>,
    beam: usize,
) -> Vec<Cand> {
    let mut cands = Vec::new();
    for (p, (h, lp)) in stream.iter().zip(logprobs).enumerate() {
        let extend = |tok: TokenId, score: f64| {
            let mut tokens = h.tokens.clone();
            tokens.push(tok);
            Cand { parent: p, hyp: StreamHyp { tokens, score, done: tok == EOS } }
        };
        if h.done {
            let mut c = extend(EOS, h.score);
            c.hyp.done = true;
            cands.push(c);
        } else if let Some(tok) = forced {
            cands.push(extend(tok, h.score));
        } else {
            let mut toks: Vec<usize> = (0..lp.len()).filter(|&t| emittable(t)).collect();
            toks.sort_by(|&a, &b| lp[b].partial_cmp(&lp[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
            for &t in toks.iter().take(beam) {
                cands.push(extend(t as TokenId, h.score + lp[t]));
            }
        }
    }
    // Stable sort keeps (parent, token) order among equal scores.
    cands.sort_by(|a, b| b.hyp.score.partial_cmp(&a.hyp.score).unwrap_or(Ordering::Equal));
    let mut kept: Vec<Cand> = Vec::with_capacity(beam.min(cands.len()));
    for c in cands {
        if kept.len() == beam {
            break;
        }
        if kept.iter().all(|k| k.hyp.tokens != c.hyp.tokens) {
            kept.push(c);
        }
    }
    kept
}

/// Rank-to-rank pairing with clamping: pair `r` takes recognition survivor
/// `min(r, n_rec − 1)` and translation survivor `min(r, n_tr − 1)`.
fn pair_up(n_rec: usize, n_tr: usize) -> Vec<(usize, usize)> {
    let n = n_rec.max(n_tr);
    (0..n).map(|r| (r.min(n_rec - 1), r.min(n_tr - 1))).collect()
}

fn pick_best(beam: &[DualHypothesis], alpha: f64) -> (DualHypothesis, bool) {
    let finished: Vec<&DualHypothesis> = beam.iter().filter(|h| h.done()).collect();
    let truncated = finished.is_empty();
    let pool: Vec<&DualHypothesis> = if truncated { beam.iter().collect() } else { finished };
    let mut best = pool[0];
    for h in &pool[1..] {
        if h.joint_score(alpha) > best.joint_score(alpha) {
            best = h;
        }
    }
    (best.clone(), truncated)
}

/// Which stream is forced to emit DELAY at `step` (0-based).
fn forced_tr(step: usize, wait_k: usize) -> Option<TokenId> {
    (step < wait_k).then_some(DELAY)
}

/// Synchronous paired-beam search over one encoder output.
pub fn synchronous_beam_search(model: &Model, memory: &Tensor, cfg: &BeamConfig) -> Result<DecodeResult> {
    if cfg.beam_size == 0 {
        return Err(Error::Config("beam_size must be ≥ 1".into()));
    }
    let ctx = model.decode_context(memory)?;
    let max_len = step_budget(model, ctx.memory_len(), cfg);
    let k = model.config().wait_k;
    let mut beam = vec![DualHypothesis { rec: StreamHyp::start(), tr: StreamHyp::start() }];
    let mut states = vec![model.empty_pair()];
    let mut steps = 0;
    while steps < max_len && !beam.iter().all(DualHypothesis::done) {
        let inputs: Vec<(TokenId, TokenId)> =
            beam.iter().map(|h| (next_input(&h.rec, RECOG), next_input(&h.tr, TRANS))).collect();
        let outs = model.step(&ctx, &mut states, &inputs)?;
        let rec_h: Vec<&StreamHyp> = beam.iter().map(|h| &h.rec).collect();
        let tr_h: Vec<&StreamHyp> = beam.iter().map(|h| &h.tr).collect();
        let rec_lp: Vec<&[f64]> = outs.iter().map(|o| o.rec.as_slice()).collect();
        let tr_lp: Vec<&[f64]> = outs.iter().map(|o| o.tr.as_slice()).collect();
        let rec_c = expand(&rec_h, &rec_lp, None, cfg.beam_size);
        let tr_c = expand(&tr_h, &tr_lp, forced_tr(steps, k), cfg.beam_size);
        let mut next_beam = Vec::new();
        let mut next_states = Vec::new();
        for (ri, ti) in pair_up(rec_c.len(), tr_c.len()) {
            let (rc, tc) = (&rec_c[ri], &tr_c[ti]);
            let hyp = DualHypothesis { rec: rc.hyp.clone(), tr: tc.hyp.clone() };
            let state = if rc.parent == tc.parent {
                states[rc.parent].clone()
            } else {
                let rec_fed = fed_inputs(&hyp.rec, RECOG, steps + 1);
                let tr_fed = fed_inputs(&hyp.tr, TRANS, steps + 1);
                model.replay(&ctx, &rec_fed, &tr_fed)?.0
            };
            next_beam.push(hyp);
            next_states.push(state);
        }
        beam = next_beam;
        states = next_states;
        steps += 1;
    }
    let (best, truncated) = pick_best(&beam, cfg.length_penalty);
    Ok(DecodeResult { best, beam, truncated, steps })
}

fn argmax_emittable(lp: &[f64]) -> TokenId {
    let mut best = EOS as usize;
    for t in NUM_SPECIALS..lp.len() {
        if lp[t] > lp[best] {
            best = t;
        }
    }
    best as TokenId
}

/// Greedy lockstep decoding (beam size 1 without the beam machinery).
pub fn greedy_decode(model: &Model, memory: &Tensor, max_len: Option<usize>) -> Result<DecodeResult> {
    let cfg = BeamConfig { beam_size: 1, max_len, ..BeamConfig::default() };
    let ctx = model.decode_context(memory)?;
    greedy_with_context(model, &ctx, &cfg)
}

fn greedy_with_context(model: &Model, ctx: &DecodeContext, cfg: &BeamConfig) -> Result<DecodeResult> {
    let max_len = step_budget(model, ctx.memory_len(), cfg);
    let k = model.config().wait_k;
    let mut h = DualHypothesis { rec: StreamHyp::start(), tr: StreamHyp::start() };
    let mut state = [model.empty_pair()];
    let mut steps = 0;
    while steps < max_len && !h.done() {
        let input = (next_input(&h.rec, RECOG), next_input(&h.tr, TRANS));
        let StepOutput { rec, tr } = model.step(ctx, &mut state, &[input])?.pop().expect("one pair");
        if h.rec.done {
            h.rec.tokens.push(EOS);
        } else {
            let t = argmax_emittable(&rec);
            h.rec.score += rec[t as usize];
            h.rec.tokens.push(t);
            h.rec.done = t == EOS;
        }
        if h.tr.done {
            h.tr.tokens.push(EOS);
        } else if let Some(d) = forced_tr(steps, k) {
            h.tr.tokens.push(d);
        } else {
            let t = argmax_emittable(&tr);
            h.tr.score += tr[t as usize];
            h.tr.tokens.push(t);
            h.tr.done = t == EOS;
        }
        steps += 1;
    }
    let truncated = !h.done();
    Ok(DecodeResult { best: h.clone(), beam: vec![h], truncated, steps })
}

/// Reference search with the same pairing rule but no pruning beyond the
/// beam and no caching: every step re-runs the full decoder on each pair's
/// complete prefixes. Exponential in practice; meant for tiny instances.
pub fn exhaustive_search(model: &Model, memory: &Tensor, cfg: &BeamConfig) -> Result<DecodeResult> {
    let max_len = step_budget(model, memory.rows(), cfg);
    let k = model.config().wait_k;
    let mut beam = vec![DualHypothesis { rec: StreamHyp::start(), tr: StreamHyp::start() }];
    let mut steps = 0;
    while steps < max_len && !beam.iter().all(DualHypothesis::done) {
        let mut outs = Vec::with_capacity(beam.len());
        for h in &beam {
            let rec_in = fed_inputs(&h.rec, RECOG, steps + 1);
            let tr_in = fed_inputs(&h.tr, TRANS, steps + 1);
            let (rl, tl) = model.dual_forward(memory, &rec_in, &tr_in)?;
            let last = |t: &Tensor| crate::tensor::log_softmax_rows(&t.slice_rows(t.rows() - 1, 1)).into_data();
            outs.push((last(&rl), last(&tl)));
        }
        let rec_h: Vec<&StreamHyp> = beam.iter().map(|h| &h.rec).collect();
        let tr_h: Vec<&StreamHyp> = beam.iter().map(|h| &h.tr).collect();
        let rec_lp: Vec<&[f64]> = outs.iter().map(|o| o.0.as_slice()).collect();
        let tr_lp: Vec<&[f64]> = outs.iter().map(|o| o.1.as_slice()).collect();
        let rec_c = expand(&rec_h, &rec_lp, None, usize::MAX);
        let tr_c = expand(&tr_h, &tr_lp, forced_tr(steps, k), usize::MAX);
        if rec_c.len().max(tr_c.len()) > cfg.beam_size {
            return Err(Error::Input(format!(
                "{} distinct hypotheses exceed beam size {}",
                rec_c.len().max(tr_c.len()),
                cfg.beam_size
            )));
        }
        beam = pair_up(rec_c.len(), tr_c.len())
            .into_iter()
            .map(|(ri, ti)| DualHypothesis { rec: rec_c[ri].hyp.clone(), tr: tr_c[ti].hyp.clone() })
            .collect();
        steps += 1;
    }
    let (best, truncated) = pick_best(&beam, cfg.length_penalty);
    Ok(DecodeResult { best, beam, truncated, steps })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strip() {
        assert_eq!(strip_specials(&[DELAY, DELAY, 7, 8, EOS]), vec![7, 8]);
    }

    #[test]
    fn finished_streams_keep_emitting_eos() {
        let h = StreamHyp { tokens: vec![7, EOS], score: -0.5, done: true };
        let lp = vec![0.0; 8];
        let c = expand(&[&h], &[&lp], None, 4);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].hyp.tokens, vec![7, EOS, EOS]);
        assert_eq!(c[0].hyp.score, -0.5);
        assert_eq!(fed_inputs(&c[0].hyp, RECOG, 3), vec![RECOG, 7, EOS]);
    }

    #[test]
    fn pairing_clamps() {
        assert_eq!(pair_up(3, 1), vec![(0, 0), (1, 0), (2, 0)]);
        assert_eq!(pair_up(2, 2), vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn expand_dedups_and_breaks_ties() {
        let a = StreamHyp { tokens: vec![5], score: -1.0, done: false };
        let b = StreamHyp { tokens: vec![5], score: -1.0, done: false };
        let lp = vec![f64::NEG_INFINITY, -1.0, -9.0, -9.0, -9.0, -1.0, -2.0];
        let c = expand(&[&a, &b], &[&lp, &lp], None, 3);
        let toks: Vec<Vec<TokenId>> = c.iter().map(|c| c.hyp.tokens.clone()).collect();
        assert_eq!(toks, vec![vec![5, 1], vec![5, 5], vec![5, 6]]);
        assert!(c.iter().all(|c| c.parent == 0));
        assert!(c[0].hyp.done);
    }

    #[test]
    fn length_penalty() {
        let h = StreamHyp { tokens: vec![DELAY, 7, EOS], score: -2.0, done: true };
        assert!((h.normalized_score(0.6) - (-2.0 / 1.0f64.powf(0.6))).abs() < 1e-12);
        assert_eq!(h.content(), vec![7]);
    }
}
