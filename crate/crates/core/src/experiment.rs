//! Whole-pipeline runs: generate a toy corpus, train, decode, score.

use std::fmt::Write as _;
use std::time::Instant;

use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::inference::{greedy_decode, synchronous_beam_search, BeamConfig, DecodeResult};
use crate::metrics::EvalReport;
use crate::model::{Model, ModelConfig};
use crate::toy_data::{generate_splits, ToySpec};
use crate::training::{evaluate_loss, StepReport, TrainConfig, Trainer};
use crate::vocab::{TokenId, Vocabulary};

/// Decoded output of one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub id: String,
    pub result: DecodeResult,
}

impl Decoded {
    pub fn transcription(&self) -> Vec<TokenId> {
        self.result.transcription()
    }

    pub fn translation(&self) -> Vec<TokenId> {
        self.result.translation()
    }
}

/// Greedy decoding when `beam` is `None`, paired beam search otherwise.
pub fn decode_utterances(model: &Model, utts: &[Utterance], beam: Option<&BeamConfig>) -> Result<Vec<Decoded>> {
    utts.iter()
        .map(|u| {
            let memory = model.encode(&u.features)?;
            let result = match beam {
                None => greedy_decode(model, &memory, None)?,
                Some(cfg) => synchronous_beam_search(model, &memory, cfg)?,
            };
            Ok(Decoded { id: u.id.clone(), result })
        })
        .collect()
}

/// Scores decoded outputs against the references of `utts` (matched by id).
pub fn score(decoded: &[Decoded], utts: &[Utterance]) -> Result<EvalReport> {
    if decoded.len() != utts.len() {
        return Err(Error::Input(format!("{} outputs for {} utterances", decoded.len(), utts.len())));
    }
    let mut report = EvalReport::default();
    for (d, u) in decoded.iter().zip(utts) {
        if d.id != u.id {
            return Err(Error::Input(format!("output {} does not match utterance {}", d.id, u.id)));
        }
        report.push(&u.id, &d.transcription(), &u.transcription, &d.translation(), &u.translation)?;
    }
    Ok(report)
}

/// One line per utterance:
/// `id<TAB>transcription<TAB>translation<TAB>rec_score<TAB>tr_score`, tokens
/// space-separated, plus a trailing `<TAB>truncated` field when set.
pub fn render_decoded(decoded: &[Decoded], vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for d in decoded {
        let best = &d.result.best;
        let _ = write!(
            out,
            "{}\t{}\t{}\t{:.6}\t{:.6}",
            d.id,
            vocab.decode(&d.transcription()),
            vocab.decode(&d.translation()),
            best.rec.score,
            best.tr.score
        );
        if d.result.truncated {
            out.push_str("\ttruncated");
        }
        out.push('\n');
    }
    out
}

/// One parsed line of a decode file.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedLine {
    pub id: String,
    pub transcription: Vec<TokenId>,
    pub translation: Vec<TokenId>,
}

/// Reads a file written by [`render_decoded`].
pub fn parse_decoded(text: &str, vocab: &Vocabulary) -> Result<Vec<DecodedLine>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() < 3 {
                return Err(Error::Input(format!("decode line {}: expected at least 3 fields", n + 1)));
            }
            Ok(DecodedLine {
                id: f[0].to_owned(),
                transcription: vocab.encode(f[1])?,
                translation: vocab.encode(f[2])?,
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrialSpec {
    pub data: ToySpec,
    pub train_size: usize,
    pub dev_size: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// `None` decodes greedily.
    pub beam: Option<BeamConfig>,
}

#[derive(Clone, Debug)]
pub struct TrialResult {
    pub wer: f64,
    pub bleu: f64,
    pub dev_loss: f64,
    pub reports: Vec<StepReport>,
    pub eval: EvalReport,
    pub seconds: f64,
}

/// Generates train/dev splits from `spec.data`, trains from scratch, and
/// decodes the dev split.
pub fn run_trial(spec: &TrialSpec) -> Result<TrialResult> {
    let start = Instant::now();
    let splits = generate_splits(&spec.data, &[("train", spec.train_size), ("dev", spec.dev_size)])?;
    let (train, dev) = (&splits[0], &splits[1]);
    let model_cfg = ModelConfig { vocab_size: train.vocab.len(), ..spec.model.clone() };
    let mut trainer = Trainer::from_scratch(model_cfg, spec.train.clone())?;
    let mut reports = Vec::new();
    trainer.run(&train.utterances, |_, r| {
        reports.push(*r);
        Ok(())
    })?;
    let model = trainer.into_model();
    let dev_loss = evaluate_loss(&model, &dev.utterances, spec.train.batch_size)?.loss;
    let decoded = decode_utterances(&model, &dev.utterances, spec.beam.as_ref())?;
    let eval = score(&decoded, &dev.utterances)?;
    Ok(TrialResult {
        wer: eval.wer(),
        bleu: eval.bleu(),
        dev_loss,
        reports,
        eval,
        seconds: start.elapsed().as_secs_f64(),
    })
}
