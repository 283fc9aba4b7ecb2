//! Target preparation, the joint objective and the seeded training loop.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::frontend::FeatureSequence;
use crate::graph::{Graph, Var};
use crate::kv::KvMap;
use crate::model::{DualInput, DualLayout, Model, ModelConfig};
use crate::optim::{AdamConfig, AdamState, LrSchedule};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::vocab::{is_special, TokenId, DELAY, EOS, PAD, RECOG, TRANS};

/// Teacher-forcing inputs, targets and loss masks of one utterance. All six
/// vectors have the same length.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedTargets {
    pub rec_in: Vec<TokenId>,
    pub rec_tgt: Vec<TokenId>,
    pub tr_in: Vec<TokenId>,
    pub tr_tgt: Vec<TokenId>,
    pub rec_mask: Vec<f64>,
    pub tr_mask: Vec<f64>,
}

impl PreparedTargets {
    pub fn len(&self) -> usize {
        self.rec_in.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rec_in.is_empty()
    }
}

fn pad_to(mut v: Vec<TokenId>, len: usize) -> Vec<TokenId> {
    v.resize(len, PAD);
    v
}

/// Builds `⟨RECOG⟩·x → x·⟨EOS⟩` and `⟨TRANS⟩·⟨DELAY⟩ᵏ·y → ⟨DELAY⟩ᵏ·y·⟨EOS⟩`,
/// both padded to a common length. PAD and DELAY targets are masked.
pub fn prepare_targets(x: &[TokenId], y: &[TokenId], k: usize) -> Result<PreparedTargets> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Input("transcription and translation must be non-empty".into()));
    }
    if x.iter().chain(y).any(|&t| is_special(t)) {
        return Err(Error::Input("training sequences must not contain special tokens".into()));
    }
    let len = (x.len() + 1).max(y.len() + k + 1);
    let rec_in: Vec<TokenId> = std::iter::once(RECOG).chain(x.iter().copied()).collect();
    let rec_tgt: Vec<TokenId> = x.iter().copied().chain(std::iter::once(EOS)).collect();
    let delays = std::iter::repeat_n(DELAY, k);
    let tr_in: Vec<TokenId> = std::iter::once(TRANS).chain(delays.clone()).chain(y.iter().copied()).collect();
    let tr_tgt: Vec<TokenId> = delays.chain(y.iter().copied()).chain(std::iter::once(EOS)).collect();
    let (rec_tgt, tr_tgt) = (pad_to(rec_tgt, len), pad_to(tr_tgt, len));
    let mask = |t: &[TokenId]| t.iter().map(|&v| if v == PAD || v == DELAY { 0.0 } else { 1.0 }).collect();
    Ok(PreparedTargets {
        rec_mask: mask(&rec_tgt),
        tr_mask: mask(&tr_tgt),
        rec_in: pad_to(rec_in, len),
        tr_in: pad_to(tr_in, len),
        rec_tgt,
        tr_tgt,
    })
}

/// A group of utterances with prepared targets.
#[derive(Clone, Debug)]
pub struct Batch<'a> {
    pub features: Vec<&'a FeatureSequence>,
    pub targets: Vec<PreparedTargets>,
}

impl<'a> Batch<'a> {
    pub fn new(utts: &[&'a Utterance], wait_k: usize) -> Result<Self> {
        if utts.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let targets = utts
            .iter()
            .map(|u| {
                prepare_targets(&u.transcription, &u.translation, wait_k)
                    .map_err(|e| Error::Input(format!("{}: {e}", u.id)))
            })
            .collect::<Result<_>>()?;
        Ok(Batch { features: utts.iter().map(|u| &u.features).collect(), targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn dual_inputs(&self) -> Vec<DualInput<'_>> {
        self.targets.iter().map(|t| DualInput { rec: &t.rec_in, tr: &t.tr_in }).collect()
    }
}

/// Loss value and its per-stream breakdown.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    /// Summed cross-entropy of both streams over the shared unmasked count.
    pub loss: f64,
    /// Recognition cross-entropy per unmasked recognition target.
    pub rec_loss: f64,
    /// Translation cross-entropy per unmasked translation target.
    pub tr_loss: f64,
    pub rec_count: f64,
    pub tr_count: f64,
}

/// Joint negative log-likelihood of both streams for packed logits.
/// `rec_rows[i]`/`tr_rows[i]` are the first rows of utterance `i`'s streams.
pub fn joint_loss(
    g: &mut Graph,
    logits: Var,
    rec_rows: &[usize],
    tr_rows: &[usize],
    targets: &[PreparedTargets],
) -> Result<(Var, LossParts)> {
    let rows = g.value(logits).rows();
    let mut tgt = vec![0usize; rows];
    let mut rec_w = vec![0.0; rows];
    let mut tr_w = vec![0.0; rows];
    for ((t, &r0), &t0) in targets.iter().zip(rec_rows).zip(tr_rows) {
        if r0 + t.len() > rows || t0 + t.len() > rows {
            return Err(Error::Shape(format!("targets exceed the {rows} logit rows")));
        }
        for j in 0..t.len() {
            tgt[r0 + j] = t.rec_tgt[j] as usize;
            rec_w[r0 + j] = t.rec_mask[j];
            tgt[t0 + j] = t.tr_tgt[j] as usize;
            tr_w[t0 + j] = t.tr_mask[j];
        }
    }
    let rec_count: f64 = rec_w.iter().sum();
    let tr_count: f64 = tr_w.iter().sum();
    if rec_count + tr_count == 0.0 {
        return Err(Error::Contract("every target position is masked".into()));
    }
    let rec_sum = g.cross_entropy(logits, &tgt, &rec_w)?;
    let tr_sum = g.cross_entropy(logits, &tgt, &tr_w)?;
    let total = g.add(rec_sum, tr_sum)?;
    let loss = g.scale(total, 1.0 / (rec_count + tr_count));
    let per = |s: Var, n: f64, g: &Graph| if n > 0.0 { g.value(s).item() / n } else { 0.0 };
    let parts = LossParts {
        loss: g.value(loss).item(),
        rec_loss: per(rec_sum, rec_count, g),
        tr_loss: per(tr_sum, tr_count, g),
        rec_count,
        tr_count,
    };
    Ok((loss, parts))
}

/// Forward pass of the interactive model and its joint loss.
pub fn batch_loss(model: &Model, g: &mut Graph, batch: &Batch<'_>) -> Result<(Var, LossParts)> {
    let enc = model.encode_batch(g, &batch.features)?;
    let (logits, layout) = model.dual_forward_batch(g, &enc, &batch.dual_inputs())?;
    let DualLayout { items, .. } = layout;
    let rec_rows: Vec<usize> = items.iter().map(|i| i.rec_start).collect();
    let tr_rows: Vec<usize> = items.iter().map(|i| i.tr_start).collect();
    joint_loss(g, logits, &rec_rows, &tr_rows, &batch.targets)
}

/// Multi-task reference: two plain decoders with shared weights, each
/// conditioned only on its own gold prefix.
pub fn multitask_loss(model: &Model, g: &mut Graph, batch: &Batch<'_>) -> Result<(Var, LossParts)> {
    let enc = model.encode_batch(g, &batch.features)?;
    let mut seqs: Vec<&[TokenId]> = Vec::with_capacity(2 * batch.len());
    let mut memory_of = Vec::with_capacity(2 * batch.len());
    for (i, t) in batch.targets.iter().enumerate() {
        seqs.push(&t.rec_in);
        seqs.push(&t.tr_in);
        memory_of.extend([i, i]);
    }
    let (logits, starts) = model.standard_forward_batch(g, &enc, &seqs, &memory_of)?;
    let rec_rows: Vec<usize> = starts.iter().step_by(2).copied().collect();
    let tr_rows: Vec<usize> = starts.iter().skip(1).step_by(2).copied().collect();
    joint_loss(g, logits, &rec_rows, &tr_rows, &batch.targets)
}

/// Which objective the trainer optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    Interactive,
    MultiTaskReference,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: u64,
    pub lr_scale: f64,
    pub warmup_steps: u64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Save a checkpoint every this many steps; 0 saves only the last step.
    pub checkpoint_every: u64,
    /// Batches per length bucket when shuffling.
    pub bucket_batches: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            steps: 4000,
            lr_scale: 1.0,
            warmup_steps: 400,
            adam: AdamConfig::default(),
            seed: 1,
            checkpoint_every: 1000,
            bucket_batches: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.bucket_batches == 0 {
            return Err(Error::Config("batch_size and bucket_batches must be ≥ 1".into()));
        }
        if !(self.lr_scale > 0.0) {
            return Err(Error::Config(format!("lr_scale must be positive, got {}", self.lr_scale)));
        }
        Ok(())
    }

    pub fn write_kv(&self, kv: &mut KvMap) {
        kv.set("batch_size", self.batch_size);
        kv.set("steps", self.steps);
        kv.set("lr_scale", self.lr_scale);
        kv.set("warmup_steps", self.warmup_steps);
        kv.set("adam_beta1", self.adam.beta1);
        kv.set("adam_beta2", self.adam.beta2);
        kv.set("adam_eps", self.adam.eps);
        kv.set("seed", self.seed);
        kv.set("checkpoint_every", self.checkpoint_every);
        kv.set("bucket_batches", self.bucket_batches);
    }

    pub fn read_kv(&mut self, kv: &KvMap) -> Result<()> {
        kv.read_into("batch_size", &mut self.batch_size)?;
        kv.read_into("steps", &mut self.steps)?;
        kv.read_into("lr_scale", &mut self.lr_scale)?;
        kv.read_into("warmup_steps", &mut self.warmup_steps)?;
        kv.read_into("adam_beta1", &mut self.adam.beta1)?;
        kv.read_into("adam_beta2", &mut self.adam.beta2)?;
        kv.read_into("adam_eps", &mut self.adam.eps)?;
        kv.read_into("seed", &mut self.seed)?;
        kv.read_into("checkpoint_every", &mut self.checkpoint_every)?;
        kv.read_into("bucket_batches", &mut self.bucket_batches)?;
        Ok(())
    }
}

/// Batches of one epoch: shuffle, sort within buckets of
/// `bucket_batches · batch_size` utterances by length, then shuffle the
/// batch order. Depends only on `(seed, epoch)`.
pub fn epoch_batches(lengths: &[usize], batch_size: usize, bucket_batches: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0bac_4e75_u64);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(&mut rng);
    let mut batches = Vec::new();
    for bucket in order.chunks(batch_size * bucket_batches) {
        let mut bucket = bucket.to_vec();
        bucket.sort_by_key(|&i| lengths[i]);
        batches.extend(bucket.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(&mut rng);
    batches
}

fn dropout_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x000d_4090_u64);
    rng.set_stream(step);
    rng
}

/// Metrics of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss: f64,
    pub rec_loss: f64,
    pub tr_loss: f64,
    pub lr: f64,
    pub wallclock: f64,
}

impl StepReport {
    pub fn log_line(&self) -> String {
        format!(
            "step={}\tloss={:.6}\trec_loss={:.6}\ttr_loss={:.6}\tlr={:.6e}\twallclock={:.3}",
            self.step, self.loss, self.rec_loss, self.tr_loss, self.lr, self.wallclock
        )
    }
}

/// Reads `(step, loss)` pairs back from a metrics log.
pub fn parse_metrics_log(text: &str) -> Result<Vec<StepReport>> {
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let mut kv = KvMap::new();
        for field in line.split('\t') {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::Input(format!("malformed metrics record {line:?}")))?;
            kv.set(k, v);
        }
        let get = |k: &str| -> Result<f64> {
            kv.get_parsed(k)?.ok_or_else(|| Error::Input(format!("metrics record without {k}")))
        };
        out.push(StepReport {
            step: get("step")? as u64,
            loss: get("loss")?,
            rec_loss: get("rec_loss")?,
            tr_loss: get("tr_loss")?,
            lr: get("lr")?,
            wallclock: get("wallclock")?,
        });
    }
    Ok(out)
}

const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

/// Model, optimizer state and data order of a training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    model: Model,
    adam: AdamState,
    cfg: TrainConfig,
    objective: Objective,
    schedule: LrSchedule,
    started: Instant,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = AdamState::new(model.params());
        let schedule = LrSchedule {
            scale: cfg.lr_scale,
            d_model: model.config().d_model,
            warmup_steps: cfg.warmup_steps,
        };
        Ok(Trainer { model, adam, cfg, objective: Objective::Interactive, schedule, started: Instant::now() })
    }

    /// A fresh model initialized from the training seed.
    pub fn from_scratch(model_cfg: ModelConfig, cfg: TrainConfig) -> Result<Self> {
        let model = Model::new(model_cfg, cfg.seed)?;
        Trainer::new(model, cfg)
    }

    pub fn with_objective(mut self, objective: Objective) -> Self {
        self.objective = objective;
        self
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Number of optimizer steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.adam.step_count
    }

    /// One optimizer step on `batch` at the next step index.
    pub fn train_step(&mut self, batch: &Batch<'_>) -> Result<StepReport> {
        let step = self.adam.step_count + 1;
        let (grads, parts) = {
            let mut g = Graph::with_dropout(self.model.params(), dropout_rng(self.cfg.seed, step));
            let (loss, parts) = match self.objective {
                Objective::Interactive => batch_loss(&self.model, &mut g, batch)?,
                Objective::MultiTaskReference => multitask_loss(&self.model, &mut g, batch)?,
            };
            if !parts.loss.is_finite() {
                return Err(Error::Diverged { step, loss: parts.loss });
            }
            let grads = g.backward(loss).map_err(|e| match e {
                Error::NonFinite(_) => Error::Diverged { step, loss: f64::NAN },
                e => e,
            })?;
            (grads, parts)
        };
        let lr = self.schedule.lr(step);
        self.adam.step(self.model.params_mut(), &grads, &self.cfg.adam, lr)?;
        Ok(StepReport {
            step,
            loss: parts.loss,
            rec_loss: parts.rec_loss,
            tr_loss: parts.tr_loss,
            lr,
            wallclock: self.started.elapsed().as_secs_f64(),
        })
    }

    /// Utterance indices of the batch used at 1-based `step`.
    pub fn batch_indices(&self, lengths: &[usize], step: u64) -> Vec<usize> {
        let per_epoch = lengths.len().div_ceil(self.cfg.batch_size) as u64;
        let (epoch, idx) = ((step - 1) / per_epoch, (step - 1) % per_epoch);
        let mut batches = epoch_batches(lengths, self.cfg.batch_size, self.cfg.bucket_batches, self.cfg.seed, epoch);
        batches.swap_remove(idx as usize)
    }

    /// Trains until `cfg.steps`, calling `on_step` after every step.
    pub fn run(
        &mut self,
        train: &[Utterance],
        mut on_step: impl FnMut(&Trainer, &StepReport) -> Result<()>,
    ) -> Result<()> {
        if train.is_empty() {
            return Err(Error::Input("empty training corpus".into()));
        }
        let lengths: Vec<usize> = train.iter().map(|u| u.features.num_frames()).collect();
        let per_epoch = lengths.len().div_ceil(self.cfg.batch_size) as u64;
        let k = self.model.config().wait_k;
        let mut plan: Option<(u64, Vec<Vec<usize>>)> = None;
        while self.adam.step_count < self.cfg.steps {
            let step = self.adam.step_count + 1;
            let epoch = (step - 1) / per_epoch;
            if plan.as_ref().map(|p| p.0) != Some(epoch) {
                let b = epoch_batches(&lengths, self.cfg.batch_size, self.cfg.bucket_batches, self.cfg.seed, epoch);
                plan = Some((epoch, b));
            }
            let indices = &plan.as_ref().expect("plan set").1[((step - 1) % per_epoch) as usize];
            let utts: Vec<&Utterance> = indices.iter().map(|&i| &train[i]).collect();
            let batch = Batch::new(&utts, k)?;
            let report = self.train_step(&batch)?;
            on_step(self, &report)?;
        }
        Ok(())
    }

    /// Mean joint loss over `utts` without dropout, weighted by target count.
    pub fn evaluate(&self, utts: &[Utterance]) -> Result<LossParts> {
        evaluate_loss(&self.model, utts, self.cfg.batch_size)
    }

    pub fn metadata(&self) -> KvMap {
        let mut kv = KvMap::new();
        self.model.config().write_kv(&mut kv);
        self.cfg.write_kv(&mut kv);
        kv.set("step", self.adam.step_count);
        kv
    }

    /// Parameters plus Adam moments, with model/training config and step in
    /// the metadata.
    pub fn checkpoint_store(&self) -> Result<ParamStore> {
        let params = self.model.params();
        let mut store = params.clone();
        for (i, (name, _)) in params.iter().enumerate() {
            store.insert(format!("{ADAM_M}{name}"), self.adam.first_moment[i].clone())?;
            store.insert(format!("{ADAM_V}{name}"), self.adam.second_moment[i].clone())?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.checkpoint_store()?, &self.metadata().to_string())
    }

    /// Restores a run from a checkpoint written by [`Trainer::save`]. Keys in
    /// `overrides` replace the stored training config (for example `steps`).
    pub fn resume(path: &Path, overrides: &KvMap) -> Result<Self> {
        let ckpt = load_checkpoint(path)?;
        let meta = KvMap::parse(&ckpt.metadata)?;
        let (model_cfg, mut cfg) = configs_from_metadata(&meta)?;
        cfg.read_kv(overrides)?;
        let step: u64 = meta
            .get_parsed("step")?
            .ok_or_else(|| Error::format(path, "checkpoint metadata lacks a step"))?;
        let (params, adam) = split_training_state(ckpt, step)?;
        let model = Model::from_params(model_cfg, params)?;
        let mut t = Trainer::new(model, cfg)?;
        if let Some(adam) = adam {
            t.adam = adam;
        } else {
            t.adam.step_count = step;
        }
        Ok(t)
    }
}

/// Model and training configs stored in checkpoint metadata.
pub fn configs_from_metadata(meta: &KvMap) -> Result<(ModelConfig, TrainConfig)> {
    let vocab: usize = meta
        .get_parsed("vocab_size")?
        .ok_or_else(|| Error::Config("metadata lacks vocab_size".into()))?;
    let mut model_cfg = ModelConfig::toy(vocab);
    model_cfg.read_kv(meta)?;
    let mut cfg = TrainConfig::default();
    cfg.read_kv(meta)?;
    Ok((model_cfg, cfg))
}

fn split_training_state(ckpt: Checkpoint, step: u64) -> Result<(ParamStore, Option<AdamState>)> {
    let mut params = ParamStore::new();
    let mut m = Vec::new();
    let mut v = Vec::new();
    let mut rest = Vec::new();
    for (name, t) in ckpt.tensors.iter() {
        if let Some(base) = name.strip_prefix(ADAM_M) {
            m.push((base.to_owned(), t.clone()));
        } else if let Some(base) = name.strip_prefix(ADAM_V) {
            v.push((base.to_owned(), t.clone()));
        } else {
            rest.push((name.to_owned(), t.clone()));
        }
    }
    for (name, t) in rest {
        params.insert(name, t)?;
    }
    if m.is_empty() && v.is_empty() {
        return Ok((params, None));
    }
    let order = |moments: Vec<(String, Tensor)>| -> Result<Vec<Tensor>> {
        let mut out: Vec<Option<Tensor>> = vec![None; params.len()];
        for (name, t) in moments {
            let id = params.require(&name)?;
            out[id.index()] = Some(t);
        }
        out.into_iter()
            .enumerate()
            .map(|(i, t)| t.ok_or_else(|| Error::Contract(format!("missing Adam moment for {}", params.name(crate::params::ParamId(i))))))
            .collect()
    };
    let adam = AdamState { first_moment: order(m)?, second_moment: order(v)?, step_count: step };
    Ok((params, Some(adam)))
}

/// Loads only the model weights of a training checkpoint.
pub fn load_model(path: &Path) -> Result<Model> {
    let ckpt = load_checkpoint(path)?;
    let meta = KvMap::parse(&ckpt.metadata)?;
    let (model_cfg, _) = configs_from_metadata(&meta)?;
    let (params, _) = split_training_state(ckpt, 0)?;
    Model::from_params(model_cfg, params)
}

/// Joint loss over a set of utterances without dropout.
pub fn evaluate_loss(model: &Model, utts: &[Utterance], batch_size: usize) -> Result<LossParts> {
    let (mut rec, mut tr, mut nr, mut nt) = (0.0, 0.0, 0.0, 0.0);
    for chunk in utts.chunks(batch_size.max(1)) {
        let refs: Vec<&Utterance> = chunk.iter().collect();
        let batch = Batch::new(&refs, model.config().wait_k)?;
        let mut g = Graph::new(model.params());
        let (_, p) = batch_loss(model, &mut g, &batch)?;
        rec += p.rec_loss * p.rec_count;
        tr += p.tr_loss * p.tr_count;
        nr += p.rec_count;
        nt += p.tr_count;
    }
    let div = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    Ok(LossParts { loss: div(rec + tr, nr + nt), rec_loss: div(rec, nr), tr_loss: div(tr, nt), rec_count: nr, tr_count: nt })
}

/// Files written by [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub reports: Vec<StepReport>,
    pub checkpoints: Vec<PathBuf>,
    /// Checkpoint with the lowest dev loss, when a dev set was given.
    pub best: Option<(PathBuf, f64)>,
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("checkpoint-{step:06}.ckpt"))
}

/// Runs (or continues) training, writing `metrics.log` and checkpoints into
/// `out_dir`. A dev set enables checkpoint selection by dev joint loss; the
/// best one is copied to `best.ckpt`.
pub fn train(trainer: &mut Trainer, data: &[Utterance], dev: Option<&[Utterance]>, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let mut log = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("metrics.log");
            Some((OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?, path))
        }
        None => None,
    };
    let mut reports = Vec::new();
    let mut checkpoints = Vec::new();
    let mut best: Option<(PathBuf, f64)> = None;
    let total = trainer.config().steps;
    let every = trainer.config().checkpoint_every;
    trainer.run(data, |t, report| {
        reports.push(*report);
        if let Some((file, path)) = log.as_mut() {
            writeln!(file, "{}", report.log_line()).map_err(|e| Error::io(&*path, e))?;
        }
        let due = report.step == total || (every > 0 && report.step % every == 0);
        if let (true, Some(dir)) = (due, out_dir) {
            let path = checkpoint_path(dir, report.step);
            t.save(&path)?;
            if let Some(dev) = dev {
                let dev_loss = t.evaluate(dev)?.loss;
                if best.as_ref().is_none_or(|b| dev_loss < b.1) {
                    fs::copy(&path, dir.join("best.ckpt")).map_err(|e| Error::io(&path, e))?;
                    best = Some((path.clone(), dev_loss));
                }
            }
            checkpoints.push(path);
        }
        Ok(())
    })?;
    Ok(TrainOutcome { model: trainer.model().clone(), reports, checkpoints, best })
}
