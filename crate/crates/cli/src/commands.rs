use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use duplex_core::corpus::{load_corpus, load_vocab, save_corpus, save_vocab, validate_tokens, Corpus};
use duplex_core::experiment::{decode_utterances, parse_decoded, render_decoded, score};
use duplex_core::frontend::{featurize, read_wav, save_features, write_wav};
use duplex_core::metrics::EvalReport;
use duplex_core::toy_data::{generate_splits, ToyLanguage};
use duplex_core::training::{load_model, train, Trainer};
use duplex_core::vocab::NUM_SPECIALS;
use duplex_core::{Error, Model, ModelConfig, Result};

use crate::config::RunConfig;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Input(format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn gen_data(cfg: &RunConfig, wav: bool) -> Result<()> {
    let splits = generate_splits(&cfg.data, &cfg.split_sizes)?;
    for ((name, _), corpus) in cfg.split_sizes.iter().zip(&splits) {
        let dir = cfg.out.join(name);
        save_corpus(corpus, &dir)?;
        println!("{name}: {}", dir.display());
        print!("{}", corpus.stats());
        if wav {
            let lang = ToyLanguage::new(&cfg.data)?;
            let wav_dir = dir.join("wav");
            std::fs::create_dir_all(&wav_dir).map_err(|e| io_err(&wav_dir, e))?;
            for u in &corpus.utterances {
                let samples = lang.render_waveform(&u.transcription, cfg.frontend.sample_rate);
                write_wav(&wav_dir.join(format!("{}.wav", u.id)), &samples, cfg.frontend.sample_rate)?;
            }
        }
    }
    Ok(())
}

/// Featurizes every `*.wav` in `wav_dir`. Files that fail are reported and
/// skipped; the command fails at the end if any did.
pub fn featurize_dir(cfg: &RunConfig, wav_dir: &Path) -> Result<()> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(wav_dir)
        .map_err(|e| io_err(wav_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    let mut failed = Vec::new();
    for path in &files {
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let result = (|| {
            let (samples, rate) = read_wav(path)?;
            if rate != cfg.frontend.sample_rate {
                return Err(Error::Input(format!(
                    "{}: sample rate {rate} Hz, expected {} Hz",
                    path.display(),
                    cfg.frontend.sample_rate
                )));
            }
            let fs = featurize(&samples, &cfg.frontend)?;
            save_features(&cfg.out.join(format!("{id}.feat")), &id, &fs)?;
            Ok(fs.num_frames())
        })();
        match result {
            Ok(frames) => println!("{id}\t{frames} frames"),
            Err(e) => {
                eprintln!("error: {e}");
                failed.push(path.display().to_string());
            }
        }
    }
    println!("featurized {} of {} files", files.len() - failed.len(), files.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Input(format!("failed to featurize: {}", failed.join(", "))))
    }
}

fn load_training_corpus(dir: &Path) -> Result<Corpus> {
    let corpus = load_corpus(dir)?;
    validate_tokens(&corpus)?;
    if corpus.is_empty() {
        return Err(Error::Input(format!("{}: corpus is empty", dir.display())));
    }
    Ok(corpus)
}

fn model_config_for(cfg: &RunConfig, corpus: &Corpus) -> ModelConfig {
    ModelConfig {
        vocab_size: corpus.vocab.len(),
        input_dim: corpus.utterances.first().map_or(cfg.model.input_dim, |u| u.features.dim()),
        ..cfg.model.clone()
    }
}

/// Trains into `out`, returning the final model and the path of the
/// checkpoint to decode with (best by dev loss when a dev set is given).
fn train_into(cfg: &RunConfig, corpus: &Corpus, dev: Option<&Corpus>, resume: Option<&Path>, out: &Path) -> Result<(Model, PathBuf)> {
    if let Some(dev) = dev {
        if dev.vocab != corpus.vocab {
            return Err(Error::VocabMismatch("train and dev corpora have different vocabularies".into()));
        }
    }
    let mut trainer = match resume {
        Some(path) => {
            // Only explicitly given training keys replace the stored ones.
            let t = Trainer::resume(path, &cfg.explicit)?;
            check_vocab(t.model(), path, &corpus.vocab)?;
            t
        }
        None => Trainer::from_scratch(model_config_for(cfg, corpus), cfg.train.clone())?,
    };
    save_vocab(&out.join("vocab.txt"), &corpus.vocab)?;
    let outcome = train(&mut trainer, &corpus.utterances, dev.map(|d| d.utterances.as_slice()), Some(out))?;
    let chosen = match &outcome.best {
        Some((path, loss)) => {
            println!("best dev loss {loss:.4} at {}", path.display());
            out.join("best.ckpt")
        }
        None => outcome.checkpoints.last().cloned().unwrap_or_else(|| out.join("final.ckpt")),
    };
    if !chosen.exists() {
        trainer.save(&chosen)?;
    }
    Ok((outcome.model, chosen))
}

pub fn train_cmd(cfg: &RunConfig, corpus_dir: &Path, dev_dir: Option<&Path>, resume: Option<&Path>) -> Result<()> {
    let corpus = load_training_corpus(corpus_dir)?;
    let dev = dev_dir.map(load_training_corpus).transpose()?;
    let (model, chosen) = train_into(cfg, &corpus, dev.as_ref(), resume, &cfg.out)?;
    let m = model.config();
    println!(
        "trained {} parameters (lambda={}, wait_k={}); checkpoint {}",
        model.num_parameters(),
        m.lambda_cross,
        m.wait_k,
        chosen.display()
    );
    Ok(())
}

/// The vocabulary saved next to a checkpoint must equal the corpus
/// vocabulary; without one, only the sizes are compared.
fn check_vocab(model: &Model, checkpoint: &Path, vocab: &duplex_core::Vocabulary) -> Result<()> {
    let saved = checkpoint.parent().map(|d| d.join("vocab.txt")).filter(|p| p.exists());
    if let Some(path) = saved {
        if &load_vocab(&path)? != vocab {
            return Err(Error::VocabMismatch(format!("{} differs from the corpus vocabulary", path.display())));
        }
    }
    if model.config().vocab_size != vocab.len() {
        return Err(Error::VocabMismatch(format!(
            "checkpoint has {} tokens, corpus vocabulary has {}",
            model.config().vocab_size,
            vocab.len()
        )));
    }
    Ok(())
}

fn decode_to(cfg: &RunConfig, model: &Model, corpus: &Corpus, greedy: bool, path: &Path) -> Result<EvalReport> {
    let beam = (!greedy).then_some(&cfg.beam);
    let decoded = decode_utterances(model, &corpus.utterances, beam)?;
    write(path, &render_decoded(&decoded, &corpus.vocab))?;
    score(&decoded, &corpus.utterances)
}

pub fn decode_cmd(cfg: &RunConfig, checkpoint: &Path, corpus_dir: &Path, greedy: bool) -> Result<()> {
    let model = load_model(checkpoint)?;
    let corpus = load_corpus(corpus_dir)?;
    check_vocab(&model, checkpoint, &corpus.vocab)?;
    if let Some(u) = corpus.utterances.iter().find(|u| u.features.dim() != model.config().input_dim) {
        return Err(Error::Input(format!(
            "{}: feature dim {} but the model expects {}",
            u.id,
            u.features.dim(),
            model.config().input_dim
        )));
    }
    let path = cfg.out.join("decode.tsv");
    decode_to(cfg, &model, &corpus, greedy, &path)?;
    println!("decoded {} utterances into {}", corpus.len(), path.display());
    Ok(())
}

pub fn eval_cmd(cfg: &RunConfig, decoded: &Path, corpus_dir: &Path) -> Result<()> {
    let corpus = load_corpus(corpus_dir)?;
    let text = std::fs::read_to_string(decoded).map_err(|e| io_err(decoded, e))?;
    let lines = parse_decoded(&text, &corpus.vocab).map_err(|e| Error::Input(format!("{}: {e}", decoded.display())))?;
    let mut by_id = std::collections::HashMap::new();
    for l in &lines {
        if by_id.insert(l.id.as_str(), l).is_some() {
            return Err(Error::Input(format!("{}: duplicate id {}", decoded.display(), l.id)));
        }
    }
    let missing: Vec<&str> = corpus.utterances.iter().map(|u| u.id.as_str()).filter(|id| !by_id.contains_key(id)).collect();
    if !missing.is_empty() {
        return Err(Error::Input(format!("{} lacks ids: {}", decoded.display(), missing.join(", "))));
    }
    if lines.len() != corpus.len() {
        let known: std::collections::HashSet<&str> = corpus.utterances.iter().map(|u| u.id.as_str()).collect();
        let extra: Vec<&str> = lines.iter().map(|l| l.id.as_str()).filter(|id| !known.contains(id)).collect();
        return Err(Error::Input(format!("ids not in the corpus: {}", extra.join(", "))));
    }
    let mut report = EvalReport::default();
    for u in &corpus.utterances {
        let l = by_id[u.id.as_str()];
        report.push(&u.id, &l.transcription, &u.transcription, &l.translation, &u.translation)?;
    }
    let path = cfg.out.join("report.tsv");
    write(&path, &report.render())?;
    println!("WER {:.2}%  BLEU {:.2}", 100.0 * report.wer(), report.bleu());
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Axis {
    Lambda,
    WaitK,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::Lambda => "lambda",
            Axis::WaitK => "wait_k",
        }
    }
}

/// Dev (WER, BLEU) of one sweep run.
type RunScore = Result<(f64, f64)>;

struct Cell {
    value: String,
    seed: u64,
    outcome: RunScore,
}

/// Trains and scores one model per (value, seed). A failed run marks its
/// cell failed without stopping the sweep.
#[allow(clippy::too_many_arguments)]
pub fn sweep_cmd(
    cfg: &RunConfig,
    axis: Axis,
    values: &[String],
    seeds: &[u64],
    corpus_dir: &Path,
    dev_dir: &Path,
    greedy: bool,
    jobs: usize,
) -> Result<()> {
    let mut runs = Vec::new();
    for v in values {
        let mut c = cfg.clone();
        match axis {
            Axis::Lambda => c.model.lambda_cross = v.parse().map_err(|_| Error::Config(format!("lambda value {v:?}")))?,
            Axis::WaitK => c.model.wait_k = v.parse().map_err(|_| Error::Config(format!("wait_k value {v:?}")))?,
        }
        // The vocabulary size comes from the corpus; check everything else now.
        ModelConfig { vocab_size: NUM_SPECIALS + 1, ..c.model.clone() }.validate()?;
        for &seed in seeds {
            let mut c = c.clone();
            c.train.seed = seed;
            c.out = cfg.out.join(format!("{}-{v}", axis.name())).join(format!("seed-{seed}"));
            runs.push((v.clone(), seed, c));
        }
    }
    if runs.is_empty() {
        return Err(Error::Config("sweep needs at least one value and one seed".into()));
    }
    let corpus = load_training_corpus(corpus_dir)?;
    let dev = load_training_corpus(dev_dir)?;

    let run_one = |c: &RunConfig| -> Result<(f64, f64)> {
        c.echo()?;
        // Decode with the selected checkpoint, exactly as `train` + `decode` would.
        let (_, chosen) = train_into(c, &corpus, Some(&dev), None, &c.out)?;
        let model = load_model(&chosen)?;
        let report = decode_to(c, &model, &dev, greedy, &c.out.join("decode.tsv"))?;
        write(&c.out.join("report.tsv"), &report.render())?;
        Ok((report.wer(), report.bleu()))
    };
    let results: Vec<Mutex<Option<RunScore>>> = runs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, runs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((v, seed, c)) = runs.get(i) else { break };
                let r = run_one(c);
                match &r {
                    Ok((w, b)) => println!("{}={v} seed={seed}: WER {:.2}% BLEU {b:.2}", axis.name(), 100.0 * w),
                    Err(e) => eprintln!("{}={v} seed={seed}: failed: {e}", axis.name()),
                }
                *results[i].lock().expect("result slot") = Some(r);
            });
        }
    });
    let cells: Vec<Cell> = runs
        .into_iter()
        .zip(results)
        .map(|((value, seed, _), r)| Cell { value, seed, outcome: r.into_inner().expect("result slot").expect("run finished") })
        .collect();

    let table = render_table(axis, values, &cells);
    print!("{table}");
    write(&cfg.out.join("sweep.tsv"), &table)?;
    let failed: Vec<String> =
        cells.iter().filter(|c| c.outcome.is_err()).map(|c| format!("{}={} seed={}", axis.name(), c.value, c.seed)).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Input(format!("failed runs: {}", failed.join(", "))))
    }
}

/// One row per value: mean WER (%) and BLEU over the seeds that finished.
fn render_table(axis: Axis, values: &[String], cells: &[Cell]) -> String {
    let mut out = format!("{}\tWER\tBLEU\truns\n", axis.name());
    for v in values {
        let ok: Vec<(f64, f64)> =
            cells.iter().filter(|c| &c.value == v).filter_map(|c| c.outcome.as_ref().ok().copied()).collect();
        let total = cells.iter().filter(|c| &c.value == v).count();
        if ok.is_empty() {
            let _ = writeln!(out, "{v}\tfailed\tfailed\t0/{total}");
            continue;
        }
        let n = ok.len() as f64;
        let wer = 100.0 * ok.iter().map(|r| r.0).sum::<f64>() / n;
        let bleu = ok.iter().map(|r| r.1).sum::<f64>() / n;
        let _ = writeln!(out, "{v}\t{wer:.2}\t{bleu:.2}\t{}/{total}", ok.len());
    }
    out
}
