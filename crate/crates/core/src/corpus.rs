//! Triplet corpora and their on-disk layout:
//!
//! ```text
//! <dir>/vocab.txt          one token per line, line number = id
//! <dir>/manifest.tsv       id, frames, dim, transcription length, translation length
//! <dir>/transcription.txt  one utterance per line, space-separated tokens
//! <dir>/translation.txt    same, for the translation stream
//! <dir>/feats/<id>.feat    one feature file per utterance
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::frontend::{self, FeatureSequence};
use crate::vocab::{is_special, TokenId, Vocabulary};

const MANIFEST_HEADER: &str = "#id\tframes\tdim\ttranscription_len\ttranslation_len";

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub features: FeatureSequence,
    pub transcription: Vec<TokenId>,
    pub translation: Vec<TokenId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub utterances: Vec<Utterance>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusStats {
    pub utterances: usize,
    pub transcription_lengths: BTreeMap<usize, usize>,
    pub token_counts: BTreeMap<TokenId, usize>,
    pub total_frames: usize,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn stats(&self) -> CorpusStats {
        let mut s = CorpusStats { utterances: self.len(), ..Default::default() };
        for u in &self.utterances {
            *s.transcription_lengths.entry(u.transcription.len()).or_default() += 1;
            for &t in u.transcription.iter().chain(&u.translation) {
                *s.token_counts.entry(t).or_default() += 1;
            }
            s.total_frames += u.features.num_frames();
        }
        s
    }
}

impl std::fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "utterances: {}", self.utterances)?;
        writeln!(f, "frames: {}", self.total_frames)?;
        writeln!(f, "distinct tokens: {}", self.token_counts.len())?;
        write!(f, "transcription lengths:")?;
        for (len, n) in &self.transcription_lengths {
            write!(f, " {len}:{n}")?;
        }
        writeln!(f)
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn feature_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("feats").join(format!("{id}.feat"))
}

pub fn save_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut text = String::new();
    for t in vocab.tokens() {
        text.push_str(t);
        text.push('\n');
    }
    write_file(path, &text)
}

pub fn load_vocab(path: &Path) -> Result<Vocabulary> {
    let text = read_file(path)?;
    Vocabulary::from_tokens(text.lines()).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("feats")).map_err(|e| Error::io(dir, e))?;
    save_vocab(&dir.join("vocab.txt"), &corpus.vocab)?;
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    let mut rec = String::new();
    let mut tr = String::new();
    for u in &corpus.utterances {
        if u.id.is_empty() || u.id.contains(['\t', '\n', '/', '\\']) {
            return Err(Error::Input(format!("utterance id {:?} is not file-name safe", u.id)));
        }
        manifest.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            u.id,
            u.features.num_frames(),
            u.features.dim(),
            u.transcription.len(),
            u.translation.len()
        ));
        rec.push_str(&corpus.vocab.decode(&u.transcription));
        rec.push('\n');
        tr.push_str(&corpus.vocab.decode(&u.translation));
        tr.push('\n');
        frontend::save_features(&feature_path(dir, &u.id), &u.id, &u.features)?;
    }
    write_file(&dir.join("manifest.tsv"), &manifest)?;
    write_file(&dir.join("transcription.txt"), &rec)?;
    write_file(&dir.join("translation.txt"), &tr)
}

struct ManifestRow {
    id: String,
    frames: usize,
    dim: usize,
    rec_len: usize,
    tr_len: usize,
}

fn parse_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = read_file(path)?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let corrupt = || Error::format(path, format!("corrupt manifest line {}: {line:?}", n + 1));
        if f.len() != 5 {
            return Err(corrupt());
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| corrupt());
        rows.push(ManifestRow {
            id: f[0].to_owned(),
            frames: num(f[1])?,
            dim: num(f[2])?,
            rec_len: num(f[3])?,
            tr_len: num(f[4])?,
        });
    }
    Ok(rows)
}

fn parse_token_lines(path: &Path, vocab: &Vocabulary, expected: usize) -> Result<Vec<Vec<TokenId>>> {
    let text = read_file(path)?;
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() != expected {
        return Err(Error::format(
            path,
            format!("{} lines, manifest lists {expected} utterances", lines.len()),
        ));
    }
    lines
        .iter()
        .enumerate()
        .map(|(n, l)| {
            vocab
                .encode(l)
                .map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))
        })
        .collect()
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let vocab = load_vocab(&dir.join("vocab.txt"))?;
    let manifest_path = dir.join("manifest.tsv");
    let rows = parse_manifest(&manifest_path)?;
    let rec_path = dir.join("transcription.txt");
    let tr_path = dir.join("translation.txt");
    let recs = parse_token_lines(&rec_path, &vocab, rows.len())?;
    let trs = parse_token_lines(&tr_path, &vocab, rows.len())?;
    let mut utterances = Vec::with_capacity(rows.len());
    for ((row, transcription), translation) in rows.into_iter().zip(recs).zip(trs) {
        let fpath = feature_path(dir, &row.id);
        let (id, features) = frontend::load_features(&fpath)?;
        if id != row.id {
            return Err(Error::format(&fpath, format!("holds utterance {id}, manifest expects {}", row.id)));
        }
        if features.num_frames() != row.frames || features.dim() != row.dim {
            return Err(Error::format(
                &manifest_path,
                format!(
                    "corrupt manifest: {} lists {}x{} frames, feature file has {}x{}",
                    row.id,
                    row.frames,
                    row.dim,
                    features.num_frames(),
                    features.dim()
                ),
            ));
        }
        if transcription.len() != row.rec_len || translation.len() != row.tr_len {
            return Err(Error::format(
                &manifest_path,
                format!("corrupt manifest: token counts for {} disagree with text files", row.id),
            ));
        }
        utterances.push(Utterance { id, features, transcription, translation });
    }
    Ok(Corpus { vocab, utterances })
}

/// Fails if any token sequence is empty or contains a special token.
pub fn validate_tokens(corpus: &Corpus) -> Result<()> {
    for u in &corpus.utterances {
        for (name, seq) in [("transcription", &u.transcription), ("translation", &u.translation)] {
            if seq.is_empty() {
                return Err(Error::Input(format!("{}: empty {name}", u.id)));
            }
            if seq.iter().any(|&t| is_special(t)) {
                return Err(Error::Input(format!("{}: {name} contains a special token", u.id)));
            }
        }
    }
    Ok(())
}
