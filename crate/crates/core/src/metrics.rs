//! Token-level WER and corpus BLEU.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const BLEU_MAX_N: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EditOp {
    Match,
    Substitute,
    Insert,
    Delete,
}

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(hyp: &[T], reference: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=reference.len()).collect();
    let mut cur = vec![0; reference.len() + 1];
    for (i, h) in hyp.iter().enumerate() {
        cur[0] = i + 1;
        for (j, r) in reference.iter().enumerate() {
            let sub = prev[j] + usize::from(h != r);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[reference.len()]
}

/// Minimum-cost alignment turning `reference` into `hyp`. On cost ties a
/// substitution (or match) is preferred over an insertion over a deletion.
pub fn align<T: PartialEq>(hyp: &[T], reference: &[T]) -> Vec<EditOp> {
    let (n, m) = (hyp.len(), reference.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(hyp[i - 1] != reference[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let (mut i, mut j) = (n, m);
    let mut ops = Vec::with_capacity(n.max(m));
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = hyp[i - 1] == reference[j - 1];
            if d[i][j] == d[i - 1][j - 1] + usize::from(!same) {
                ops.push(if same { EditOp::Match } else { EditOp::Substitute });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            ops.push(EditOp::Insert);
            i -= 1;
        } else {
            ops.push(EditOp::Delete);
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

/// Edit distance divided by the reference length.
pub fn wer<T: PartialEq>(hyp: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Input("WER needs a non-empty reference".into()));
    }
    Ok(edit_distance(hyp, reference) as f64 / reference.len() as f64)
}

/// Sufficient statistics for corpus BLEU of one hypothesis/reference pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; BLEU_MAX_N],
    pub totals: [usize; BLEU_MAX_N],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn new<T: Ord>(hyp: &[T], reference: &[T]) -> Self {
        let mut s = BleuStats { hyp_len: hyp.len(), ref_len: reference.len(), ..Default::default() };
        for n in 1..=BLEU_MAX_N {
            if hyp.len() < n {
                continue;
            }
            let mut ref_grams: Vec<&[T]> = reference.windows(n).collect();
            ref_grams.sort();
            let mut hyp_grams: Vec<&[T]> = hyp.windows(n).collect();
            hyp_grams.sort();
            s.totals[n - 1] = hyp_grams.len();
            // Clipped matches via a merge of the two sorted n-gram lists.
            let (mut a, mut b) = (0, 0);
            while a < hyp_grams.len() && b < ref_grams.len() {
                match hyp_grams[a].cmp(ref_grams[b]) {
                    std::cmp::Ordering::Less => a += 1,
                    std::cmp::Ordering::Greater => b += 1,
                    std::cmp::Ordering::Equal => {
                        s.matches[n - 1] += 1;
                        a += 1;
                        b += 1;
                    }
                }
            }
        }
        s
    }

    pub fn add(&mut self, other: &BleuStats) {
        for n in 0..BLEU_MAX_N {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    /// BLEU in [0, 100] without smoothing.
    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 || self.matches.contains(&0) {
            return 0.0;
        }
        let log_p: f64 = (0..BLEU_MAX_N)
            .map(|n| (self.matches[n] as f64 / self.totals[n] as f64).ln())
            .sum::<f64>()
            / BLEU_MAX_N as f64;
        let bp = if self.hyp_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        } else {
            1.0
        };
        100.0 * bp * log_p.exp()
    }
}

/// Corpus BLEU over paired hypotheses and single references.
pub fn bleu<T: Ord>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::Input(format!("{} hypotheses for {} references", hyps.len(), refs.len())));
    }
    let mut total = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total.add(&BleuStats::new(h, r));
    }
    Ok(total.score())
}

#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceScore {
    pub id: String,
    pub edits: usize,
    pub ref_len: usize,
    pub bleu: BleuStats,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub utterances: Vec<UtteranceScore>,
}

impl EvalReport {
    pub fn push<T: PartialEq + Ord>(
        &mut self,
        id: &str,
        hyp_transcription: &[T],
        ref_transcription: &[T],
        hyp_translation: &[T],
        ref_translation: &[T],
    ) -> Result<()> {
        if ref_transcription.is_empty() {
            return Err(Error::Input(format!("{id}: empty reference transcription")));
        }
        self.utterances.push(UtteranceScore {
            id: id.to_owned(),
            edits: edit_distance(hyp_transcription, ref_transcription),
            ref_len: ref_transcription.len(),
            bleu: BleuStats::new(hyp_translation, ref_translation),
        });
        Ok(())
    }

    pub fn total_edits(&self) -> usize {
        self.utterances.iter().map(|u| u.edits).sum()
    }

    pub fn total_ref_len(&self) -> usize {
        self.utterances.iter().map(|u| u.ref_len).sum()
    }

    /// Corpus WER: summed distances over summed reference lengths.
    pub fn wer(&self) -> f64 {
        let r = self.total_ref_len();
        if r == 0 {
            0.0
        } else {
            self.total_edits() as f64 / r as f64
        }
    }

    pub fn bleu_stats(&self) -> BleuStats {
        let mut s = BleuStats::default();
        for u in &self.utterances {
            s.add(&u.bleu);
        }
        s
    }

    pub fn bleu(&self) -> f64 {
        self.bleu_stats().score()
    }

    /// Summary line followed by one tab-separated line per utterance:
    /// `utt id edits ref_len hyp_len bleu_ref_len m1 t1 m2 t2 m3 t3 m4 t4`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# WER {:.6} ({} / {})  BLEU {:.4}  utterances {}",
            self.wer(),
            self.total_edits(),
            self.total_ref_len(),
            self.bleu(),
            self.utterances.len()
        );
        for u in &self.utterances {
            let _ = write!(
                out,
                "utt\t{}\t{}\t{}\t{}\t{}",
                u.id, u.edits, u.ref_len, u.bleu.hyp_len, u.bleu.ref_len
            );
            for n in 0..BLEU_MAX_N {
                let _ = write!(out, "\t{}\t{}", u.bleu.matches[n], u.bleu.totals[n]);
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<EvalReport> {
        let mut report = EvalReport::default();
        for (n, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Input(format!("report line {}: {line:?}", n + 1));
            if f.len() != 6 + 2 * BLEU_MAX_N || f[0] != "utt" {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
            let mut bleu = BleuStats { hyp_len: num(f[4])?, ref_len: num(f[5])?, ..Default::default() };
            for k in 0..BLEU_MAX_N {
                bleu.matches[k] = num(f[6 + 2 * k])?;
                bleu.totals[k] = num(f[7 + 2 * k])?;
            }
            report.utterances.push(UtteranceScore {
                id: f[1].to_owned(),
                edits: num(f[2])?,
                ref_len: num(f[3])?,
                bleu,
            });
        }
        Ok(report)
    }
}
