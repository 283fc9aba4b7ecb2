//! Acoustic front end: log-Mel filterbanks, per-utterance mean/variance
//! normalization, and left-context frame stacking with downsampling.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"DPXFEAT\0";
pub const FEATURE_VERSION: u32 = 1;

/// Variance floor used by [`cmvn`].
pub const CMVN_VAR_FLOOR: f64 = 1e-8;

/// Time-major `T × D` feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    frames: Vec<f64>,
    num_frames: usize,
    dim: usize,
    pub frame_period_ms: f64,
    pub stacked: bool,
}

impl FeatureSequence {
    pub fn new(frames: Vec<f64>, dim: usize, frame_period_ms: f64, stacked: bool) -> Result<Self> {
        if dim == 0 || frames.is_empty() || !frames.len().is_multiple_of(dim) {
            return Err(Error::Input(format!(
                "{} values do not form frames of dimension {dim}",
                frames.len()
            )));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("feature frames contain non-finite values".into()));
        }
        let num_frames = frames.len() / dim;
        Ok(FeatureSequence { frames, num_frames, dim, frame_period_ms, stacked })
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames[t * self.dim..(t + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.frames
    }

    /// Rounds every value to the nearest `f32`, the precision of feature files.
    pub fn quantize_f32(mut self) -> Self {
        self.frames.iter_mut().for_each(|v| *v = *v as f32 as f64);
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub num_stack: usize,
    pub downsample_factor: usize,
    pub log_floor: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            sample_rate: 16_000,
            window_ms: 25.0,
            hop_ms: 10.0,
            n_mels: 80,
            num_stack: 4,
            downsample_factor: 3,
            log_floor: 1e-10,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_ms > self.hop_ms && self.hop_ms > 0.0) {
            return Err(Error::Config(format!(
                "need window_ms > hop_ms > 0, got {} / {}",
                self.window_ms, self.hop_ms
            )));
        }
        if self.n_mels == 0 || self.num_stack == 0 || self.downsample_factor == 0 {
            return Err(Error::Config("n_mels, num_stack and downsample_factor must be ≥ 1".into()));
        }
        if self.sample_rate == 0 || self.log_floor <= 0.0 {
            return Err(Error::Config("sample_rate and log_floor must be positive".into()));
        }
        Ok(())
    }

    pub fn window_samples(&self) -> usize {
        (self.sample_rate as f64 * self.window_ms / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.sample_rate as f64 * self.hop_ms / 1000.0).round() as usize
    }

    pub fn fft_size(&self) -> usize {
        self.window_samples().next_power_of_two()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Center frequencies (Hz) of the triangular filters, evenly spaced on the
/// Mel scale between 0 Hz and Nyquist.
pub fn mel_centers(cfg: &FrontendConfig) -> Vec<f64> {
    let edges = mel_edges(cfg);
    edges[1..=cfg.n_mels].to_vec()
}

fn mel_edges(cfg: &FrontendConfig) -> Vec<f64> {
    let top = hz_to_mel(cfg.sample_rate as f64 / 2.0);
    (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// `n_mels × (fft_size/2 + 1)` triangular weights with unit peak.
pub fn mel_filterbank(cfg: &FrontendConfig) -> Vec<Vec<f64>> {
    let n_fft = cfg.fft_size();
    let n_bins = n_fft / 2 + 1;
    let edges = mel_edges(cfg);
    let bin_hz = cfg.sample_rate as f64 / n_fft as f64;
    (0..cfg.n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()).collect()
}

/// Number of full analysis windows in `len` samples.
pub fn num_windows(len: usize, cfg: &FrontendConfig) -> usize {
    let (win, hop) = (cfg.window_samples(), cfg.hop_samples());
    if len < win {
        0
    } else {
        1 + (len - win) / hop
    }
}

/// Natural-log Mel filterbank energies, one frame per `hop_ms`.
pub fn log_mel(waveform: &[f64], cfg: &FrontendConfig) -> Result<FeatureSequence> {
    cfg.validate()?;
    let win = cfg.window_samples();
    let hop = cfg.hop_samples();
    if waveform.len() < win {
        return Err(Error::Input(format!(
            "waveform of {} samples is shorter than one {win}-sample window",
            waveform.len()
        )));
    }
    if waveform.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("waveform contains non-finite samples".into()));
    }
    let n_fft = cfg.fft_size();
    let n_bins = n_fft / 2 + 1;
    let window = hann(win);
    let bank = mel_filterbank(cfg);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let frames = num_windows(waveform.len(), cfg);
    let mut out = Vec::with_capacity(frames * cfg.n_mels);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut power = vec![0.0; n_bins];
    for t in 0..frames {
        let start = t * hop;
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for i in 0..win {
            buf[i].re = waveform[start + i] * window[i];
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for filt in &bank {
            let energy: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
            out.push(energy.max(cfg.log_floor).ln());
        }
    }
    FeatureSequence::new(out, cfg.n_mels, cfg.hop_ms, false)
}

/// Per-utterance, per-dimension mean and variance normalization.
pub fn cmvn(fs: &FeatureSequence) -> Result<FeatureSequence> {
    let (t, d) = (fs.num_frames, fs.dim);
    if t < 2 {
        return Err(Error::Input(format!("cmvn needs at least 2 frames, got {t}")));
    }
    let mut mean = vec![0.0; d];
    for row in fs.frames.chunks(d) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= t as f64);
    let mut var = vec![0.0; d];
    for row in fs.frames.chunks(d) {
        for j in 0..d {
            var[j] += (row[j] - mean[j]).powi(2);
        }
    }
    let inv_std: Vec<f64> =
        var.iter().map(|v| 1.0 / (v / t as f64).max(CMVN_VAR_FLOOR).sqrt()).collect();
    let mut out = fs.frames.clone();
    for row in out.chunks_mut(d) {
        for j in 0..d {
            row[j] = (row[j] - mean[j]) * inv_std[j];
        }
    }
    FeatureSequence::new(out, d, fs.frame_period_ms, fs.stacked)
}

/// Concatenates each kept frame with its `num_stack - 1` left neighbours
/// (oldest first, frame 0 repeated as left padding) and keeps every
/// `factor`-th frame starting from frame 0.
pub fn stack_downsample(fs: &FeatureSequence, num_stack: usize, factor: usize) -> Result<FeatureSequence> {
    if fs.stacked {
        return Err(Error::Input("feature sequence is already stacked".into()));
    }
    if num_stack == 0 || factor == 0 {
        return Err(Error::Input("num_stack and factor must be ≥ 1".into()));
    }
    let d = fs.dim;
    let kept = fs.num_frames.div_ceil(factor);
    let mut out = Vec::with_capacity(kept * d * num_stack);
    for o in 0..kept {
        let t = o * factor;
        for back in (0..num_stack).rev() {
            let src = t.saturating_sub(back);
            out.extend_from_slice(fs.frame(src));
        }
    }
    FeatureSequence::new(out, d * num_stack, fs.frame_period_ms * factor as f64, true)
}

/// Full pipeline used for real audio: log-Mel, CMVN, stacking.
pub fn featurize(waveform: &[f64], cfg: &FrontendConfig) -> Result<FeatureSequence> {
    let mel = log_mel(waveform, cfg)?;
    let normed = if mel.num_frames() >= 2 { cmvn(&mel)? } else { mel };
    stack_downsample(&normed, cfg.num_stack, cfg.downsample_factor)
}

/// Mono 16-bit PCM samples scaled to [-1, 1), plus the header sample rate.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let reader = hound::WavReader::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::format(path, format!("expected mono audio, found {} channels", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::format(
            path,
            format!("expected 16-bit PCM, found {:?} {}-bit", spec.sample_format, spec.bits_per_sample),
        ));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok((samples, spec.sample_rate))
}

pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| Error::format(path, e.to_string()))?;
    for &s in samples {
        let v = (s * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        w.write_sample(v).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.finalize().map_err(|e| Error::format(path, e.to_string()))
}

/// Feature file: magic, version, utterance id, `T`, `D`, frame period (ms,
/// f32), stacked flag (u8), then `T·D` little-endian f32 values row-major.
pub fn encode_features(id: &str, fs: &FeatureSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + id.len() + fs.frames.len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(id.len() as u32).to_le_bytes());
    out.extend_from_slice(id.as_bytes());
    out.extend_from_slice(&(fs.num_frames as u32).to_le_bytes());
    out.extend_from_slice(&(fs.dim as u32).to_le_bytes());
    out.extend_from_slice(&(fs.frame_period_ms as f32).to_le_bytes());
    out.push(fs.stacked as u8);
    for &v in &fs.frames {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<(String, FeatureSequence)> {
    let bad = |msg: &str| Error::format(path, msg.to_string());
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if bytes.len() - pos < n {
            return Err(bad("truncated feature file"));
        }
        pos += n;
        Ok(&bytes[pos - n..pos])
    };
    if take(8)? != FEATURE_MAGIC {
        return Err(bad("not a feature file (bad magic)"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().expect("4"));
    if version != FEATURE_VERSION {
        return Err(Error::format(path, format!("unsupported feature file version {version}")));
    }
    let id_len = u32::from_le_bytes(take(4)?.try_into().expect("4")) as usize;
    let id = std::str::from_utf8(take(id_len)?).map_err(|_| bad("utterance id is not UTF-8"))?.to_owned();
    let t = u32::from_le_bytes(take(4)?.try_into().expect("4")) as usize;
    let d = u32::from_le_bytes(take(4)?.try_into().expect("4")) as usize;
    let period = f32::from_le_bytes(take(4)?.try_into().expect("4")) as f64;
    let stacked = match take(1)?[0] {
        0 => false,
        1 => true,
        _ => return Err(bad("invalid stacked flag")),
    };
    let payload = take(t * d * 4)?;
    let frames = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4")) as f64)
        .collect();
    if pos != bytes.len() {
        return Err(bad("trailing bytes after feature payload"));
    }
    let fs = FeatureSequence::new(frames, d, period, stacked).map_err(|e| Error::format(path, e.to_string()))?;
    Ok((id, fs))
}

pub fn save_features(path: &Path, id: &str, fs: &FeatureSequence) -> Result<()> {
    fs::write(path, encode_features(id, fs)).map_err(|e| Error::io(path, e))
}

pub fn load_features(path: &Path) -> Result<(String, FeatureSequence)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, secs: f64, sr: u32, amp: f64) -> Vec<f64> {
        let n = (secs * sr as f64) as usize;
        (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / sr as f64).sin()).collect()
    }

    #[test]
    fn silence_maps_to_log_floor() {
        let cfg = FrontendConfig::default();
        let fs = log_mel(&vec![0.0; 4000], &cfg).unwrap();
        let floor = cfg.log_floor.ln();
        assert!(fs.data().iter().all(|&v| v == floor));
        assert_eq!(fs.frame_period_ms, 10.0);
    }

    #[test]
    fn window_count_for_one_second() {
        let cfg = FrontendConfig::default();
        assert_eq!(num_windows(16_000, &cfg), 98);
        let fs = log_mel(&vec![0.1; 16_000], &cfg).unwrap();
        assert_eq!(fs.num_frames(), 98);
    }

    #[test]
    fn tone_peaks_at_nearest_center() {
        let cfg = FrontendConfig::default();
        let centers = mel_centers(&cfg);
        let nearest = centers
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 440.0).abs().partial_cmp(&(b.1 - 440.0).abs()).unwrap())
            .unwrap()
            .0;
        let fs = log_mel(&tone(440.0, 0.5, 16_000, 0.5), &cfg).unwrap();
        for t in 0..fs.num_frames() {
            let row = fs.frame(t);
            let argmax = (0..row.len()).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap();
            assert_eq!(argmax, nearest, "frame {t}");
        }
    }

    #[test]
    fn scaling_shifts_log_energy() {
        let cfg = FrontendConfig::default();
        let x = tone(1000.0, 0.2, 16_000, 0.1);
        let y: Vec<f64> = x.iter().map(|v| v * 3.0).collect();
        let (a, b) = (log_mel(&x, &cfg).unwrap(), log_mel(&y, &cfg).unwrap());
        let floor = cfg.log_floor.ln();
        for (p, q) in a.data().iter().zip(b.data()) {
            if *p > floor + 1.0 {
                assert!((q - p - 2.0 * 3f64.ln()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn concatenated_waveforms_concatenate_frames() {
        let cfg = FrontendConfig::default();
        // Segment lengths that are whole multiples of the hop keep frame grids aligned.
        let a = tone(300.0, 0.1, 16_000, 0.3);
        let b = tone(2000.0, 0.1, 16_000, 0.2);
        let joined: Vec<f64> = a.iter().chain(&b).copied().collect();
        let (fa, fb, fj) = (
            log_mel(&a, &cfg).unwrap(),
            log_mel(&b, &cfg).unwrap(),
            log_mel(&joined, &cfg).unwrap(),
        );
        let hop = cfg.hop_samples();
        let offset = a.len() / hop;
        for t in 0..fa.num_frames() {
            assert_eq!(fa.frame(t), fj.frame(t));
        }
        for t in 0..fb.num_frames() {
            let diff: f64 = fb.frame(t).iter().zip(fj.frame(t + offset)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-9, "frame {t} differs by {diff}");
        }
        // Only the windows straddling the seam are new.
        assert_eq!(fj.num_frames() - fa.num_frames() - fb.num_frames(), offset - fa.num_frames());
    }

    #[test]
    fn log_mel_rejects_short_input() {
        let cfg = FrontendConfig::default();
        assert!(matches!(log_mel(&[0.0; 399], &cfg), Err(Error::Input(_))));
    }

    #[test]
    fn cmvn_normalizes_and_is_idempotent() {
        let frames: Vec<f64> = (0..30).map(|i| ((i * 37 % 11) as f64) * 0.7 - 2.0).collect();
        let mut with_const = Vec::new();
        for row in frames.chunks(3) {
            with_const.extend_from_slice(row);
            with_const.push(5.0);
        }
        let fs = FeatureSequence::new(with_const, 4, 10.0, false).unwrap();
        let once = cmvn(&fs).unwrap();
        for j in 0..4 {
            let col: Vec<f64> = (0..once.num_frames()).map(|t| once.frame(t)[j]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 1e-9);
            if j == 3 {
                assert!(col.iter().all(|&v| v == 0.0));
            } else {
                assert!((var - 1.0).abs() < 1e-6);
            }
        }
        let twice = cmvn(&once).unwrap();
        assert!(once.data().iter().zip(twice.data()).all(|(a, b)| (a - b).abs() < 1e-9));
        let one = FeatureSequence::new(vec![1.0, 2.0], 2, 10.0, false).unwrap();
        assert!(matches!(cmvn(&one), Err(Error::Input(_))));
    }

    #[test]
    fn stacking_examples() {
        let single = FeatureSequence::new(vec![1.0, 2.0], 2, 10.0, false).unwrap();
        let s = stack_downsample(&single, 4, 3).unwrap();
        assert_eq!(s.num_frames(), 1);
        assert_eq!(s.data(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(s.stacked);
        assert_eq!(s.frame_period_ms, 30.0);

        let nine = FeatureSequence::new((0..9).map(f64::from).collect(), 1, 10.0, false).unwrap();
        let s = stack_downsample(&nine, 4, 3).unwrap();
        assert_eq!(s.num_frames(), 3);
        assert_eq!(s.data(), &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 3.0, 4.0, 5.0, 6.0]);

        let id = stack_downsample(&nine, 1, 1).unwrap();
        assert_eq!(id.data(), nine.data());
        assert!(stack_downsample(&s, 4, 3).is_err());
    }

    #[test]
    fn feature_file_round_trip() {
        let fs = FeatureSequence::new(vec![0.5, -1.25, 3.0, 4.0], 2, 30.0, true).unwrap();
        let bytes = encode_features("utt-1", &fs);
        let (id, back) = decode_features(&bytes, Path::new("f")).unwrap();
        assert_eq!(id, "utt-1");
        assert_eq!(back, fs);
        assert!(decode_features(&bytes[..bytes.len() - 1], Path::new("f")).is_err());
    }
}
