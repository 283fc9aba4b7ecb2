//! Resolved run settings: defaults, then the `--config` file, then flags.

use std::path::{Path, PathBuf};

use duplex_core::kv::KvMap;
use duplex_core::toy_data::{ToySpec, TranslationRule};
use duplex_core::{BeamConfig, Error, FrontendConfig, ModelConfig, Result, TrainConfig};

const MODEL_KEYS: &[&str] = &[
    "n_layers", "d_model", "n_heads", "d_ff", "dropout", "lambda", "wait_k", "max_positions", "vocab_size", "input_dim",
    "ln_eps",
];
const TRAIN_KEYS: &[&str] = &[
    "batch_size", "steps", "lr_scale", "warmup_steps", "adam_beta1", "adam_beta2", "adam_eps", "seed",
    "checkpoint_every", "bucket_batches",
];
const BEAM_KEYS: &[&str] = &["beam_size", "max_len", "length_penalty"];
const DATA_KEYS: &[&str] = &[
    "data.vocab_size", "data.min_len", "data.max_len", "data.frames_per_token", "data.feature_dim", "data.noise_std",
    "data.translation_rule", "data.ambiguity_pairs", "data.seed", "data.train_size", "data.dev_size", "data.test_size",
];
const FRONTEND_KEYS: &[&str] = &[
    "frontend.sample_rate", "frontend.window_ms", "frontend.hop_ms", "frontend.n_mels", "frontend.num_stack",
    "frontend.downsample_factor", "frontend.log_floor",
];

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub beam: BeamConfig,
    pub data: ToySpec,
    pub frontend: FrontendConfig,
    pub split_sizes: [(&'static str, usize); 3],
    pub out: PathBuf,
    /// Keys set by the config file or flags, before defaults.
    pub explicit: KvMap,
}

impl RunConfig {
    /// Applies the config file (if any), then `overrides` in order. `seed`
    /// sets both the data and the training seed.
    pub fn resolve(file: Option<&Path>, overrides: &[KvMap], seed: Option<u64>, out: &Path) -> Result<Self> {
        let mut kv = KvMap::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            kv = KvMap::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        }
        for o in overrides {
            kv.merge(o);
        }
        if let Some(s) = seed {
            kv.set("seed", s);
            kv.set("data.seed", s);
        }
        let known = [MODEL_KEYS, TRAIN_KEYS, BEAM_KEYS, DATA_KEYS, FRONTEND_KEYS].concat();
        if let Some(bad) = kv.keys().find(|k| !known.contains(k)) {
            return Err(Error::Config(format!("unknown config key {bad:?}")));
        }

        let mut cfg = RunConfig {
            model: ModelConfig::toy(0),
            train: TrainConfig::default(),
            beam: BeamConfig::default(),
            data: ToySpec::default(),
            frontend: FrontendConfig::default(),
            split_sizes: [("train", 5000), ("dev", 500), ("test", 500)],
            out: out.to_path_buf(),
            explicit: kv.clone(),
        };
        cfg.model.read_kv(&kv)?;
        cfg.train.read_kv(&kv)?;
        kv.read_into("beam_size", &mut cfg.beam.beam_size)?;
        kv.read_into("length_penalty", &mut cfg.beam.length_penalty)?;
        if let Some(v) = kv.get("max_len") {
            cfg.beam.max_len = if v == "auto" { None } else { Some(kv.get_parsed("max_len")?.unwrap_or_default()) };
        }

        let d = &mut cfg.data;
        kv.read_into("data.vocab_size", &mut d.vocab_size)?;
        kv.read_into("data.min_len", &mut d.min_len)?;
        kv.read_into("data.max_len", &mut d.max_len)?;
        kv.read_into("data.frames_per_token", &mut d.frames_per_token)?;
        kv.read_into("data.feature_dim", &mut d.feature_dim)?;
        kv.read_into("data.noise_std", &mut d.noise_std)?;
        kv.read_into::<TranslationRule>("data.translation_rule", &mut d.translation_rule)?;
        kv.read_into("data.seed", &mut d.seed)?;
        match kv.get("data.ambiguity_pairs") {
            Some(v) => d.ambiguity_pairs = parse_pairs(v)?,
            // Default pairs that do not fit a smaller vocabulary are dropped.
            None => d.ambiguity_pairs.retain(|&(a, b)| a.max(b) < d.vocab_size),
        }
        for (i, key) in ["data.train_size", "data.dev_size", "data.test_size"].into_iter().enumerate() {
            kv.read_into(key, &mut cfg.split_sizes[i].1)?;
        }

        let f = &mut cfg.frontend;
        kv.read_into("frontend.sample_rate", &mut f.sample_rate)?;
        kv.read_into("frontend.window_ms", &mut f.window_ms)?;
        kv.read_into("frontend.hop_ms", &mut f.hop_ms)?;
        kv.read_into("frontend.n_mels", &mut f.n_mels)?;
        kv.read_into("frontend.num_stack", &mut f.num_stack)?;
        kv.read_into("frontend.downsample_factor", &mut f.downsample_factor)?;
        kv.read_into("frontend.log_floor", &mut f.log_floor)?;
        // The toy generator stacks frames the same way real audio is stacked.
        cfg.data.num_stack = cfg.frontend.num_stack;
        cfg.data.downsample_factor = cfg.frontend.downsample_factor;
        cfg.train.validate()?;
        cfg.frontend.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        self.model.write_kv(&mut kv);
        self.train.write_kv(&mut kv);
        kv.set("beam_size", self.beam.beam_size);
        kv.set("max_len", self.beam.max_len.map_or("auto".to_string(), |m| m.to_string()));
        kv.set("length_penalty", self.beam.length_penalty);
        let d = &self.data;
        kv.set("data.vocab_size", d.vocab_size);
        kv.set("data.min_len", d.min_len);
        kv.set("data.max_len", d.max_len);
        kv.set("data.frames_per_token", d.frames_per_token);
        kv.set("data.feature_dim", d.feature_dim);
        kv.set("data.noise_std", d.noise_std);
        kv.set("data.translation_rule", d.translation_rule);
        kv.set("data.ambiguity_pairs", render_pairs(&d.ambiguity_pairs));
        kv.set("data.seed", d.seed);
        for (name, n) in self.split_sizes {
            kv.set(&format!("data.{name}_size"), n);
        }
        let f = &self.frontend;
        kv.set("frontend.sample_rate", f.sample_rate);
        kv.set("frontend.window_ms", f.window_ms);
        kv.set("frontend.hop_ms", f.hop_ms);
        kv.set("frontend.n_mels", f.n_mels);
        kv.set("frontend.num_stack", f.num_stack);
        kv.set("frontend.downsample_factor", f.downsample_factor);
        kv.set("frontend.log_floor", f.log_floor);
        kv
    }

    /// Writes the resolved settings to `<out>/config.txt`.
    pub fn echo(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::Config(format!("{}: {e}", self.out.display())))?;
        let path = self.out.join("config.txt");
        std::fs::write(&path, self.to_kv().to_string()).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// `"0-1,2-3"` → `[(0, 1), (2, 3)]`; `"none"` or empty → no pairs.
fn parse_pairs(v: &str) -> Result<Vec<(usize, usize)>> {
    if v.is_empty() || v == "none" {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|p| {
            let bad = || Error::Config(format!("data.ambiguity_pairs: expected a-b, got {p:?}"));
            let (a, b) = p.trim().split_once('-').ok_or_else(bad)?;
            Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
        })
        .collect()
}

fn render_pairs(pairs: &[(usize, usize)]) -> String {
    if pairs.is_empty() {
        return "none".into();
    }
    pairs.iter().map(|(a, b)| format!("{a}-{b}")).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        std::fs::write(&file, "lambda=0.5\nsteps=10\nseed=4\n").unwrap();
        let over = KvMap::parse("steps=20").unwrap();
        let cfg = RunConfig::resolve(Some(&file), &[over], Some(9), dir.path()).unwrap();
        assert_eq!(cfg.model.lambda_cross, 0.5);
        assert_eq!(cfg.train.steps, 20);
        assert_eq!((cfg.train.seed, cfg.data.seed), (9, 9));
    }

    #[test]
    fn resolved_config_round_trips() {
        let over = KvMap::parse("data.ambiguity_pairs=0-3,4-5\nmax_len=17\ndata.translation_rule=MAP_REVERSE").unwrap();
        let cfg = RunConfig::resolve(None, &[over], None, Path::new("x")).unwrap();
        let again = RunConfig::resolve(None, &[cfg.to_kv()], None, Path::new("x")).unwrap();
        assert_eq!(again.to_kv(), cfg.to_kv());
        assert_eq!(again.data.ambiguity_pairs, vec![(0, 3), (4, 5)]);
        assert_eq!(again.beam.max_len, Some(17));
    }

    #[test]
    fn unknown_key_is_named() {
        let over = KvMap::parse("lamda=0.3").unwrap();
        let err = RunConfig::resolve(None, &[over], None, Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("lamda"));
    }
}
