use crate::error::{Error, Result};
use crate::kv::KvMap;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    /// Weight of the partner stream in the interactive sub-layer.
    pub lambda_cross: f64,
    /// Number of DELAY tokens the translation stream waits.
    pub wait_k: usize,
    pub max_positions: usize,
    pub vocab_size: usize,
    /// Dimension of the (stacked) input feature frames.
    pub input_dim: usize,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::toy(85)
    }
}

impl ModelConfig {
    /// Desk-scale default: 2 layers, d_model 64, 4 heads, d_ff 256.
    pub fn toy(vocab_size: usize) -> Self {
        ModelConfig {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            dropout: 0.1,
            lambda_cross: 0.3,
            wait_k: 3,
            max_positions: 512,
            vocab_size,
            input_dim: 320,
            ln_eps: 1e-6,
        }
    }

    /// The 6-layer, 512-wide base transformer shape.
    pub fn transformer_base(vocab_size: usize) -> Self {
        ModelConfig {
            n_layers: 6,
            d_model: 512,
            n_heads: 8,
            d_ff: 2048,
            max_positions: 2048,
            ..ModelConfig::toy(vocab_size)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_layers == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return bad("n_layers, d_model, n_heads and d_ff must be ≥ 1".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if !(self.lambda_cross >= 0.0) || !self.lambda_cross.is_finite() {
            return bad(format!("lambda must be a finite value ≥ 0, got {}", self.lambda_cross));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.vocab_size <= crate::vocab::NUM_SPECIALS {
            return bad(format!("vocab_size {} leaves no content tokens", self.vocab_size));
        }
        if self.input_dim == 0 || self.max_positions < 2 {
            return bad("input_dim must be ≥ 1 and max_positions ≥ 2".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn write_kv(&self, kv: &mut KvMap) {
        kv.set("n_layers", self.n_layers);
        kv.set("d_model", self.d_model);
        kv.set("n_heads", self.n_heads);
        kv.set("d_ff", self.d_ff);
        kv.set("dropout", self.dropout);
        kv.set("lambda", self.lambda_cross);
        kv.set("wait_k", self.wait_k);
        kv.set("max_positions", self.max_positions);
        kv.set("vocab_size", self.vocab_size);
        kv.set("input_dim", self.input_dim);
        kv.set("ln_eps", self.ln_eps);
    }

    /// Overrides fields present in `kv`.
    pub fn read_kv(&mut self, kv: &KvMap) -> Result<()> {
        kv.read_into("n_layers", &mut self.n_layers)?;
        kv.read_into("d_model", &mut self.d_model)?;
        kv.read_into("n_heads", &mut self.n_heads)?;
        kv.read_into("d_ff", &mut self.d_ff)?;
        kv.read_into("dropout", &mut self.dropout)?;
        kv.read_into("lambda", &mut self.lambda_cross)?;
        kv.read_into("wait_k", &mut self.wait_k)?;
        kv.read_into("max_positions", &mut self.max_positions)?;
        kv.read_into("vocab_size", &mut self.vocab_size)?;
        kv.read_into("input_dim", &mut self.input_dim)?;
        kv.read_into("ln_eps", &mut self.ln_eps)?;
        Ok(())
    }
}
