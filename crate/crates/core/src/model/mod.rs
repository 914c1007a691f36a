//! The four recognizers built from one encoder and one decoder design.
//!
//! | variant         | training loss                        | inference                         |
//! |-----------------|--------------------------------------|-----------------------------------|
//! | `ctc`           | CTC                                  | greedy collapse                   |
//! | `paraformer`    | CE over CIF embeddings + quantity    | CIF fires, one NAR pass           |
//! | `paraformer_v2` | CE over compressed posteriors + CTC  | greedy compression, one NAR pass  |
//! | `ar_aed`        | teacher-forced CE                    | greedy or beam search             |
//!
//! Every utterance is computed on its own `[T, d]` slice, so padding frames
//! of a [`Batch`] never enter attention, CTC or any loss.

mod batch;
mod checkpoint;
mod layers;
mod params;
mod zoo;

pub use batch::Batch;
pub use checkpoint::{Checkpoint, CheckpointError, Moments};
pub use layers::sinusoid;
pub use params::ParamStore;
pub use zoo::{LossOutput, LossTerms, Transcript};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cif::CifError;
use crate::ctc::CtcError;
use crate::tensor::TensorError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Ctc,
    Paraformer,
    ParaformerV2,
    ArAed,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Ctc, Variant::Paraformer, Variant::ParaformerV2, Variant::ArAed];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Ctc => "ctc",
            Variant::Paraformer => "paraformer",
            Variant::ParaformerV2 => "paraformer_v2",
            Variant::ArAed => "ar_aed",
        }
    }

    pub fn has_decoder(self) -> bool {
        self != Variant::Ctc
    }

    pub fn has_ctc_head(self) -> bool {
        matches!(self, Variant::Ctc | Variant::ParaformerV2)
    }

    pub fn is_autoregressive(self) -> bool {
        self == Variant::ArAed
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("utterance {utterance}: {source}")]
    Utterance {
        utterance: String,
        #[source]
        source: Box<ModelError>,
    },
    #[error(transparent)]
    Ctc(#[from] CtcError),
    #[error(transparent)]
    Cif(#[from] CifError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("parameter {name}: {detail}")]
    Param { name: String, detail: String },
    #[error("compressed posterior rows have width {got}, expected vocab_size + 1 = {expected}")]
    EmbedWidth { got: usize, expected: usize },
}

impl ModelError {
    /// The innermost error, skipping utterance context.
    pub fn root(&self) -> &ModelError {
        match self {
            ModelError::Utterance { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Token count, blank excluded.
    pub vocab_size: usize,
    pub d_feat: usize,
    pub d_model: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    #[serde(default = "default_threshold")]
    pub cif_threshold: f64,
    #[serde(default = "default_kernel")]
    pub conv_kernel: usize,
    /// Two stride-2 convolutions after the input projection.
    #[serde(default)]
    pub subsample: bool,
    #[serde(default = "one")]
    pub ce_weight: f64,
    #[serde(default = "one")]
    pub ctc_weight: f64,
    #[serde(default = "one")]
    pub quantity_weight: f64,
    /// Dropout on embeddings and residual branches while training.
    #[serde(default)]
    pub dropout: f64,
}

fn default_threshold() -> f64 {
    crate::cif::DEFAULT_THRESHOLD
}

fn default_kernel() -> usize {
    3
}

impl ModelConfig {
    /// d_model 64, 2 + 2 layers, 4 heads, d_ff 128.
    pub fn desk(variant: Variant, vocab_size: usize) -> Self {
        ModelConfig {
            variant,
            vocab_size,
            d_feat: 16,
            d_model: 64,
            n_enc_layers: 2,
            n_dec_layers: 2,
            n_heads: 4,
            d_ff: 128,
            cif_threshold: default_threshold(),
            conv_kernel: default_kernel(),
            subsample: false,
            ce_weight: 1.0,
            ctc_weight: 1.0,
            quantity_weight: 1.0,
            dropout: 0.0,
        }
    }

    /// d_model 64, 2 + 1 layers, 2 heads, d_ff 128: the toy-task model,
    /// about four minutes of training per variant on one core.
    pub fn toy(variant: Variant, vocab_size: usize) -> Self {
        ModelConfig {
            d_model: 64,
            n_enc_layers: 2,
            n_dec_layers: 1,
            n_heads: 2,
            d_ff: 128,
            ..ModelConfig::desk(variant, vocab_size)
        }
    }

    /// d_model 8 with single layers, for finite-difference checks.
    pub fn micro(variant: Variant, vocab_size: usize) -> Self {
        ModelConfig {
            d_feat: 4,
            d_model: 8,
            n_enc_layers: 1,
            n_dec_layers: 1,
            n_heads: 2,
            d_ff: 16,
            ..ModelConfig::desk(variant, vocab_size)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.vocab_size < 2 {
            return fail(format!("vocab_size {} must be >= 2", self.vocab_size));
        }
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.d_feat == 0 || self.d_ff == 0 {
            return fail("d_feat and d_ff must be positive".into());
        }
        if self.variant.has_decoder() && self.n_dec_layers == 0 {
            return fail(format!("{} needs n_dec_layers >= 1", self.variant));
        }
        if self.conv_kernel.is_multiple_of(2) {
            return fail(format!("conv_kernel {} must be odd", self.conv_kernel));
        }
        if !(self.cif_threshold > 0.0) {
            return fail(format!("cif_threshold {} must be positive", self.cif_threshold));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} must be in [0, 1)", self.dropout));
        }
        for (name, w) in [
            ("ce_weight", self.ce_weight),
            ("ctc_weight", self.ctc_weight),
            ("quantity_weight", self.quantity_weight),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return fail(format!("{name} {w} must be finite and >= 0"));
            }
        }
        Ok(())
    }

    /// Output classes of the decoder or CTC head: blank (or end) plus tokens.
    pub fn classes(&self) -> usize {
        self.vocab_size + 1
    }

    /// Start symbol of the autoregressive decoder's input embedding.
    pub fn sos(&self) -> usize {
        self.vocab_size + 1
    }
}

/// Configuration plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    layout: layers::Layout,
    params: ParamStore,
}

impl Model {
    /// Fresh model with parameters uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::seeded(seed);
        let layout = layers::Layout::build(&config, &mut params);
        Ok(Model { config, layout, params })
    }

    /// Rebuild from stored parameters, checking every name and shape.
    pub fn from_params(config: ModelConfig, stored: ParamStore) -> Result<Self> {
        let reference = Model::new(config, 0)?;
        reference.params.check_compatible(&stored)?;
        Ok(Model {
            params: stored,
            ..reference
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}
