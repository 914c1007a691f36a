//! Run configuration: one TOML file with `[model]`, `[train]`, and optional
//! `[data]` and `[paths]` sections. Unknown keys anywhere are rejected.
//!
//! ```toml
//! [model]
//! variant = "paraformer_v2"
//! vocab_size = 16
//! d_feat = 16
//! d_model = 64
//! n_enc_layers = 2
//! n_dec_layers = 1
//! n_heads = 2
//! d_ff = 128
//!
//! [train]
//! steps = 3000
//! batch_size = 8
//! learning_rate = 3e-3
//! warmup_steps = 300
//! seed = 1
//!
//! [data]
//! regime = "regular"
//! count = 2000
//! seed = 0
//!
//! [paths]
//! data = "train.jsonl"
//! out = "model.ckpt"
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::data::{gen_dataset, Regime, RegimeName, Span, Utterance};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

use super::{CliError, Result};

/// Dataset generated in memory when no data file is given.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub regime: RegimeName,
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_u_min")]
    pub u_min: usize,
    #[serde(default = "default_u_max")]
    pub u_max: usize,
}

fn default_u_min() -> usize {
    crate::data::DEFAULT_U_RANGE.min
}

fn default_u_max() -> usize {
    crate::data::DEFAULT_U_RANGE.max
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: Option<DataSection>,
    #[serde(default)]
    pub paths: PathsSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Training utterances: the data file when one is set, else the `[data]` section.
    pub fn dataset(&self) -> Result<Vec<Utterance>> {
        if let Some(path) = &self.paths.data {
            return crate::data::read_dataset(path).map_err(|e| CliError::Data(e.to_string()));
        }
        let Some(d) = &self.data else {
            return Err(CliError::Usage("no training data: pass --data, set paths.data, or add a [data] section".into()));
        };
        let regime = Regime {
            d_feat: self.model.d_feat,
            ..Regime::named(d.regime)
        };
        gen_dataset(&regime, self.model.vocab_size, Span::new(d.u_min, d.u_max), d.count, d.seed)
            .map_err(|e| CliError::Usage(e.to_string()))
    }
}
