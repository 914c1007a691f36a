//! Synthetic utterances standing in for acoustic data.
//!
//! Each token id owns a fixed unit-norm prototype vector. Speech frames are
//! the prototype plus Gaussian perturbation, separated by silence frames.
//! Regimes differ in how many frames a token spans and whether noise is
//! mixed in.

mod io;
mod synth;

pub use io::{read_dataset, write_dataset};
pub use synth::{gen_dataset, gen_noise_utterance, gen_utterance, noise_frames, prototype};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ctc::LabelSequence;
use crate::tensor::Tensor;

/// Seconds per frame (10 ms shift).
pub const FRAME_SHIFT_SEC: f64 = 0.01;

/// Token-count range of the default toy datasets.
pub const DEFAULT_U_RANGE: Span = Span::new(5, 15);

/// Size of the default noise-test set.
pub const NOISE_TEST_CLIPS: usize = 314;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("invalid range: {0}")]
    Range(String),
    #[error("unknown regime {0:?} (expected regular, variable, noisy or pure_noise)")]
    UnknownRegime(String),
    #[error("line {line}: {detail}")]
    Malformed { line: usize, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeName {
    Regular,
    Variable,
    Noisy,
    PureNoise,
}

impl RegimeName {
    pub const ALL: [RegimeName; 4] = [
        RegimeName::Regular,
        RegimeName::Variable,
        RegimeName::Noisy,
        RegimeName::PureNoise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RegimeName::Regular => "regular",
            RegimeName::Variable => "variable",
            RegimeName::Noisy => "noisy",
            RegimeName::PureNoise => "pure_noise",
        }
    }
}

impl fmt::Display for RegimeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for RegimeName {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        RegimeName::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| DataError::UnknownRegime(s.to_string()))
    }
}

/// Inclusive integer range `[min, max]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub min: usize,
    pub max: usize,
}

impl Span {
    pub const fn new(min: usize, max: usize) -> Self {
        Span { min, max }
    }
}

/// Frames-per-token distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum DurationLaw {
    Uniform(Span),
    /// `short` with probability `p_short`, otherwise `long`.
    Mixture { p_short: f64, short: Span, long: Span },
}

impl DurationLaw {
    pub fn min_frames(&self) -> usize {
        match self {
            DurationLaw::Uniform(s) => s.min,
            DurationLaw::Mixture { short, long, .. } => short.min.min(long.min),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub name: RegimeName,
    pub duration: DurationLaw,
    pub silence: Span,
    /// Speech-to-noise power ratio; `None` disables mixing.
    pub snr_db: Option<f64>,
    pub d_feat: usize,
    /// Per-frame perturbation standard deviation.
    pub sigma: f64,
    /// Clip length range for pure-noise clips.
    pub noise_frames: Span,
}

impl Regime {
    pub fn regular() -> Self {
        Regime {
            name: RegimeName::Regular,
            duration: DurationLaw::Uniform(Span::new(3, 5)),
            silence: Span::new(0, 3),
            snr_db: None,
            d_feat: 16,
            sigma: 0.3,
            noise_frames: Span::new(20, 60),
        }
    }

    pub fn variable() -> Self {
        Regime {
            name: RegimeName::Variable,
            duration: DurationLaw::Mixture {
                p_short: 0.5,
                short: Span::new(1, 2),
                long: Span::new(6, 12),
            },
            ..Regime::regular()
        }
    }

    pub fn noisy() -> Self {
        Regime {
            name: RegimeName::Noisy,
            snr_db: Some(10.0),
            ..Regime::regular()
        }
    }

    pub fn pure_noise() -> Self {
        Regime {
            name: RegimeName::PureNoise,
            ..Regime::regular()
        }
    }

    pub fn named(name: RegimeName) -> Self {
        match name {
            RegimeName::Regular => Regime::regular(),
            RegimeName::Variable => Regime::variable(),
            RegimeName::Noisy => Regime::noisy(),
            RegimeName::PureNoise => Regime::pure_noise(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |what: &str, s: Span| {
            if s.min > s.max {
                Err(DataError::Range(format!("{what}: min {} > max {}", s.min, s.max)))
            } else {
                Ok(())
            }
        };
        match self.duration {
            DurationLaw::Uniform(s) => check("duration", s)?,
            DurationLaw::Mixture { p_short, short, long } => {
                check("short duration", short)?;
                check("long duration", long)?;
                if !(0.0..=1.0).contains(&p_short) {
                    return Err(DataError::Range(format!("p_short {p_short} outside [0, 1]")));
                }
            }
        }
        if self.duration.min_frames() < 1 {
            return Err(DataError::Range("token duration must be at least 1 frame".into()));
        }
        check("silence", self.silence)?;
        check("noise frames", self.noise_frames)?;
        if self.noise_frames.min < 1 {
            return Err(DataError::Range("noise clips need at least 1 frame".into()));
        }
        if self.d_feat == 0 {
            return Err(DataError::Range("d_feat must be positive".into()));
        }
        if !(self.sigma >= 0.0) {
            return Err(DataError::Range(format!("sigma {} must be >= 0", self.sigma)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    /// `[T, d_feat]`.
    pub features: Tensor,
    pub target: LabelSequence,
    pub duration_sec: f64,
    pub regime: RegimeName,
    pub seed: u64,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.features.rows()
    }
}

#[cfg(test)]
mod tests;
