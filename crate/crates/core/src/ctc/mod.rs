//! Connectionist Temporal Classification machinery.
//!
//! Every matrix here has `V + 1` columns where column `0` is the blank
//! symbol and columns `1..=V` are tokens. Dynamic programming runs over the
//! extended label sequence `[blank, y1, blank, y2, .., yU, blank]` in log
//! space.

mod align;
mod loss;

pub use align::{alignment_score, collapse, compress, greedy_decode, viterbi_align};
pub use loss::{ctc_log_likelihood, ctc_loss, CtcForward};

use crate::tensor::Tensor;

/// Index of the blank symbol.
pub const BLANK: usize = 0;

const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum CtcError {
    #[error("unalignable target: {u} tokens cannot fit in {t} frames")]
    Unalignable { t: usize, u: usize },
    #[error("invalid posterior matrix: {0}")]
    InvalidPosterior(String),
    #[error("label {label} is outside 1..={vocab_size}")]
    InvalidLabel { label: usize, vocab_size: usize },
    #[error("alignment has {alignment} frames but the posterior has {frames}")]
    LengthMismatch { alignment: usize, frames: usize },
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

pub type Result<T> = std::result::Result<T, CtcError>;

/// Token sequence without blanks.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct LabelSequence(Vec<usize>);

impl LabelSequence {
    pub fn new(tokens: Vec<usize>) -> Result<Self> {
        if let Some(&label) = tokens.iter().find(|&&t| t == BLANK) {
            return Err(CtcError::InvalidLabel {
                label,
                vocab_size: usize::MAX,
            });
        }
        Ok(LabelSequence(tokens))
    }

    pub fn empty() -> Self {
        LabelSequence(Vec::new())
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Fail unless every token lies in `1..=vocab_size`.
    pub fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        match self.0.iter().find(|&&t| t == BLANK || t > vocab_size) {
            Some(&label) => Err(CtcError::InvalidLabel { label, vocab_size }),
            None => Ok(()),
        }
    }

    /// Minimum frames needed: one per token plus one blank between repeats.
    pub fn min_frames(&self) -> usize {
        self.0.len() + self.0.windows(2).filter(|w| w[0] == w[1]).count()
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }
}

impl From<LabelSequence> for Vec<usize> {
    fn from(s: LabelSequence) -> Self {
        s.0
    }
}

/// Frame-level labels over `0..=V`, blank included.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Alignment(pub Vec<usize>);

impl Alignment {
    pub fn frames(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Maximal runs of one repeated non-blank label, as frame index lists.
    pub fn token_spans(&self) -> Vec<Vec<usize>> {
        let mut spans: Vec<Vec<usize>> = Vec::new();
        let mut prev = None;
        for (t, &label) in self.0.iter().enumerate() {
            if label != BLANK {
                if prev == Some(label) {
                    spans.last_mut().expect("run in progress").push(t);
                } else {
                    spans.push(vec![t]);
                }
            }
            prev = Some(label);
        }
        spans
    }
}

/// Per-frame probability rows over blank plus `V` tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorMatrix {
    probs: Tensor,
}

impl PosteriorMatrix {
    pub fn new(probs: Tensor) -> Result<Self> {
        if probs.rank() != 2 || probs.cols() < 2 {
            return Err(CtcError::InvalidPosterior(format!(
                "expected [T, V+1] with V >= 1, got {:?}",
                probs.shape()
            )));
        }
        for t in 0..probs.rows() {
            let row = probs.row(t);
            if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(CtcError::InvalidPosterior(format!(
                    "frame {t} holds {p}, outside [0, 1]"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(CtcError::InvalidPosterior(format!("frame {t} sums to {s}")));
            }
        }
        Ok(PosteriorMatrix { probs })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let t = Tensor::from_rows(rows).map_err(|e| CtcError::InvalidPosterior(e.to_string()))?;
        PosteriorMatrix::new(t)
    }

    /// Exponentiate a log-posterior matrix (rows of log-softmax output).
    pub fn from_log(log_probs: &Tensor) -> Result<Self> {
        PosteriorMatrix::new(log_probs.map(f64::exp))
    }

    pub fn frames(&self) -> usize {
        self.probs.rows()
    }

    /// Number of symbols per row, blank included.
    pub fn symbols(&self) -> usize {
        self.probs.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.probs.cols() - 1
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.probs.row(t)
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.probs
    }

    pub fn log_probs(&self) -> Tensor {
        self.probs.map(f64::ln)
    }
}

/// Averaged posterior rows, one per emitted token.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedPosterior {
    pub rows: Vec<Vec<f64>>,
    pub spans: Vec<Vec<usize>>,
}

impl CompressedPosterior {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows as a `[U', V+1]` tensor; `None` when empty.
    pub fn to_tensor(&self) -> Option<Tensor> {
        (!self.rows.is_empty()).then(|| Tensor::from_rows(&self.rows).expect("uniform rows"))
    }
}

/// `[U', T]` matrix whose row `u` averages the frames of `spans[u]`.
///
/// Multiplying it into a `[T, V+1]` posterior on a graph yields the
/// compressed posterior with gradients flowing into the selected rows.
pub fn averaging_matrix(spans: &[Vec<usize>], frames: usize) -> Tensor {
    let mut data = vec![0.0; spans.len() * frames];
    for (u, span) in spans.iter().enumerate() {
        let w = 1.0 / span.len() as f64;
        for &t in span {
            data[u * frames + t] = w;
        }
    }
    Tensor::matrix(spans.len(), frames, data).expect("consistent shape")
}

#[cfg(test)]
mod tests;
