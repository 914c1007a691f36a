use crate::tensor::Tensor;

use super::{Alignment, CompressedPosterior, CtcError, LabelSequence, PosteriorMatrix, Result, BLANK};

/// Per-frame argmax; ties go to the smallest symbol index.
pub fn greedy_decode(posterior: &PosteriorMatrix) -> Alignment {
    Alignment(argmax_rows(posterior.as_tensor()))
}

pub(crate) fn argmax_rows(m: &Tensor) -> Vec<usize> {
    (0..m.rows())
        .map(|t| {
            let row = m.row(t);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Merge consecutive repeats, then drop blanks.
pub fn collapse(alignment: &Alignment) -> LabelSequence {
    let mut out = Vec::new();
    let mut prev = None;
    for &label in alignment.frames() {
        if label != BLANK && prev != Some(label) {
            out.push(label);
        }
        prev = Some(label);
    }
    LabelSequence(out)
}

/// Average the posterior rows of each repeated-label run and drop blank
/// frames. An all-blank alignment yields an empty result.
pub fn compress(posterior: &PosteriorMatrix, alignment: &Alignment) -> Result<CompressedPosterior> {
    if alignment.len() != posterior.frames() {
        return Err(CtcError::LengthMismatch {
            alignment: alignment.len(),
            frames: posterior.frames(),
        });
    }
    let spans = alignment.token_spans();
    let width = posterior.symbols();
    let rows = spans
        .iter()
        .map(|span| {
            let mut acc = vec![0.0; width];
            for &t in span {
                acc.iter_mut().zip(posterior.row(t)).for_each(|(a, p)| *a += p);
            }
            let n = span.len() as f64;
            acc.iter_mut().for_each(|a| *a /= n);
            acc
        })
        .collect();
    Ok(CompressedPosterior { rows, spans })
}

/// `sum_t log_probs[t, alignment[t]]`.
pub fn alignment_score(log_probs: &Tensor, alignment: &Alignment) -> f64 {
    alignment
        .frames()
        .iter()
        .enumerate()
        .map(|(t, &k)| log_probs.at(t, k))
        .sum()
}

/// Most probable alignment collapsing to `target`, by max-product dynamic
/// programming over the extended label sequence.
///
/// At equal score the predecessor with the smaller extended-label index
/// wins, which defers token emission.
pub fn viterbi_align(log_probs: &Tensor, target: &LabelSequence) -> Result<Alignment> {
    let frames = log_probs.rows();
    let u = target.len();
    if frames < target.min_frames() || frames == 0 {
        return Err(CtcError::Unalignable { t: frames, u });
    }
    let mut ext = vec![BLANK];
    for &y in target.tokens() {
        ext.push(y);
        ext.push(BLANK);
    }
    let states = ext.len();
    let neg = f64::NEG_INFINITY;
    let mut score = vec![neg; frames * states];
    let mut back = vec![0usize; frames * states];
    score[0] = log_probs.at(0, ext[0]);
    if states > 1 {
        score[1] = log_probs.at(0, ext[1]);
    }
    for t in 1..frames {
        for s in 0..states {
            let lo = if s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2] {
                s - 2
            } else {
                s.saturating_sub(1)
            };
            let mut best = neg;
            let mut arg = s;
            for p in lo..=s {
                let v = score[(t - 1) * states + p];
                if v > best {
                    best = v;
                    arg = p;
                }
            }
            if best > neg {
                score[t * states + s] = best + log_probs.at(t, ext[s]);
                back[t * states + s] = arg;
            }
        }
    }
    let last = (frames - 1) * states;
    let mut s = if states > 1 && score[last + states - 2] >= score[last + states - 1] {
        states - 2
    } else {
        states - 1
    };
    if score[last + s] == neg {
        return Err(CtcError::Unalignable { t: frames, u });
    }
    let mut labels = vec![0; frames];
    for t in (0..frames).rev() {
        labels[t] = ext[s];
        if t > 0 {
            s = back[t * states + s];
        }
    }
    Ok(Alignment(labels))
}
