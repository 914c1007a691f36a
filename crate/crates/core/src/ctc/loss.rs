use crate::tensor::{CustomOp, Graph, Tensor, TensorError, Var};

use super::{CtcError, LabelSequence, BLANK};

const NEG_INF: f64 = f64::NEG_INFINITY;

fn log_add(a: f64, b: f64) -> f64 {
    if a == NEG_INF {
        return b;
    }
    if b == NEG_INF {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn extended_labels(target: &LabelSequence) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(BLANK);
    for &y in target.tokens() {
        ext.push(y);
        ext.push(BLANK);
    }
    ext
}

/// Whether state `s` may be entered from `s - 2` (skipping a blank).
fn can_skip(ext: &[usize], s: usize) -> bool {
    s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2]
}

/// Forward and backward lattices of one `(log posterior, target)` pair.
#[derive(Clone, Debug)]
pub struct CtcForward {
    frames: usize,
    symbols: usize,
    ext: Vec<usize>,
    /// `alpha[t * S + s]`: log mass of prefixes ending in state `s` at `t`, emission included.
    alpha: Vec<f64>,
    /// `beta[t * S + s]`: log mass of suffixes after `t` given state `s` at `t`.
    beta: Vec<f64>,
    log_likelihood: f64,
}

impl CtcForward {
    /// Run both recursions over a `[T, V+1]` matrix of log posteriors.
    pub fn compute(log_probs: &Tensor, target: &LabelSequence) -> Self {
        let (frames, symbols) = (log_probs.rows(), log_probs.cols());
        let ext = extended_labels(target);
        let states = ext.len();
        let lp = |t: usize, k: usize| log_probs.data()[t * symbols + k];

        let mut alpha = vec![NEG_INF; frames * states];
        if frames > 0 {
            alpha[0] = lp(0, ext[0]);
            if states > 1 {
                alpha[1] = lp(0, ext[1]);
            }
        }
        for t in 1..frames {
            let (prev, cur) = alpha.split_at_mut(t * states);
            let prev = &prev[(t - 1) * states..];
            for s in 0..states {
                let mut acc = prev[s];
                if s >= 1 {
                    acc = log_add(acc, prev[s - 1]);
                }
                if can_skip(&ext, s) {
                    acc = log_add(acc, prev[s - 2]);
                }
                cur[s] = if acc == NEG_INF { NEG_INF } else { acc + lp(t, ext[s]) };
            }
        }

        let mut beta = vec![NEG_INF; frames * states];
        if frames > 0 {
            let last = (frames - 1) * states;
            beta[last + states - 1] = 0.0;
            if states > 1 {
                beta[last + states - 2] = 0.0;
            }
        }
        for t in (0..frames.saturating_sub(1)).rev() {
            for s in 0..states {
                let next = |s2: usize| beta[(t + 1) * states + s2] + lp(t + 1, ext[s2]);
                let mut acc = next(s);
                if s + 1 < states {
                    acc = log_add(acc, next(s + 1));
                }
                if s + 2 < states && can_skip(&ext, s + 2) {
                    acc = log_add(acc, next(s + 2));
                }
                beta[t * states + s] = acc;
            }
        }

        let log_likelihood = if frames == 0 {
            if target.is_empty() {
                0.0
            } else {
                NEG_INF
            }
        } else {
            let last = (frames - 1) * states;
            let mut ll = alpha[last + states - 1];
            if states > 1 {
                ll = log_add(ll, alpha[last + states - 2]);
            }
            ll
        };

        CtcForward {
            frames,
            symbols,
            ext,
            alpha,
            beta,
            log_likelihood,
        }
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// `d log p / d log_probs[t, k]`: posterior occupancy of symbol `k` at `t`.
    pub fn occupancy(&self) -> Vec<f64> {
        let states = self.ext.len();
        let mut grad = vec![0.0; self.frames * self.symbols];
        if self.log_likelihood == NEG_INF {
            return grad;
        }
        for t in 0..self.frames {
            for (s, &k) in self.ext.iter().enumerate() {
                let v = self.alpha[t * states + s] + self.beta[t * states + s];
                if v > NEG_INF {
                    grad[t * self.symbols + k] += (v - self.log_likelihood).exp();
                }
            }
        }
        grad
    }
}

/// `log P(target | posteriors)` summed over every alignment that collapses
/// to `target`; `-inf` when the target cannot fit.
pub fn ctc_log_likelihood(log_probs: &Tensor, target: &LabelSequence) -> f64 {
    CtcForward::compute(log_probs, target).log_likelihood()
}

#[derive(Debug)]
struct CtcLossOp {
    occupancy: Vec<f64>,
    weight: f64,
}

impl CustomOp for CtcLossOp {
    fn name(&self) -> &'static str {
        "ctc_loss"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, grad_out: &[f64]) -> Vec<Option<Vec<f64>>> {
        let scale = -grad_out[0] * self.weight;
        vec![Some(self.occupancy.iter().map(|o| o * scale).collect())]
    }
}

/// Record `-weight * log P(target | log_probs)` on `g` as a scalar node.
///
/// `log_probs` must be a `[T, V+1]` node, normally the output of
/// `log_softmax`. Fails with [`CtcError::Unalignable`] when the target
/// needs more frames than are available.
pub fn ctc_loss(
    g: &mut Graph,
    log_probs: Var,
    target: &LabelSequence,
    weight: f64,
) -> Result<Var, CtcError> {
    let lp = g.value(log_probs);
    if lp.rank() != 2 {
        return Err(CtcError::Tensor(TensorError::Shape {
            kind: "ctc_loss",
            detail: format!("expected [T, V+1] log posteriors, got {:?}", lp.shape()),
        }));
    }
    target.check_vocab(lp.cols() - 1)?;
    let fwd = CtcForward::compute(lp, target);
    let ll = fwd.log_likelihood();
    if ll == NEG_INF {
        return Err(CtcError::Unalignable {
            t: lp.rows(),
            u: target.len(),
        });
    }
    let op = CtcLossOp {
        occupancy: fwd.occupancy(),
        weight,
    };
    Ok(g.custom(Box::new(op), &[log_probs], Tensor::scalar(-weight * ll)))
}

