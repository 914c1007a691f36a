//! Continuous integrate-and-fire: per-frame weights are accumulated and an
//! integrated embedding is emitted each time the running sum crosses the
//! threshold.
//!
//! Firing is computed on cumulative sums `S_t = a_1 + .. + a_t`: fire `u`
//! collects from frame `t` the weight `min(S_t, u*beta) - max(S_{t-1}, (u-1)*beta)`
//! whenever that is positive. This is the sequential split rule (the part of
//! a frame's weight that completes a fire closes it, the remainder seeds the
//! next one) written in closed form, and it is linear in the weights once
//! the firing pattern is fixed, which is what makes [`fire_embeddings`]
//! differentiable.

use crate::tensor::{Graph, Tensor, TensorError, Var};

/// Default firing threshold.
pub const DEFAULT_THRESHOLD: f64 = 1.0;

/// Slack that lets the final fire close despite rounding in `sum == U`.
pub const CLOSURE_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum CifError {
    #[error("weights sum to {0}; cannot rescale")]
    DegenerateWeights(f64),
    #[error("threshold must be positive, got {0}")]
    Threshold(f64),
    #[error("{weights} weights for {frames} encoder frames")]
    Length { weights: usize, frames: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, CifError>;

/// Whether a trailing partial accumulation may fire.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FireMode {
    /// Weights were rescaled to sum to the target length; no tail fire.
    Training,
    /// A trailing accumulation fires iff it exceeds half the threshold.
    Inference,
}

/// One frame's share of one fire.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contribution {
    pub frame: usize,
    pub weight: f64,
    /// Upper bound is `S_t` (otherwise the constant `u * beta`).
    upper_from_sum: bool,
    /// Lower bound is `S_{t-1}` (otherwise the constant `(u-1) * beta`).
    lower_from_sum: bool,
}

/// The discrete firing pattern for one weight vector.
#[derive(Clone, Debug, PartialEq)]
pub struct FirePlan {
    pub threshold: f64,
    pub frames: usize,
    pub fires: Vec<Vec<Contribution>>,
    /// Frame at which each fire completed. Strictly increasing over complete
    /// fires while every weight is below the threshold; a tail fire reports
    /// the last frame.
    pub fire_frames: Vec<usize>,
    /// Accumulated weight left after the last complete fire.
    pub residual: f64,
    pub tail_fired: bool,
}

impl FirePlan {
    pub fn new(alpha: &[f64], threshold: f64, mode: FireMode) -> Result<Self> {
        if !(threshold > 0.0) {
            return Err(CifError::Threshold(threshold));
        }
        let frames = alpha.len();
        let mut cum = Vec::with_capacity(frames);
        let mut s = 0.0;
        for &a in alpha {
            s += a;
            cum.push(s);
        }
        let total = s;
        let complete = ((total + CLOSURE_TOL) / threshold).floor().max(0.0) as usize;
        let residual = (total - complete as f64 * threshold).max(0.0);
        let tail_fired = mode == FireMode::Inference && residual > threshold / 2.0;
        let n_fires = complete + usize::from(tail_fired);

        let mut fires = Vec::with_capacity(n_fires);
        let mut fire_frames = Vec::with_capacity(n_fires);
        let mut first = 0usize;
        for u in 1..=n_fires {
            let lo = (u - 1) as f64 * threshold;
            let hi = if u <= complete {
                u as f64 * threshold
            } else {
                f64::INFINITY
            };
            let mut parts = Vec::new();
            let mut closed_at = frames.saturating_sub(1);
            for t in first..frames {
                let prev = if t == 0 { 0.0 } else { cum[t - 1] };
                if prev >= hi {
                    break;
                }
                let upper_from_sum = cum[t] < hi;
                let lower_from_sum = t > 0 && prev > lo;
                let upper = if upper_from_sum { cum[t] } else { hi };
                let lower = if lower_from_sum { prev } else { lo };
                let w = upper - lower;
                if w > 0.0 {
                    parts.push(Contribution {
                        frame: t,
                        weight: w,
                        upper_from_sum,
                        lower_from_sum,
                    });
                }
                if !upper_from_sum {
                    closed_at = t;
                    break;
                }
            }
            // a frame whose weight closes fire u may also open fire u + 1
            first = parts.last().map_or(first, |c| c.frame);
            fire_frames.push(closed_at);
            fires.push(parts);
        }
        Ok(FirePlan {
            threshold,
            frames,
            fires,
            fire_frames,
            residual,
            tail_fired,
        })
    }

    pub fn len(&self) -> usize {
        self.fires.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fires.is_empty()
    }

    /// Dense `[U', T]` matrix of contributed weights.
    pub fn weight_matrix(&self) -> Tensor {
        let mut data = vec![0.0; self.fires.len() * self.frames];
        for (u, parts) in self.fires.iter().enumerate() {
            for c in parts {
                data[u * self.frames + c.frame] += c.weight;
            }
        }
        Tensor::matrix(self.fires.len(), self.frames, data).expect("consistent shape")
    }
}

/// Integrated embeddings with their firing pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct FireTrace {
    pub fired_embeddings: Vec<Vec<f64>>,
    pub fire_frames: Vec<usize>,
    pub residual: f64,
    pub plan: FirePlan,
}

/// Integrate the rows of `h: [T, d]` under `alpha` and fire at `threshold`.
pub fn integrate_and_fire(h: &Tensor, alpha: &[f64], threshold: f64, mode: FireMode) -> Result<FireTrace> {
    if h.rows() != alpha.len() {
        return Err(CifError::Length {
            weights: alpha.len(),
            frames: h.rows(),
        });
    }
    let plan = FirePlan::new(alpha, threshold, mode)?;
    let d = h.cols();
    let fired_embeddings = plan
        .fires
        .iter()
        .map(|parts| {
            let mut e = vec![0.0; d];
            for c in parts {
                for (x, hv) in e.iter_mut().zip(h.row(c.frame)) {
                    *x += c.weight * hv;
                }
            }
            e
        })
        .collect();
    Ok(FireTrace {
        fired_embeddings,
        fire_frames: plan.fire_frames.clone(),
        residual: plan.residual,
        plan,
    })
}

/// Multiply every weight by `target_len / sum(alpha)`.
pub fn scale_weights(alpha: &[f64], target_len: usize) -> Result<Vec<f64>> {
    let total: f64 = alpha.iter().sum();
    if !(total > f64::MIN_POSITIVE) {
        return Err(CifError::DegenerateWeights(total));
    }
    let k = target_len as f64 / total;
    Ok(alpha.iter().map(|a| a * k).collect())
}

/// `|sum(alpha) - target_len|`.
pub fn quantity_loss(alpha: &[f64], target_len: usize) -> f64 {
    (alpha.iter().sum::<f64>() - target_len as f64).abs()
}

/// Graph parameters of the weight predictor.
#[derive(Clone, Copy, Debug)]
pub struct PredictorVars {
    /// `[k, d, d]`
    pub conv_weight: Var,
    /// `[d]`
    pub conv_bias: Var,
    /// `[d, 1]`
    pub proj_weight: Var,
    /// `[1]`
    pub proj_bias: Var,
}

/// `alpha = sigmoid(linear(conv1d(h)))`, one weight per frame, shape `[T]`.
pub fn predict_weights(g: &mut Graph, h: Var, p: &PredictorVars) -> Result<Var> {
    let frames = g.shape(h)[0];
    let c = g.conv1d(h, p.conv_weight, 1)?;
    let c = g.add(c, p.conv_bias)?;
    let logits = g.linear(c, p.proj_weight, Some(p.proj_bias))?;
    let alpha = g.sigmoid(logits)?;
    Ok(g.reshape(alpha, vec![frames])?)
}

/// Graph form of [`scale_weights`].
pub fn scale_weights_graph(g: &mut Graph, alpha: Var, target_len: usize) -> Result<Var> {
    let total = g.sum(alpha)?;
    let t = g.value(total).data()[0];
    if !(t > f64::MIN_POSITIVE) {
        return Err(CifError::DegenerateWeights(t));
    }
    let u = g.constant(Tensor::scalar(target_len as f64));
    let factor = g.div(u, total)?;
    Ok(g.mul(alpha, factor)?)
}

/// Graph form of [`quantity_loss`] with subgradient zero at the kink.
pub fn quantity_loss_graph(g: &mut Graph, alpha: Var, target_len: usize) -> Result<Var> {
    let total = g.sum(alpha)?;
    let u = g.constant(Tensor::scalar(target_len as f64));
    let diff = g.sub(total, u)?;
    Ok(g.abs(diff)?)
}

/// Differentiable fired embeddings `[U', d]` for a fixed firing `plan`.
///
/// Gradients reach both `h` and `alpha`; the plan itself is treated as a
/// discrete event.
pub fn fire_embeddings(g: &mut Graph, h: Var, alpha: Var, plan: &FirePlan) -> Result<Option<Var>> {
    let frames = plan.frames;
    if g.shape(alpha) != [frames] || g.shape(h)[0] != frames {
        return Err(CifError::Length {
            weights: g.shape(alpha)[0],
            frames: g.shape(h)[0],
        });
    }
    if plan.is_empty() {
        return Ok(None);
    }
    let n = plan.len();
    let mut upper = vec![0.0; n * frames];
    let mut lower = vec![0.0; n * frames];
    let mut offset = vec![0.0; n * frames];
    for (u, parts) in plan.fires.iter().enumerate() {
        for c in parts {
            let i = u * frames + c.frame;
            if c.upper_from_sum {
                upper[i] = 1.0;
            } else {
                offset[i] += (u + 1) as f64 * plan.threshold;
            }
            if c.lower_from_sum {
                lower[i] = 1.0;
            } else {
                offset[i] -= u as f64 * plan.threshold;
            }
        }
    }
    // inclusive and exclusive prefix-sum operators
    let mut incl = vec![0.0; frames * frames];
    let mut excl = vec![0.0; frames * frames];
    for t in 0..frames {
        for s in 0..=t {
            incl[s * frames + t] = 1.0;
            if s < t {
                excl[s * frames + t] = 1.0;
            }
        }
    }
    let a_row = g.reshape(alpha, vec![1, frames])?;
    let incl = g.constant(Tensor::matrix(frames, frames, incl)?);
    let excl = g.constant(Tensor::matrix(frames, frames, excl)?);
    let cum = g.matmul(a_row, incl)?;
    let cum_prev = g.matmul(a_row, excl)?;
    let upper = g.constant(Tensor::matrix(n, frames, upper)?);
    let lower = g.constant(Tensor::matrix(n, frames, lower)?);
    let offset = g.constant(Tensor::matrix(n, frames, offset)?);
    let hi = g.mul(upper, cum)?;
    let lo = g.mul(lower, cum_prev)?;
    let w = g.sub(hi, lo)?;
    let w = g.add(w, offset)?;
    Ok(Some(g.matmul(w, h)?))
}
