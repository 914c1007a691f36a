//! Optimization, metrics and the cross-variant experiment runner.

mod experiment;
mod metrics;
mod optim;

pub use experiment::{
    experiment_data, median, run_experiment, CellReport, ExperimentReport, ExperimentSpec, SeedResult, NULL_RULE,
};
pub use metrics::{
    edit_distance, error_rate, evaluate, eval_threads, measure_rtf, null_output_rate, EvalReport, NullReport,
    RtfReport, UttResult,
};
pub use optim::{clip_global_norm, learning_rate, Adam};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Utterance;
use crate::model::{Batch, Checkpoint, LossTerms, Model, ModelConfig, ModelError, Variant};
use crate::tensor::Graph;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("utterance {utterance}: unalignable target: {u} tokens cannot fit in {t} frames")]
    Unalignable { utterance: String, t: usize, u: usize },
    #[error("non-finite loss at step {step}: {terms}")]
    NonFinite { step: u64, terms: String },
    #[error("checkpoint was trained for {found}, not {expected}")]
    VariantMismatch { expected: Variant, found: Variant },
    #[error("{cell}: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<TrainError>,
    },
    #[error("metric: {0}")]
    Metric(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.98
}
fn default_eps() -> f64 {
    1e-9
}
fn default_clip() -> f64 {
    1.0
}
fn default_log_every() -> u64 {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    /// Peak learning rate, reached at the end of warmup.
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub seed: u64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Maximum global gradient norm.
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
    /// Loss-curve sampling interval in steps.
    #[serde(default = "default_log_every")]
    pub log_every: u64,
}

impl TrainConfig {
    /// The recipe used for the toy tasks: 3000 steps of batch 8.
    pub fn toy(seed: u64) -> Self {
        TrainConfig {
            steps: 3000,
            batch_size: 8,
            learning_rate: 3e-3,
            warmup_steps: 300,
            seed,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            grad_clip: default_clip(),
            log_every: default_log_every(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.steps < 1 {
            return fail("steps must be >= 1");
        }
        if self.batch_size < 1 {
            return fail("batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.eps > 0.0) || !(self.grad_clip > 0.0) {
            return fail("eps and grad_clip must be > 0");
        }
        if self.log_every < 1 {
            return fail("log_every must be >= 1");
        }
        Ok(())
    }
}

/// One sampled point of the training curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub loss: f64,
    pub ce: Option<f64>,
    pub ctc: Option<f64>,
    pub quantity: Option<f64>,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub checkpoint: Checkpoint,
    pub loss_curve: Vec<CurvePoint>,
}

/// Fail on the first utterance whose target cannot be aligned.
pub fn check_alignable(variant: Variant, data: &[Utterance]) -> Result<()> {
    for u in data {
        let frames = u.frames();
        let need = match variant {
            Variant::Ctc | Variant::ParaformerV2 => u.target.min_frames(),
            _ => 1,
        };
        if frames < need.max(1) {
            return Err(TrainError::Unalignable {
                utterance: u.id.clone(),
                t: frames,
                u: u.target.len(),
            });
        }
    }
    Ok(())
}

/// Train a freshly initialized model; initialization uses `cfg.seed`.
pub fn train(model_cfg: &ModelConfig, data: &[Utterance], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let model = Model::new(model_cfg.clone(), cfg.seed)?;
    run(model, None, 0, data, cfg)
}

/// Continue from a checkpoint until `cfg.steps` total steps.
pub fn resume(ckpt: &Checkpoint, data: &[Utterance], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let model = ckpt.model()?;
    let adam = ckpt.moments.as_ref().map(|m| Adam::from_moments(m.clone(), ckpt.step));
    run(model, adam, ckpt.step, data, cfg)
}

fn describe(t: &LossTerms) -> String {
    let mut s = format!("total={}", t.total);
    for (name, v) in [("ce", t.ce), ("ctc", t.ctc), ("quantity", t.quantity)] {
        if let Some(v) = v {
            s.push_str(&format!(" {name}={v}"));
        }
    }
    s
}

/// Deterministic epoch-wise shuffling.
struct Sampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl Sampler {
    fn new(n: usize, seed: u64) -> Self {
        Sampler {
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5a3b_1e00),
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size.min(self.order.len()))
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

/// Dropout masks depend only on the run seed and step, so resuming replays them.
fn step_seed(seed: u64, step: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ step
}

fn run(mut model: Model, adam: Option<Adam>, start: u64, data: &[Utterance], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    check_alignable(model.variant(), data)?;
    let mut adam = adam.unwrap_or_else(|| Adam::new(model.params()));
    let mut sampler = Sampler::new(data.len(), cfg.seed);
    // Replay the sampler so a resumed run sees the batches it would have.
    for _ in 0..start {
        sampler.next_batch(cfg.batch_size);
    }
    let mut curve = Vec::new();
    for step in start..cfg.steps {
        let idx = sampler.next_batch(cfg.batch_size);
        let batch = Batch::from_utterances(idx.iter().map(|&i| &data[i]));
        let mut g = Graph::training(step_seed(cfg.seed, step));
        let (vars, out) = model.forward_loss(&mut g, &batch)?;
        if !out.terms.total.is_finite() {
            return Err(TrainError::NonFinite {
                step,
                terms: describe(&out.terms),
            });
        }
        let mut grads = g.backward(out.loss).map_err(ModelError::from)?;
        let mut flat: Vec<Vec<f64>> = vars
            .iter()
            .zip(model.params().values())
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| vec![0.0; p.len()]))
            .collect();
        let norm = clip_global_norm(&mut flat, cfg.grad_clip);
        if !norm.is_finite() {
            return Err(TrainError::NonFinite {
                step,
                terms: format!("gradient norm {norm}; {}", describe(&out.terms)),
            });
        }
        let lr = learning_rate(cfg, step);
        adam.step(model.params_mut(), &flat, lr, cfg);
        if step % cfg.log_every == 0 || step + 1 == cfg.steps {
            curve.push(CurvePoint {
                step,
                loss: out.terms.total,
                ce: out.terms.ce,
                ctc: out.terms.ctc,
                quantity: out.terms.quantity,
                lr,
                grad_norm: norm,
            });
        }
    }
    let mut checkpoint = Checkpoint::from_model(&model, cfg.steps.max(start));
    checkpoint.moments = Some(adam.moments(model.params()));
    checkpoint
        .meta
        .insert("train".into(), serde_json::to_string(cfg).expect("config serializes"));
    Ok(TrainOutcome {
        model,
        checkpoint,
        loss_curve: curve,
    })
}

/// Loss curve as CSV with a header row; absent terms are empty cells.
pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("step,loss,ce,ctc,quantity,lr,grad_norm\n");
    for p in curve {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.step,
            p.loss,
            cell(p.ce),
            cell(p.ctc),
            cell(p.quantity),
            p.lr,
            p.grad_norm
        ));
    }
    s
}

#[cfg(test)]
mod tests;
