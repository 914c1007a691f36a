use crate::model::{Moments, ParamStore};
use crate::tensor::Tensor;

use super::TrainConfig;

/// Linear warmup to the peak rate, then inverse-square-root decay.
pub fn learning_rate(cfg: &TrainConfig, step: u64) -> f64 {
    let s = (step + 1) as f64;
    let w = cfg.warmup_steps.max(1) as f64;
    cfg.learning_rate * (s / w).min((w / s).sqrt())
}

/// Rescale all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= k);
    }
    norm
}

/// Adaptive moment estimation with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.values().iter().map(|p| vec![0.0; p.len()]).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn from_moments(m: Moments, t: u64) -> Self {
        Adam {
            m: m.first.into_iter().map(Tensor::into_vec).collect(),
            v: m.second.into_iter().map(Tensor::into_vec).collect(),
            t,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let c2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..grads.len() {
            let p = &params.values()[i];
            let mut data = p.data().to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, &g) in grads[i].iter().enumerate() {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
                data[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + cfg.eps);
            }
            let shape = p.shape().to_vec();
            params.set(i, Tensor::new(shape, data).expect("same shape"));
        }
    }

    /// Moment estimates shaped like `params`.
    pub fn moments(&self, params: &ParamStore) -> Moments {
        let shaped = |xs: &[Vec<f64>]| {
            xs.iter()
                .zip(params.values())
                .map(|(x, p)| Tensor::new(p.shape().to_vec(), x.clone()).expect("same shape"))
                .collect()
        };
        Moments {
            first: shaped(&self.m),
            second: shaped(&self.v),
        }
    }
}
