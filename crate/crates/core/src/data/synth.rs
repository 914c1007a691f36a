use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::ctc::LabelSequence;
use crate::tensor::Tensor;

use super::{DataError, DurationLaw, Regime, RegimeName, Result, Span, Utterance, FRAME_SHIFT_SEC};

fn sample_span(rng: &mut ChaCha8Rng, s: Span) -> usize {
    rng.random_range(s.min..=s.max)
}

fn sample_duration(rng: &mut ChaCha8Rng, law: &DurationLaw) -> usize {
    match *law {
        DurationLaw::Uniform(s) => sample_span(rng, s),
        DurationLaw::Mixture { p_short, short, long } => {
            if rng.random::<f64>() < p_short {
                sample_span(rng, short)
            } else {
                sample_span(rng, long)
            }
        }
    }
}

/// Unit-norm prototype of token `k`, a pure function of `(k, d_feat)`.
pub fn prototype(k: usize, d_feat: usize) -> Vec<f64> {
    let seed = 0x5eed_0000_0000_u64 ^ ((k as u64) << 16) ^ d_feat as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..d_feat).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Per-dimension RMS of a speech frame: unit-norm prototype plus
/// `sigma` perturbation spread over `d_feat` dimensions.
fn speech_rms(d_feat: usize, sigma: f64) -> f64 {
    ((1.0 + d_feat as f64 * sigma * sigma) / d_feat as f64).sqrt()
}

/// Coloured Gaussian noise of unit mean power per element: AR(1) in time
/// with a random correlation, and a random spectral tilt across
/// feature dimensions.
fn colored_noise(rng: &mut ChaCha8Rng, frames: usize, d_feat: usize) -> Vec<f64> {
    let rho: f64 = rng.random_range(0.3..0.9);
    let tilt: f64 = rng.random_range(-1.0..1.0);
    let denom = (d_feat.max(2) - 1) as f64;
    let mut gains: Vec<f64> = (0..d_feat)
        .map(|i| (tilt * (2.0 * i as f64 / denom - 1.0)).exp())
        .collect();
    let mean_sq = gains.iter().map(|g| g * g).sum::<f64>() / d_feat as f64;
    gains.iter_mut().for_each(|g| *g /= mean_sq.sqrt());
    let innov = (1.0 - rho * rho).sqrt();
    let mut state: Vec<f64> = (0..d_feat).map(|_| rng.sample(StandardNormal)).collect();
    let mut out = Vec::with_capacity(frames * d_feat);
    for t in 0..frames {
        if t > 0 {
            for s in state.iter_mut() {
                let e: f64 = rng.sample(StandardNormal);
                *s = rho * *s + innov * e;
            }
        }
        out.extend(state.iter().zip(&gains).map(|(s, g)| s * g));
    }
    out
}

/// Noise-only `[frames, d_feat]` features at speech-level loudness.
pub fn noise_frames(frames: usize, d_feat: usize, sigma: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f_6973_6500);
    let level = speech_rms(d_feat, sigma);
    let data = colored_noise(&mut rng, frames, d_feat)
        .into_iter()
        .map(|x| x * level)
        .collect();
    Tensor::matrix(frames, d_feat, data).expect("consistent shape")
}

fn utterance_id(regime: RegimeName, seed: u64) -> String {
    format!("{regime}-{seed:06}")
}

/// One synthetic utterance. For the pure-noise regime the clip length is
/// drawn from `regime.noise_frames` and the target is empty.
pub fn gen_utterance(regime: &Regime, vocab_size: usize, u_range: Span, seed: u64) -> Result<Utterance> {
    regime.validate()?;
    if regime.name == RegimeName::PureNoise {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = sample_span(&mut rng, regime.noise_frames);
        return gen_noise_utterance(regime, frames, seed);
    }
    if vocab_size < 2 {
        return Err(DataError::Range(format!("vocab_size {vocab_size} must be >= 2")));
    }
    if u_range.min < 1 || u_range.min > u_range.max {
        return Err(DataError::Range(format!(
            "token count range [{}, {}] must satisfy 1 <= min <= max",
            u_range.min, u_range.max
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = regime.d_feat;
    let u = sample_span(&mut rng, u_range);
    let tokens: Vec<usize> = (0..u).map(|_| rng.random_range(1..=vocab_size)).collect();

    let mut data = Vec::new();
    let mut push_frame = |rng: &mut ChaCha8Rng, base: Option<&[f64]>| {
        for i in 0..d {
            let e: f64 = rng.sample(StandardNormal);
            data.push(base.map_or(0.0, |b| b[i]) + regime.sigma * e);
        }
    };
    for (i, &k) in tokens.iter().enumerate() {
        let mut gap = sample_span(&mut rng, regime.silence);
        // Repeats need a silence frame between them to be separable.
        if i > 0 && tokens[i - 1] == k {
            gap = gap.max(1);
        }
        let dur = sample_duration(&mut rng, &regime.duration);
        for _ in 0..gap {
            push_frame(&mut rng, None);
        }
        let proto = prototype(k, d);
        for _ in 0..dur {
            push_frame(&mut rng, Some(&proto));
        }
    }
    let frames = data.len() / d;

    if let Some(snr_db) = regime.snr_db {
        let power = data.iter().map(|x| x * x).sum::<f64>() / data.len() as f64;
        let noise = colored_noise(&mut rng, frames, d);
        let noise_power = noise.iter().map(|x| x * x).sum::<f64>() / noise.len() as f64;
        let scale = (power / noise_power / 10f64.powf(snr_db / 10.0)).sqrt();
        data.iter_mut().zip(noise).for_each(|(x, n)| *x += scale * n);
    }

    Ok(Utterance {
        id: utterance_id(regime.name, seed),
        features: Tensor::matrix(frames, d, data).expect("consistent shape"),
        target: LabelSequence::new(tokens).expect("tokens start at 1"),
        duration_sec: frames as f64 * FRAME_SHIFT_SEC,
        regime: regime.name,
        seed,
    })
}

/// A clip with no token content and an empty target.
pub fn gen_noise_utterance(regime: &Regime, frames: usize, seed: u64) -> Result<Utterance> {
    if frames == 0 {
        return Err(DataError::Range("noise clip needs at least 1 frame".into()));
    }
    Ok(Utterance {
        id: utterance_id(RegimeName::PureNoise, seed),
        features: noise_frames(frames, regime.d_feat, regime.sigma, seed),
        target: LabelSequence::empty(),
        duration_sec: frames as f64 * FRAME_SHIFT_SEC,
        regime: RegimeName::PureNoise,
        seed,
    })
}

/// `count` utterances with seeds `first_seed..first_seed + count`.
pub fn gen_dataset(
    regime: &Regime,
    vocab_size: usize,
    u_range: Span,
    count: usize,
    first_seed: u64,
) -> Result<Vec<Utterance>> {
    (first_seed..first_seed + count as u64)
        .map(|s| gen_utterance(regime, vocab_size, u_range, s))
        .collect()
}
