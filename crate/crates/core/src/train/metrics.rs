use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ctc::LabelSequence;
use crate::data::Utterance;
use crate::model::Model;

use super::{Result, TrainError};

/// Environment variable capping evaluation threads.
pub const THREADS_ENV: &str = "NAT_LAB_THREADS";

/// Levenshtein distance with unit costs.
pub fn edit_distance(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `100 * sum(edit_distance) / sum(|ref|)`.
pub fn error_rate(hyps: &[LabelSequence], refs: &[LabelSequence]) -> Result<f64> {
    if refs.is_empty() {
        return Err(TrainError::Metric("no references".into()));
    }
    if hyps.len() != refs.len() {
        return Err(TrainError::Metric(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let words: usize = refs.iter().map(LabelSequence::len).sum();
    if words == 0 {
        return Err(TrainError::Metric("references are all empty".into()));
    }
    let errors: usize = hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| edit_distance(h.tokens(), r.tokens()))
        .sum();
    Ok(100.0 * errors as f64 / words as f64)
}

/// Thread count from `NAT_LAB_THREADS`, or rayon's default.
pub fn eval_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n >= 1)
        .unwrap_or_else(rayon::current_num_threads)
}

fn decode_all(model: &Model, data: &[Utterance], beam: usize) -> Result<Vec<LabelSequence>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(eval_threads())
        .build()
        .map_err(|e| TrainError::Metric(e.to_string()))?;
    pool.install(|| {
        data.par_iter()
            .map(|u| {
                model
                    .transcribe(&u.features, beam)
                    .map(|t| t.tokens)
                    .map_err(TrainError::from)
            })
            .collect()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UttResult {
    pub id: String,
    pub hyp: Vec<usize>,
    pub reference: Vec<usize>,
    pub distance: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub token_error_rate: f64,
    pub utterances: Vec<UttResult>,
}

impl EvalReport {
    /// Utterances with the largest edit distance first.
    pub fn worst(&self, n: usize) -> Vec<&UttResult> {
        let mut v: Vec<&UttResult> = self.utterances.iter().collect();
        v.sort_by(|a, b| b.distance.cmp(&a.distance).then_with(|| a.id.cmp(&b.id)));
        v.truncate(n);
        v
    }
}

/// Decode `data` and score it against the stored targets.
pub fn evaluate(model: &Model, data: &[Utterance], beam: usize) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let hyps = decode_all(model, data, beam)?;
    let refs: Vec<LabelSequence> = data.iter().map(|u| u.target.clone()).collect();
    let token_error_rate = error_rate(&hyps, &refs)?;
    let utterances = data
        .iter()
        .zip(hyps)
        .map(|(u, h)| UttResult {
            id: u.id.clone(),
            distance: edit_distance(h.tokens(), u.target.tokens()),
            hyp: h.into_vec(),
            reference: u.target.tokens().to_vec(),
        })
        .collect();
    Ok(EvalReport {
        token_error_rate,
        utterances,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullReport {
    pub null: usize,
    pub total: usize,
}

impl NullReport {
    pub fn null_pct(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.null as f64 / self.total as f64
        }
    }

    pub fn nonempty_pct(&self) -> f64 {
        100.0 - self.null_pct()
    }
}

/// Share of clips decoded to an empty transcript.
///
/// Every path to an empty transcript counts: no CIF fire or no compressed
/// row (decoder skipped), all decoder positions blank, an empty CTC
/// collapse, or an immediate end symbol.
pub fn null_output_rate(model: &Model, noise: &[Utterance], beam: usize) -> Result<NullReport> {
    let hyps = decode_all(model, noise, beam)?;
    Ok(NullReport {
        null: hyps.iter().filter(|h| h.is_empty()).count(),
        total: hyps.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RtfReport {
    pub rtf: f64,
    pub decode_sec: f64,
    pub audio_sec: f64,
    /// Number of timed regions; one per utterance.
    pub timed_regions: usize,
    pub mean_tokens: f64,
}

/// Real-time factor at batch size 1: decode wall time (encoder plus
/// generation) over total audio duration. Only `transcribe` calls are timed.
pub fn measure_rtf(model: &Model, data: &[Utterance], beam: usize) -> Result<RtfReport> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut spent = Duration::ZERO;
    let mut regions = 0;
    let mut tokens = 0;
    for u in data {
        let start = Instant::now();
        let t = model.transcribe(&u.features, beam)?;
        spent += start.elapsed();
        regions += 1;
        tokens += t.tokens.len();
    }
    let audio_sec: f64 = data.iter().map(|u| u.duration_sec).sum();
    let decode_sec = spent.as_secs_f64().max(f64::MIN_POSITIVE);
    Ok(RtfReport {
        rtf: decode_sec / audio_sec,
        decode_sec,
        audio_sec,
        timed_regions: regions,
        mean_tokens: tokens as f64 / data.len() as f64,
    })
}
