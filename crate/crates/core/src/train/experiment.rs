use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{gen_dataset, Regime, RegimeName, Span, Utterance};
use crate::model::{ModelConfig, Variant};

use super::{curve_csv, evaluate, measure_rtf, null_output_rate, train, CurvePoint, Result, TrainConfig, TrainError};

/// How empty transcripts are counted, recorded in every report.
pub const NULL_RULE: &str = "a clip counts as null when the decoded transcript is empty: no CIF fire or no \
compressed posterior row (decoder skipped), every decoder position blank, an empty CTC collapse, or an \
immediate end symbol";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub variants: Vec<Variant>,
    pub regimes: Vec<RegimeName>,
    pub seeds: Vec<u64>,
    pub vocab_size: usize,
    pub u_range: Span,
    pub train_utterances: usize,
    pub test_utterances: usize,
    /// Pure-noise clips for the null-output test; 0 skips it.
    pub noise_clips: usize,
    /// Test utterances decoded for the RTF measurement; 0 skips it.
    pub rtf_utterances: usize,
    /// Beam width for ar_aed decoding.
    pub beam: usize,
    /// Template; `variant` is replaced per cell.
    pub model: ModelConfig,
    /// Template; `seed` is replaced per run.
    pub train: TrainConfig,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(TrainError::Config("experiment needs at least one seed".into()));
        }
        if self.variants.is_empty() || self.regimes.is_empty() {
            return Err(TrainError::Config("experiment needs variants and regimes".into()));
        }
        if self.regimes.contains(&RegimeName::PureNoise) {
            return Err(TrainError::Config("pure_noise has no targets to train on".into()));
        }
        if self.train_utterances == 0 || self.test_utterances == 0 {
            return Err(TrainError::Config("train and test sets must be non-empty".into()));
        }
        Ok(())
    }
}

/// Deterministic data seeds: disjoint ranges per run seed and split.
pub(crate) fn split_seeds(seed: u64) -> (u64, u64, u64) {
    let base = seed * 10_000_000;
    (base, base + 5_000_000, base + 9_000_000)
}

/// Train and test sets plus the noise set of one run seed.
pub fn experiment_data(spec: &ExperimentSpec, regime: RegimeName, seed: u64) -> Result<[Vec<Utterance>; 3]> {
    let r = Regime {
        d_feat: spec.model.d_feat,
        ..Regime::named(regime)
    };
    let noise = Regime {
        d_feat: spec.model.d_feat,
        ..Regime::pure_noise()
    };
    let (tr, te, nz) = split_seeds(seed);
    let err = |e: crate::data::DataError| TrainError::Config(e.to_string());
    Ok([
        gen_dataset(&r, spec.vocab_size, spec.u_range, spec.train_utterances, tr).map_err(err)?,
        gen_dataset(&r, spec.vocab_size, spec.u_range, spec.test_utterances, te).map_err(err)?,
        gen_dataset(&noise, spec.vocab_size, spec.u_range, spec.noise_clips, nz).map_err(err)?,
    ])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub token_error_rate: f64,
    pub null_output_pct: Option<f64>,
    /// Wall-clock derived; excluded from reproducibility checks.
    pub rtf: Option<f64>,
    pub final_loss: f64,
    pub loss_curve: Vec<CurvePoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub variant: Variant,
    pub regime: RegimeName,
    pub seeds: Vec<u64>,
    /// Medians over `seeds`.
    pub token_error_rate: f64,
    pub null_output_pct: Option<f64>,
    pub rtf: Option<f64>,
    pub per_seed: Vec<SeedResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub null_rule: String,
    pub rows: Vec<CellReport>,
}

impl ExperimentReport {
    pub fn cell(&self, variant: Variant, regime: RegimeName) -> Option<&CellReport> {
        self.rows.iter().find(|r| r.variant == variant && r.regime == regime)
    }

    /// Copy with every wall-clock field cleared.
    pub fn without_timing(&self) -> ExperimentReport {
        let mut r = self.clone();
        for row in &mut r.rows {
            row.rtf = None;
            row.per_seed.iter_mut().for_each(|s| s.rtf = None);
        }
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Median; the mean of the two middle values for even counts.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn median_opt(xs: Vec<Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = xs.into_iter().collect();
    v.filter(|v| !v.is_empty()).map(|v| median(&v))
}

fn run_cell(spec: &ExperimentSpec, variant: Variant, regime: RegimeName, seed: u64) -> Result<SeedResult> {
    let [train_set, test_set, noise_set] = experiment_data(spec, regime, seed)?;
    let model_cfg = ModelConfig {
        variant,
        ..spec.model.clone()
    };
    let cfg = TrainConfig {
        seed,
        ..spec.train.clone()
    };
    let outcome = train(&model_cfg, &train_set, &cfg)?;
    let eval = evaluate(&outcome.model, &test_set, spec.beam)?;
    let null_output_pct = if noise_set.is_empty() {
        None
    } else {
        Some(null_output_rate(&outcome.model, &noise_set, spec.beam)?.null_pct())
    };
    let rtf = if spec.rtf_utterances == 0 {
        None
    } else {
        let n = spec.rtf_utterances.min(test_set.len());
        Some(measure_rtf(&outcome.model, &test_set[..n], spec.beam)?.rtf)
    };
    Ok(SeedResult {
        seed,
        token_error_rate: eval.token_error_rate,
        null_output_pct,
        rtf,
        final_loss: outcome.loss_curve.last().map_or(f64::NAN, |p| p.loss),
        loss_curve: outcome.loss_curve,
    })
}

/// Train and evaluate every (variant, regime) cell over every seed. With
/// `out_dir`, writes `report.json` and one loss-curve CSV per run.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: Option<&Path>) -> Result<ExperimentReport> {
    spec.validate()?;
    let mut rows = Vec::new();
    for &regime in &spec.regimes {
        for &variant in &spec.variants {
            let per_seed = spec
                .seeds
                .iter()
                .map(|&seed| {
                    run_cell(spec, variant, regime, seed).map_err(|e| TrainError::Cell {
                        cell: format!("{variant}/{regime}/seed {seed}"),
                        source: Box::new(e),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(CellReport {
                variant,
                regime,
                seeds: spec.seeds.clone(),
                token_error_rate: median(&per_seed.iter().map(|s| s.token_error_rate).collect::<Vec<_>>()),
                null_output_pct: median_opt(per_seed.iter().map(|s| s.null_output_pct).collect()),
                rtf: median_opt(per_seed.iter().map(|s| s.rtf).collect()),
                per_seed,
            });
        }
    }
    let report = ExperimentReport {
        spec: spec.clone(),
        null_rule: NULL_RULE.to_string(),
        rows,
    };
    if let Some(dir) = out_dir {
        let io = |e: std::io::Error| TrainError::Config(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(io)?;
        fs::write(dir.join("report.json"), report.to_json()).map_err(io)?;
        for row in &report.rows {
            for s in &row.per_seed {
                let name = format!("curve_{}_{}_seed{}.csv", row.variant, row.regime, s.seed);
                fs::write(dir.join(name), curve_csv(&s.loss_curve)).map_err(io)?;
            }
        }
    }
    Ok(report)
}
