//! A small variants x regimes x seeds experiment with median reporting.
//! Writes report.json and loss-curve CSVs under the system temp directory.
//!
//! `cargo run --release --example experiment -- 600`

use nat_lab::data::{RegimeName, DEFAULT_U_RANGE};
use nat_lab::model::{ModelConfig, Variant};
use nat_lab::train::{run_experiment, ExperimentSpec, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: u64 = std::env::args().nth(1).map_or(Ok(600), |s| s.parse())?;
    let spec = ExperimentSpec {
        variants: vec![Variant::Paraformer, Variant::ParaformerV2],
        regimes: vec![RegimeName::Regular, RegimeName::Variable],
        seeds: vec![1, 2, 3],
        vocab_size: 16,
        u_range: DEFAULT_U_RANGE,
        train_utterances: 500,
        test_utterances: 100,
        noise_clips: 100,
        rtf_utterances: 20,
        beam: 1,
        model: ModelConfig::toy(Variant::ParaformerV2, 16),
        train: TrainConfig {
            steps,
            ..TrainConfig::toy(1)
        },
    };
    let out = std::env::temp_dir().join("nat_lab_experiment");
    std::fs::create_dir_all(&out)?;
    let report = run_experiment(&spec, Some(&out))?;
    println!("{:<14} {:<9} {:>8} {:>8} {:>9}", "Variant", "Regime", "TER %", "Null %", "RTF");
    for row in &report.rows {
        println!(
            "{:<14} {:<9} {:>8.2} {:>8.1} {:>9.5}",
            row.variant,
            row.regime,
            row.token_error_rate,
            row.null_output_pct.unwrap_or(f64::NAN),
            row.rtf.unwrap_or(f64::NAN)
        );
    }
    println!("report written to {}", out.join("report.json").display());
    Ok(())
}
