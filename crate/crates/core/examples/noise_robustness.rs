//! Null-output percentage of paraformer and paraformer_v2 on pure-noise
//! clips: a model should output nothing when there is no speech.
//!
//! `cargo run --release --example noise_robustness -- 1500`

use nat_lab::data::{gen_dataset, Regime, DEFAULT_U_RANGE, NOISE_TEST_CLIPS};
use nat_lab::model::{ModelConfig, Variant};
use nat_lab::train::{evaluate, null_output_rate, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: u64 = std::env::args().nth(1).map_or(Ok(1500), |s| s.parse())?;
    let regime = Regime::regular();
    let train_set = gen_dataset(&regime, 16, DEFAULT_U_RANGE, 2000, 0)?;
    let test_set = gen_dataset(&regime, 16, DEFAULT_U_RANGE, 200, 5_000_000)?;
    let noise = gen_dataset(&Regime::pure_noise(), 16, DEFAULT_U_RANGE, NOISE_TEST_CLIPS, 9_000_000)?;

    println!("{:<14} {:>8} {:>14}", "Model", "TER %", "Null output %");
    for variant in [Variant::Paraformer, Variant::ParaformerV2] {
        let cfg = TrainConfig {
            steps,
            ..TrainConfig::toy(1)
        };
        let model = train(&ModelConfig::toy(variant, 16), &train_set, &cfg)?.model;
        let ter = evaluate(&model, &test_set, 1)?.token_error_rate;
        let null = null_output_rate(&model, &noise, 1)?;
        println!("{variant:<14} {ter:>8.2} {:>14.1}", null.null_pct());
    }
    Ok(())
}
