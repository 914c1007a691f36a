//! Real-time factor of single-pass decoding (paraformer_v2) against
//! autoregressive beam search (ar_aed) on long utterances.
//!
//! `cargo run --release --example rtf_benchmark -- 1500`

use nat_lab::data::{gen_dataset, Regime, Span, DEFAULT_U_RANGE};
use nat_lab::model::{ModelConfig, Variant};
use nat_lab::train::{measure_rtf, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: u64 = std::env::args().nth(1).map_or(Ok(1500), |s| s.parse())?;
    let regime = Regime::regular();
    let train_set = gen_dataset(&regime, 16, DEFAULT_U_RANGE, 2000, 0)?;
    let long = gen_dataset(&regime, 16, Span::new(20, 24), 30, 7_000_000)?;
    let mean_u = long.iter().map(|u| u.target.len()).sum::<usize>() as f64 / long.len() as f64;
    println!("{} utterances, mean {mean_u:.1} tokens", long.len());

    println!("{:<14} {:>5} {:>10} {:>12}", "Model", "beam", "RTF", "mean tokens");
    let mut rtfs = Vec::new();
    for (variant, beam) in [(Variant::ParaformerV2, 1), (Variant::ArAed, 1), (Variant::ArAed, 5)] {
        let cfg = TrainConfig {
            steps,
            ..TrainConfig::toy(1)
        };
        let model = train(&ModelConfig::toy(variant, 16), &train_set, &cfg)?.model;
        let r = measure_rtf(&model, &long, beam)?;
        println!("{variant:<14} {beam:>5} {:>10.5} {:>12.2}", r.rtf, r.mean_tokens);
        rtfs.push(r.rtf);
    }
    println!("ar_aed beam 5 / paraformer_v2: {:.1}x", rtfs[2] / rtfs[0]);
    Ok(())
}
