//! Train one variant on the regular regime, report token error rate, and
//! round-trip the checkpoint.
//!
//! `cargo run --release --example train_toy -- paraformer_v2 3000`

use std::time::Instant;

use nat_lab::data::{gen_dataset, Regime, DEFAULT_U_RANGE};
use nat_lab::model::{Checkpoint, ModelConfig, Variant};
use nat_lab::train::{evaluate, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let variant: Variant = args.next().unwrap_or_else(|| "paraformer_v2".into()).parse()?;
    let steps: u64 = args.next().map_or(Ok(TrainConfig::toy(1).steps), |s| s.parse())?;
    let regime = Regime::regular();
    let train_set = gen_dataset(&regime, 16, DEFAULT_U_RANGE, 2000, 0)?;
    let test_set = gen_dataset(&regime, 16, DEFAULT_U_RANGE, 200, 5_000_000)?;

    let cfg = TrainConfig {
        steps,
        ..TrainConfig::toy(1)
    };
    let start = Instant::now();
    let out = train(&ModelConfig::toy(variant, 16), &train_set, &cfg)?;
    for p in out.loss_curve.iter().filter(|p| p.step % 250 == 0) {
        println!("step {:>5}  loss {:.4}  lr {:.2e}", p.step, p.loss, p.lr);
    }
    println!("trained {steps} steps in {:.1}s", start.elapsed().as_secs_f64());
    let report = evaluate(&out.model, &test_set, 5)?;
    println!("{variant}: token error rate {:.2}%", report.token_error_rate);
    for r in report.worst(3) {
        println!("  {} ref {:?} hyp {:?}", r.id, r.reference, r.hyp);
    }

    let path = std::env::temp_dir().join(format!("nat_lab_{variant}.ckpt"));
    out.checkpoint.save(&path)?;
    let back = Checkpoint::load(&path)?.model()?;
    println!("checkpoint {} reloads identically: {}", path.display(), back.params() == out.model.params());
    Ok(())
}
