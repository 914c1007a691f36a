//! Integrate-and-fire on hand-picked weights: training-time rescaling, the
//! split rule, and the inference tail rule.
//!
//! `cargo run --example cif_firing`

use nat_lab::cif::{integrate_and_fire, quantity_loss, scale_weights, FireMode, DEFAULT_THRESHOLD};
use nat_lab::tensor::Tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // One-hot encoder rows make each embedding show its frame weights.
    let h = Tensor::eye(3);
    let alpha = [0.6, 0.6, 0.6];

    let t = integrate_and_fire(&h, &alpha, DEFAULT_THRESHOLD, FireMode::Inference)?;
    println!("alpha {alpha:?} at inference: {} fires at frames {:?}", t.fired_embeddings.len(), t.fire_frames);
    for (u, e) in t.fired_embeddings.iter().enumerate() {
        println!("  E{} = {:?}", u + 1, e);
    }
    println!("  residual {:.3}, tail fired: {}", t.residual, t.plan.tail_fired);

    for target in [1, 2, 4] {
        let scaled = scale_weights(&alpha, target)?;
        let t = integrate_and_fire(&h, &scaled, DEFAULT_THRESHOLD, FireMode::Training)?;
        println!(
            "U={target}: quantity loss {:.2}, scaled {:?}, {} fires",
            quantity_loss(&alpha, target),
            scaled.iter().map(|a| (a * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            t.fired_embeddings.len()
        );
    }

    let quiet = [0.1, 0.1];
    let t = integrate_and_fire(&Tensor::eye(2), &quiet, DEFAULT_THRESHOLD, FireMode::Inference)?;
    println!("alpha {quiet:?}: {} fires (residual {:.1} is under half the threshold)", t.fired_embeddings.len(), t.residual);
    Ok(())
}
