//! Generate each regime, print its statistics, and round-trip a dataset file.
//!
//! `cargo run --example synth_data`

use nat_lab::data::{gen_dataset, read_dataset, write_dataset, Regime, RegimeName, DEFAULT_U_RANGE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for name in RegimeName::ALL {
        let data = gen_dataset(&Regime::named(name), 16, DEFAULT_U_RANGE, 200, 0)?;
        let frames: Vec<usize> = data.iter().map(|u| u.frames()).collect();
        let tokens: usize = data.iter().map(|u| u.target.len()).sum();
        println!(
            "{name:<10} frames {:>3}..{:<3} mean {:>5.1}  tokens/utt {:>5.2}  audio {:>6.2} s",
            frames.iter().min().unwrap(),
            frames.iter().max().unwrap(),
            frames.iter().sum::<usize>() as f64 / data.len() as f64,
            tokens as f64 / data.len() as f64,
            data.iter().map(|u| u.duration_sec).sum::<f64>()
        );
    }

    let first = gen_dataset(&Regime::regular(), 16, DEFAULT_U_RANGE, 1, 42)?.remove(0);
    println!("\n{} target {:?}", first.id, first.target.tokens());
    for t in 0..first.frames().min(6) {
        let row: Vec<String> = first.features.row(t)[..6].iter().map(|x| format!("{x:+.2}")).collect();
        println!("  frame {t}: [{} ..]", row.join(" "));
    }

    let dir = std::env::temp_dir().join("nat_lab_synth_example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("noisy.jsonl");
    let data = gen_dataset(&Regime::noisy(), 16, DEFAULT_U_RANGE, 50, 7)?;
    write_dataset(&path, &data)?;
    let back = read_dataset(&path)?;
    println!("\nwrote and re-read {} records, identical: {}", back.len(), back == data);
    Ok(())
}
