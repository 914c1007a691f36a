//! CTC likelihood, greedy and Viterbi alignments, and posterior compression
//! on two five-frame posteriors.
//!
//! `cargo run --example ctc_alignment`

use nat_lab::ctc::{
    alignment_score, collapse, compress, ctc_log_likelihood, greedy_decode, viterbi_align, LabelSequence,
    PosteriorMatrix,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let p = PosteriorMatrix::from_rows(&[
        vec![0.1, 0.8, 0.05, 0.05],
        vec![0.7, 0.1, 0.1, 0.1],
        vec![0.1, 0.1, 0.7, 0.1],
        vec![0.2, 0.1, 0.6, 0.1],
        vec![0.1, 0.1, 0.1, 0.7],
    ])?;

    let greedy = greedy_decode(&p);
    println!("greedy alignment  {:?}", greedy.frames());
    println!("collapsed         {:?}", collapse(&greedy).tokens());
    let c = compress(&p, &greedy)?;
    for (span, row) in c.spans.iter().zip(&c.rows) {
        println!("  frames {:?} -> {:?}", span, row);
    }

    // Training compresses along the best path to the reference instead.
    let p = PosteriorMatrix::from_rows(&[
        vec![0.7, 0.2, 0.1],
        vec![0.1, 0.8, 0.1],
        vec![0.6, 0.2, 0.2],
        vec![0.1, 0.1, 0.8],
        vec![0.2, 0.1, 0.7],
    ])?;
    let lp = p.log_probs();
    let target = LabelSequence::new(vec![1, 2])?;
    let forced = viterbi_align(&lp, &target)?;
    println!("viterbi for {:?}  {:?}", target.tokens(), forced.frames());
    println!("path log-score    {:.4}", alignment_score(&lp, &forced));
    println!("log p(target)     {:.4}", ctc_log_likelihood(&lp, &target));
    let c = compress(&p, &forced)?;
    println!("training spans    {:?}", c.spans);
    Ok(())
}
