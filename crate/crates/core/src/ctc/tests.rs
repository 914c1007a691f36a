use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::{grad_check, Graph};

fn random_log_posterior(rng: &mut ChaCha8Rng, frames: usize, symbols: usize) -> Tensor {
    let mut data = Vec::with_capacity(frames * symbols);
    for _ in 0..frames {
        let row: Vec<f64> = (0..symbols).map(|_| rng.random_range(-3.0..3.0)).collect();
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z = row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
        data.extend(row.iter().map(|v| v - z));
    }
    Tensor::matrix(frames, symbols, data).unwrap()
}

/// Every label string of length `frames` over `symbols` symbols.
fn all_strings(frames: usize, symbols: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..frames {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..symbols).map(move |k| {
                    let mut q = p.clone();
                    q.push(k);
                    q
                })
            })
            .collect();
    }
    out
}

fn valid_alignments(frames: usize, symbols: usize, target: &LabelSequence) -> Vec<Alignment> {
    all_strings(frames, symbols)
        .into_iter()
        .map(Alignment)
        .filter(|a| &collapse(a) == target)
        .collect()
}

fn seq(tokens: &[usize]) -> LabelSequence {
    LabelSequence::new(tokens.to_vec()).unwrap()
}

#[test]
fn single_frame_single_token() {
    let lp = Tensor::matrix(1, 3, vec![0.2f64.ln(), 0.5f64.ln(), 0.3f64.ln()]).unwrap();
    let ll = ctc_log_likelihood(&lp, &seq(&[1]));
    assert!((ll - 0.5f64.ln()).abs() < 1e-15);
}

#[test]
fn two_frames_single_token_enumerates_three_paths() {
    // p1 = [blank .3, a .7], p2 = [blank .6, a .4]
    let lp = Tensor::matrix(2, 2, [0.3f64, 0.7, 0.6, 0.4].map(f64::ln).to_vec()).unwrap();
    let expected = (0.7 * 0.6 + 0.3 * 0.4 + 0.7 * 0.4f64).ln();
    let ll = ctc_log_likelihood(&lp, &seq(&[1]));
    assert!((ll - expected).abs() < 1e-15, "{ll} vs {expected}");
}

#[test]
fn too_short_is_negative_infinity() {
    let lp = Tensor::matrix(1, 3, vec![(1.0f64 / 3.0).ln(); 3]).unwrap();
    assert_eq!(ctc_log_likelihood(&lp, &seq(&[1, 2])), f64::NEG_INFINITY);
    let lp2 = Tensor::matrix(2, 3, vec![(1.0f64 / 3.0).ln(); 6]).unwrap();
    // [a, a] needs a separating blank
    assert_eq!(ctc_log_likelihood(&lp2, &seq(&[1, 1])), f64::NEG_INFINITY);
}

#[test]
fn empty_target_is_all_blank_path() {
    let lp = Tensor::matrix(2, 2, [0.3f64, 0.7, 0.6, 0.4].map(f64::ln).to_vec()).unwrap();
    let ll = ctc_log_likelihood(&lp, &LabelSequence::empty());
    assert!((ll - (0.3f64 * 0.6).ln()).abs() < 1e-15);
}

#[test]
fn forward_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let frames = rng.random_range(1..=6);
        let vocab = rng.random_range(1..=3);
        let u = rng.random_range(0..=3.min(frames));
        let target = seq(&(0..u).map(|_| rng.random_range(1..=vocab)).collect::<Vec<_>>());
        let lp = random_log_posterior(&mut rng, frames, vocab + 1);
        let brute: f64 = valid_alignments(frames, vocab + 1, &target)
            .iter()
            .map(|a| alignment_score(&lp, a).exp())
            .sum();
        let ll = ctc_log_likelihood(&lp, &target);
        if brute == 0.0 {
            assert_eq!(ll, f64::NEG_INFINITY);
        } else {
            assert!((ll.exp() - brute).abs() / brute < 1e-9);
        }
    }
}

#[test]
fn viterbi_matches_enumeration_and_collapses() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let frames = rng.random_range(1..=6);
        let vocab = rng.random_range(1..=3);
        let u = rng.random_range(0..=3.min(frames));
        let target = seq(&(0..u).map(|_| rng.random_range(1..=vocab)).collect::<Vec<_>>());
        let lp = random_log_posterior(&mut rng, frames, vocab + 1);
        let candidates = valid_alignments(frames, vocab + 1, &target);
        match viterbi_align(&lp, &target) {
            Ok(a) => {
                assert_eq!(collapse(&a), target);
                let best = candidates
                    .iter()
                    .map(|c| alignment_score(&lp, c))
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!((alignment_score(&lp, &a) - best).abs() < 1e-12);
                assert!(ctc_log_likelihood(&lp, &target) >= alignment_score(&lp, &a) - 1e-12);
            }
            Err(CtcError::Unalignable { .. }) => assert!(candidates.is_empty()),
            Err(e) => panic!("{e}"),
        }
    }
}

#[test]
fn viterbi_unique_alignment() {
    let lp = random_log_posterior(&mut ChaCha8Rng::seed_from_u64(4), 2, 3);
    assert_eq!(viterbi_align(&lp, &seq(&[1, 2])).unwrap(), Alignment(vec![1, 2]));
}

#[test]
fn viterbi_unalignable_carries_sizes() {
    let lp = random_log_posterior(&mut ChaCha8Rng::seed_from_u64(4), 1, 3);
    match viterbi_align(&lp, &seq(&[1, 2])) {
        Err(CtcError::Unalignable { t: 1, u: 2 }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn viterbi_ties_defer_emission() {
    // uniform posteriors: every valid alignment ties; the deferred one
    // keeps the earliest frames on blank and the last token to the end
    let lp = Tensor::matrix(4, 3, vec![(1.0f64 / 3.0).ln(); 12]).unwrap();
    let a = viterbi_align(&lp, &seq(&[1, 2])).unwrap();
    assert_eq!(a, Alignment(vec![0, 0, 1, 2]));
}

/// Posterior whose Viterbi path over five frames for target [a, b] is
/// [blank, a, blank, b, b].
fn worked_example_posterior() -> PosteriorMatrix {
    PosteriorMatrix::from_rows(&[
        vec![0.7, 0.2, 0.1],
        vec![0.1, 0.8, 0.1],
        vec![0.6, 0.2, 0.2],
        vec![0.1, 0.1, 0.8],
        vec![0.2, 0.1, 0.7],
    ])
    .unwrap()
}

#[test]
fn greedy_example_and_tie_rule() {
    let p = PosteriorMatrix::from_rows(&[
        vec![0.1, 0.8, 0.05, 0.05],
        vec![0.7, 0.1, 0.1, 0.1],
        vec![0.1, 0.1, 0.7, 0.1],
        vec![0.2, 0.1, 0.6, 0.1],
        vec![0.1, 0.1, 0.1, 0.7],
    ])
    .unwrap();
    assert_eq!(greedy_decode(&p), Alignment(vec![1, 0, 2, 2, 3]));
    let uniform = PosteriorMatrix::from_rows(&[vec![0.25; 4]]).unwrap();
    assert_eq!(greedy_decode(&uniform), Alignment(vec![0]));
    let silent = PosteriorMatrix::from_rows(&[vec![0.9, 0.1], vec![0.6, 0.4]]).unwrap();
    assert_eq!(greedy_decode(&silent), Alignment(vec![0, 0]));
}

#[test]
fn collapse_examples() {
    assert_eq!(collapse(&Alignment(vec![1, 0, 2, 2, 3])), seq(&[1, 2, 3]));
    assert_eq!(collapse(&Alignment(vec![0, 0])), LabelSequence::empty());
    assert_eq!(collapse(&Alignment(vec![1, 0, 1])), seq(&[1, 1]));
}

#[test]
fn inference_compression_example() {
    let p = PosteriorMatrix::from_rows(&[
        vec![0.1, 0.8, 0.05, 0.05],
        vec![0.7, 0.1, 0.1, 0.1],
        vec![0.1, 0.1, 0.7, 0.1],
        vec![0.2, 0.1, 0.6, 0.1],
        vec![0.1, 0.1, 0.1, 0.7],
    ])
    .unwrap();
    let c = compress(&p, &greedy_decode(&p)).unwrap();
    let avg: Vec<f64> = p.row(2).iter().zip(p.row(3)).map(|(a, b)| (a + b) / 2.0).collect();
    assert_eq!(c.rows, vec![p.row(0).to_vec(), avg, p.row(4).to_vec()]);
    assert_eq!(c.spans, vec![vec![0], vec![2, 3], vec![4]]);
}

#[test]
fn training_compression_example() {
    let p = worked_example_posterior();
    let a = viterbi_align(&p.log_probs(), &seq(&[1, 2])).unwrap();
    assert_eq!(a, Alignment(vec![0, 1, 0, 2, 2]));
    let c = compress(&p, &a).unwrap();
    let avg: Vec<f64> = p.row(3).iter().zip(p.row(4)).map(|(a, b)| (a + b) / 2.0).collect();
    assert_eq!(c.rows, vec![p.row(1).to_vec(), avg]);
}

#[test]
fn all_blank_compresses_to_nothing() {
    let p = PosteriorMatrix::from_rows(&[vec![0.9, 0.1], vec![0.8, 0.2]]).unwrap();
    let c = compress(&p, &Alignment(vec![0, 0])).unwrap();
    assert!(c.is_empty() && c.to_tensor().is_none());
}

#[test]
fn compress_rejects_length_mismatch() {
    let p = worked_example_posterior();
    assert!(matches!(
        compress(&p, &Alignment(vec![0, 1])),
        Err(CtcError::LengthMismatch { .. })
    ));
}

#[test]
fn averaging_matrix_matches_compress() {
    let p = worked_example_posterior();
    let a = Alignment(vec![1, 1, 0, 2, 2]);
    let c = compress(&p, &a).unwrap();
    let m = averaging_matrix(&c.spans, 5);
    let mut g = Graph::new();
    let mv = g.constant(m);
    let pv = g.constant(p.as_tensor().clone());
    let out = g.matmul(mv, pv).unwrap();
    for (u, row) in c.rows.iter().enumerate() {
        for (x, y) in g.value(out).row(u).iter().zip(row) {
            assert!((x - y).abs() < 1e-15);
        }
    }
}

#[test]
fn posterior_validation() {
    assert!(PosteriorMatrix::from_rows(&[vec![0.5, 0.6]]).is_err());
    assert!(PosteriorMatrix::from_rows(&[vec![1.5, -0.5]]).is_err());
    assert!(LabelSequence::new(vec![1, 0]).is_err());
}

#[test]
fn ctc_loss_gradient_matches_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = random_log_posterior(&mut rng, 4, 3);
        let u = rng.random_range(1..=2);
        let target = seq(&(0..u).map(|_| rng.random_range(1..=2)).collect::<Vec<_>>());
        let f = |g: &mut Graph, x| {
            let lp = g.log_softmax(x)?;
            ctc_loss(g, lp, &target, 1.0).map_err(|e| match e {
                CtcError::Tensor(t) => t,
                other => panic!("{other}"),
            })
        };
        let err = grad_check(f, &logits, 1e-5).unwrap();
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn ctc_loss_rejects_unalignable() {
    let mut g = Graph::new();
    let lp = g.param(random_log_posterior(&mut ChaCha8Rng::seed_from_u64(0), 1, 3));
    assert!(matches!(
        ctc_loss(&mut g, lp, &seq(&[1, 2]), 1.0),
        Err(CtcError::Unalignable { t: 1, u: 2 })
    ));
}
