//! Brute-force oracles shared by the integration tests. None of them reuse
//! the library's dynamic programs.

#![allow(dead_code)]

use nat_lab::tensor::Tensor;

/// One frame-level labelling that collapses to the target, with the index
/// of the extended-sequence state (blank, y1, blank, y2, ..) it occupies.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub labels: Vec<usize>,
    pub states: Vec<usize>,
}

/// Every frame labelling of length `frames` over `symbols` classes that
/// collapses to `target`, found by depth-first search over frames with
/// pruning on the emitted prefix and the frames left.
pub fn alignment_paths(frames: usize, symbols: usize, target: &[usize]) -> Vec<Path> {
    let mut out = Vec::new();
    let mut labels = Vec::with_capacity(frames);
    let mut states = Vec::with_capacity(frames);
    dfs(frames, symbols, target, 0, None, &mut labels, &mut states, &mut out);
    out
}

#[allow(clippy::too_many_arguments)]
fn dfs(
    frames: usize,
    symbols: usize,
    target: &[usize],
    emitted: usize,
    prev: Option<usize>,
    labels: &mut Vec<usize>,
    states: &mut Vec<usize>,
    out: &mut Vec<Path>,
) {
    let t = labels.len();
    if t == frames {
        if emitted == target.len() {
            out.push(Path {
                labels: labels.clone(),
                states: states.clone(),
            });
        }
        return;
    }
    // Frames still needed: one per remaining token plus one between repeats.
    let need = |from: usize, last: Option<usize>| -> usize {
        let mut n = 0;
        let mut p = last;
        for &y in &target[from..] {
            n += if p == Some(y) { 2 } else { 1 };
            p = Some(y);
        }
        n
    };
    for k in 0..symbols {
        let (next_emitted, state) = if k == 0 {
            (emitted, 2 * emitted)
        } else if prev == Some(k) {
            (emitted, 2 * emitted - 1)
        } else if emitted < target.len() && target[emitted] == k {
            (emitted + 1, 2 * emitted + 1)
        } else {
            continue;
        };
        let last = if k == 0 { None } else { Some(k) };
        if need(next_emitted, last) > frames - t - 1 {
            continue;
        }
        labels.push(k);
        states.push(state);
        dfs(frames, symbols, target, next_emitted, Some(k), labels, states, out);
        labels.pop();
        states.pop();
    }
}

/// Sum of `log_probs[t, labels[t]]`, accumulated left to right.
pub fn path_score(log_probs: &Tensor, labels: &[usize]) -> f64 {
    let mut s = 0.0;
    for (t, &k) in labels.iter().enumerate() {
        s += log_probs.at(t, k);
    }
    s
}

/// Probability of `target`: the sum over every collapsing path of the
/// product of its frame probabilities.
pub fn brute_force_likelihood(log_probs: &Tensor, target: &[usize]) -> f64 {
    alignment_paths(log_probs.rows(), log_probs.cols(), target)
        .iter()
        .map(|p| p.labels.iter().enumerate().map(|(t, &k)| log_probs.at(t, k).exp()).product::<f64>())
        .sum()
}

/// Highest-scoring collapsing path. Among equal scores the one whose state
/// sequence is smallest when compared from the last frame backwards wins,
/// i.e. token emission is deferred.
pub fn brute_force_viterbi(log_probs: &Tensor, target: &[usize]) -> Option<(Path, f64)> {
    let mut best: Option<(Path, f64)> = None;
    for p in alignment_paths(log_probs.rows(), log_probs.cols(), target) {
        let s = path_score(log_probs, &p.labels);
        let better = match &best {
            None => true,
            Some((b, bs)) => s > *bs || (s == *bs && p.states.iter().rev().lt(b.states.iter().rev())),
        };
        if better {
            best = Some((p, s));
        }
    }
    best
}

/// Levenshtein distance by plain recursion on the first symbols.
pub fn levenshtein(a: &[usize], b: &[usize]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = levenshtein(ra, rb) + usize::from(x != y);
            let del = levenshtein(ra, b) + 1;
            let ins = levenshtein(a, rb) + 1;
            sub.min(del).min(ins)
        }
    }
}
