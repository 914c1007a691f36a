use super::*;

fn regular_u3(seed: u64) -> Utterance {
    gen_utterance(&Regime::regular(), 16, Span::new(3, 3), seed).unwrap()
}

#[test]
fn same_seed_is_bit_identical() {
    for regime in RegimeName::ALL {
        let r = Regime::named(regime);
        let a = gen_utterance(&r, 16, Span::new(2, 6), 42).unwrap();
        let b = gen_utterance(&r, 16, Span::new(2, 6), 42).unwrap();
        assert_eq!(a, b);
        let bits = |u: &Utterance| u.features.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}

#[test]
fn regular_three_tokens_span_9_to_24_frames() {
    let mut seen = (usize::MAX, 0);
    for seed in 0..2000 {
        let u = regular_u3(seed);
        assert_eq!(u.target.len(), 3);
        assert!((9..=24).contains(&u.frames()), "T = {}", u.frames());
        seen = (seen.0.min(u.frames()), seen.1.max(u.frames()));
        assert_eq!(u.duration_sec, u.frames() as f64 * 0.01);
    }
    assert!(seen.0 <= 10 && seen.1 >= 22, "{seen:?}");
}

#[test]
fn noiseless_token_frames_equal_prototypes() {
    let regime = Regime {
        sigma: 0.0,
        ..Regime::regular()
    };
    for seed in 0..50 {
        let u = gen_utterance(&regime, 8, Span::new(1, 5), seed).unwrap();
        let mut runs = Vec::new();
        let mut prev_zero = true;
        for t in 0..u.frames() {
            let row = u.features.row(t);
            if row.iter().all(|&x| x == 0.0) {
                prev_zero = true;
                continue;
            }
            let k = (1..=8).find(|&k| prototype(k, 16) == row).expect("frame is a prototype");
            if prev_zero || runs.last() != Some(&k) {
                runs.push(k);
            }
            prev_zero = false;
        }
        assert_eq!(runs, u.target.tokens());
    }
}

#[test]
fn prototypes_are_unit_norm_and_distinct() {
    for k in 1..=16 {
        let p = prototype(k, 16);
        let n: f64 = p.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
        assert_ne!(p, prototype(k + 1, 16));
    }
}

#[test]
fn repeated_tokens_are_separated_by_silence() {
    let regime = Regime {
        sigma: 0.0,
        ..Regime::regular()
    };
    for seed in 0..300 {
        let u = gen_utterance(&regime, 2, Span::new(4, 6), seed).unwrap();
        let nonzero = (0..u.frames())
            .filter(|&t| u.features.row(t).iter().any(|&x| x != 0.0))
            .count();
        assert!(nonzero >= 3 * u.target.len());
        assert!(u.frames() >= u.target.min_frames());
    }
}

#[test]
fn invalid_ranges_fail() {
    let r = Regime::regular();
    assert!(matches!(gen_utterance(&r, 1, Span::new(1, 2), 0), Err(DataError::Range(_))));
    assert!(matches!(gen_utterance(&r, 4, Span::new(0, 2), 0), Err(DataError::Range(_))));
    assert!(matches!(gen_utterance(&r, 4, Span::new(3, 2), 0), Err(DataError::Range(_))));
    let bad = Regime {
        duration: DurationLaw::Uniform(Span::new(0, 2)),
        ..Regime::regular()
    };
    assert!(gen_utterance(&bad, 4, Span::new(1, 2), 0).is_err());
    assert!(gen_noise_utterance(&Regime::pure_noise(), 0, 0).is_err());
}

#[test]
fn regime_names_round_trip() {
    for r in RegimeName::ALL {
        assert_eq!(r.as_str().parse::<RegimeName>().unwrap(), r);
    }
    let err = "bpe".parse::<RegimeName>().unwrap_err();
    assert!(err.to_string().contains("bpe"));
}

/// Token frames per utterance divided by U, from noiseless renders.
fn frames_per_token(regime: &Regime, seed: u64) -> f64 {
    let quiet = Regime {
        sigma: 0.0,
        snr_db: None,
        ..regime.clone()
    };
    let u = gen_utterance(&quiet, 16, Span::new(3, 8), seed).unwrap();
    let speech = (0..u.frames())
        .filter(|&t| u.features.row(t).iter().any(|&x| x != 0.0))
        .count();
    speech as f64 / u.target.len() as f64
}

fn variance(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

#[test]
fn variable_regime_has_much_higher_duration_variance() {
    let reg: Vec<f64> = (0..1000).map(|s| frames_per_token(&Regime::regular(), s)).collect();
    let var: Vec<f64> = (0..1000).map(|s| frames_per_token(&Regime::variable(), s)).collect();
    let ratio = variance(&var) / variance(&reg);
    assert!(ratio > 3.0, "variance ratio {ratio}");
}

#[test]
fn noise_clips_are_empty_and_deterministic() {
    let r = Regime::pure_noise();
    let clips = gen_dataset(&r, 16, Span::new(1, 1), NOISE_TEST_CLIPS, 0).unwrap();
    assert_eq!(clips.len(), 314);
    for c in &clips {
        assert!(c.target.is_empty());
        assert_eq!(c.regime, RegimeName::PureNoise);
        assert!((20..=60).contains(&c.frames()));
    }
    assert_eq!(gen_noise_utterance(&r, 30, 9).unwrap(), gen_noise_utterance(&r, 30, 9).unwrap());
    assert_ne!(gen_noise_utterance(&r, 30, 9).unwrap(), gen_noise_utterance(&r, 30, 10).unwrap());
}

#[test]
fn noise_is_uncorrelated_with_prototypes() {
    let r = Regime::pure_noise();
    let clips = gen_dataset(&r, 16, Span::new(1, 1), NOISE_TEST_CLIPS, 0).unwrap();
    for k in 1..=16 {
        let p = prototype(k, 16);
        let (mut sum, mut n) = (0.0, 0usize);
        for c in &clips {
            for t in 0..c.frames() {
                let row = c.features.row(t);
                let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                sum += row.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>() / norm;
                n += 1;
            }
        }
        let mean = (sum / n as f64).abs();
        assert!(mean < 0.1, "token {k}: |mean cosine| {mean}");
    }
}

#[test]
fn noisy_regime_mixes_noise_at_requested_snr() {
    let clean = gen_utterance(&Regime::regular(), 16, Span::new(3, 6), 5).unwrap();
    let noisy = gen_utterance(&Regime::noisy(), 16, Span::new(3, 6), 5).unwrap();
    assert_eq!(clean.target, noisy.target);
    assert_eq!(clean.frames(), noisy.frames());
    let p = |xs: &[f64]| xs.iter().map(|x| x * x).sum::<f64>();
    let noise: Vec<f64> = noisy
        .features
        .data()
        .iter()
        .zip(clean.features.data())
        .map(|(a, b)| a - b)
        .collect();
    let snr = 10.0 * (p(clean.features.data()) / p(&noise)).log10();
    assert!((snr - 10.0).abs() < 1e-9, "snr {snr}");
}

#[test]
fn dataset_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    let mut utts = Vec::new();
    for seed in 0..100u64 {
        let regime = Regime::named(RegimeName::ALL[seed as usize % 4]);
        utts.push(gen_utterance(&regime, 16, Span::new(1, 6), seed).unwrap());
    }
    write_dataset(&path, &utts).unwrap();
    let back = read_dataset(&path).unwrap();
    assert_eq!(back.len(), utts.len());
    for (a, b) in utts.iter().zip(&back) {
        assert_eq!(a, b);
        assert_eq!(a.duration_sec.to_bits(), b.duration_sec.to_bits());
        assert!(a.features.data().iter().zip(b.features.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn empty_file_reads_as_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.jsonl");
    write_dataset(&path, &[]).unwrap();
    assert!(read_dataset(&path).unwrap().is_empty());
}

#[test]
fn malformed_record_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    write_dataset(&path, &[regular_u3(1), regular_u3(2)]).unwrap();
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("{\"id\": \"broken\"}\n");
    std::fs::write(&path, text).unwrap();
    let err = read_dataset(&path).unwrap_err();
    assert!(matches!(err, DataError::Malformed { line: 3, .. }), "{err}");
    assert!(err.to_string().starts_with("line 3:"));
}
