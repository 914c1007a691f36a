use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::ctc::LabelSequence;
use crate::data::{gen_dataset, Regime, RegimeName, Span};
use crate::model::{Checkpoint, ModelConfig, Variant};
use crate::tensor::Tensor;

fn micro_data(n: usize) -> Vec<Utterance> {
    let regime = Regime {
        d_feat: 4,
        ..Regime::regular()
    };
    gen_dataset(&regime, 3, Span::new(1, 3), n, 0).unwrap()
}

fn micro_cfg(steps: u64) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 4,
        learning_rate: 3e-3,
        warmup_steps: 5,
        log_every: 1,
        ..TrainConfig::toy(7)
    }
}

fn seq(v: &[usize]) -> LabelSequence {
    LabelSequence::new(v.to_vec()).unwrap()
}

#[test]
fn schedule_warms_up_then_decays() {
    let cfg = TrainConfig {
        learning_rate: 1.0,
        warmup_steps: 100,
        ..TrainConfig::toy(0)
    };
    assert!((learning_rate(&cfg, 0) - 0.01).abs() < 1e-15);
    assert!((learning_rate(&cfg, 49) - 0.5).abs() < 1e-15);
    assert_eq!(learning_rate(&cfg, 99), 1.0);
    assert!((learning_rate(&cfg, 399) - 0.5).abs() < 1e-15);
}

#[test]
fn clipping_bounds_the_global_norm() {
    let mut g = vec![vec![3.0], vec![4.0, 0.0]];
    assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
    assert!((g[0][0] - 0.6).abs() < 1e-15 && (g[1][0] - 0.8).abs() < 1e-15);
    let mut small = vec![vec![0.1]];
    clip_global_norm(&mut small, 1.0);
    assert_eq!(small[0][0], 0.1);
}

#[test]
fn first_adam_step_moves_by_learning_rate() {
    let mut store = crate::model::ParamStore::default();
    store.insert("w", Tensor::from_vec(vec![1.0, -2.0]));
    let cfg = TrainConfig::toy(0);
    let mut adam = Adam::new(&store);
    adam.step(&mut store, &[vec![0.5, -3.0]], 0.1, &cfg);
    let w = store.get("w").unwrap().data();
    assert!((w[0] - 0.9).abs() < 1e-9 && (w[1] + 1.9).abs() < 1e-9, "{w:?}");
    assert_eq!(adam.steps(), 1);
}

#[test]
fn training_is_bit_reproducible() {
    let data = micro_data(8);
    for variant in Variant::ALL {
        let mc = ModelConfig::micro(variant, 3);
        let a = train(&mc, &data, &micro_cfg(6)).unwrap();
        let b = train(&mc, &data, &micro_cfg(6)).unwrap();
        assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes(), "{variant}");
        assert_eq!(a.loss_curve, b.loss_curve);
    }
}

#[test]
fn micro_run_decreases_smoothed_loss() {
    let data = micro_data(8);
    for variant in Variant::ALL {
        let out = train(&ModelConfig::micro(variant, 3), &data, &micro_cfg(20)).unwrap();
        let losses: Vec<f64> = out.loss_curve.iter().map(|p| p.loss).collect();
        assert_eq!(losses.len(), 20);
        let head: f64 = losses[..5].iter().sum::<f64>() / 5.0;
        let tail: f64 = losses[15..].iter().sum::<f64>() / 5.0;
        assert!(tail < head, "{variant}: {head} -> {tail}");
    }
}

#[test]
fn untrained_paraformer_v2_starts_near_uniform_ce() {
    let data = micro_data(8);
    let out = train(&ModelConfig::micro(Variant::ParaformerV2, 3), &data, &micro_cfg(1)).unwrap();
    let p = &out.loss_curve[0];
    assert!(p.loss > 0.0);
    assert!((p.ce.unwrap() - 4f64.ln()).abs() < 0.7, "{p:?}");
    assert!(p.ctc.unwrap() > 0.0);
    assert_eq!(p.loss, p.ce.unwrap() + p.ctc.unwrap());
}

#[test]
fn resume_continues_the_step_counter() {
    let data = micro_data(8);
    let mc = ModelConfig::micro(Variant::ParaformerV2, 3);
    let half = train(&mc, &data, &micro_cfg(5)).unwrap();
    assert_eq!(half.checkpoint.step, 5);
    let bytes = half.checkpoint.to_bytes();
    let resumed = resume(&Checkpoint::from_bytes(&bytes).unwrap(), &data, &micro_cfg(10)).unwrap();
    assert_eq!(resumed.checkpoint.step, 10);
    assert_eq!(resumed.loss_curve.first().unwrap().step, 5);
    let straight = train(&mc, &data, &micro_cfg(10)).unwrap();
    assert_eq!(resumed.checkpoint.params, straight.checkpoint.params);
}

#[test]
fn non_finite_loss_aborts_with_step() {
    let mut data = micro_data(4);
    let mut x = data[0].features.data().to_vec();
    x[0] = f64::NAN;
    data[0].features = Tensor::matrix(data[0].frames(), 4, x).unwrap();
    let cfg = TrainConfig {
        batch_size: 4,
        ..micro_cfg(3)
    };
    let err = train(&ModelConfig::micro(Variant::Ctc, 3), &data, &cfg).unwrap_err();
    assert!(matches!(err, TrainError::NonFinite { step: 0, .. }), "{err}");
    assert!(err.to_string().contains("ctc="));
}

#[test]
fn unalignable_data_is_rejected_before_training() {
    let mut data = micro_data(3);
    data[1].target = seq(&[1, 1, 2, 2, 3, 3, 1, 1, 2, 2, 3, 3, 1, 1, 2, 2]);
    let err = train(&ModelConfig::micro(Variant::Ctc, 3), &data, &micro_cfg(2)).unwrap_err();
    assert!(err.to_string().contains(&data[1].id), "{err}");
    assert!(train(&ModelConfig::micro(Variant::Ctc, 3), &[], &micro_cfg(2)).is_err());
    let bad = TrainConfig {
        learning_rate: 0.0,
        ..micro_cfg(2)
    };
    assert!(matches!(train(&ModelConfig::micro(Variant::Ctc, 3), &data, &bad), Err(TrainError::Config(_))));
}

fn levenshtein_oracle(a: &[usize], b: &[usize]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = levenshtein_oracle(ra, rb) + usize::from(x != y);
            sub.min(levenshtein_oracle(ra, b) + 1).min(levenshtein_oracle(a, rb) + 1)
        }
    }
}

#[test]
fn edit_distance_examples() {
    let w = |s: &str| s.bytes().map(usize::from).collect::<Vec<_>>();
    assert_eq!(edit_distance(&w("kitten"), &w("sitting")), 3);
    assert_eq!(edit_distance(&[], &[1, 2, 3, 4]), 4);
    assert_eq!(edit_distance(&[1, 2], &[1, 2]), 0);
}

#[test]
fn edit_distance_matches_recursive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let a: Vec<usize> = (0..rng.random_range(0..=8)).map(|_| rng.random_range(1..4)).collect();
        let b: Vec<usize> = (0..rng.random_range(0..=8)).map(|_| rng.random_range(1..4)).collect();
        assert_eq!(edit_distance(&a, &b), levenshtein_oracle(&a, &b), "{a:?} {b:?}");
    }
}

#[test]
fn error_rate_laws() {
    let refs = vec![seq(&[1, 2, 3]), seq(&[4])];
    assert_eq!(error_rate(&refs, &refs).unwrap(), 0.0);
    assert_eq!(error_rate(&[seq(&[]), seq(&[4])], &refs).unwrap(), 75.0);
    assert!(error_rate(&[], &[]).is_err());
    assert!(error_rate(&[seq(&[1])], &refs).is_err());
}

fn biased_ctc_model(winner: usize) -> Model {
    let mut m = Model::new(ModelConfig::micro(Variant::Ctc, 3), 0).unwrap();
    let i = m.params().names().iter().position(|n| n == "ctc.out.b").unwrap();
    let mut b = vec![0.0; 4];
    b[winner] = 100.0;
    m.params_mut().set(i, Tensor::from_vec(b));
    m
}

#[test]
fn null_output_rate_extremes() {
    let noise = gen_dataset(
        &Regime {
            d_feat: 4,
            ..Regime::pure_noise()
        },
        3,
        Span::new(1, 1),
        20,
        0,
    )
    .unwrap();
    let silent = null_output_rate(&biased_ctc_model(0), &noise, 1).unwrap();
    assert_eq!((silent.null_pct(), silent.total), (100.0, 20));
    let chatty = null_output_rate(&biased_ctc_model(2), &noise, 1).unwrap();
    assert_eq!(chatty.null_pct(), 0.0);
    for null in 0..=7 {
        let r = NullReport { null, total: 7 };
        assert_eq!(r.null_pct() + r.nonempty_pct(), 100.0);
    }
}

#[test]
fn rtf_is_positive_and_duration_normalized() {
    let model = Model::new(ModelConfig::micro(Variant::ParaformerV2, 3), 0).unwrap();
    let data = micro_data(30);
    let doubled: Vec<Utterance> = data
        .iter()
        .map(|u| {
            let mut x = u.features.data().to_vec();
            x.extend_from_slice(u.features.data());
            Utterance {
                features: Tensor::matrix(2 * u.frames(), 4, x).unwrap(),
                duration_sec: 2.0 * u.duration_sec,
                ..u.clone()
            }
        })
        .collect();
    let a = measure_rtf(&model, &data, 1).unwrap();
    let b = measure_rtf(&model, &doubled, 1).unwrap();
    assert!(a.rtf > 0.0 && b.rtf > 0.0);
    assert_eq!((a.timed_regions, b.timed_regions), (30, 30));
    let ratio = b.rtf / a.rtf;
    assert!((0.5..=2.0).contains(&ratio), "ratio {ratio}");
    assert!((b.audio_sec - 2.0 * a.audio_sec).abs() < 1e-9);
}

#[test]
fn eval_report_lists_worst_offenders() {
    let model = biased_ctc_model(0);
    let data = micro_data(5);
    let r = evaluate(&model, &data, 1).unwrap();
    assert_eq!(r.token_error_rate, 100.0);
    let worst = r.worst(2);
    assert_eq!(worst.len(), 2);
    assert!(worst[0].distance >= worst[1].distance);
    assert!(evaluate(&model, &[], 1).is_err());
}

#[test]
fn medians() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    assert_eq!(median(&[7.0]), 7.0);
}

fn tiny_spec() -> ExperimentSpec {
    ExperimentSpec {
        variants: vec![Variant::Paraformer, Variant::ParaformerV2],
        regimes: vec![RegimeName::Variable],
        seeds: vec![1, 2],
        vocab_size: 3,
        u_range: Span::new(1, 3),
        train_utterances: 8,
        test_utterances: 4,
        noise_clips: 3,
        rtf_utterances: 2,
        beam: 2,
        model: ModelConfig::micro(Variant::Ctc, 3),
        train: micro_cfg(3),
    }
}

#[test]
fn experiment_report_is_complete_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let spec = tiny_spec();
    let a = run_experiment(&spec, Some(dir.path())).unwrap();
    assert_eq!(a.rows.len(), 2);
    for row in &a.rows {
        assert_eq!(row.seeds, vec![1, 2]);
        assert_eq!(row.per_seed.len(), 2);
        let ters: Vec<f64> = row.per_seed.iter().map(|s| s.token_error_rate).collect();
        assert_eq!(row.token_error_rate, median(&ters));
        assert!(row.rtf.unwrap() > 0.0);
        let null = row.null_output_pct.unwrap();
        assert!((0.0..=100.0).contains(&null));
    }
    assert_eq!(a.null_rule, NULL_RULE);
    let b = run_experiment(&spec, None).unwrap();
    assert_eq!(a.without_timing(), b.without_timing());

    let json = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let parsed: ExperimentReport = serde_json::from_str(&json).unwrap();
    assert_eq!(parsed.without_timing(), a.without_timing());
    let csv = std::fs::read_to_string(dir.path().join("curve_paraformer_v2_variable_seed2.csv")).unwrap();
    assert!(csv.starts_with("step,loss,ce,ctc,quantity,lr,grad_norm\n"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn experiment_rejects_empty_seed_list() {
    let spec = ExperimentSpec {
        seeds: vec![],
        ..tiny_spec()
    };
    assert!(matches!(run_experiment(&spec, None), Err(TrainError::Config(_))));
}
