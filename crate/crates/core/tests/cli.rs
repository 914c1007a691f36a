//! End-to-end checks of the `nat-lab` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clap::CommandFactory;
use tempfile::TempDir;

use nat_lab::cli::Cli;
use nat_lab::data::read_dataset;

fn nat_lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nat-lab")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, name: &str, regime: &str, count: usize, seed: u64) -> PathBuf {
    let path = dir.join(name);
    let o = nat_lab(&[
        "gen-data",
        "--regime",
        regime,
        "--count",
        &count.to_string(),
        "--seed",
        &seed.to_string(),
        "--u-min",
        "2",
        "--u-max",
        "4",
        "--out",
        s(&path),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    path
}

const SMALL_CONFIG: &str = r#"
[model]
variant = "ctc"
vocab_size = 16
d_feat = 16
d_model = 8
n_enc_layers = 1
n_dec_layers = 1
n_heads = 2
d_ff = 16

[train]
steps = 4
batch_size = 2
learning_rate = 1e-3
warmup_steps = 2
seed = 3
log_every = 1
"#;

fn config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn train_small(dir: &Path, variant: &str, data: &Path, name: &str) -> PathBuf {
    let cfg = config(dir, SMALL_CONFIG);
    let out = dir.join(name);
    let o = nat_lab(&["train", "--config", s(&cfg), "--variant", variant, "--data", s(data), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    out
}

#[test]
fn gen_data_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = gen(dir.path(), "a.jsonl", "variable", 5, 9);
    let b = gen(dir.path(), "b.jsonl", "variable", 5, 9);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(read_dataset(&a).unwrap().len(), 5);
}

#[test]
fn gen_data_count_zero_writes_an_empty_file() {
    let dir = TempDir::new().unwrap();
    let p = gen(dir.path(), "empty.jsonl", "regular", 0, 0);
    assert!(read_dataset(&p).unwrap().is_empty());
}

#[test]
fn gen_data_noise_set_has_every_clip() {
    let dir = TempDir::new().unwrap();
    let p = gen(dir.path(), "noise.jsonl", "pure_noise", 314, 0);
    let data = read_dataset(&p).unwrap();
    assert_eq!(data.len(), 314);
    assert!(data.iter().all(|u| u.target.is_empty()));
}

#[test]
fn invalid_regime_is_a_usage_error() {
    let o = nat_lab(&["gen-data", "--regime", "loud", "--count", "1", "--out", "x.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error[usage]: "), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
}

#[test]
fn unwritable_output_is_a_data_error() {
    let o = nat_lab(&["gen-data", "--regime", "regular", "--count", "1", "--out", "/nonexistent/dir/x.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[data]: "));
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    let o = nat_lab(&[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[usage]: "));
}

#[test]
fn train_writes_checkpoint_and_curve() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), "train.jsonl", "regular", 6, 1);
    let cfg = config(dir.path(), SMALL_CONFIG);
    let out = dir.path().join("v2.ckpt");
    let o = nat_lab(&[
        "train",
        "--config",
        s(&cfg),
        "--variant",
        "paraformer_v2",
        "--data",
        s(&data),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("trained paraformer_v2 to step 4"), "{text}");
    assert!(text.contains("final loss "), "{text}");
    assert!(out.exists());
    let csv = std::fs::read_to_string(out.with_extension("csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4, "{csv}");
}

#[test]
fn train_generates_data_from_config_section() {
    let dir = TempDir::new().unwrap();
    let text = format!("{SMALL_CONFIG}\n[data]\nregime = \"regular\"\ncount = 4\nu_min = 2\nu_max = 3\n");
    let cfg = config(dir.path(), &text);
    let out = dir.path().join("m.ckpt");
    let o = nat_lab(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("on 4 utterances"));
}

#[test]
fn missing_config_key_is_named() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), &SMALL_CONFIG.replace("steps = 4\n", ""));
    let o = nat_lab(&["train", "--config", s(&cfg), "--out", "m.ckpt"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error[usage]: ") && err.contains("`steps`"), "{err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), &SMALL_CONFIG.replace("seed = 3", "seed = 3\nmomentum = 0.9"));
    let o = nat_lab(&["train", "--config", s(&cfg), "--out", "m.ckpt"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("momentum"));
}

#[test]
fn resume_continues_the_step_counter() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), "train.jsonl", "regular", 6, 1);
    let first = train_small(dir.path(), "ctc", &data, "first.ckpt");
    let cfg = config(dir.path(), SMALL_CONFIG);
    let second = dir.path().join("second.ckpt");
    let o = nat_lab(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--resume",
        s(&first),
        "--steps",
        "7",
        "--out",
        s(&second),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("to step 7"), "{}", stdout(&o));
    let csv = std::fs::read_to_string(second.with_extension("csv")).unwrap();
    let steps: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(steps, ["4", "5", "6"]);
}

#[test]
fn resume_with_another_variant_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), "train.jsonl", "regular", 4, 1);
    let first = train_small(dir.path(), "ctc", &data, "first.ckpt");
    let cfg = config(dir.path(), SMALL_CONFIG);
    let o = nat_lab(&[
        "train",
        "--config",
        s(&cfg),
        "--variant",
        "paraformer",
        "--data",
        s(&data),
        "--resume",
        s(&first),
        "--out",
        s(&dir.path().join("x.ckpt")),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn eval_prints_a_report_fragment() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), "train.jsonl", "regular", 4, 1);
    let ckpt = train_small(dir.path(), "ctc", &data, "m.ckpt");
    let o = nat_lab(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--worst", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["variant"], "ctc");
    assert_eq!(v["utterances"], 4);
    assert!(v["token_error_rate"].as_f64().unwrap() >= 0.0);
    let worst = v["worst"].as_array().unwrap();
    assert_eq!(worst.len(), 2);
    for key in ["id", "distance", "reference", "hypothesis"] {
        assert!(worst[0].get(key).is_some(), "missing {key}");
    }
}

#[test]
fn eval_on_empty_data_fails() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), "train.jsonl", "regular", 4, 1);
    let ckpt = train_small(dir.path(), "ctc", &data, "m.ckpt");
    let empty = gen(dir.path(), "empty.jsonl", "regular", 0, 0);
    let o = nat_lab(&["eval", "--ckpt", s(&ckpt), "--data", s(&empty)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("empty dataset"));
}

#[test]
fn eval_rejects_mismatched_features() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), "train.jsonl", "regular", 4, 1);
    let narrow = SMALL_CONFIG.replace("d_feat = 16", "d_feat = 8");
    let cfg = config(dir.path(), &format!("{narrow}\n[data]\nregime = \"regular\"\ncount = 2\nu_min = 2\nu_max = 3\n"));
    let other = dir.path().join("narrow.ckpt");
    let o = nat_lab(&["train", "--config", s(&cfg), "--out", s(&other)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = nat_lab(&["eval", "--ckpt", s(&other), "--data", s(&data)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("feature columns"));
}

fn fixture(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("posterior.json");
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn align_fixture_prints_worked_example_spans() {
    let dir = TempDir::new().unwrap();
    let p = fixture(
        dir.path(),
        r#"{"posterior": [[0.1, 0.8, 0.05, 0.05], [0.7, 0.1, 0.1, 0.1], [0.1, 0.1, 0.7, 0.1],
            [0.2, 0.1, 0.6, 0.1], [0.1, 0.1, 0.1, 0.7]], "target": [1, 2, 3]}"#,
    );
    let o = nat_lab(&["align", "--posterior", s(&p)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("greedy compressed spans: {1} {3,4} {5}"), "{text}");
    assert!(text.contains("viterbi collapsed: [1, 2, 3]"), "{text}");
}

#[test]
fn align_all_blank_prints_empty_compression() {
    let dir = TempDir::new().unwrap();
    let p = fixture(dir.path(), r#"{"posterior": [[0.9, 0.1], [0.8, 0.2]]}"#);
    let o = nat_lab(&["align", "--posterior", s(&p)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("greedy compressed: empty"), "{}", stdout(&o));
}

#[test]
fn align_checkpoint_view_collapses_to_reference() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), "train.jsonl", "regular", 3, 1);
    let ckpt = train_small(dir.path(), "ctc", &data, "m.ckpt");
    for u in read_dataset(&data).unwrap() {
        let o = nat_lab(&["align", "--ckpt", s(&ckpt), "--data", s(&data), "--utt-id", &u.id]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let want = format!("viterbi collapsed: {:?}", u.target.tokens());
        assert!(stdout(&o).contains(&want), "{}", stdout(&o));
    }
    let o = nat_lab(&["align", "--ckpt", s(&ckpt), "--data", s(&data), "--utt-id", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope"));
}

#[test]
fn align_checkpoint_needs_data_and_id() {
    let o = nat_lab(&["align", "--ckpt", "m.ckpt"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bench_and_noise_tables() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), "train.jsonl", "regular", 4, 1);
    let v2 = train_small(dir.path(), "paraformer_v2", &data, "v2.ckpt");
    let ar = train_small(dir.path(), "ar_aed", &data, "ar.ckpt");
    let list = format!("{},{}", s(&v2), s(&ar));

    let csv = dir.path().join("rtf.csv");
    let o = nat_lab(&["bench-rtf", "--ckpt-list", &list, "--data", s(&data), "--beam", "2", "--csv", s(&csv)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 3, "{}", stdout(&o));
    let table = std::fs::read_to_string(&csv).unwrap();
    assert!(table.starts_with("model,variant,rtf,decode_sec,audio_sec,mean_tokens\n"));
    assert_eq!(table.lines().count(), 3);

    let noise = gen(dir.path(), "noise.jsonl", "pure_noise", 7, 0);
    let csv = dir.path().join("null.csv");
    let o = nat_lab(&["noise-test", "--ckpt-list", &list, "--noise-data", s(&noise), "--csv", s(&csv)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for line in stdout(&o).lines().skip(1) {
        let pct = line.split_whitespace().last().unwrap();
        let (_, frac) = pct.split_once('.').expect("one decimal");
        assert_eq!(frac.len(), 1, "{line}");
    }
    let table = std::fs::read_to_string(&csv).unwrap();
    assert!(table.starts_with("model,variant,null_output_pct,null,total\n"));
}

#[test]
fn missing_checkpoint_is_a_data_error() {
    let o = nat_lab(&["eval", "--ckpt", "/nonexistent.ckpt", "--data", "/nonexistent.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[data]: "));
}

#[test]
fn help_lists_every_flag() {
    let cli = Cli::command();
    for sub in cli.get_subcommands() {
        let name = sub.get_name();
        let o = nat_lab(&[name, "--help"]);
        assert_eq!(o.status.code(), Some(0));
        let help = stdout(&o);
        for arg in sub.get_arguments() {
            if let Some(long) = arg.get_long() {
                assert!(help.contains(&format!("--{long}")), "{name} --help omits --{long}");
            }
        }
    }
}
