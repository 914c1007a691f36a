//! The `nat-lab` command line.
//!
//! Failures print one line `error[<kind>]: <message>` to stderr and exit
//! with 1 (usage), 2 (data) or 3 (numeric).

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use config::{DataSection, PathsSection, RunConfig};

use crate::ctc::{collapse, compress, greedy_decode, viterbi_align, Alignment, LabelSequence, PosteriorMatrix};
use crate::data::{gen_dataset, read_dataset, write_dataset, Regime, RegimeName, Span, Utterance, DEFAULT_U_RANGE};
use crate::model::{Checkpoint, CheckpointError, Model, ModelError, Variant};
use crate::train::{
    curve_csv, evaluate, measure_rtf, null_output_rate, resume, run_experiment, train, ExperimentSpec, TrainError,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Numeric(_) => "numeric",
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let msg = e.to_string();
        match leaf(&e) {
            TrainError::NonFinite { .. } => CliError::Numeric(msg),
            TrainError::Config(_) | TrainError::VariantMismatch { .. } => CliError::Usage(msg),
            TrainError::Model(m) if matches!(m.root(), ModelError::Config(_)) => CliError::Usage(msg),
            _ => CliError::Data(msg),
        }
    }
}

fn leaf(e: &TrainError) -> &TrainError {
    match e {
        TrainError::Cell { source, .. } => leaf(source),
        other => other,
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "nat-lab", version, about = "Synthetic-data lab for CTC, CIF and posterior-compression recognizers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset file.
    GenData(GenDataArgs),
    /// Train one model and write a checkpoint plus a loss-curve CSV.
    Train(TrainArgs),
    /// Token error rate and worst offenders of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Greedy and Viterbi alignments of one utterance, side by side.
    Align(AlignArgs),
    /// Real-time factor of each checkpoint.
    BenchRtf(BenchArgs),
    /// Null-output percentage of each checkpoint on pure-noise clips.
    NoiseTest(NoiseArgs),
    /// Run a variants x regimes x seeds experiment from a TOML spec.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// regular, variable, noisy or pure_noise.
    #[arg(long)]
    pub regime: RegimeName,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = DEFAULT_U_RANGE.min)]
    pub u_min: usize,
    #[arg(long, default_value_t = DEFAULT_U_RANGE.max)]
    pub u_max: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run config (TOML with [model], [train], [data], [paths]).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides model.variant.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Overrides paths.data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint path; overrides paths.out. The curve goes next to it as .csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from this checkpoint's step and optimizer state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Overrides train.steps.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Overrides train.seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Beam width for ar_aed.
    #[arg(long, default_value_t = 1)]
    pub beam: usize,
    /// Worst utterances to list.
    #[arg(long, default_value_t = 5)]
    pub worst: usize,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// Checkpoint with a CTC head.
    #[arg(long, requires_all = ["data", "utt_id"], conflicts_with = "posterior")]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub utt_id: Option<String>,
    /// JSON fixture `{"posterior": [[...], ...], "target": [...]}` instead of a model.
    #[arg(long)]
    pub posterior: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated checkpoint paths.
    #[arg(long, value_delimiter = ',', required = true)]
    pub ckpt_list: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Beam width for ar_aed.
    #[arg(long, default_value_t = 5)]
    pub beam: usize,
    /// CSV output path.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    /// Comma-separated checkpoint paths.
    #[arg(long, value_delimiter = ',', required = true)]
    pub ckpt_list: Vec<PathBuf>,
    #[arg(long)]
    pub noise_data: PathBuf,
    /// Beam width for ar_aed.
    #[arg(long, default_value_t = 1)]
    pub beam: usize,
    /// CSV output path.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Experiment spec in TOML.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for report.json and the loss-curve CSVs.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parse `args`, run, and return the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                eprintln!("error[usage]: missing subcommand or argument; see --help");
                return 1;
            }
            if e.use_stderr() {
                let msg = e.to_string();
                let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
                eprintln!("error[usage]: {first}");
                return 1;
            }
            print!("{e}");
            return 0;
        }
    };
    let mut out = String::new();
    match run(cli.command, &mut out) {
        Ok(()) => {
            print!("{out}");
            0
        }
        Err(e) => {
            print!("{out}");
            eprintln!("error[{}]: {}", e.kind(), e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}

pub fn run(command: Command, out: &mut String) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Align(a) => align_cmd(a, out),
        Command::BenchRtf(a) => bench_cmd(a, out),
        Command::NoiseTest(a) => noise_cmd(a, out),
        Command::Experiment(a) => experiment_cmd(a, out),
    }
}

fn gen_data(a: GenDataArgs, out: &mut String) -> Result<()> {
    let regime = Regime::named(a.regime);
    let data = gen_dataset(&regime, a.vocab_size, Span::new(a.u_min, a.u_max), a.count, a.seed)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    write_dataset(&a.out, &data).map_err(data_err)?;
    let frames: Vec<usize> = data.iter().map(Utterance::frames).collect();
    let tokens: usize = data.iter().map(|u| u.target.len()).sum();
    let mean = |n: usize| if data.is_empty() { 0.0 } else { n as f64 / data.len() as f64 };
    let _ = writeln!(out, "wrote {} records to {}", data.len(), a.out.display());
    let _ = writeln!(
        out,
        "regime {}: frames mean {:.1} min {} max {}, tokens mean {:.2}, audio {:.2} s",
        a.regime,
        mean(frames.iter().sum()),
        frames.iter().min().copied().unwrap_or(0),
        frames.iter().max().copied().unwrap_or(0),
        mean(tokens),
        data.iter().map(|u| u.duration_sec).sum::<f64>(),
    );
    Ok(())
}

fn train_cmd(a: TrainArgs, out: &mut String) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(v) = a.variant {
        cfg.model.variant = v;
    }
    if let Some(d) = a.data {
        cfg.paths.data = Some(d);
    }
    if let Some(o) = a.out {
        cfg.paths.out = Some(o);
    }
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let ckpt_path = cfg
        .paths
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("no output path: pass --out or set paths.out".into()))?;
    let data = cfg.dataset()?;
    let outcome = match &a.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.config.variant != cfg.model.variant {
                return Err(TrainError::VariantMismatch {
                    expected: cfg.model.variant,
                    found: ckpt.config.variant,
                }
                .into());
            }
            resume(&ckpt, &data, &cfg.train)?
        }
        None => train(&cfg.model, &data, &cfg.train)?,
    };
    outcome.checkpoint.save(&ckpt_path)?;
    let csv_path = ckpt_path.with_extension("csv");
    fs::write(&csv_path, curve_csv(&outcome.loss_curve)).map_err(|e| data_err(format!("{}: {e}", csv_path.display())))?;
    let last = outcome.loss_curve.last();
    let _ = writeln!(
        out,
        "trained {} to step {} on {} utterances",
        cfg.model.variant,
        outcome.checkpoint.step,
        data.len()
    );
    let _ = writeln!(out, "final loss {:.6}", last.map_or(f64::NAN, |p| p.loss));
    let _ = writeln!(out, "checkpoint {}", ckpt_path.display());
    let _ = writeln!(out, "loss curve {}", csv_path.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<Model> {
    let ckpt = Checkpoint::load(path)?;
    ckpt.model().map_err(|e| data_err(format!("{}: {e}", path.display())))
}

fn load_data(path: &Path, model: &Model) -> Result<Vec<Utterance>> {
    let data = read_dataset(path).map_err(data_err)?;
    let want = model.config().d_feat;
    if let Some(u) = data.iter().find(|u| u.features.cols() != want) {
        return Err(data_err(format!(
            "{}: utterance {} has {} feature columns, the model expects {want}",
            path.display(),
            u.id,
            u.features.cols()
        )));
    }
    Ok(data)
}

/// The report fragment `eval` prints as one JSON line.
#[derive(Debug, Serialize)]
pub struct EvalFragment {
    pub checkpoint: String,
    pub variant: Variant,
    pub utterances: usize,
    pub token_error_rate: f64,
    pub worst: Vec<WorstEntry>,
}

#[derive(Debug, Serialize)]
pub struct WorstEntry {
    pub id: String,
    pub distance: usize,
    pub reference: Vec<usize>,
    pub hypothesis: Vec<usize>,
}

fn eval_cmd(a: EvalArgs, out: &mut String) -> Result<()> {
    let model = load_model(&a.ckpt)?;
    let data = load_data(&a.data, &model)?;
    if data.is_empty() {
        return Err(data_err(format!("{}: empty dataset", a.data.display())));
    }
    let report = evaluate(&model, &data, a.beam)?;
    let fragment = EvalFragment {
        checkpoint: a.ckpt.display().to_string(),
        variant: model.variant(),
        utterances: data.len(),
        token_error_rate: report.token_error_rate,
        worst: report
            .worst(a.worst)
            .into_iter()
            .map(|r| WorstEntry {
                id: r.id.clone(),
                distance: r.distance,
                reference: r.reference.clone(),
                hypothesis: r.hyp.clone(),
            })
            .collect(),
    };
    let _ = writeln!(out, "{}", serde_json::to_string(&fragment).expect("fragment serializes"));
    Ok(())
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct PosteriorFixture {
    posterior: Vec<Vec<f64>>,
    #[serde(default)]
    target: Option<Vec<usize>>,
}

fn align_cmd(a: AlignArgs, out: &mut String) -> Result<()> {
    let (posterior, target, title) = if let Some(path) = &a.posterior {
        let text = fs::read_to_string(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
        let fx: PosteriorFixture =
            serde_json::from_str(&text).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
        let p = PosteriorMatrix::from_rows(&fx.posterior).map_err(data_err)?;
        let t = fx.target.map(LabelSequence::new).transpose().map_err(data_err)?;
        (p, t, path.display().to_string())
    } else {
        let (Some(ckpt), Some(data), Some(id)) = (&a.ckpt, &a.data, &a.utt_id) else {
            return Err(CliError::Usage("align needs --posterior, or --ckpt with --data and --utt-id".into()));
        };
        let model = load_model(ckpt)?;
        if !model.variant().has_ctc_head() {
            return Err(CliError::Usage(format!("{} has no CTC head to align with", model.variant())));
        }
        let utts = load_data(data, &model)?;
        let u = utts
            .iter()
            .find(|u| &u.id == id)
            .ok_or_else(|| data_err(format!("{}: no utterance {id}", data.display())))?;
        let lp = model.ctc_log_posteriors(&u.features)?;
        let p = PosteriorMatrix::from_log(&lp).map_err(data_err)?;
        (p, Some(u.target.clone()), id.clone())
    };
    let greedy = greedy_decode(&posterior);
    let viterbi = target
        .as_ref()
        .map(|t| viterbi_align(&posterior.log_probs(), t))
        .transpose()
        .map_err(data_err)?;
    let _ = writeln!(out, "alignment of {title}: {} frames", posterior.frames());
    let _ = writeln!(out, "{:>5}  {:>6}  {:>7}", "frame", "greedy", "viterbi");
    for t in 0..posterior.frames() {
        let v = viterbi.as_ref().map_or("-".to_string(), |a| a.frames()[t].to_string());
        let _ = writeln!(out, "{:>5}  {:>6}  {:>7}", t + 1, greedy.frames()[t], v);
    }
    describe_alignment(out, "greedy", &posterior, &greedy)?;
    match &viterbi {
        Some(v) => describe_alignment(out, "viterbi", &posterior, v)?,
        None => {
            let _ = writeln!(out, "viterbi: no target given");
        }
    }
    Ok(())
}

fn describe_alignment(out: &mut String, name: &str, p: &PosteriorMatrix, a: &Alignment) -> Result<()> {
    let c = compress(p, a).map_err(data_err)?;
    let _ = writeln!(out, "{name} collapsed: {:?}", collapse(a).tokens());
    let spans: Vec<String> = c
        .spans
        .iter()
        .map(|s| format!("{{{}}}", s.iter().map(|t| (t + 1).to_string()).collect::<Vec<_>>().join(",")))
        .collect();
    if spans.is_empty() {
        let _ = writeln!(out, "{name} compressed: empty");
    } else {
        let _ = writeln!(out, "{name} compressed spans: {}", spans.join(" "));
    }
    Ok(())
}

fn write_csv(path: &Option<PathBuf>, text: &str) -> Result<()> {
    if let Some(p) = path {
        fs::write(p, text).map_err(|e| data_err(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn bench_cmd(a: BenchArgs, out: &mut String) -> Result<()> {
    let mut csv = String::from("model,variant,rtf,decode_sec,audio_sec,mean_tokens\n");
    let _ = writeln!(out, "{:<28} {:<14} {:>10} {:>12}", "Model", "Variant", "RTF", "mean tokens");
    for path in &a.ckpt_list {
        let model = load_model(path)?;
        let data = load_data(&a.data, &model)?;
        let r = measure_rtf(&model, &data, a.beam)?;
        let name = path.display().to_string();
        let _ = writeln!(out, "{name:<28} {:<14} {:>10.5} {:>12.2}", model.variant(), r.rtf, r.mean_tokens);
        let _ = writeln!(
            csv,
            "{name},{},{},{},{},{}",
            model.variant(),
            r.rtf,
            r.decode_sec,
            r.audio_sec,
            r.mean_tokens
        );
    }
    write_csv(&a.csv, &csv)
}

fn noise_cmd(a: NoiseArgs, out: &mut String) -> Result<()> {
    let mut csv = String::from("model,variant,null_output_pct,null,total\n");
    let _ = writeln!(out, "{:<28} {:<14} {:>12}", "Model", "Variant", "Null output %");
    for path in &a.ckpt_list {
        let model = load_model(path)?;
        let data = load_data(&a.noise_data, &model)?;
        let r = null_output_rate(&model, &data, a.beam)?;
        let name = path.display().to_string();
        let _ = writeln!(out, "{name:<28} {:<14} {:>12.1}", model.variant(), r.null_pct());
        let _ = writeln!(csv, "{name},{},{:.1},{},{}", model.variant(), r.null_pct(), r.null, r.total);
    }
    write_csv(&a.csv, &csv)
}

fn experiment_cmd(a: ExperimentArgs, out: &mut String) -> Result<()> {
    let text = fs::read_to_string(&a.config).map_err(|e| data_err(format!("{}: {e}", a.config.display())))?;
    let spec: ExperimentSpec = toml::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {}", a.config.display(), e.message())))?;
    fs::create_dir_all(&a.out).map_err(|e| data_err(format!("{}: {e}", a.out.display())))?;
    let report = run_experiment(&spec, Some(&a.out))?;
    let _ = writeln!(out, "{:<14} {:<9} {:>8} {:>8} {:>10}", "Variant", "Regime", "TER %", "Null %", "RTF");
    for row in &report.rows {
        let opt = |x: Option<f64>, p: usize| x.map_or("-".to_string(), |v| format!("{v:.p$}"));
        let _ = writeln!(
            out,
            "{:<14} {:<9} {:>8.2} {:>8} {:>10}",
            row.variant,
            row.regime,
            row.token_error_rate,
            opt(row.null_output_pct, 1),
            opt(row.rtf, 5)
        );
    }
    let _ = writeln!(out, "report {}", a.out.join("report.json").display());
    Ok(())
}
