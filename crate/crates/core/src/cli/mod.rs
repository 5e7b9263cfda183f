//! Command-line front end: `synth`, `train`, `eval` and `curve`.

mod manifest;
mod svg;

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use manifest::{RunManifest, RUN_MANIFEST};
pub use svg::render_curve_svg;

use crate::dataio::text::{create_dir, fmt_f64, write_string};
use crate::dataio::{content_hash, generate_synthetic, load_dataset, save_dataset, SynthConfig};
use crate::error::{Error, Result};
use crate::hallucinate::HallucinationConfig;
use crate::trainer::{selection_metric, train, Checkpoint, DualProtocolReport, SelectionMode, TrainConfig};
use crate::zsleval::{
    curve_auc, evaluate, read_curve_csv, sorted_polyline, write_curve_csv, write_predictions_csv, write_summary_csv,
    EvalConfig, EvalTarget, GammaGrid, Task,
};

/// Caps the worker count of the gamma sweep.
pub const THREADS_ENV: &str = "ZSLFORGE_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite(_) | Error::ZeroNorm { .. } => EXIT_NUMERIC,
        Error::InvalidArgument(_) | Error::Shape { .. } | Error::MissingMetric(_) => EXIT_USAGE,
        Error::Io { .. } | Error::Parse { .. } | Error::Dataset(_) => EXIT_IO,
        Error::UnknownNode(_) | Error::NonScalarSeed { .. } => EXIT_INTERNAL,
    }
}

#[derive(Debug, Parser)]
#[command(name = "zslforge", version, about = "Generative zero-shot learning toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic zero-shot dataset.
    Synth(SynthArgs),
    /// Train a generator, critic and regressor; writes checkpoints and logs.
    Train(Box<TrainArgs>),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Turn a curve CSV into a sorted polyline and optional SVG.
    Curve(CurveArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 15)]
    pub classes: usize,
    #[arg(long, default_value_t = 8)]
    pub rep_dim: usize,
    #[arg(long, default_value_t = 16)]
    pub feat_dim: usize,
    #[arg(long, default_value_t = 30)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    #[arg(long, default_value_t = 3)]
    pub unseen: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SelectArg {
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Zsl,
    Gzsl,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Zsl => Task::Zsl,
            TaskArg::Gzsl => Task::Gzsl,
        }
    }
}

/// Configuration flags are optional so that `--manifest` can be told apart
/// from an explicit configuration; unset flags take the library defaults.
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long, required_unless_present = "manifest")]
    pub data: Option<PathBuf>,
    /// Output directory; overrides the manifest's when both are given.
    #[arg(long, required_unless_present = "manifest")]
    pub out: Option<PathBuf>,
    /// Repeat the run recorded in a run manifest.
    #[arg(long, conflicts_with = "data")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub zdim: Option<usize>,
    #[arg(long)]
    pub lambda_sr: Option<f64>,
    #[arg(long)]
    pub lambda_cls: Option<f64>,
    #[arg(long)]
    pub lambda_pivot: Option<f64>,
    #[arg(long, value_enum)]
    pub halluc: Option<OnOff>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long, value_enum)]
    pub select: Option<SelectArg>,
    /// Critic updates per generator update.
    #[arg(long)]
    pub d_steps: Option<usize>,
    /// `cosine` or `neg_sq_dist`.
    #[arg(long)]
    pub sim: Option<String>,
    /// Comma-separated hidden widths.
    #[arg(long)]
    pub gen_hidden: Option<String>,
    #[arg(long)]
    pub disc_hidden: Option<String>,
    #[arg(long)]
    pub sr_hidden: Option<String>,
    /// Task evaluated at checkpoints; also picks the selection metric.
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    #[arg(long)]
    pub n_per_class: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "gzsl")]
    pub task: TaskArg,
    #[arg(long, default_value_t = 300)]
    pub n_per_class: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for feature synthesis.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `uniform:<points>`, `exact`, or comma-separated gamma values.
    #[arg(long, default_value = "uniform:200")]
    pub grid: String,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    /// Curve CSV written by `eval`.
    #[arg(long)]
    pub report: PathBuf,
    /// Polyline CSV output.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::invalid(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        },
    }
}

fn parse_widths(flag: &str, s: &str) -> Result<Vec<usize>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::invalid(format!("--{flag}: bad width '{t}'")))
        })
        .collect()
}

fn parse_grid(s: &str) -> Result<GammaGrid> {
    if s == "exact" {
        return Ok(GammaGrid::Exact);
    }
    if let Some(n) = s.strip_prefix("uniform:") {
        let points = n
            .parse()
            .map_err(|_| Error::invalid(format!("--grid: bad point count '{n}'")))?;
        return Ok(GammaGrid::Uniform { points });
    }
    let vals = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("--grid: bad value '{t}'")))
        })
        .collect::<Result<_>>()?;
    Ok(GammaGrid::Explicit(vals))
}

impl TrainArgs {
    fn has_config_flags(&self) -> bool {
        self.seed.is_some()
            || self.iters.is_some()
            || self.batch.is_some()
            || self.lr.is_some()
            || self.zdim.is_some()
            || self.lambda_sr.is_some()
            || self.lambda_cls.is_some()
            || self.lambda_pivot.is_some()
            || self.halluc.is_some()
            || self.checkpoint_every.is_some()
            || self.select.is_some()
            || self.d_steps.is_some()
            || self.sim.is_some()
            || self.gen_hidden.is_some()
            || self.disc_hidden.is_some()
            || self.sr_hidden.is_some()
            || self.task.is_some()
            || self.n_per_class.is_some()
    }

    pub fn to_config(&self) -> Result<TrainConfig> {
        let mut c = TrainConfig::default();
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.iters {
            c.iterations = v;
        }
        if let Some(v) = self.batch {
            c.batch_size = v;
        }
        if let Some(v) = self.lr {
            c.lr = v;
        }
        if let Some(v) = self.zdim {
            c.noise_dim = v;
        }
        if let Some(v) = self.lambda_sr {
            c.weights.lambda_sr = v;
        }
        if let Some(v) = self.lambda_cls {
            c.weights.lambda_cls = v;
        }
        if let Some(v) = self.lambda_pivot {
            c.weights.lambda_pivot = v;
        }
        if let Some(v) = self.halluc {
            c.hallucination = match v {
                OnOff::On => HallucinationConfig::default(),
                OnOff::Off => HallucinationConfig::disabled(),
            };
        }
        if let Some(v) = self.checkpoint_every {
            c.checkpoint_every = v;
        }
        if let Some(v) = self.select {
            c.selection_mode = match v {
                SelectArg::Val => SelectionMode::Validation,
                SelectArg::Test => SelectionMode::Test,
            };
        }
        if let Some(v) = self.d_steps {
            c.d_steps_per_g_step = v;
        }
        if let Some(v) = &self.sim {
            c.similarity = v.parse()?;
        }
        if let Some(v) = &self.gen_hidden {
            c.gen_hidden = parse_widths("gen-hidden", v)?;
        }
        if let Some(v) = &self.disc_hidden {
            c.disc_hidden = parse_widths("disc-hidden", v)?;
        }
        if let Some(v) = &self.sr_hidden {
            c.sr_hidden = parse_widths("sr-hidden", v)?;
        }
        if let Some(v) = self.task {
            c.eval.task = v.into();
        }
        if let Some(v) = self.n_per_class {
            c.eval.n_synthetic_per_class = v;
        }
        c.validate()?;
        Ok(c)
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        k_classes: a.classes,
        rep_dim: a.rep_dim,
        feat_dim: a.feat_dim,
        samples_per_class: a.per_class,
        noise_sigma: a.sigma,
        n_unseen: a.unseen,
        seed: a.seed,
    };
    let d = generate_synthetic(&cfg)?;
    save_dataset(&d, &a.out)
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut m = if let Some(path) = &a.manifest {
        if a.has_config_flags() {
            return Err(Error::invalid("configuration flags cannot be combined with --manifest"));
        }
        RunManifest::load(path)?
    } else {
        let data = a.data.clone().expect("clap requires --data");
        RunManifest {
            data_hash: String::new(),
            out: PathBuf::new(),
            config: a.to_config()?,
            data,
        }
    };
    if let Some(out) = &a.out {
        m.out = out.clone();
    }
    m.config.eval.threads = threads_from_env()?;

    let dataset = load_dataset(&m.data)?;
    let hash = content_hash(&dataset);
    if a.manifest.is_some() && hash != m.data_hash {
        return Err(Error::Dataset(format!(
            "dataset at {} does not match the manifest's content hash",
            m.data.display()
        )));
    }
    m.data_hash = hash;
    create_dir(&m.out)?;
    m.save(&m.out.join(RUN_MANIFEST))?;

    let outcome = train(&dataset, &m.config)?;
    outcome.write(&m.out)?;
    let metric = selection_metric(m.config.eval.task);
    DualProtocolReport::from_log(&outcome.log, metric)?.write_csv(&m.out.join("protocols.csv"))?;
    let chosen = &outcome.checkpoints[outcome.selected];
    write_string(
        &m.out.join("selected.txt"),
        &format!(
            "mode={}\ncheckpoint={}\niteration={}\n",
            m.config.selection_mode.name(),
            crate::trainer::checkpoint_file_name(chosen.iteration),
            chosen.iteration
        ),
    )
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let dataset = load_dataset(&a.data)?;
    let net = ckpt.net_config()?;
    if net.rep_dim != dataset.rep_dim() || net.feat_dim != dataset.feat_dim() {
        return Err(Error::shape(
            "eval",
            format!(
                "checkpoint expects rep_dim {} / feat_dim {}, dataset has {} / {}",
                net.rep_dim,
                net.feat_dim,
                dataset.rep_dim(),
                dataset.feat_dim()
            ),
        ));
    }
    let cfg = EvalConfig {
        n_synthetic_per_class: a.n_per_class,
        task: a.task.into(),
        gamma_grid: parse_grid(&a.grid)?,
        threads: threads_from_env()?,
        ..EvalConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let report = evaluate(&ckpt.params.generator, ckpt.noise_dim, &dataset, EvalTarget::Test, &cfg, &mut rng)?;
    create_dir(&a.out)?;
    write_summary_csv(&report, &a.out.join("summary.csv"))?;
    write_predictions_csv(&report.zsl_predictions, &a.out.join("predictions.csv"))?;
    if cfg.task == Task::Gzsl {
        write_curve_csv(&report.curve, &a.out.join("curve.csv"))?;
    }
    Ok(())
}

pub fn cmd_curve(a: &CurveArgs) -> Result<()> {
    let points = read_curve_csv(&a.report)?;
    if points.is_empty() {
        return Err(Error::Parse {
            path: a.report.clone(),
            detail: "curve has no points".into(),
        });
    }
    let poly = sorted_polyline(&points);
    let mut s = String::from("acc_seen,acc_unseen\n");
    for (x, y) in &poly {
        let _ = writeln!(s, "{},{}", fmt_f64(*x), fmt_f64(*y));
    }
    write_string(&a.out, &s)?;
    if let Some(path) = &a.svg {
        write_string(path, &render_curve_svg(&poly, curve_auc(&points)))?;
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Curve(a) => cmd_curve(a),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code, reporting failures on standard error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::invalid("x")), EXIT_USAGE);
        assert_eq!(exit_code(&Error::NonFinite("x".into())), EXIT_NUMERIC);
        assert_eq!(exit_code(&Error::ZeroNorm { row: 0 }), EXIT_NUMERIC);
        let io = Error::io("p", std::io::Error::other("boom"));
        assert_eq!(exit_code(&io), EXIT_IO);
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(main_with_args(["zslforge", "synth", "--out", "/nonexistent/x", "--unseen", "0"]), EXIT_USAGE);
        assert_eq!(main_with_args(["zslforge", "bogus"]), EXIT_USAGE);
        assert_eq!(main_with_args(["zslforge", "train", "--data", "d"]), EXIT_USAGE);
    }

    #[test]
    fn train_flags_map_to_config() {
        let cli = Cli::try_parse_from([
            "zslforge", "train", "--data", "d", "--out", "o", "--lambda-sr", "0", "--halluc", "off", "--select",
            "test", "--gen-hidden", "32,16", "--iters", "7",
        ])
        .unwrap();
        let Command::Train(a) = cli.command else { panic!() };
        let c = a.to_config().unwrap();
        assert_eq!(c.weights.lambda_sr, 0.0);
        assert!(!c.hallucination.enabled);
        assert_eq!(c.selection_mode, SelectionMode::Test);
        assert_eq!(c.gen_hidden, vec![32, 16]);
        assert_eq!(c.iterations, 7);
    }

    #[test]
    fn grid_flag() {
        assert_eq!(parse_grid("exact").unwrap(), GammaGrid::Exact);
        assert_eq!(parse_grid("uniform:5").unwrap(), GammaGrid::Uniform { points: 5 });
        assert_eq!(parse_grid("-1,0,2").unwrap(), GammaGrid::Explicit(vec![-1.0, 0.0, 2.0]));
        assert!(parse_grid("uniform:x").is_err());
    }
}
