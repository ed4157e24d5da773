//! Command implementations behind the `ibm2` binary.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ibm2_core::episodes::{run_experiment, DataSource, LrPolicy, Method, Mode, RunConfig};
use ibm2_core::feature_store::{import_csv, l2_normalize, synth_mixture, write_feature_file, MixtureSpec};
use ibm2_core::noise::SamplingMode;
use ibm2_core::report::{render_csv, render_text, to_json_string, Arm, ReportDocument};
use ibm2_core::Error;

/// Environment variable that overrides `--jobs`.
pub const THREADS_ENV: &str = "IBM2_THREADS";

/// R values swept by `ablate-r` when `--values` is absent.
pub const DEFAULT_R_VALUES: &[usize] = &[1, 10, 50, 200, 400];

#[derive(Debug, Parser)]
#[command(name = "ibm2", version, about = "Instance-based max-margin few-shot experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a headerless `label,f1,...,fd` CSV into a binary feature file.
    Import(ImportArgs),
    /// Write the train and test splits of a synthetic mixture.
    Synth(SynthArgs),
    /// Run an experiment and write its JSON report.
    Run(RunArgs),
    /// Sweep the number of virtual examples per instance.
    AblateR(AblateRArgs),
    /// Compare baseline, spherical and ellipsoidal sampling.
    AblateSampling(RunArgs),
    /// Render a JSON report as an aligned table or CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    pub csv: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// L2-normalize rows before writing.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
    pub preset: Option<String>,
    /// Mixture description as JSON.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Overrides the seed of `--spec`; presets default to 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON run config; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; `IBM2_THREADS` takes precedence.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub sampling: Option<SamplingMode>,
    /// Virtual examples per instance.
    #[arg(long)]
    pub r: Option<usize>,
    /// Initial training-accuracy threshold.
    #[arg(long)]
    pub t: Option<f64>,
    /// A learning rate, `default`, `grid` or `probe`.
    #[arg(long)]
    pub lr: Option<LrPolicy>,
    /// Draw fresh noise at every search step.
    #[arg(long)]
    pub resample_per_step: bool,
    #[arg(long, value_delimiter = ',')]
    pub shots: Option<Vec<usize>>,
    #[arg(long)]
    pub way: Option<usize>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Synthetic preset to use as data.
    #[arg(long, conflicts_with = "pool")]
    pub preset: Option<String>,
    /// Feature file to sample tasks from.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// Feature file with the many-way test split.
    #[arg(long, requires = "pool")]
    pub test: Option<PathBuf>,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateRArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_R_VALUES.to_vec())]
    pub values: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub report: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failure with its exit code and a short machine-readable kind.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    /// `ibm2: error[kind]: message` on a single line.
    pub fn line(&self) -> String {
        let message = self.message.replace(['\n', '\r'], " ");
        format!("ibm2: error[{}]: {}", self.kind, message.trim())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = classify(&e);
        Failure {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

fn classify(e: &Error) -> (i32, &'static str) {
    match e {
        Error::Json(_) | Error::InvalidConfig(_) => (3, "config"),
        Error::File { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
            (4, "missing-file")
        }
        Error::File { .. } | Error::Io(_) => (1, "io"),
        Error::Episode { source, .. } => classify(source),
        Error::BadMagic { .. }
        | Error::VersionMismatch { .. }
        | Error::TruncatedPayload(_)
        | Error::LabelOutOfRange { .. }
        | Error::RaggedRows { .. }
        | Error::NonNumeric { .. }
        | Error::NegativeLabel { .. }
        | Error::ZeroNormRow { .. }
        | Error::InvalidDataset(_)
        | Error::InsufficientRows { .. }
        | Error::InsufficientClasses { .. } => (1, "data"),
        Error::NonFiniteLoss { .. } => (1, "diverged"),
        _ => (1, "runtime"),
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

/// Worker count from `IBM2_THREADS`, then `--jobs`, then 1.
pub fn resolve_jobs(flag: Option<usize>) -> CliResult<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Failure {
                code: 3,
                kind: "config",
                message: format!("{THREADS_ENV} must be a positive integer, got {v:?}"),
            }),
        },
        Err(_) => Ok(flag.unwrap_or(1).max(1)),
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| Error::file(path, e).into())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| Error::file(path, e).into())
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => write_text(path, text),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Error::Io(e).into())
        }
    }
}

/// The config described by `--config` plus flag overrides, resolved.
pub fn build_config(args: &RunArgs) -> CliResult<RunConfig> {
    let mut config = match &args.config {
        Some(path) => serde_json::from_str::<RunConfig>(&read_text(path)?).map_err(Error::from)?,
        None => RunConfig::default(),
    };
    if let Some(mode) = args.mode {
        if mode != config.mode {
            // mode-dependent defaults follow the new mode
            config.mode = mode;
            config.way = None;
            config.query = None;
            config.episodes = None;
            config.runs = None;
            config.t_init = None;
            config.trainer.epochs = None;
            config.search.epochs = None;
            config.lr_candidates = None;
        }
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(method) = args.method {
        config.method = method;
    }
    if let Some(sampling) = args.sampling {
        config.sampling = sampling;
    }
    if let Some(r) = args.r {
        config.replicas = r;
    }
    if let Some(t) = args.t {
        config.t_init = Some(t);
    }
    if let Some(lr) = args.lr {
        config.lr = lr;
    }
    if args.resample_per_step {
        config.search.resample_per_step = true;
    }
    if let Some(shots) = &args.shots {
        config.shots = shots.clone();
    }
    if let Some(way) = args.way {
        config.way = Some(way);
    }
    if let Some(episodes) = args.episodes {
        config.episodes = Some(episodes);
    }
    if let Some(runs) = args.runs {
        config.runs = Some(runs);
    }
    if let Some(preset) = &args.preset {
        config.data = DataSource::Synthetic {
            preset: preset.clone(),
        };
    }
    if let Some(pool) = &args.pool {
        config.data = DataSource::Files {
            pool: pool.clone(),
            test: args.test.clone(),
        };
    }
    Ok(config.resolve()?)
}

/// One arm per R value, all with the IbM2 method.
pub fn ablate_r_arms(base: &RunConfig, values: &[usize]) -> Vec<(String, RunConfig)> {
    values
        .iter()
        .map(|&r| {
            let config = RunConfig {
                method: Method::Ibm2,
                replicas: r,
                ..base.clone()
            };
            (format!("R={r}"), config)
        })
        .collect()
}

/// Baseline, spherical and ellipsoidal arms.
pub fn ablate_sampling_arms(base: &RunConfig) -> Vec<(String, RunConfig)> {
    let with = |method, sampling| RunConfig {
        method,
        sampling,
        ..base.clone()
    };
    vec![
        ("baseline".to_string(), with(Method::Baseline, base.sampling)),
        ("spherical".to_string(), with(Method::Ibm2, SamplingMode::Spherical)),
        ("ellipsoidal".to_string(), with(Method::Ibm2, SamplingMode::Ellipsoidal)),
    ]
}

/// Runs every arm in order.
pub fn run_arms(arms: Vec<(String, RunConfig)>, jobs: usize) -> CliResult<Vec<Arm>> {
    arms.into_iter()
        .map(|(label, config)| {
            let results = run_experiment(&config, jobs)?;
            Ok(Arm {
                label,
                config,
                results,
            })
        })
        .collect()
}

fn run_document(command: &str, args: &RunArgs, arms: impl FnOnce(&RunConfig) -> Vec<(String, RunConfig)>) -> CliResult<()> {
    let jobs = resolve_jobs(args.jobs)?;
    let base = build_config(args)?;
    let start = Instant::now();
    let arms = run_arms(arms(&base), jobs)?;
    let doc = ReportDocument::new(command, base.seed, arms, start.elapsed().as_secs_f64());
    emit(args.out.as_deref(), &doc.to_json()?)
}

fn import(args: &ImportArgs) -> CliResult<()> {
    let mut ds = import_csv(&args.csv)?;
    if args.normalize {
        ds = l2_normalize(&ds)?;
    }
    Ok(write_feature_file(&ds, &args.out)?)
}

fn synth(args: &SynthArgs) -> CliResult<()> {
    let spec = match (&args.preset, &args.spec) {
        (Some(name), _) => MixtureSpec::preset(name, args.seed.unwrap_or(0))?,
        (None, Some(path)) => {
            let mut spec: MixtureSpec = serde_json::from_str(&read_text(path)?).map_err(Error::from)?;
            if let Some(seed) = args.seed {
                spec.seed = seed;
            }
            spec
        }
        (None, None) => unreachable!("clap requires --preset or --spec"),
    };
    let (train, test) = synth_mixture(&spec)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::file(&args.out_dir, e))?;
    write_feature_file(&train, args.out_dir.join("train.feat"))?;
    write_feature_file(&test, args.out_dir.join("test.feat"))?;
    write_text(&args.out_dir.join("spec.json"), &to_json_string(&spec)?)
}

fn report(args: &ReportArgs) -> CliResult<()> {
    let doc = ReportDocument::load(&args.report)?;
    let text = match args.format {
        Format::Text => render_text(&doc),
        Format::Csv => render_csv(&doc),
    };
    emit(args.out.as_deref(), &text)
}

pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Import(args) => import(&args),
        Command::Synth(args) => synth(&args),
        Command::Run(args) => run_document("run", &args, |base| vec![("run".to_string(), base.clone())]),
        Command::AblateR(args) => {
            let values = args.values.clone();
            run_document("ablate-r", &args.run, |base| ablate_r_arms(base, &values))
        }
        Command::AblateSampling(args) => run_document("ablate-sampling", &args, ablate_sampling_arms),
        Command::Report(args) => report(&args),
    }
}
