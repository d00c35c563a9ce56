use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use beamq::baselines::ReferenceCurve;
use beamq::experiment::{
    compare, diagnose, emit, load_models, resolve_model_dir, run_experiment, Algorithm, FadingMode,
    OutputFormat, ResultTable, MODEL_DIR_ENV,
};
use beamq::mlp::io::save_in;
use beamq::mlp::train_with_progress;
use beamq::{Error, ExperimentConfig, MeasurementRule, SortPm};

const EXIT_CONFIG: u8 = 1;
const EXIT_MISSING_MODEL: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "beamq", version, about = "Adaptive beam alignment experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run Monte Carlo alignment trials and write a result table.
    Simulate(ConfigArgs),
    /// Train one network per query size and save it to the model directory.
    Train(TrainArgs),
    /// Export gap curves and power spectra.
    Diagnose(DiagnoseArgs),
    /// Merge result tables with external reference curves.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// TOML configuration file; every field may be overridden below.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override any field by dotted path, e.g. `--set grid.bins=16 --set snr_db=[-5,0]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Number of sub-intervals M.
    #[arg(long = "M")]
    bins: Option<usize>,
    /// Number of receive antennas N_R.
    #[arg(long = "NR")]
    antennas: Option<usize>,
    /// Secondary sub-intervals per bin.
    #[arg(long = "k")]
    secondary: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    theta_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    theta_max: Option<f64>,
    /// Antenna spacing d/λ.
    #[arg(long)]
    spacing: Option<f64>,
    #[arg(long)]
    algorithm: Option<Algorithm>,
    #[arg(long)]
    rule: Option<MeasurementRule>,
    #[arg(long)]
    fading: Option<FadingMode>,
    /// Comma-separated SNR points in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr_db: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    /// Pilot budget n.
    #[arg(long = "n")]
    budget: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Flip probability p of the 1-bit likelihood.
    #[arg(long = "p")]
    flip_probability: Option<f64>,
    /// Calibrate p per query size from simulated flip rates.
    #[arg(long)]
    calibrate_flip: bool,
    /// Draw α from its prior every trial even when it is known to the receiver.
    #[arg(long)]
    draw_alpha: bool,
    /// Query strategy: `closest` or `prefix`.
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Model directory; the BEAMQ_MODEL_DIR environment variable takes precedence.
    #[arg(long)]
    model_dir: Option<PathBuf>,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<OutputFormat>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Query sizes to train, comma-separated.
    #[arg(long = "K", value_delimiter = ',', required = true)]
    query_sizes: Vec<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Training queries generated per network.
    #[arg(long)]
    queries: Option<usize>,
}

#[derive(Args, Debug)]
struct DiagnoseArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Largest query size in the gap curves (default M/4).
    #[arg(long)]
    max_query_size: Option<usize>,
    /// Include trained networks found in the model directory.
    #[arg(long)]
    mlp: bool,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Result tables (CSV or JSON by extension).
    #[arg(required = true)]
    tables: Vec<PathBuf>,
    /// Reference curves as `snr_db,mean_quadratic_loss` CSV, named by file stem.
    #[arg(long = "reference")]
    references: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: OutputFormat,
}

fn set_path(table: &mut toml::Table, key: &str, raw: &str) -> Result<(), Error> {
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|k| !k.is_empty())
        .ok_or_else(|| Error::Config(format!("empty key in --set {key}")))?;
    let mut node = table;
    for part in parts {
        node = node
            .entry(part)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("--set {key}: {part} is not a table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut table = match &self.config {
            Some(path) => std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?
                .parse::<toml::Table>()
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            None => toml::Table::new(),
        };
        for item in &self.set {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {item:?}")))?;
            set_path(&mut table, key.trim(), value.trim())?;
        }
        let mut cfg: ExperimentConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;

        let g = &mut cfg.grid;
        apply(&mut g.bins, self.bins);
        apply(&mut g.antennas, self.antennas);
        apply(&mut g.secondary, self.secondary);
        apply(&mut g.theta_min, self.theta_min);
        apply(&mut g.theta_max, self.theta_max);
        apply(&mut g.spacing, self.spacing);
        apply(&mut cfg.algorithm, self.algorithm);
        apply(&mut cfg.rule, self.rule);
        apply(&mut cfg.fading, self.fading);
        apply(&mut cfg.snr_db, self.snr_db.clone());
        apply(&mut cfg.trials, self.trials);
        apply(&mut cfg.budget, self.budget);
        apply(&mut cfg.epsilon, self.epsilon);
        apply(&mut cfg.flip_probability, self.flip_probability);
        cfg.calibrate_flip |= self.calibrate_flip;
        cfg.draw_alpha |= self.draw_alpha;
        if let Some(s) = &self.strategy {
            cfg.strategy = match s.as_str() {
                "closest" => SortPm::Closest,
                "prefix" => SortPm::Prefix,
                other => return Err(Error::Config(format!("unknown strategy {other:?}"))),
            };
        }
        apply(&mut cfg.seed, self.seed);
        apply(&mut cfg.model_dir, self.model_dir.clone());
        cfg.model_dir = resolve_model_dir(&cfg.model_dir);
        if self.out.is_some() {
            cfg.output = self.out.clone();
        }
        apply(&mut cfg.format, self.format);
        Ok(cfg)
    }
}

fn apply<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn simulate(args: &ConfigArgs) -> Result<(), Error> {
    let cfg = args.load()?;
    let table = run_experiment(&cfg)?;
    emit(&table, &cfg)
}

fn train(args: &TrainArgs) -> Result<(), Error> {
    let mut cfg = args.config.load()?;
    apply(&mut cfg.train.max_epochs, args.epochs);
    apply(&mut cfg.train.learning_rate, args.learning_rate);
    apply(&mut cfg.train.dataset.queries, args.queries);
    if let Some(seed) = args.config.seed {
        cfg.train.seed = seed;
    }
    let grid = cfg.validate()?;
    let dir = cfg.output.clone().unwrap_or_else(|| cfg.model_dir.clone());
    for &k in &args.query_sizes {
        if k == 0 || k > grid.bins() {
            return Err(Error::Config(format!(
                "--K {k} outside [1, {}]",
                grid.bins()
            )));
        }
        let report = train_with_progress(&cfg.train, &grid, k, cfg.rule, |s| {
            if s.epoch % 10 == 0 || s.epoch == 1 {
                eprintln!(
                    "K={k} epoch {:>4}: train {:.6} validation {:.6}",
                    s.epoch, s.train_loss, s.validation_loss
                );
            }
        })?;
        let path = save_in(&report.model, &dir)?;
        eprintln!(
            "K={k}: best epoch {} saved to {}",
            report.best_epoch,
            path.display()
        );
    }
    Ok(())
}

fn run_diagnose(args: &DiagnoseArgs) -> Result<(), Error> {
    let mut cfg = args.config.load()?;
    if args.max_query_size.is_some() {
        cfg.diagnose.max_query_size = args.max_query_size;
    }
    let grid = cfg.validate()?;
    let wants_models = args.mlp || matches!(cfg.algorithm, Algorithm::Mlp | Algorithm::Hybrid);
    let models = if wants_models {
        if cfg.algorithm != Algorithm::Hybrid {
            cfg.algorithm = Algorithm::Mlp;
        }
        Some(load_models(&cfg, &grid)?)
    } else {
        None
    };
    let report = diagnose(&cfg, models.as_ref())?;
    let dir = cfg
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from("diagnostics"));
    for path in report.write_dir(&dir)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn run_compare(args: &CompareArgs) -> Result<(), Error> {
    let tables = args
        .tables
        .iter()
        .map(|p| ResultTable::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    let references = args
        .references
        .iter()
        .map(|p| ReferenceCurve::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    let merged = compare(&tables, &references);
    match &args.out {
        Some(path) => write_file(path, |f| merged.write(f, args.format)),
        None => merged.write(std::io::stdout().lock(), args.format),
    }
}

fn write_file(
    path: &Path,
    write: impl FnOnce(std::io::BufWriter<std::fs::File>) -> Result<(), Error>,
) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write(std::io::BufWriter::new(std::fs::File::create(path)?))
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::ModelNotFound(_) => EXIT_MISSING_MODEL,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Train(args) => train(args),
        Command::Diagnose(args) => run_diagnose(args),
        Command::Compare(args) => run_compare(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::ModelNotFound(_) = e {
                eprintln!("hint: train it with `beamq train --K ...` or point {MODEL_DIR_ENV} at a model directory");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
