//! Monte Carlo orchestration, result tables and diagnostic curves.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    default_split, hierarchical_sweep, naive_sweep, HiepmMapper, ReferenceCurve,
};
use crate::beamformer::{
    gap_1bit, gap_full, mean_out_margin, power_spectrum, probe_powers, Hybrid, Lws, MlpMapper,
    QueryMapper,
};
use crate::channel::{ChannelParams, QueryDependentChannel, ResponseModel};
use crate::error::{Error, Result};
use crate::fading::FadingPrior;
use crate::geometry::{AngleGrid, GridSpec};
use crate::mlp::io::{load, load_mapper, model_path};
use crate::mlp::TrainConfig;
use crate::questioner::{
    accuracy, calibrate_flip, run_alignment, Alignment, FadingEstimator, FlipModel,
    MeasurementRule, Query, SortPm, TrialResult,
};

/// Environment variable that overrides the configured model directory.
pub const MODEL_DIR_ENV: &str = "BEAMQ_MODEL_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Lws,
    Mlp,
    Hybrid,
    Naive,
    Hierarchical,
    Hiepm,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Lws,
        Algorithm::Mlp,
        Algorithm::Hybrid,
        Algorithm::Naive,
        Algorithm::Hierarchical,
        Algorithm::Hiepm,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Lws => "lws",
            Algorithm::Mlp => "mlp",
            Algorithm::Hybrid => "hybrid",
            Algorithm::Naive => "naive",
            Algorithm::Hierarchical => "hierarchical",
            Algorithm::Hiepm => "hiepm",
        }
    }

    fn is_sweep(&self) -> bool {
        matches!(self, Algorithm::Naive | Algorithm::Hierarchical)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FadingMode {
    #[default]
    Known,
    Kalman,
    Mmse,
}

impl FadingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FadingMode::Known => "known",
            FadingMode::Kalman => "kalman",
            FadingMode::Mmse => "mmse",
        }
    }
}

impl FromStr for FadingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "known" => Ok(FadingMode::Known),
            "kalman" => Ok(FadingMode::Kalman),
            "mmse" => Ok(FadingMode::Mmse),
            other => Err(Error::config(format!("unknown fading mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::config(format!("unknown output format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseSpec {
    /// Largest query size in the gap curves; `M/4` when unset.
    pub max_query_size: Option<usize>,
    /// Query used for the exported power spectra; bins `1, 4, 7, …` (at most 20) when unset.
    pub spectrum_query: Option<Vec<usize>>,
    pub spectrum_step_deg: f64,
}

impl Default for DiagnoseSpec {
    fn default() -> Self {
        Self {
            max_query_size: None,
            spectrum_query: None,
            spectrum_step_deg: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridSpec,
    pub algorithm: Algorithm,
    pub rule: MeasurementRule,
    pub fading: FadingMode,
    /// Prior of α; α is drawn from it every trial when fading is unknown or `draw_alpha` is set.
    pub fading_prior: FadingPrior,
    pub draw_alpha: bool,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    /// Pilot budget `n`.
    pub budget: usize,
    pub epsilon: f64,
    pub flip_probability: f64,
    /// Replace `flip_probability` by per-size empirical flip rates at each SNR.
    pub calibrate_flip: bool,
    pub calibration_trials: usize,
    pub strategy: SortPm,
    pub seed: u64,
    pub model_dir: PathBuf,
    pub output: Option<PathBuf>,
    pub format: OutputFormat,
    /// Largest query size routed to the network by `hybrid`; `M/4` when unset.
    pub hybrid_max_query_size: Option<usize>,
    pub hiepm_loading: Option<f64>,
    pub hierarchical_split: Option<(usize, usize)>,
    /// Region answers through this channel instead of the array model.
    pub abstract_channel: Option<QueryDependentChannel>,
    pub diagnose: DiagnoseSpec,
    /// Network training settings used by `train`.
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            algorithm: Algorithm::Lws,
            rule: MeasurementRule::OneBit,
            fading: FadingMode::Known,
            fading_prior: FadingPrior::default(),
            draw_alpha: false,
            snr_db: vec![0.0],
            trials: 1000,
            budget: 10,
            epsilon: 0.05,
            flip_probability: 0.1,
            calibrate_flip: false,
            calibration_trials: 400,
            strategy: SortPm::default(),
            seed: 0,
            model_dir: PathBuf::from("models"),
            output: None,
            format: OutputFormat::Csv,
            hybrid_max_query_size: None,
            hiepm_loading: None,
            hierarchical_split: None,
            abstract_channel: None,
            diagnose: DiagnoseSpec::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn fading_estimator(&self) -> FadingEstimator {
        match self.fading {
            FadingMode::Known => FadingEstimator::Known,
            FadingMode::Kalman => FadingEstimator::Kalman {
                prior: self.fading_prior,
            },
            FadingMode::Mmse => FadingEstimator::Mmse {
                prior: self.fading_prior,
            },
        }
    }

    pub fn hybrid_threshold(&self) -> usize {
        self.hybrid_max_query_size
            .unwrap_or(self.grid.bins / 4)
            .max(1)
    }

    pub fn split(&self) -> (usize, usize) {
        self.hierarchical_split
            .unwrap_or_else(|| default_split(self.budget))
    }

    pub fn validate(&self) -> Result<AngleGrid> {
        let grid = self
            .grid
            .build()
            .map_err(|e| Error::config(e.to_string()))?;
        if self.trials == 0 {
            return Err(Error::config("trials must be at least 1"));
        }
        if self.budget == 0 {
            return Err(Error::config("budget must be at least 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::config(format!(
                "epsilon {} outside (0, 1)",
                self.epsilon
            )));
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::config("snr_db must list at least one finite value"));
        }
        if !(self.flip_probability > 0.0 && self.flip_probability < 0.5) {
            return Err(Error::config(format!(
                "flip_probability {} outside (0, 0.5)",
                self.flip_probability
            )));
        }
        if self.calibrate_flip && self.calibration_trials == 0 {
            return Err(Error::config("calibration_trials must be at least 1"));
        }
        if self.fading_prior.var < 0.0 {
            return Err(Error::config("fading prior variance must be ≥ 0"));
        }
        if self.rule == MeasurementRule::OneBit
            && self.fading != FadingMode::Known
            && !self.algorithm.is_sweep()
        {
            return Err(Error::config(
                "the 1-bit rule needs a known fading coefficient; use rule = \"full\" for kalman/mmse",
            ));
        }
        if self.rule == MeasurementRule::Full && self.abstract_channel.is_some() {
            return Err(Error::config(
                "an abstract channel only yields 1-bit responses",
            ));
        }
        match self.algorithm {
            Algorithm::Naive if self.budget > grid.antennas() => {
                return Err(Error::config(format!(
                    "naive sweep of {} beams exceeds N_R={}",
                    self.budget,
                    grid.antennas()
                )))
            }
            Algorithm::Hierarchical => {
                let (n1, n2) = self.split();
                if n1 == 0 || n2 == 0 || n1 + n2 != self.budget || n1.max(n2) > grid.antennas() {
                    return Err(Error::config(format!(
                        "hierarchical split ({n1}, {n2}) must use the budget {} with both stages in [1, N_R]",
                        self.budget
                    )));
                }
            }
            Algorithm::Hiepm if self.hiepm_loading.is_some_and(|l| !(l > 0.0)) => {
                return Err(Error::config("hiepm_loading must be positive"))
            }
            _ => {}
        }
        self.train.validate()?;
        if let Some(k) = self.diagnose.max_query_size {
            if k == 0 || k > grid.bins() {
                return Err(Error::config(format!(
                    "diagnose.max_query_size {k} outside [1, M]"
                )));
            }
        }
        Ok(grid)
    }

    /// Key facts recorded alongside every result table.
    pub fn metadata(&self) -> Result<BTreeMap<String, String>> {
        let mut m = BTreeMap::new();
        let recorded = ExperimentConfig {
            output: None,
            ..self.clone()
        };
        m.insert("config".into(), serde_json::to_string(&recorded)?);
        m.insert(
            "spacing".into(),
            format!("d/lambda = {}", self.grid.spacing),
        );
        m.insert(
            "theta_sampling".into(),
            "uniform over [theta_min, theta_max]".into(),
        );
        if self.rule == MeasurementRule::OneBit {
            m.insert(
                "threshold".into(),
                "oracle threshold (min in-region noise-free power)".into(),
            );
        }
        if self.fading == FadingMode::Mmse {
            m.insert("fading_estimator".into(), "batch-MMSE (conjugate)".into());
        }
        if self.abstract_channel.is_some() {
            m.insert(
                "beta".into(),
                "placeholder size function (not published)".into(),
            );
        }
        if self.algorithm == Algorithm::Hiepm {
            m.insert(
                "hiepm_threshold".into(),
                "shared min in-region power rule".into(),
            );
        }
        Ok(m)
    }
}

/// Rounds to 12 significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

/// Formats `x` at 12 significant digits, in plain notation where readable.
pub fn fmt_sig(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let r = round_sig(x);
    if r == 0.0 || (1e-4..1e15).contains(&r.abs()) {
        format!("{r}")
    } else {
        format!("{r:e}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub algorithm: String,
    pub rule: String,
    pub fading: String,
    pub snr_db: f64,
    pub mean_loss: f64,
    /// Sample standard deviation over `√trials`; absent below two trials.
    pub std_error: Option<f64>,
    pub mean_tau: Option<f64>,
    /// Fraction of alignment steps whose response matched region membership.
    pub accuracy: Option<f64>,
    pub trials: usize,
    pub seed: u64,
}

impl ResultRow {
    fn rounded(&self) -> Self {
        Self {
            snr_db: round_sig(self.snr_db),
            mean_loss: round_sig(self.mean_loss),
            std_error: self.std_error.map(round_sig),
            mean_tau: self.mean_tau.map(round_sig),
            accuracy: self.accuracy.map(round_sig),
            ..self.clone()
        }
    }

    /// `10·log10(mean_loss)`.
    pub fn loss_db(&self) -> f64 {
        10.0 * self.mean_loss.log10()
    }
}

const COLUMNS: [&str; 10] = [
    "algorithm",
    "rule",
    "fading",
    "snr_db",
    "mean_loss",
    "std_error",
    "mean_tau",
    "accuracy",
    "trials",
    "seed",
];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultTable {
    pub metadata: BTreeMap<String, String>,
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn row(&self, algorithm: &str, snr_db: f64) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.algorithm == algorithm && r.snr_db == snr_db)
    }

    /// CSV with `# key: value` metadata lines before the header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for (k, v) in &self.metadata {
            writeln!(out, "# {k}: {}", v.replace('\n', " "))?;
        }
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(COLUMNS)?;
        let opt = |v: Option<f64>| v.map(fmt_sig).unwrap_or_default();
        for r in &self.rows {
            wtr.write_record([
                r.algorithm.clone(),
                r.rule.clone(),
                r.fading.clone(),
                fmt_sig(r.snr_db),
                fmt_sig(r.mean_loss),
                opt(r.std_error),
                opt(r.mean_tau),
                opt(r.accuracy),
                r.trials.to_string(),
                r.seed.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, mut out: W) -> Result<()> {
        let rounded = ResultTable {
            metadata: self.metadata.clone(),
            rows: self.rows.iter().map(ResultRow::rounded).collect(),
        };
        serde_json::to_writer_pretty(&mut out, &rounded)?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn write<W: Write>(&self, out: W, format: OutputFormat) -> Result<()> {
        match format {
            OutputFormat::Csv => self.write_csv(out),
            OutputFormat::Json => self.write_json(out),
        }
    }

    pub fn read_csv<R: Read>(mut input: R) -> Result<Self> {
        let mut text = String::new();
        input.read_to_string(&mut text)?;
        let mut metadata = BTreeMap::new();
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            if let Some((k, v)) = line.trim_start_matches('#').trim_start().split_once(": ") {
                metadata.insert(k.to_string(), v.to_string());
            }
        }
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        if rdr.headers()?.iter().ne(COLUMNS) {
            return Err(Error::config("result CSV has unexpected columns"));
        }
        let rows = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<ResultRow>, _>>()?;
        Ok(Self { metadata, rows })
    }

    pub fn read_json<R: Read>(input: R) -> Result<Self> {
        Ok(serde_json::from_reader(input)?)
    }

    /// Reads a table, choosing the format from the file extension.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::read_json(file),
            _ => Self::read_csv(file),
        }
    }
}

/// Per-trial random stream: master seed with stream id `(snr_index, trial)`.
pub fn trial_rng(seed: u64, snr_index: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((snr_index as u64) << 32) | trial as u64);
    rng
}

/// Mapper for the configured algorithm; `None` for the sweeps.
fn build_mapper(
    cfg: &ExperimentConfig,
    grid: &AngleGrid,
    mlp: Option<&MlpMapper>,
) -> Result<Option<Box<dyn QueryMapper>>> {
    let models = || -> Result<MlpMapper> {
        match mlp {
            Some(m) => Ok(m.clone()),
            None => load_models(cfg, grid),
        }
    };
    Ok(match cfg.algorithm {
        Algorithm::Lws => Some(Box::new(Lws)),
        Algorithm::Hiepm => Some(Box::new(HiepmMapper {
            sigma0_sq: cfg.hiepm_loading,
        })),
        Algorithm::Mlp => Some(Box::new(models()?)),
        Algorithm::Hybrid => {
            let mlp = models()?;
            let max = cfg.hybrid_threshold();
            if let Some(k) = (1..=max).find(|k| mlp.model(*k).is_none()) {
                return Err(Error::ModelNotFound(k));
            }
            Some(Box::new(Hybrid {
                mlp,
                max_query_size: max,
            }))
        }
        Algorithm::Naive | Algorithm::Hierarchical => None,
    })
}

/// Model directory after applying [`MODEL_DIR_ENV`].
pub fn resolve_model_dir(configured: &Path) -> PathBuf {
    std::env::var_os(MODEL_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| configured.to_path_buf())
}

/// Loads the networks the configured algorithm needs: every size up to the
/// hybrid threshold, or every size present on disk for `mlp`.
pub fn load_models(cfg: &ExperimentConfig, grid: &AngleGrid) -> Result<MlpMapper> {
    let dir = resolve_model_dir(&cfg.model_dir);
    match cfg.algorithm {
        Algorithm::Hybrid => load_mapper(&dir, grid, cfg.rule, 1..=cfg.hybrid_threshold()),
        _ => {
            let mapper: MlpMapper = (1..=grid.bins())
                .map(|k| model_path(&dir, grid, k, cfg.rule))
                .filter(|p| p.is_file())
                .map(|p| load(&p))
                .collect::<Result<_>>()?;
            if mapper.is_empty() {
                return Err(Error::ModelNotFound(1));
            }
            Ok(mapper)
        }
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultTable> {
    run_experiment_with(cfg, None)
}

/// Runs every `(snr, trial)` pair; `mlp` overrides loading models from disk.
pub fn run_experiment_with(cfg: &ExperimentConfig, mlp: Option<&MlpMapper>) -> Result<ResultTable> {
    let grid = cfg.validate()?;
    let mapper = build_mapper(cfg, &grid, mlp)?;
    let sweep_grid = match cfg.algorithm {
        Algorithm::Naive => Some(
            AngleGrid::new(
                grid.theta_min(),
                grid.theta_max(),
                cfg.budget,
                1,
                grid.antennas(),
            )?
            .with_spacing(grid.spacing())?,
        ),
        _ => None,
    };
    let mut rows = Vec::with_capacity(cfg.snr_db.len());
    for (si, &snr) in cfg.snr_db.iter().enumerate() {
        let base = ChannelParams::from_snr_db(snr).with_alpha(cfg.fading_prior.mean);
        let flip = match (&mapper, cfg.calibrate_flip) {
            (Some(m), true) => {
                let response = match cfg.abstract_channel {
                    Some(ch) => ResponseModel::Abstract(ch),
                    None => ResponseModel::Physical(base),
                };
                let mut rng = trial_rng(cfg.seed, si, u32::MAX as usize);
                calibrate_flip(
                    m.as_ref(),
                    &grid,
                    &response,
                    cfg.calibration_trials,
                    &mut rng,
                )?
            }
            _ => FlipModel::Constant(cfg.flip_probability),
        };
        let results: Vec<TrialResult> = (0..cfg.trials)
            .into_par_iter()
            .map(|trial| {
                let mut rng = trial_rng(cfg.seed, si, trial);
                let theta = rng.random_range(grid.theta_min()..grid.theta_max());
                let draw = cfg.draw_alpha || cfg.fading != FadingMode::Known;
                let alpha = if draw {
                    cfg.fading_prior.sample(&mut rng)
                } else {
                    Complex64::new(1.0, 0.0)
                };
                let params = base.with_alpha(alpha);
                match cfg.algorithm {
                    Algorithm::Naive => naive_sweep(
                        theta,
                        sweep_grid.as_ref().expect("sweep grid"),
                        &params,
                        &mut rng,
                    ),
                    Algorithm::Hierarchical => {
                        hierarchical_sweep(theta, &grid, cfg.split(), &params, &mut rng)
                    }
                    _ => {
                        let response = match cfg.abstract_channel {
                            Some(ch) => ResponseModel::Abstract(ch),
                            None => ResponseModel::Physical(params),
                        };
                        let alignment = Alignment {
                            grid: &grid,
                            mapper: mapper.as_deref().expect("mapper for adaptive algorithms"),
                            strategy: &cfg.strategy,
                            rule: cfg.rule,
                            response: &response,
                            flip: &flip,
                            fading: cfg.fading_estimator(),
                            epsilon: cfg.epsilon,
                            budget: cfg.budget,
                        };
                        run_alignment(&alignment, theta, &mut rng)
                    }
                }
            })
            .collect::<Result<_>>()?;
        rows.push(aggregate(cfg, snr, &results));
    }
    Ok(ResultTable {
        metadata: cfg.metadata()?,
        rows,
    })
}

fn aggregate(cfg: &ExperimentConfig, snr_db: f64, results: &[TrialResult]) -> ResultRow {
    let n = results.len() as f64;
    let mean = results.iter().map(|r| r.loss).sum::<f64>() / n;
    let std_error = (results.len() > 1).then(|| {
        let var = results.iter().map(|r| (r.loss - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    });
    ResultRow {
        algorithm: cfg.algorithm.to_string(),
        rule: cfg.rule.to_string(),
        fading: cfg.fading.as_str().to_string(),
        snr_db,
        mean_loss: mean,
        std_error,
        mean_tau: Some(results.iter().map(|r| r.tau as f64).sum::<f64>() / n),
        accuracy: accuracy(results),
        trials: results.len(),
        seed: cfg.seed,
    }
}

/// Writes the table to `cfg.output` (or stdout when unset).
pub fn emit(table: &ResultTable, cfg: &ExperimentConfig) -> Result<()> {
    match &cfg.output {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            let file = std::io::BufWriter::new(std::fs::File::create(path)?);
            table.write(file, cfg.format)
        }
        None => table.write(std::io::stdout().lock(), cfg.format),
    }
}

/// Gap statistics for one mapper and query size over all contiguous windows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub mapper: String,
    pub query_size: usize,
    pub windows: usize,
    pub gap_1bit_mean: f64,
    pub gap_1bit_min: f64,
    pub gap_1bit_max: f64,
    pub gap_full_mean: f64,
    pub gap_full_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumExport {
    pub mapper: String,
    pub query: Query,
    pub gap_1bit: f64,
    /// `min in-region power − mean out-of-region power`.
    pub mean_out_margin: f64,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnoseReport {
    pub gaps: Vec<GapRow>,
    pub spectra: Vec<SpectrumExport>,
}

/// Contiguous windows `{s, …, s+K−1}` for every start `s`.
pub fn contiguous_queries(bins: usize, size: usize) -> Vec<Query> {
    (0..=bins - size)
        .map(|s| Query::new((s..s + size).collect()).expect("size ≥ 1"))
        .collect()
}

/// Gap curve for one mapper; sizes the mapper cannot serve are skipped.
pub fn gap_curve(
    mapper: &dyn QueryMapper,
    grid: &AngleGrid,
    sizes: impl IntoIterator<Item = usize>,
    params: &ChannelParams,
) -> Result<Vec<GapRow>> {
    let mut rows = Vec::new();
    for k in sizes {
        let queries = contiguous_queries(grid.bins(), k);
        let mut g1 = Vec::with_capacity(queries.len());
        let mut gf = Vec::with_capacity(queries.len());
        for q in &queries {
            let w = match mapper.map(q, grid) {
                Ok(w) => w,
                Err(Error::ModelNotFound(_)) => break,
                Err(e) => return Err(e),
            };
            g1.push(gap_1bit(q, grid, &w));
            gf.push(gap_full(q, grid, &w, params));
        }
        if g1.len() < queries.len() {
            continue;
        }
        let n = g1.len() as f64;
        rows.push(GapRow {
            mapper: mapper.name().to_string(),
            query_size: k,
            windows: g1.len(),
            gap_1bit_mean: g1.iter().sum::<f64>() / n,
            gap_1bit_min: g1.iter().copied().fold(f64::INFINITY, f64::min),
            gap_1bit_max: g1.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            gap_full_mean: gf.iter().sum::<f64>() / n,
            gap_full_max: gf.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
    }
    Ok(rows)
}

pub fn default_spectrum_query(bins: usize) -> Query {
    let bins: Vec<usize> = (1..bins).step_by(3).take(20).collect();
    Query::new(if bins.is_empty() { vec![0] } else { bins }).expect("non-empty")
}

/// Gap curves for `K ∈ [1, max]` and power spectra of the spectrum query for
/// the linear weighted sum and, when given, the trained networks.
pub fn diagnose(cfg: &ExperimentConfig, mlp: Option<&MlpMapper>) -> Result<DiagnoseReport> {
    let grid = cfg.validate()?;
    let params = ChannelParams::from_snr_db(cfg.snr_db[0]);
    let max = cfg
        .diagnose
        .max_query_size
        .unwrap_or(grid.bins() / 4)
        .max(1);
    let mut mappers: Vec<&dyn QueryMapper> = vec![&Lws];
    if let Some(m) = mlp {
        mappers.push(m);
    }
    let query = match &cfg.diagnose.spectrum_query {
        Some(bins) => Query::new(bins.clone())?,
        None => default_spectrum_query(grid.bins()),
    };
    grid.check_query(&query)
        .map_err(|e| Error::config(e.to_string()))?;

    let mut gaps = Vec::new();
    let mut spectra = Vec::new();
    for mapper in mappers {
        gaps.extend(gap_curve(mapper, &grid, 1..=max, &params)?);
        match mapper.map(&query, &grid) {
            Ok(w) => {
                let powers = probe_powers(&grid, &w);
                spectra.push(SpectrumExport {
                    mapper: mapper.name().to_string(),
                    query: query.clone(),
                    gap_1bit: gap_1bit(&query, &grid, &w),
                    mean_out_margin: mean_out_margin(&query, &grid, &powers),
                    points: power_spectrum(&grid, &w, cfg.diagnose.spectrum_step_deg),
                });
            }
            Err(Error::ModelNotFound(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(DiagnoseReport { gaps, spectra })
}

impl DiagnoseReport {
    pub fn write_gaps_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record([
            "mapper",
            "query_size",
            "windows",
            "gap_1bit_mean",
            "gap_1bit_min",
            "gap_1bit_max",
            "gap_full_mean",
            "gap_full_max",
        ])?;
        for g in &self.gaps {
            wtr.write_record([
                g.mapper.clone(),
                g.query_size.to_string(),
                g.windows.to_string(),
                fmt_sig(g.gap_1bit_mean),
                fmt_sig(g.gap_1bit_min),
                fmt_sig(g.gap_1bit_max),
                fmt_sig(g.gap_full_mean),
                fmt_sig(g.gap_full_max),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Writes `gaps.csv` and one `spectrum_<mapper>.csv` per spectrum into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let path = dir.join("gaps.csv");
        self.write_gaps_csv(std::fs::File::create(&path)?)?;
        written.push(path);
        for s in &self.spectra {
            let path = dir.join(format!("spectrum_{}.csv", s.mapper));
            let mut f = std::fs::File::create(&path)?;
            writeln!(f, "# query: {:?}", s.query.bins())?;
            writeln!(f, "# gap_1bit: {}", fmt_sig(s.gap_1bit))?;
            writeln!(f, "# mean_out_margin: {}", fmt_sig(s.mean_out_margin))?;
            crate::beamformer::write_spectrum_csv(f, &s.points)?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Merges result tables and reference curves into one table ordered by
/// `(snr_db, algorithm)`. Reference rows carry only the loss.
pub fn compare(tables: &[ResultTable], references: &[ReferenceCurve]) -> ResultTable {
    let mut rows: Vec<ResultRow> = tables.iter().flat_map(|t| t.rows.iter().cloned()).collect();
    for c in references {
        rows.extend(c.points.iter().map(|p| ResultRow {
            algorithm: c.name.clone(),
            rule: "reference".into(),
            fading: String::new(),
            snr_db: p.snr_db,
            mean_loss: p.mean_quadratic_loss,
            std_error: None,
            mean_tau: None,
            accuracy: None,
            trials: 0,
            seed: 0,
        }));
    }
    rows.sort_by(|a, b| {
        a.snr_db
            .total_cmp(&b.snr_db)
            .then_with(|| a.algorithm.cmp(&b.algorithm))
    });
    let mut metadata = BTreeMap::new();
    metadata.insert(
        "sources".into(),
        format!(
            "{} tables, {} reference curves",
            tables.len(),
            references.len()
        ),
    );
    ResultTable { metadata, rows }
}
