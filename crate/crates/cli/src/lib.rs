//! `dpcgans fit | sample | evaluate`. Argument parsing and command bodies
//! live here so integration tests can drive them without a subprocess.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use dpcgans_core::data::{load_csv, save_csv, DataTable, TableSchema};
use dpcgans_core::eval::disclosure::{
    AttributeReport, CONTINUOUS_TOLERANCE, KNN_NEIGHBORS, MIN_CONTINUOUS_TARGETS, REPETITIONS,
};
use dpcgans_core::eval::efficacy::{LEARNING_RATE, MLP_HIDDEN, TRAIN_ITERATIONS};
use dpcgans_core::eval::utility::{CS_FLOOR, KL_BINS, KL_SMOOTHING};
use dpcgans_core::eval::{
    attribute_disclosure, identity_disclosure, ml_efficacy, utility_report, EfficacyEntry, IdentityReport,
    UtilityReport,
};
use dpcgans_core::gan::{load_model, save_model, PrivacyConfig, Trainer, TrainingConfig, TrainingHistory};
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "DPCGANS_SEED";
pub const DEFAULT_IDENTITY_THRESHOLD: f64 = 0.1;

#[derive(Debug, Parser)]
#[command(name = "dpcgans", version, about = "Differentially private conditional GAN for tabular data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a CSV file.
    Fit(FitArgs),
    /// Write synthetic rows from a trained model.
    Sample(SampleArgs),
    /// Score a synthetic table against real train/test tables.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 500)]
    pub batch_size: usize,
    /// Target epsilon, or `inf` for non-private training.
    #[arg(long, default_value = "inf", value_parser = parse_epsilon)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub delta: f64,
    /// Noise multiplier; calibrated from epsilon when omitted.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Write the per-epoch training history as JSON.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub real_train: PathBuf,
    #[arg(long)]
    pub real_test: PathBuf,
    #[arg(long)]
    pub synth: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_IDENTITY_THRESHOLD)]
    pub identity_threshold: f64,
    /// Classification target for ML efficacy; defaults to the schema target.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
}

fn parse_epsilon(s: &str) -> Result<f64, String> {
    let v = match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "infinity" => f64::INFINITY,
        other => other.parse::<f64>().map_err(|e| format!("{s:?}: {e}"))?,
    };
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("epsilon must be positive or inf, got {s}"))
    }
}

/// Failure classes, one exit code each.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Privacy(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Privacy(_) => 4,
            CliError::Internal(_) => 5,
        }
    }
}

impl From<dpcgans_core::Error> for CliError {
    fn from(e: dpcgans_core::Error) -> Self {
        use dpcgans_core::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidArgument(_) => CliError::Usage(msg),
            E::Privacy(_) => CliError::Privacy(msg),
            E::Cell { .. } | E::Schema(_) | E::Data(_) | E::ModelFormat(_) | E::Io { .. } | E::Csv(_) | E::Json(_) => {
                CliError::Data(msg)
            }
            E::Shape(_) => CliError::Internal(msg),
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn load_table(path: &Path, schema: &TableSchema) -> Result<DataTable, CliError> {
    Ok(load_csv(path, schema)?)
}

/// Training history file: per-epoch records plus the run's privacy summary.
#[derive(Debug, Serialize, Deserialize)]
pub struct HistoryFile {
    #[serde(with = "dpcgans_core::serde_f64")]
    pub target_epsilon: f64,
    #[serde(with = "dpcgans_core::serde_f64")]
    pub final_epsilon: f64,
    pub delta: f64,
    pub noise_multiplier: f64,
    pub discriminator_steps: u64,
    #[serde(flatten)]
    pub history: TrainingHistory,
}

pub fn cmd_fit(args: &FitArgs) -> Result<String, CliError> {
    let schema = TableSchema::load_json(&args.schema)?;
    let data = load_table(&args.data, &schema)?;
    let config = TrainingConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        privacy: PrivacyConfig { delta: args.delta, noise_multiplier: args.sigma, ..PrivacyConfig::with_epsilon(args.epsilon) },
        seed: args.seed,
        ..TrainingConfig::default()
    };
    let start = Instant::now();
    let model = Trainer::new(&data, config)?.run()?;
    let elapsed = start.elapsed().as_secs_f64();
    save_model(&model, &args.out)?;
    let eps = model.epsilon();
    if let Some(path) = &args.history {
        let file = HistoryFile {
            target_epsilon: model.privacy.target_epsilon,
            final_epsilon: eps,
            delta: model.privacy.delta,
            noise_multiplier: model.privacy.noise_multiplier,
            discriminator_steps: model.accountant.steps,
            history: model.history.clone(),
        };
        write_json(path, &file)?;
    }
    let h = &model.history;
    let mut out = format!(
        "epsilon: {eps}\ndelta: {}\nsigma: {}{}\nepochs completed: {}/{}\ndiscriminator steps: {}\nwall time: {elapsed:.2} s\n",
        model.privacy.delta,
        model.privacy.noise_multiplier,
        if args.sigma.is_none() && eps.is_finite() { " (calibrated)" } else { "" },
        h.epochs.len(),
        args.epochs,
        model.accountant.steps,
    );
    if h.halted_by_budget {
        out.push_str("stopped early: privacy budget reached\n");
    }
    Ok(out)
}

pub fn cmd_sample(args: &SampleArgs) -> Result<String, CliError> {
    let model = load_model(&args.model)?;
    let synth = model.generate(args.rows, args.seed)?;
    save_csv(&synth, &args.out)?;
    Ok(format!("wrote {} rows to {}\n", synth.n_rows(), args.out.display()))
}

/// A report section that was computed or skipped with a reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Section<T> {
    Value(T),
    NotApplicable { status: String, reason: String },
}

impl<T> Section<T> {
    fn skipped(reason: impl Into<String>) -> Self {
        Section::NotApplicable { status: "not-applicable".into(), reason: reason.into() }
    }

    pub fn value(&self) -> Option<&T> {
        match self {
            Section::Value(v) => Some(v),
            Section::NotApplicable { .. } => None,
        }
    }
}

/// Every constant the evaluation depends on, echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    pub identity_threshold: f64,
    pub target: Option<String>,
    pub seed: u64,
    pub kl_bins: usize,
    pub kl_smoothing: f64,
    pub cs_proportion_floor: f64,
    pub cs_aggregate: String,
    pub ks_aggregate: String,
    pub efficacy_models: Vec<String>,
    pub efficacy_iterations: usize,
    pub efficacy_learning_rate: f64,
    pub mlp_hidden: usize,
    pub knn_neighbors: usize,
    pub attribute_repetitions: usize,
    pub continuous_tolerance: f64,
    pub min_continuous_targets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub tool_version: String,
    pub config: EvaluationConfig,
    pub rows: RowCounts,
    pub utility: UtilityReport,
    pub ml_efficacy: Section<Vec<EfficacyEntry>>,
    pub identity_disclosure: IdentityReport,
    pub attribute_disclosure: Section<AttributeReport>,
    /// The same attack using the real training table in place of the synthetic one.
    pub attribute_disclosure_real: Section<AttributeReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowCounts {
    pub real_train: usize,
    pub real_test: usize,
    pub synthetic: usize,
}

pub fn evaluate(
    train: &DataTable,
    test: &DataTable,
    synth: &DataTable,
    threshold: f64,
    target: Option<String>,
    seed: u64,
) -> Result<ReportFile, CliError> {
    let utility = utility_report(train, synth)?;
    let ml_efficacy = match &target {
        None => Section::skipped("no target column given and the schema declares none"),
        Some(t) if synth.n_rows() != train.n_rows() => Section::skipped(format!(
            "efficacy for target {t} needs as many synthetic rows as real training rows ({} vs {})",
            synth.n_rows(),
            train.n_rows()
        )),
        Some(t) => match ml_efficacy(train, test, synth, t, seed) {
            Ok(v) => Section::Value(v),
            Err(dpcgans_core::Error::Data(reason)) => Section::skipped(reason),
            Err(e) => return Err(e.into()),
        },
    };
    let identity = identity_disclosure(train, test, synth, threshold)?;
    let attribute = |attacker: &DataTable| {
        if train.n_cols() < 4 {
            Ok(Section::skipped("attribute disclosure needs at least 4 columns"))
        } else {
            attribute_disclosure(test, attacker, seed).map(Section::Value)
        }
    };
    Ok(ReportFile {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config: EvaluationConfig {
            identity_threshold: threshold,
            target,
            seed,
            kl_bins: KL_BINS,
            kl_smoothing: KL_SMOOTHING,
            cs_proportion_floor: CS_FLOOR,
            cs_aggregate: "mean p-value".into(),
            ks_aggregate: "mean of 1 - statistic".into(),
            efficacy_models: vec!["logistic-regression".into(), format!("mlp({MLP_HIDDEN})")],
            efficacy_iterations: TRAIN_ITERATIONS,
            efficacy_learning_rate: LEARNING_RATE,
            mlp_hidden: MLP_HIDDEN,
            knn_neighbors: KNN_NEIGHBORS,
            attribute_repetitions: REPETITIONS,
            continuous_tolerance: CONTINUOUS_TOLERANCE,
            min_continuous_targets: MIN_CONTINUOUS_TARGETS,
        },
        rows: RowCounts { real_train: train.n_rows(), real_test: test.n_rows(), synthetic: synth.n_rows() },
        utility,
        ml_efficacy,
        identity_disclosure: identity,
        attribute_disclosure: attribute(synth)?,
        attribute_disclosure_real: attribute(train)?,
    })
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<String, CliError> {
    let schema = TableSchema::load_json(&args.schema)?;
    let train = load_table(&args.real_train, &schema)?;
    let test = load_table(&args.real_test, &schema)?;
    let synth = load_table(&args.synth, &schema)?;
    let target = args.target.clone().or_else(|| schema.target.clone());
    let report = evaluate(&train, &test, &synth, args.identity_threshold, target, args.seed)?;
    write_json(&args.out, &report)?;
    let fmt = |v: Option<f64>| v.map_or("not-applicable".to_string(), |x| format!("{x:.4}"));
    let u = &report.utility;
    Ok(format!(
        "KL categorical: {}\nKL continuous: {}\nCS: {}\nKS: {}\nCramer's V diff: {}\nPearson diff: {}\nidentity precision/recall: {:.4}/{:.4}\nreport: {}\n",
        fmt(u.kl_categorical_mean),
        fmt(u.kl_continuous_mean),
        fmt(u.cs_score),
        fmt(u.ks_score),
        fmt(u.cramers_v_diff),
        fmt(u.pearson_diff),
        report.identity_disclosure.precision,
        report.identity_disclosure.recall,
        args.out.display()
    ))
}

pub fn run(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    }
}
