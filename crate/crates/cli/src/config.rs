//! Command-line flags, config file and the resolved run configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use explagg::aggregate::LoweringConfig;
use explagg::data::InputMetric;
use explagg::metrics::ExplanationMetric;
use explagg::model::{Target, TrainConfig};
use serde::{Deserialize, Serialize};

/// Default neighbor count for `ava`.
pub const DEFAULT_AVA_K: usize = 20;

#[derive(Debug, Parser)]
#[command(
    name = "explagg",
    version,
    about = "Explain, evaluate and aggregate feature attributions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a classifier and save it.
    Train(Flags),
    /// Write attributions for every test input.
    Explain(Flags),
    /// Score explainers with the selected criteria.
    Evaluate(Flags),
    /// Aggregate several explainers per input.
    Aggregate(Flags),
    /// Compare AVA against its Shapley backend.
    Ava(Flags),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Explain(_) => "explain",
            Command::Evaluate(_) => "evaluate",
            Command::Aggregate(_) => "aggregate",
            Command::Ava(_) => "ava",
        }
    }

    pub fn flags(&self) -> &Flags {
        match self {
            Command::Train(f)
            | Command::Explain(f)
            | Command::Evaluate(f)
            | Command::Aggregate(f)
            | Command::Ava(f) => f,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineChoice {
    Zero,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mean,
    Median,
    Convex,
    Descent,
    Region,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mean => "mean",
            Method::Median => "median",
            Method::Convex => "convex",
            Method::Descent => "descent",
            Method::Region => "region",
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Headed CSV with features and an integer label column.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Separate test CSV; `--data` is then used whole for training.
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    /// Label column name (default `label`).
    #[arg(long)]
    pub label_col: Option<String>,
    /// Model file to load; trained on the fly when absent.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// `name:key=val,...`, e.g. `ig:steps=128` or `shap:budget=full`.
    #[arg(long = "explainer")]
    pub explainers: Vec<String>,
    /// Criterion to evaluate; repeatable.
    #[arg(long = "criterion")]
    pub criteria: Vec<String>,
    /// Reference input for masking and path methods.
    #[arg(long, value_enum)]
    pub baseline: Option<BaselineChoice>,
    /// Neighborhood radius for sensitivity (default 0.3).
    #[arg(long)]
    pub radius: Option<f64>,
    /// Input distance: linf, l2 or l1.
    #[arg(long)]
    pub rho: Option<InputMetric>,
    /// Explanation distance: l2, l1 or cosine.
    #[arg(long)]
    pub metric_d: Option<ExplanationMetric>,
    /// Faithfulness subset size (default round(d/4), at least 1).
    #[arg(long)]
    pub subset_size: Option<usize>,
    /// Faithfulness subsets sampled per input (default 100).
    #[arg(long)]
    pub num_subsets: Option<usize>,
    /// AVA neighbor count (default 20), or features removed by
    /// deletion, addition, roar and kar (default 1).
    #[arg(long)]
    pub k: Option<usize>,
    /// Aggregation method.
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// Master seed (default 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Attribution dump written by `ava`.
    #[arg(long)]
    pub dump: Option<PathBuf>,
    /// TOML file with the same keys as the flags; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Progress messages on stderr.
    #[arg(short, long, action = ArgAction::Count)]
    pub verbose: u8,
}

/// Contents of a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    data: Option<PathBuf>,
    test_data: Option<PathBuf>,
    label_col: Option<String>,
    normalize: Option<bool>,
    model: Option<PathBuf>,
    test_fraction: Option<f64>,
    seed: Option<u64>,
    train: Option<TrainConfig>,
    explainers: Option<Vec<String>>,
    criteria: Option<Vec<String>>,
    baseline: Option<BaselineChoice>,
    target: Option<Target>,
    radius: Option<f64>,
    rho: Option<InputMetric>,
    metric_d: Option<ExplanationMetric>,
    require_same_prediction: Option<bool>,
    normalize_explanations: Option<bool>,
    subset_size: Option<usize>,
    num_subsets: Option<usize>,
    k: Option<usize>,
    method: Option<Method>,
    lowering: Option<LoweringConfig>,
    ava_normalize_weights: Option<bool>,
    retrain_seeds: Option<Vec<u64>>,
    eval_fraction: Option<f64>,
    out: Option<PathBuf>,
    dump: Option<PathBuf>,
    verbosity: Option<u8>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Fully resolved settings; echoed into every report.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub label_col: String,
    /// Z-score features with statistics of the training data.
    pub normalize: bool,
    pub model: Option<PathBuf>,
    pub test_fraction: f64,
    pub seed: u64,
    /// `train.seed` always equals `seed`.
    pub train: TrainConfig,
    pub explainers: Vec<String>,
    pub criteria: Vec<String>,
    pub baseline: BaselineChoice,
    /// Default target for explainers and output-based criteria.
    pub target: Target,
    pub radius: f64,
    pub rho: InputMetric,
    pub metric_d: ExplanationMetric,
    pub require_same_prediction: bool,
    pub normalize_explanations: bool,
    pub subset_size: Option<usize>,
    pub num_subsets: usize,
    pub k: usize,
    pub method: Method,
    pub lowering: LoweringConfig,
    pub ava_normalize_weights: bool,
    pub retrain_seeds: Vec<u64>,
    pub eval_fraction: f64,
    pub out: Option<PathBuf>,
    pub dump: Option<PathBuf>,
    pub verbosity: u8,
}

impl RunConfig {
    pub fn resolve(command: &Command) -> Result<Self> {
        let f = command.flags();
        let file = match &f.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let name = command.name();
        let seed = f.seed.or(file.seed).unwrap_or(0);
        let mut train = file.train.unwrap_or_default();
        train.seed = seed;
        let default_k = if name == "ava" { DEFAULT_AVA_K } else { 1 };
        let default_explainers = match name {
            "aggregate" => vec![
                "grad".to_string(),
                "gxi".to_string(),
                "ig:steps=128".to_string(),
            ],
            _ => vec!["shap:budget=auto".to_string()],
        };
        let default_criteria = [
            "avg_sensitivity",
            "max_sensitivity",
            "faithfulness",
            "complexity",
        ]
        .map(String::from)
        .to_vec();
        let config = Self {
            command: name.to_string(),
            data: f.data.clone().or(file.data),
            test_data: f.test_data.clone().or(file.test_data),
            label_col: f
                .label_col
                .clone()
                .or(file.label_col)
                .unwrap_or_else(|| "label".into()),
            normalize: file.normalize.unwrap_or(true),
            model: f.model.clone().or(file.model),
            test_fraction: file.test_fraction.unwrap_or(0.2),
            seed,
            train,
            explainers: non_empty(f.explainers.clone())
                .or(file.explainers)
                .unwrap_or(default_explainers),
            criteria: non_empty(f.criteria.clone())
                .or(file.criteria)
                .unwrap_or(default_criteria),
            baseline: f.baseline.or(file.baseline).unwrap_or(BaselineChoice::Zero),
            target: file.target.unwrap_or_default(),
            radius: f.radius.or(file.radius).unwrap_or(0.3),
            rho: f.rho.or(file.rho).unwrap_or_default(),
            metric_d: f.metric_d.or(file.metric_d).unwrap_or_default(),
            require_same_prediction: file.require_same_prediction.unwrap_or(true),
            normalize_explanations: file.normalize_explanations.unwrap_or(true),
            subset_size: f.subset_size.or(file.subset_size),
            num_subsets: f.num_subsets.or(file.num_subsets).unwrap_or(100),
            k: f.k.or(file.k).unwrap_or(default_k),
            method: f.method.or(file.method).unwrap_or(Method::Mean),
            lowering: file.lowering.unwrap_or_default(),
            ava_normalize_weights: file.ava_normalize_weights.unwrap_or(true),
            retrain_seeds: file.retrain_seeds.unwrap_or_else(|| (0..5).collect()),
            eval_fraction: file.eval_fraction.unwrap_or(0.2),
            out: f.out.clone().or(file.out),
            dump: f.dump.clone().or(file.dump),
            verbosity: f.verbose.max(file.verbosity.unwrap_or(0)),
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            bail!("test_fraction must lie in (0, 1)");
        }
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            bail!("radius must be a non-negative number");
        }
        if self.num_subsets == 0 {
            bail!("num_subsets must be positive");
        }
        if self.k == 0 {
            bail!("k must be positive");
        }
        for p in [&self.data, &self.test_data, &self.model]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                bail!("{} does not exist", p.display());
            }
        }
        self.train.validate()?;
        self.lowering.validate()?;
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn require_out(&self) -> Result<&Path> {
        self.out.as_deref().context("--out is required")
    }

    pub fn require_data(&self) -> Result<&Path> {
        self.data.as_deref().context("--data is required")
    }
}

fn non_empty(v: Vec<String>) -> Option<Vec<String>> {
    (!v.is_empty()).then_some(v)
}
