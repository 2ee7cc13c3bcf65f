//! Experiment configuration: plain-text `key=value` lines, `#` comments.
//! Command-line flags are applied afterwards through the same setter, so a
//! flag always overrides the file.

use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::click_sim::{ClickModelConfig, ClickModelName};
use crate::data::{GroupStrategy, SyntheticSpec};
use crate::error::{Error, Result};
use crate::fairness::{read_exposure_table, ExposureKind, MAX_TEMPLATE_LENGTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    FairExpPairRank,
    PairRank,
    PropControl,
    Random,
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fairexp_pairrank" | "fairexp" => Ok(Algorithm::FairExpPairRank),
            "pairrank" => Ok(Algorithm::PairRank),
            "prop_control" => Ok(Algorithm::PropControl),
            "random" => Ok(Algorithm::Random),
            other => Err(Error::Config(format!("unknown algorithm '{other}'"))),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::FairExpPairRank => "fairexp_pairrank",
            Algorithm::PairRank => "pairrank",
            Algorithm::PropControl => "prop_control",
            Algorithm::Random => "random",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Beta {
    Value(f64),
    /// Mean grade of group A over mean grade of group B on the training split.
    Auto,
}

impl fmt::Display for Beta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Beta::Value(v) => write!(f, "{v}"),
            Beta::Auto => f.write_str("auto"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        spec: SyntheticSpec,
        /// Queries assigned to train and validation; the rest is the test split.
        train_queries: Option<usize>,
        validation_queries: Option<usize>,
    },
    Files {
        train: PathBuf,
        validation: Option<PathBuf>,
        test: Option<PathBuf>,
        /// 1-based feature id used for the group label.
        group_feature: Option<usize>,
        group_strategy: GroupStrategy,
        scale: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub data: DataSource,
    pub click_model: ClickModelConfig,
    pub rounds: usize,
    pub k: usize,
    pub lambda: f64,
    pub alpha: f64,
    /// Confidence level used by the closed-form exploration width diagnostic.
    pub delta: f64,
    pub beta: Beta,
    pub epsilon: f64,
    pub gamma: f64,
    pub exposure: ExposureKind,
    /// Gain of the proportional controller baseline.
    pub lambda_f: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Follow certain orders inside blocks and when promoting.
    pub heuristic: bool,
    pub diagnostics: bool,
    pub checkpoint: bool,
    /// Offline NDCG is recomputed every `eval_stride` rounds.
    pub eval_stride: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            algorithm: Algorithm::FairExpPairRank,
            data: DataSource::Synthetic {
                spec: SyntheticSpec::default(),
                train_queries: None,
                validation_queries: None,
            },
            click_model: ClickModelConfig::perfect(),
            rounds: 1000,
            k: 10,
            lambda: 0.1,
            alpha: 0.1,
            delta: 0.1,
            beta: Beta::Value(1.0),
            epsilon: 0.1,
            gamma: 0.9995,
            exposure: ExposureKind::LogDiscount,
            lambda_f: 0.01,
            seed: 0,
            out: None,
            heuristic: true,
            diagnostics: false,
            checkpoint: false,
            eval_stride: 1,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean '{value}' for '{key}'"))),
    }
}

fn parse_five(key: &str, value: &str) -> Result<[f64; 5]> {
    let nums: Vec<f64> = value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| parse::<f64>(key, t))
        .collect::<Result<_>>()?;
    nums.try_into()
        .map_err(|_| Error::Config(format!("'{key}' needs exactly five numbers")))
}

fn parse_epsilon(value: &str) -> Result<f64> {
    match value {
        "inf" | "infinity" | "+inf" => Ok(f64::INFINITY),
        v => parse("epsilon", v),
    }
}

impl ExperimentConfig {
    /// Reads a config file on top of the defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: idx + 1,
                message: format!("expected key=value, found '{line}'"),
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    fn synthetic_mut(&mut self) -> Result<&mut SyntheticSpec> {
        match &mut self.data {
            DataSource::Synthetic { spec, .. } => Ok(spec),
            DataSource::Files { .. } => Err(Error::Config(
                "synthetic keys given but the data source is a file".into(),
            )),
        }
    }

    fn files_mut(&mut self, key: &str) -> Result<&mut DataSource> {
        match &self.data {
            DataSource::Files { .. } => Ok(&mut self.data),
            DataSource::Synthetic { .. } => Err(Error::Config(format!(
                "'{key}' requires dataset=<file> to be set first"
            ))),
        }
    }

    /// Sets one configuration key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "algorithm" | "algo" => self.algorithm = value.parse()?,
            "synthetic" => {
                if parse_bool(key, value)? {
                    if !matches!(self.data, DataSource::Synthetic { .. }) {
                        self.data = ExperimentConfig::default().data;
                    }
                } else if matches!(self.data, DataSource::Synthetic { .. }) {
                    return Err(Error::Config("synthetic=false needs dataset=<file>".into()));
                }
            }
            "dataset" => {
                self.data = DataSource::Files {
                    train: PathBuf::from(value),
                    validation: None,
                    test: None,
                    group_feature: None,
                    group_strategy: GroupStrategy::MedianSplit,
                    scale: false,
                }
            }
            "validation_file" | "test_file" | "group_feature" | "group_strategy" | "scale" => {
                if let DataSource::Files {
                    validation,
                    test,
                    group_feature,
                    group_strategy,
                    scale,
                    ..
                } = self.files_mut(key)?
                {
                    match key {
                        "validation_file" => *validation = Some(PathBuf::from(value)),
                        "test_file" => *test = Some(PathBuf::from(value)),
                        "group_feature" => *group_feature = Some(parse(key, value)?),
                        "group_strategy" => *group_strategy = value.parse()?,
                        _ => *scale = parse_bool(key, value)?,
                    }
                }
            }
            "n_queries" => self.synthetic_mut()?.n_queries = parse(key, value)?,
            "docs_per_query" => self.synthetic_mut()?.docs_per_query = parse(key, value)?,
            "dimension" => self.synthetic_mut()?.dimension = parse(key, value)?,
            "group_balance" => self.synthetic_mut()?.group_balance = parse(key, value)?,
            "grade_noise" => self.synthetic_mut()?.grade_noise = parse(key, value)?,
            "theta_norm" => self.synthetic_mut()?.theta_norm = parse(key, value)?,
            "data_seed" => self.synthetic_mut()?.seed = parse(key, value)?,
            "train_queries" | "validation_queries" => {
                let n: usize = parse(key, value)?;
                match &mut self.data {
                    DataSource::Synthetic {
                        train_queries,
                        validation_queries,
                        ..
                    } => {
                        if key == "train_queries" {
                            *train_queries = Some(n);
                        } else {
                            *validation_queries = Some(n);
                        }
                    }
                    DataSource::Files { .. } => {
                        return Err(Error::Config(format!("'{key}' applies to synthetic data only")))
                    }
                }
            }
            "click_model" => {
                self.click_model = if value == "custom" {
                    ClickModelConfig {
                        name: ClickModelName::Custom,
                        ..self.click_model.clone()
                    }
                } else {
                    value.parse()?
                }
            }
            "click_prob" => {
                self.click_model.click_prob = parse_five(key, value)?;
                self.click_model.name = ClickModelName::Custom;
            }
            "stop_prob" => {
                self.click_model.stop_prob = parse_five(key, value)?;
                self.click_model.name = ClickModelName::Custom;
            }
            "rounds" => self.rounds = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "beta" => {
                self.beta = if value == "auto" {
                    Beta::Auto
                } else {
                    Beta::Value(parse(key, value)?)
                }
            }
            "epsilon" => self.epsilon = parse_epsilon(value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "exposure" => {
                if let Some(list) = value.strip_prefix("values:") {
                    let probs = list
                        .split(',')
                        .filter(|t| !t.trim().is_empty())
                        .map(|t| parse::<f64>(key, t.trim()))
                        .collect::<Result<Vec<f64>>>()?;
                    self.exposure = ExposureKind::Table(probs);
                    return Ok(());
                }
                self.exposure = match value.strip_prefix("table:") {
                    Some(path) => {
                        let file = File::open(path).map_err(|e| {
                            Error::Config(format!("cannot open exposure table '{path}': {e}"))
                        })?;
                        ExposureKind::Table(read_exposure_table(BufReader::new(file))?)
                    }
                    None => value.parse()?,
                }
            }
            "lambda_f" => self.lambda_f = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            "heuristic" => self.heuristic = parse_bool(key, value)?,
            "diagnostics" => self.diagnostics = parse_bool(key, value)?,
            "checkpoint" => self.checkpoint = parse_bool(key, value)?,
            "eval_stride" => self.eval_stride = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.rounds == 0 {
            return fail("rounds must be at least 1".into());
        }
        if self.k == 0 || self.k > MAX_TEMPLATE_LENGTH {
            return fail(format!("k must lie in 1..={MAX_TEMPLATE_LENGTH}"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be non-negative, got {}", self.alpha));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return fail(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if let Beta::Value(b) = self.beta {
            if !(b > 0.0 && b.is_finite()) {
                return fail(format!("beta must be positive, got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            return fail(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(self.lambda_f >= 0.0 && self.lambda_f.is_finite()) {
            return fail(format!("lambda_f must be non-negative, got {}", self.lambda_f));
        }
        if self.eval_stride == 0 {
            return fail("eval_stride must be at least 1".into());
        }
        self.click_model.validate()?;
        match &self.data {
            DataSource::Synthetic { spec, .. } => spec.validate()?,
            DataSource::Files { group_feature, .. } => {
                if group_feature.is_none() {
                    return fail("file datasets need group_feature=<id>".into());
                }
            }
        }
        Ok(())
    }

    /// Renders the configuration as `key=value` lines that re-parse to the
    /// same configuration (exposure tables are written inline as a comment).
    pub fn to_kv_string(&self) -> String {
        let mut lines = vec![format!("algorithm={}", self.algorithm)];
        match &self.data {
            DataSource::Synthetic {
                spec,
                train_queries,
                validation_queries,
            } => {
                lines.push("synthetic=true".into());
                lines.push(format!("n_queries={}", spec.n_queries));
                lines.push(format!("docs_per_query={}", spec.docs_per_query));
                lines.push(format!("dimension={}", spec.dimension));
                lines.push(format!("group_balance={}", spec.group_balance));
                lines.push(format!("grade_noise={}", spec.grade_noise));
                lines.push(format!("theta_norm={}", spec.theta_norm));
                lines.push(format!("data_seed={}", spec.seed));
                if let Some(n) = train_queries {
                    lines.push(format!("train_queries={n}"));
                }
                if let Some(n) = validation_queries {
                    lines.push(format!("validation_queries={n}"));
                }
            }
            DataSource::Files {
                train,
                validation,
                test,
                group_feature,
                group_strategy,
                scale,
            } => {
                lines.push(format!("dataset={}", train.display()));
                if let Some(p) = validation {
                    lines.push(format!("validation_file={}", p.display()));
                }
                if let Some(p) = test {
                    lines.push(format!("test_file={}", p.display()));
                }
                if let Some(f) = group_feature {
                    lines.push(format!("group_feature={f}"));
                }
                lines.push(format!(
                    "group_strategy={}",
                    match group_strategy {
                        GroupStrategy::MedianSplit => "median".to_string(),
                        GroupStrategy::Threshold(v) => format!("threshold:{v}"),
                    }
                ));
                lines.push(format!("scale={scale}"));
            }
        }
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        match self.click_model.name {
            ClickModelName::Custom => {
                lines.push(format!("click_prob={}", join(&self.click_model.click_prob)));
                lines.push(format!("stop_prob={}", join(&self.click_model.stop_prob)));
            }
            name => lines.push(format!("click_model={name}")),
        }
        lines.push(format!("rounds={}", self.rounds));
        lines.push(format!("k={}", self.k));
        lines.push(format!("lambda={}", self.lambda));
        lines.push(format!("alpha={}", self.alpha));
        lines.push(format!("delta={}", self.delta));
        lines.push(format!("beta={}", self.beta));
        lines.push(format!(
            "epsilon={}",
            if self.epsilon.is_infinite() { "inf".to_string() } else { self.epsilon.to_string() }
        ));
        lines.push(format!("gamma={}", self.gamma));
        match &self.exposure {
            ExposureKind::LogDiscount => lines.push("exposure=log_discount".into()),
            ExposureKind::InverseRank => lines.push("exposure=inverse_rank".into()),
            ExposureKind::Table(v) => lines.push(format!("exposure=values:{}", join(v))),
        }
        lines.push(format!("lambda_f={}", self.lambda_f));
        lines.push(format!("seed={}", self.seed));
        if let Some(out) = &self.out {
            lines.push(format!("out={}", out.display()));
        }
        lines.push(format!("heuristic={}", self.heuristic));
        lines.push(format!("diagnostics={}", self.diagnostics));
        lines.push(format!("checkpoint={}", self.checkpoint));
        lines.push(format!("eval_stride={}", self.eval_stride));
        let mut text = lines.join("\n");
        text.push('\n');
        text
    }
}
