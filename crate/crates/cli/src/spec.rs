//! Experiment specs: TOML files with one section per concern.
//!
//! ```toml
//! [dataset]
//! split = "prepared/ml100k"   # directory written by `slk prepare`
//!
//! [loss]
//! variant = "sl@k"
//! k = 20
//! tau_w = 3.0
//!
//! [train]
//! lr = 0.01
//!
//! [grid]
//! "train.lr" = [0.01, 0.1]
//! "loss.tau_w" = [2.5, 3.0]
//! ```
//!
//! Any key can be overridden from the environment as `SLK_<SECTION>__<KEY>`,
//! e.g. `SLK_TRAIN__LR=0.05`. Values are parsed as TOML and fall back to
//! plain strings.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use slk_core::dataset::Format;
use slk_core::{EvalTarget, LossConfig, LossVariant, ScoreKind, TrainConfig};
use toml::{Table, Value};

pub const ENV_PREFIX: &str = "SLK_";
const SECTIONS: [&str; 6] = ["dataset", "model", "loss", "train", "eval", "output"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
    pub loss: LossSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Either a prepared split directory or a raw log to preprocess in memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<PathBuf>,
    /// `tsv` or `csv`; inferred from the raw file extension when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
    #[serde(default = "defaults::kcore")]
    pub kcore: usize,
    #[serde(default = "defaults::min_rating")]
    pub min_rating: f64,
    #[serde(default = "defaults::train_frac")]
    pub train_frac: f64,
    #[serde(default = "defaults::val_frac")]
    pub val_frac: f64,
    #[serde(default)]
    pub split_seed: u64,
    /// False-positive ratio injected into the training part.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub noise_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "defaults::dim")]
    pub dim: usize,
    /// Defaults to the loss's natural score: cosine for SL and SL@K, dot otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_kind: Option<ScoreKind>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            dim: defaults::dim(),
            score_kind: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub variant: LossVariant,
    #[serde(default = "defaults::tau_d")]
    pub tau_d: f64,
    #[serde(default = "defaults::tau_w")]
    pub tau_w: f64,
    #[serde(default = "defaults::k")]
    pub k: usize,
    #[serde(default = "defaults::num_negatives")]
    pub num_negatives: usize,
    #[serde(default = "defaults::t_beta")]
    pub t_beta: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub eval_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr: defaults::lr(),
            weight_decay: 0.0,
            epochs: defaults::epochs(),
            batch_size: defaults::batch_size(),
            seed: 0,
            eval_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "defaults::cutoffs")]
    pub cutoffs: Vec<usize>,
    #[serde(default = "defaults::target")]
    pub target: EvalTarget,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            cutoffs: defaults::cutoffs(),
            target: defaults::target(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "defaults::output_dir")]
    pub dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: defaults::output_dir(),
            name: None,
        }
    }
}

mod defaults {
    use super::*;

    pub fn kcore() -> usize {
        10
    }
    pub fn min_rating() -> f64 {
        3.0
    }
    pub fn train_frac() -> f64 {
        0.8
    }
    pub fn val_frac() -> f64 {
        0.1
    }
    pub fn dim() -> usize {
        64
    }
    pub fn tau_d() -> f64 {
        0.2
    }
    pub fn tau_w() -> f64 {
        2.5
    }
    pub fn k() -> usize {
        20
    }
    pub fn num_negatives() -> usize {
        1000
    }
    pub fn t_beta() -> usize {
        5
    }
    pub fn lr() -> f64 {
        0.01
    }
    pub fn epochs() -> usize {
        200
    }
    pub fn batch_size() -> usize {
        1024
    }
    pub fn cutoffs() -> Vec<usize> {
        vec![20]
    }
    pub fn target() -> EvalTarget {
        EvalTarget::Test
    }
    pub fn output_dir() -> PathBuf {
        PathBuf::from("runs")
    }
}

impl DatasetSection {
    pub fn raw_format(&self) -> Result<Format> {
        match (&self.format, &self.raw) {
            (Some(f), _) => f.parse().map_err(|e| anyhow!("dataset.format: {e}")),
            (None, Some(raw)) => Ok(Format::from_path(raw)),
            (None, None) => Ok(Format::Tsv),
        }
    }
}

impl ExperimentSpec {
    /// Checks cross-field constraints that serde cannot express.
    pub fn validate(&self) -> Result<()> {
        match (&self.dataset.split, &self.dataset.raw) {
            (Some(_), Some(_)) => bail!("dataset: set either `split` or `raw`, not both"),
            (None, None) => bail!("dataset: one of `split` or `raw` is required"),
            _ => {}
        }
        self.dataset.raw_format()?;
        if !(0.0..=1.0).contains(&self.dataset.noise) {
            bail!("dataset.noise must lie in [0, 1], got {}", self.dataset.noise);
        }
        self.train_config()
            .validate()
            .map_err(|e| anyhow!("invalid training settings: {e}"))
    }

    pub fn train_config(&self) -> TrainConfig {
        let loss = LossConfig {
            variant: self.loss.variant,
            tau_d: self.loss.tau_d,
            tau_w: self.loss.tau_w,
            k: self.loss.k,
            num_negatives: self.loss.num_negatives,
            t_beta: self.loss.t_beta,
        };
        let mut cfg = TrainConfig::new(loss);
        cfg.lr = self.train.lr;
        cfg.weight_decay = self.train.weight_decay;
        cfg.epochs = self.train.epochs;
        cfg.batch_size = self.train.batch_size;
        cfg.seed = self.train.seed;
        cfg.eval_every = self.train.eval_every;
        cfg.dim = self.model.dim;
        cfg.eval_cutoffs = self.eval.cutoffs.clone();
        if let Some(kind) = self.model.score_kind {
            cfg.score_kind = kind;
        }
        cfg
    }

    /// Name used for run directories: `output.name` or the loss label.
    pub fn run_name(&self) -> String {
        self.output.name.clone().unwrap_or_else(|| {
            let label = match self.loss.variant {
                LossVariant::SlAtK => format!("sl@{}", self.loss.k),
                LossVariant::LambdaLossAtK => format!("lambdaloss@{}", self.loss.k),
                LossVariant::LambdaLossAtKSampled => format!("lambdaloss@{}-s", self.loss.k),
                other => other.name().to_string(),
            };
            label.replace('@', "at")
        })
    }

    /// Fills every defaulted field so the saved copy is self-describing.
    pub fn resolved(&self) -> ExperimentSpec {
        let mut out = self.clone();
        out.model.score_kind = Some(self.train_config().score_kind);
        if out.dataset.raw.is_some() && out.dataset.format.is_none() {
            out.dataset.format = Some(
                match out.dataset.raw_format().unwrap_or(Format::Tsv) {
                    Format::Tsv => "tsv",
                    Format::Csv => "csv",
                }
                .to_string(),
            );
        }
        out.output.name = Some(self.run_name());
        out
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).context("serializing spec")
    }
}

/// One expanded grid point.
#[derive(Debug, Clone)]
pub struct GridPoint {
    /// `(dotted key, value)` for every grid axis, in axis order.
    pub assignments: Vec<(String, Value)>,
    pub spec: ExperimentSpec,
}

impl GridPoint {
    /// Short directory label such as `003_lr-0.01_tau_w-2.5`.
    pub fn label(&self, index: usize) -> String {
        let mut label = format!("{index:03}");
        for (key, value) in &self.assignments {
            let field = key.rsplit('.').next().unwrap_or(key);
            let text = match value {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            let clean: String = text
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() || ".-".contains(c) { c } else { '_' })
                .collect();
            label.push_str(&format!("_{field}-{clean}"));
        }
        label
    }
}

/// A parsed spec file, possibly holding a grid.
#[derive(Debug, Clone)]
pub struct SpecFile {
    pub base: Table,
    pub grid: Vec<(String, Vec<Value>)>,
    /// Directory that relative paths in the file are resolved against.
    pub root: PathBuf,
}

impl SpecFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading spec {}", path.display()))?;
        let root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Self::parse(&text, root).with_context(|| format!("in spec {}", path.display()))
    }

    pub fn parse(text: &str, root: PathBuf) -> Result<Self> {
        let mut base: Table = toml::from_str(text).context("spec is not valid TOML")?;
        let grid = match base.remove("grid") {
            None => Vec::new(),
            Some(Value::Table(t)) => t
                .into_iter()
                .map(|(key, value)| match value {
                    Value::Array(values) if !values.is_empty() => Ok((key, values)),
                    _ => Err(anyhow!("grid.{key:?} must be a nonempty array")),
                })
                .collect::<Result<_>>()?,
            Some(_) => bail!("`grid` must be a table of arrays"),
        };
        for (key, _) in &grid {
            split_key(key)?;
        }
        Ok(SpecFile { base, grid, root })
    }

    /// Applies `SLK_<SECTION>__<KEY>` variables from `vars`.
    pub fn apply_env<I>(&mut self, vars: I) -> Result<Vec<String>>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut applied = Vec::new();
        for (name, raw) in vars {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let Some((section, key)) = rest.split_once("__") else {
                continue;
            };
            let dotted = format!("{}.{}", section.to_ascii_lowercase(), key.to_ascii_lowercase());
            set_path(&mut self.base, &dotted, parse_value(&raw))
                .with_context(|| format!("environment override {name}"))?;
            applied.push(dotted);
        }
        applied.sort();
        Ok(applied)
    }

    /// Sets one dotted key on the base table; used for command-line overrides.
    pub fn set(&mut self, dotted: &str, value: Value) -> Result<()> {
        set_path(&mut self.base, dotted, value)
    }

    /// Cross product of the grid axes; a single point when there is no grid.
    pub fn expand(&self) -> Result<Vec<GridPoint>> {
        let mut combos: Vec<Vec<(String, Value)>> = vec![Vec::new()];
        for (key, values) in &self.grid {
            combos = combos
                .into_iter()
                .flat_map(|prefix| {
                    values.iter().map(move |v| {
                        let mut next = prefix.clone();
                        next.push((key.clone(), v.clone()));
                        next
                    })
                })
                .collect();
        }
        combos
            .into_iter()
            .map(|assignments| {
                let mut table = self.base.clone();
                for (key, value) in &assignments {
                    set_path(&mut table, key, value.clone())?;
                }
                let mut spec: ExperimentSpec = Value::Table(table)
                    .try_into()
                    .map_err(|e: toml::de::Error| anyhow!("invalid spec: {}", e.message()))?;
                self.anchor_paths(&mut spec);
                spec.validate()?;
                Ok(GridPoint { assignments, spec })
            })
            .collect()
    }

    pub fn is_grid(&self) -> bool {
        !self.grid.is_empty()
    }

    fn anchor_paths(&self, spec: &mut ExperimentSpec) {
        let anchor = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = self.root.join(&*p);
            }
        };
        if let Some(p) = spec.dataset.split.as_mut() {
            anchor(p);
        }
        if let Some(p) = spec.dataset.raw.as_mut() {
            anchor(p);
        }
    }
}

fn split_key(dotted: &str) -> Result<(&str, &str)> {
    let (section, key) = dotted
        .split_once('.')
        .ok_or_else(|| anyhow!("key {dotted:?} must look like section.field"))?;
    if !SECTIONS.contains(&section) {
        bail!("unknown section {section:?} in {dotted:?}; expected one of {SECTIONS:?}");
    }
    if key.is_empty() || key.contains('.') {
        bail!("key {dotted:?} must look like section.field");
    }
    Ok((section, key))
}

fn set_path(table: &mut Table, dotted: &str, value: Value) -> Result<()> {
    let (section, key) = split_key(dotted)?;
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| Value::Table(Table::new()));
    match entry {
        Value::Table(t) => {
            t.insert(key.to_string(), value);
            Ok(())
        }
        _ => bail!("`{section}` is not a table"),
    }
}

/// Parses a TOML literal, falling back to a plain string.
pub fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}
