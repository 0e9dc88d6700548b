//! Command arguments and the optional TOML config file.
//!
//! Every flag may also be given as a key (flag name with `_` for `-`) in the
//! command's section of the config file. Flags win over the file.
//!
//! ```toml
//! [score]
//! backend = "remote:http://127.0.0.1:8080"
//! template = "vicuna-v1"
//! workers = 8
//!
//! [select]
//! ratio = 0.05
//! ifd_cap = 1.0
//!
//! [compare]
//! budgets = [0.05, 0.10, 0.15]
//!
//! [diversify]
//! pre_ratio = 0.2
//! final_ratio = 0.02
//! embedder = "hashed-bow:1024"
//!
//! [report]
//! fraction = 0.05
//! top_k = 10
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use superfilter::{DatasetFormat, Error, Result};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub score: ScoreArgs,
    #[serde(default)]
    pub select: SelectArgs,
    #[serde(default)]
    pub compare: CompareArgs,
    #[serde(default)]
    pub diversify: DiversifyArgs,
    #[serde(default)]
    pub report: ReportArgs,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Fills every unset flag from the config file section.
macro_rules! overlay {
    ($flags:ident, $file:ident, [$($field:ident),* $(,)?]) => {
        $( if $flags.$field.is_none() { $flags.$field = $file.$field; } )*
    };
}

fn required<T>(value: Option<T>, section: &str, key: &str) -> Result<T> {
    value.ok_or_else(|| {
        Error::Config(format!(
            "missing --{} (or `{key}` in [{section}])",
            key.replace('_', "-")
        ))
    })
}

fn dataset_format(explicit: Option<String>, path: &Path) -> Result<DatasetFormat> {
    match explicit {
        Some(f) => f.parse(),
        None => Ok(DatasetFormat::from_path(path)),
    }
}

fn check_positive_int(value: usize, key: &str) -> Result<usize> {
    if value == 0 {
        return Err(Error::Config(format!("--{key} must be >= 1")));
    }
    Ok(value)
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreArgs {
    /// Input dataset (Alpaca JSON array or JSONL).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Dataset format: alpaca-json or jsonl (default: from the file extension).
    #[arg(long)]
    pub format: Option<String>,
    /// Scorer: uniform:VOCAB | table:PATH | remote:URL
    #[arg(long)]
    pub backend: Option<String>,
    /// Built-in prompt template: vicuna-v1, alpaca or plain.
    #[arg(long)]
    pub template: Option<String>,
    /// JSON template file {name, with_input_pattern, without_input_pattern}; overrides --template.
    #[arg(long)]
    pub template_file: Option<PathBuf>,
    /// Score file to write (JSONL).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Concurrent scorer requests.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Fail the run when more than this fraction of samples fail.
    #[arg(long)]
    pub max_failure_fraction: Option<f64>,
    /// Context limit in backend tokens; prompts are truncated from the left.
    #[arg(long)]
    pub max_length: Option<usize>,
    /// Remote request timeout in seconds.
    #[arg(long)]
    pub timeout_secs: Option<f64>,
    /// Name recorded in every score row (default derived from the backend).
    #[arg(long)]
    pub scorer_name: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoreConfig {
    pub dataset: PathBuf,
    #[serde(serialize_with = "display")]
    pub format: DatasetFormat,
    pub backend: String,
    pub template: String,
    pub template_file: Option<PathBuf>,
    pub output: PathBuf,
    pub workers: usize,
    pub max_failure_fraction: f64,
    pub max_length: Option<usize>,
    pub timeout_secs: f64,
    pub scorer_name: Option<String>,
}

impl ScoreArgs {
    pub fn resolve(mut self, file: ScoreArgs) -> Result<ScoreConfig> {
        overlay!(self, file, [
            dataset, format, backend, template, template_file, output, workers,
            max_failure_fraction, max_length, timeout_secs, scorer_name,
        ]);
        let dataset = required(self.dataset, "score", "dataset")?;
        let timeout_secs = self.timeout_secs.unwrap_or(60.0);
        if !(timeout_secs > 0.0 && timeout_secs.is_finite()) {
            return Err(Error::Config("--timeout-secs must be positive".into()));
        }
        Ok(ScoreConfig {
            format: dataset_format(self.format, &dataset)?,
            dataset,
            backend: required(self.backend, "score", "backend")?,
            template: self.template.unwrap_or_else(|| "vicuna-v1".into()),
            template_file: self.template_file,
            output: required(self.output, "score", "output")?,
            workers: check_positive_int(self.workers.unwrap_or(1), "workers")?,
            max_failure_fraction: self.max_failure_fraction.unwrap_or(0.01),
            max_length: self.max_length,
            timeout_secs,
            scorer_name: self.scorer_name,
        })
    }
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<String>,
    /// Score file produced by `score`.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Budget as a fraction of the dataset, in (0, 1].
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Only samples with IFD strictly below this are eligible ("inf" disables).
    #[arg(long)]
    pub ifd_cap: Option<f64>,
    /// Subset file to write.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// alpaca-json or jsonl (default: from the output extension).
    #[arg(long)]
    pub output_format: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectConfig {
    pub dataset: PathBuf,
    #[serde(serialize_with = "display")]
    pub format: DatasetFormat,
    pub scores: PathBuf,
    pub ratio: f64,
    #[serde(serialize_with = "float_or_string")]
    pub ifd_cap: f64,
    pub output: PathBuf,
    #[serde(serialize_with = "display")]
    pub output_format: DatasetFormat,
}

impl SelectArgs {
    pub fn resolve(mut self, file: SelectArgs) -> Result<SelectConfig> {
        overlay!(self, file, [dataset, format, scores, ratio, ifd_cap, output, output_format]);
        let dataset = required(self.dataset, "select", "dataset")?;
        let output = required(self.output, "select", "output")?;
        Ok(SelectConfig {
            format: dataset_format(self.format, &dataset)?,
            dataset,
            scores: required(self.scores, "select", "scores")?,
            ratio: required(self.ratio, "select", "ratio")?,
            ifd_cap: self.ifd_cap.unwrap_or(1.0),
            output_format: output_format(self.output_format, &output)?,
            output,
        })
    }
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareArgs {
    #[arg(long)]
    pub scores_a: Option<PathBuf>,
    #[arg(long)]
    pub scores_b: Option<PathBuf>,
    /// Comma-separated budget fractions for the overlap ratios.
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<f64>>,
    #[arg(long)]
    pub ifd_cap: Option<f64>,
    /// Report file (JSON); printed to stdout when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Also write per-percentile quantiles of both score files as CSV.
    #[arg(long)]
    pub quantiles_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareConfig {
    pub scores_a: PathBuf,
    pub scores_b: PathBuf,
    pub budgets: Vec<f64>,
    #[serde(serialize_with = "float_or_string")]
    pub ifd_cap: f64,
    pub output: Option<PathBuf>,
    pub quantiles_csv: Option<PathBuf>,
}

impl CompareArgs {
    pub fn resolve(mut self, file: CompareArgs) -> Result<CompareConfig> {
        overlay!(self, file, [scores_a, scores_b, budgets, ifd_cap, output, quantiles_csv]);
        let budgets = self.budgets.unwrap_or_else(|| vec![0.05, 0.10, 0.15]);
        if budgets.is_empty() {
            return Err(Error::Config("--budgets needs at least one fraction".into()));
        }
        Ok(CompareConfig {
            scores_a: required(self.scores_a, "compare", "scores_a")?,
            scores_b: required(self.scores_b, "compare", "scores_b")?,
            budgets,
            ifd_cap: self.ifd_cap.unwrap_or(1.0),
            output: self.output,
            quantiles_csv: self.quantiles_csv,
        })
    }
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiversifyArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Fraction kept by the IFD stage.
    #[arg(long)]
    pub pre_ratio: Option<f64>,
    /// Fraction of the full dataset in the output.
    #[arg(long)]
    pub final_ratio: Option<f64>,
    #[arg(long)]
    pub ifd_cap: Option<f64>,
    /// Embedder: hashed-bow[:DIM] | remote:URL
    #[arg(long)]
    pub embedder: Option<String>,
    /// Binary embedding cache; read when present and complete, otherwise written.
    #[arg(long)]
    pub embeddings_cache: Option<PathBuf>,
    #[arg(long)]
    pub timeout_secs: Option<f64>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub output_format: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiversifyConfig {
    pub dataset: PathBuf,
    #[serde(serialize_with = "display")]
    pub format: DatasetFormat,
    pub scores: PathBuf,
    pub pre_ratio: f64,
    pub final_ratio: f64,
    #[serde(serialize_with = "float_or_string")]
    pub ifd_cap: f64,
    pub embedder: String,
    pub embeddings_cache: Option<PathBuf>,
    pub timeout_secs: f64,
    pub output: PathBuf,
    #[serde(serialize_with = "display")]
    pub output_format: DatasetFormat,
}

impl DiversifyArgs {
    pub fn resolve(mut self, file: DiversifyArgs) -> Result<DiversifyConfig> {
        overlay!(self, file, [
            dataset, format, scores, pre_ratio, final_ratio, ifd_cap, embedder,
            embeddings_cache, timeout_secs, output, output_format,
        ]);
        let dataset = required(self.dataset, "diversify", "dataset")?;
        let output = required(self.output, "diversify", "output")?;
        Ok(DiversifyConfig {
            format: dataset_format(self.format, &dataset)?,
            dataset,
            scores: required(self.scores, "diversify", "scores")?,
            pre_ratio: self.pre_ratio.unwrap_or(0.20),
            final_ratio: self.final_ratio.unwrap_or(0.02),
            ifd_cap: self.ifd_cap.unwrap_or(1.0),
            embedder: self.embedder.unwrap_or_else(|| "hashed-bow".into()),
            embeddings_cache: self.embeddings_cache,
            timeout_secs: self.timeout_secs.unwrap_or(60.0),
            output_format: output_format(self.output_format, &output)?,
            output,
        })
    }
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Directory for report.json, report.txt and the CSV exports.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Size of the top and bottom IFD slices, in (0, 0.5].
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Rows kept per verb-noun table.
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub ifd_cap: Option<f64>,
    /// Verb lexicon (one word per line); defaults to the built-in list.
    #[arg(long)]
    pub verbs: Option<PathBuf>,
    /// Noun lexicon (one word per line); defaults to the built-in list.
    #[arg(long)]
    pub nouns: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportConfig {
    pub dataset: PathBuf,
    #[serde(serialize_with = "display")]
    pub format: DatasetFormat,
    pub scores: PathBuf,
    pub output_dir: PathBuf,
    pub fraction: f64,
    pub top_k: usize,
    #[serde(serialize_with = "float_or_string")]
    pub ifd_cap: f64,
    pub verbs: Option<PathBuf>,
    pub nouns: Option<PathBuf>,
}

impl ReportArgs {
    pub fn resolve(mut self, file: ReportArgs) -> Result<ReportConfig> {
        overlay!(self, file, [dataset, format, scores, output_dir, fraction, top_k, ifd_cap, verbs, nouns]);
        let dataset = required(self.dataset, "report", "dataset")?;
        if self.verbs.is_some() != self.nouns.is_some() {
            return Err(Error::Config("--verbs and --nouns must be given together".into()));
        }
        Ok(ReportConfig {
            format: dataset_format(self.format, &dataset)?,
            dataset,
            scores: required(self.scores, "report", "scores")?,
            output_dir: required(self.output_dir, "report", "output_dir")?,
            fraction: self.fraction.unwrap_or(0.05),
            top_k: self.top_k.unwrap_or(10),
            ifd_cap: self.ifd_cap.unwrap_or(1.0),
            verbs: self.verbs,
            nouns: self.nouns,
        })
    }
}

fn output_format(value: Option<String>, output: &Path) -> Result<DatasetFormat> {
    value.map_or(Ok(DatasetFormat::from_path(output)), |v| v.parse())
}

fn display<T: std::fmt::Display, S: serde::Serializer>(v: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

/// JSON has no infinity; an uncapped run is recorded as "inf".
fn float_or_string<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.collect_str(v)
    }
}
