//! Conditional and unconditional perplexity, IFD, and the dataset scoring engine.
//!
//! A [`LogProbBackend`] owns tokenization and returns one natural-log
//! probability per completion token. The unconditional case is requested
//! with an empty prompt; how the backend starts the sequence in that case is
//! reported by [`LogProbBackend::sequence_start`] and recorded in the score
//! file header.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{render_prompt, Dataset, PromptTemplate};
use crate::error::{Error, Result};
use crate::numfmt::serialize_sig;

/// Per-token log-probabilities of a completion.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenLogProbs {
    tokens: Vec<String>,
    logprobs: Vec<f64>,
}

impl TokenLogProbs {
    pub fn new(tokens: Vec<String>, logprobs: Vec<f64>) -> Result<Self> {
        if tokens.len() != logprobs.len() {
            return Err(Error::Data(format!(
                "{} tokens but {} logprobs",
                tokens.len(),
                logprobs.len()
            )));
        }
        if tokens.is_empty() {
            return Err(Error::Data("completion tokenizes to zero tokens".into()));
        }
        if let Some((i, lp)) = logprobs
            .iter()
            .enumerate()
            .find(|(_, lp)| !lp.is_finite() || **lp > 0.0)
        {
            return Err(Error::Data(format!(
                "logprob {lp} at token {i} is not a finite value <= 0"
            )));
        }
        Ok(Self { tokens, logprobs })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn logprobs(&self) -> &[f64] {
        &self.logprobs
    }

    pub fn len(&self) -> usize {
        self.logprobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logprobs.is_empty()
    }
}

/// exp of the mean negative log-probability, accumulated in log space.
pub fn perplexity(tlp: &TokenLogProbs) -> f64 {
    let sum: f64 = tlp.logprobs.iter().sum();
    (-sum / tlp.logprobs.len() as f64).exp()
}

pub const MIN_UNCONDITIONAL_PPL: f64 = 1e-12;

pub fn ifd_score(ppl_cond: f64, ppl_uncond: f64) -> Result<f64> {
    if !ppl_cond.is_finite() || ppl_cond <= 0.0 {
        return Err(Error::Numeric(format!(
            "conditional perplexity must be positive and finite, got {ppl_cond}"
        )));
    }
    if !ppl_uncond.is_finite() || ppl_uncond < MIN_UNCONDITIONAL_PPL {
        return Err(Error::Numeric(format!(
            "unconditional perplexity must be finite and >= {MIN_UNCONDITIONAL_PPL:e}, got {ppl_uncond}"
        )));
    }
    Ok(ppl_cond / ppl_uncond)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub id: String,
    #[serde(serialize_with = "serialize_sig")]
    pub ppl_cond: f64,
    #[serde(serialize_with = "serialize_sig")]
    pub ppl_uncond: f64,
    #[serde(serialize_with = "serialize_sig")]
    pub ifd: f64,
    pub n_tokens: usize,
    pub scorer: String,
    /// Set when the backend had to drop prompt tokens to fit its context.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

impl ScoredSample {
    pub fn from_perplexities(
        id: impl Into<String>,
        ppl_cond: f64,
        ppl_uncond: f64,
        n_tokens: usize,
        scorer: impl Into<String>,
    ) -> Result<Self> {
        Ok(Self {
            id: id.into(),
            ppl_cond,
            ppl_uncond,
            ifd: ifd_score(ppl_cond, ppl_uncond)?,
            n_tokens,
            scorer: scorer.into(),
            truncated: false,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Uniform,
    Table,
    Remote,
}

/// Result of one log-probability request.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub logprobs: TokenLogProbs,
    pub truncated: bool,
}

/// A named source of completion-token log-probabilities.
pub trait LogProbBackend: Send + Sync {
    fn name(&self) -> &str;

    fn kind(&self) -> BackendKind;

    /// One logprob per completion token, conditioned on the prompt and the
    /// preceding completion tokens. An empty prompt requests the
    /// unconditional distribution.
    fn logprobs(&self, prompt: &str, completion: &str) -> Result<Completion>;

    /// How the unconditional (empty prompt) sequence is started.
    fn sequence_start(&self) -> String;
}

const TRUNCATION_POLICY: &str = "left-truncate-prompt";

/// Drops tokens from the left of the prompt until prompt + completion fit.
fn fit_context(
    prompt: Vec<&str>,
    completion_len: usize,
    max_length: Option<usize>,
) -> Result<(Vec<&str>, bool)> {
    let Some(max) = max_length else {
        return Ok((prompt, false));
    };
    if completion_len > max {
        return Err(Error::Data(format!(
            "completion of {completion_len} tokens exceeds max_length {max}"
        )));
    }
    let budget = max - completion_len;
    if prompt.len() <= budget {
        return Ok((prompt, false));
    }
    let skip = prompt.len() - budget;
    Ok((prompt[skip..].to_vec(), true))
}

/// Every token equally likely under a `vocab_size`-way distribution,
/// regardless of context. Tokens are whitespace-separated words.
#[derive(Debug, Clone)]
pub struct UniformBackend {
    name: String,
    vocab_size: u64,
    max_length: Option<usize>,
}

impl UniformBackend {
    pub fn new(vocab_size: u64) -> Result<Self> {
        if vocab_size < 1 {
            return Err(Error::Config("uniform backend needs a vocabulary size >= 1".into()));
        }
        Ok(Self {
            name: format!("uniform-{vocab_size}"),
            vocab_size,
            max_length: None,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_max_length(mut self, max_length: Option<usize>) -> Self {
        self.max_length = max_length;
        self
    }

    pub fn vocab_size(&self) -> u64 {
        self.vocab_size
    }
}

impl LogProbBackend for UniformBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Uniform
    }

    fn logprobs(&self, prompt: &str, completion: &str) -> Result<Completion> {
        let tokens: Vec<String> = completion.split_whitespace().map(str::to_owned).collect();
        let (_, truncated) =
            fit_context(prompt.split_whitespace().collect(), tokens.len(), self.max_length)?;
        let lp = -(self.vocab_size as f64).ln();
        let logprobs = vec![lp; tokens.len()];
        Ok(Completion {
            logprobs: TokenLogProbs::new(tokens, logprobs)?,
            truncated,
        })
    }

    fn sequence_start(&self) -> String {
        "none (context-free distribution)".into()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableEntry {
    pub context: String,
    pub token: String,
    pub logprob: f64,
}

/// On-disk form of a [`TableBackend`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableSpec {
    #[serde(default)]
    pub name: Option<String>,
    /// Used for (context, token) pairs missing from `entries`.
    #[serde(default)]
    pub default_logprob: Option<f64>,
    pub entries: Vec<TableEntry>,
}

/// Explicit log-probabilities keyed by (context, token).
///
/// Text is split on whitespace. The context of completion token `j` is the
/// prompt tokens followed by completion tokens `0..j`, joined by single
/// spaces; the unconditional context of the first token is `""`.
#[derive(Debug, Clone)]
pub struct TableBackend {
    name: String,
    table: HashMap<(String, String), f64>,
    default_logprob: Option<f64>,
    max_length: Option<usize>,
}

impl TableBackend {
    pub fn new(
        name: impl Into<String>,
        entries: impl IntoIterator<Item = TableEntry>,
        default_logprob: Option<f64>,
    ) -> Result<Self> {
        let check = |lp: f64, what: &str| {
            if lp.is_finite() && lp <= 0.0 {
                Ok(())
            } else {
                Err(Error::Data(format!("{what}: logprob {lp} is not a finite value <= 0")))
            }
        };
        if let Some(lp) = default_logprob {
            check(lp, "default")?;
        }
        let mut table = HashMap::new();
        for entry in entries {
            check(entry.logprob, &format!("entry ({:?}, {:?})", entry.context, entry.token))?;
            table.insert((entry.context, entry.token), entry.logprob);
        }
        Ok(Self {
            name: name.into(),
            table,
            default_logprob,
            max_length: None,
        })
    }

    pub fn from_spec(spec: TableSpec, fallback_name: &str) -> Result<Self> {
        let name = spec.name.unwrap_or_else(|| fallback_name.to_owned());
        Self::new(name, spec.entries, spec.default_logprob)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: TableSpec = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: invalid table: {e}", path.display())))?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("table")
            .to_owned();
        Self::from_spec(spec, &format!("table-{stem}"))
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_max_length(mut self, max_length: Option<usize>) -> Self {
        self.max_length = max_length;
        self
    }

    /// The context key for each completion token of (prompt, completion).
    pub fn contexts(prompt: &str, completion: &str) -> Vec<String> {
        let mut context: Vec<&str> = prompt.split_whitespace().collect();
        completion
            .split_whitespace()
            .map(|tok| {
                let key = context.join(" ");
                context.push(tok);
                key
            })
            .collect()
    }
}

impl LogProbBackend for TableBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Table
    }

    fn logprobs(&self, prompt: &str, completion: &str) -> Result<Completion> {
        let completion_tokens: Vec<&str> = completion.split_whitespace().collect();
        let (mut context, truncated) = fit_context(
            prompt.split_whitespace().collect(),
            completion_tokens.len(),
            self.max_length,
        )?;
        let mut logprobs = Vec::with_capacity(completion_tokens.len());
        for tok in &completion_tokens {
            let key = (context.join(" "), (*tok).to_owned());
            let lp = match self.table.get(&key) {
                Some(lp) => *lp,
                None => self.default_logprob.ok_or_else(|| {
                    Error::Data(format!(
                        "table {:?} has no entry for token {:?} after context {:?}",
                        self.name, key.1, key.0
                    ))
                })?,
            };
            logprobs.push(lp);
            context.push(tok);
        }
        let tokens = completion_tokens.into_iter().map(str::to_owned).collect();
        Ok(Completion {
            logprobs: TokenLogProbs::new(tokens, logprobs)?,
            truncated,
        })
    }

    fn sequence_start(&self) -> String {
        "empty context key \"\"".into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub id: String,
    pub error: String,
}

/// Run metadata carried on the first line of a score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFileHeader {
    pub format: String,
    pub backend: String,
    pub backend_kind: BackendKind,
    pub template: String,
    pub truncation_policy: String,
    pub sequence_start: String,
    pub n_samples: usize,
    pub n_scored: usize,
    #[serde(default)]
    pub failures: Vec<SampleFailure>,
}

pub const SCORE_FORMAT: &str = "superfilter-scores/1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoringOptions {
    /// Upper bound on concurrent backend requests.
    pub workers: usize,
    /// The run fails when more than this fraction of samples fail.
    pub max_failure_fraction: f64,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            max_failure_fraction: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScoringRun {
    pub scores: Vec<ScoredSample>,
    pub failures: Vec<SampleFailure>,
    pub header: ScoreFileHeader,
    pub elapsed: Duration,
}

impl ScoringRun {
    pub fn samples_per_second(&self) -> f64 {
        let secs = self.elapsed.as_secs_f64();
        if secs > 0.0 {
            (self.scores.len() + self.failures.len()) as f64 / secs
        } else {
            f64::INFINITY
        }
    }
}

pub fn score_sample(
    backend: &dyn LogProbBackend,
    id: &str,
    prompt: &str,
    response: &str,
) -> Result<ScoredSample> {
    let cond = backend.logprobs(prompt, response).map_err(|e| e.with_sample(id))?;
    let uncond = backend.logprobs("", response).map_err(|e| e.with_sample(id))?;
    let mut scored = ScoredSample::from_perplexities(
        id,
        perplexity(&cond.logprobs),
        perplexity(&uncond.logprobs),
        cond.logprobs.len(),
        backend.name(),
    )?;
    scored.truncated = cond.truncated || uncond.truncated;
    Ok(scored)
}

/// Scores every sample with one conditional and one unconditional request.
///
/// Output order equals dataset order for any worker count. Failed samples
/// are listed in the run's failures and omitted from `scores`.
pub fn score_dataset(
    dataset: &Dataset,
    template: &PromptTemplate,
    backend: &dyn LogProbBackend,
    options: ScoringOptions,
) -> Result<ScoringRun> {
    if dataset.is_empty() {
        return Err(Error::Config("cannot score an empty dataset".into()));
    }
    template.validate()?;
    if !(0.0..=1.0).contains(&options.max_failure_fraction) {
        return Err(Error::Config(format!(
            "failure threshold must be within [0, 1], got {}",
            options.max_failure_fraction
        )));
    }
    let workers = options.workers.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} scoring workers: {e}")))?;

    let n = dataset.n();
    let done = AtomicUsize::new(0);
    let report_every = (n / 10).max(1);
    let start = Instant::now();

    let outcomes: Vec<Result<ScoredSample>> = pool.install(|| {
        dataset
            .samples
            .par_iter()
            .map(|sample| {
                let prompt = render_prompt(sample, template);
                let outcome = score_sample(backend, &sample.id, &prompt, &sample.response);
                let finished = done.fetch_add(1, Ordering::Relaxed) + 1;
                if finished.is_multiple_of(report_every) || finished == n {
                    log::info!(
                        "scored {finished}/{n} samples ({:.1}s)",
                        start.elapsed().as_secs_f64()
                    );
                }
                outcome
            })
            .collect()
    });
    let elapsed = start.elapsed();

    let mut scores = Vec::with_capacity(n);
    let mut failures = Vec::new();
    for (sample, outcome) in dataset.samples.iter().zip(outcomes) {
        match outcome {
            Ok(scored) => scores.push(scored),
            Err(err) => {
                if failures.len() < 5 {
                    log::warn!("sample {} failed: {err}", sample.id);
                } else {
                    log::debug!("sample {} failed: {err}", sample.id);
                }
                failures.push(SampleFailure {
                    id: sample.id.clone(),
                    error: err.to_string(),
                });
            }
        }
    }

    let failure_fraction = failures.len() as f64 / n as f64;
    if failure_fraction > options.max_failure_fraction {
        return Err(Error::Backend {
            id: failures.first().map(|f| f.id.clone()),
            message: format!(
                "{} of {n} samples failed ({:.2}% > {:.2}% threshold); first error: {}",
                failures.len(),
                failure_fraction * 100.0,
                options.max_failure_fraction * 100.0,
                failures[0].error
            ),
        });
    }

    log::info!(
        "scored {} samples in {:.3}s ({} failed)",
        scores.len(),
        elapsed.as_secs_f64(),
        failures.len()
    );

    let header = ScoreFileHeader {
        format: SCORE_FORMAT.into(),
        backend: backend.name().to_owned(),
        backend_kind: backend.kind(),
        template: template.name.clone(),
        truncation_policy: TRUNCATION_POLICY.into(),
        sequence_start: backend.sequence_start(),
        n_samples: n,
        n_scored: scores.len(),
        failures: failures.clone(),
    };
    Ok(ScoringRun {
        scores,
        failures,
        header,
        elapsed,
    })
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: ScoreFileHeader,
}

/// Writes a score file: optional header line, then one sample per line.
pub fn write_scores(
    path: &Path,
    header: Option<&ScoreFileHeader>,
    scores: &[ScoredSample],
) -> Result<()> {
    crate::data::ensure_parent(path)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    if let Some(header) = header {
        let line = serde_json::to_string(&HeaderLine {
            header: header.clone(),
        })
        .expect("header serializes");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    for s in scores {
        let line = serde_json::to_string(s).expect("score serializes");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

#[derive(Debug, Clone)]
pub struct ScoreFile {
    pub header: Option<ScoreFileHeader>,
    pub scores: Vec<ScoredSample>,
}

pub fn read_scores(path: &Path) -> Result<ScoreFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut header = None;
    let mut scores = Vec::new();
    let mut seen = HashSet::new();
    for (index, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let format_err = |message: String| Error::Format {
            path: path.to_owned(),
            index,
            message,
        };
        let value: Value =
            serde_json::from_str(line).map_err(|e| format_err(format!("not valid JSON: {e}")))?;
        if value.get("header").is_some() {
            if index != 0 {
                return Err(format_err("header line must come first".into()));
            }
            let parsed: HeaderLine =
                serde_json::from_value(value).map_err(|e| format_err(format!("bad header: {e}")))?;
            header = Some(parsed.header);
            continue;
        }
        let sample: ScoredSample =
            serde_json::from_value(value).map_err(|e| format_err(format!("bad score record: {e}")))?;
        if !(sample.ifd.is_finite() && sample.ifd > 0.0) {
            return Err(format_err(format!("ifd {} is not positive and finite", sample.ifd)));
        }
        if !seen.insert(sample.id.clone()) {
            return Err(Error::Validation(format!(
                "{}: duplicate id {:?}",
                path.display(),
                sample.id
            )));
        }
        scores.push(sample);
    }
    Ok(ScoreFile { header, scores })
}
