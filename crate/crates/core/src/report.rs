//! Dataset assessment: verb-noun tables for the IFD tails and a combined
//! quality report.
//!
//! Verb-noun extraction is a lexicon heuristic, not a parser: the first
//! token found in the verb lexicon is the verb and the first later token
//! found in the noun lexicon is the noun.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{summarize_distribution, DistributionSummary, Metric, SUMMARY_PERCENTILES};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numfmt::{fmt_sig, serialize_sig};
use crate::scoring::ScoredSample;
use crate::selection::{budget_for, SelectionConfig};

const DEFAULT_VERBS: &str = include_str!("../lexicons/verbs.txt");
const DEFAULT_NOUNS: &str = include_str!("../lexicons/nouns.txt");

pub const EXTRACTION_NOTE: &str =
    "verb-noun pairs use a first-match lexicon heuristic (no dependency parse); counts approximate";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicons {
    pub verbs: HashSet<String>,
    pub nouns: HashSet<String>,
}

fn parse_words(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
}

impl Lexicons {
    pub fn new(verbs: HashSet<String>, nouns: HashSet<String>) -> Result<Self> {
        if verbs.is_empty() || nouns.is_empty() {
            return Err(Error::Config("verb and noun lexicons must be non-empty".into()));
        }
        Ok(Self { verbs, nouns })
    }

    /// The lexicons shipped in `lexicons/`.
    pub fn builtin() -> Self {
        Self {
            verbs: parse_words(DEFAULT_VERBS),
            nouns: parse_words(DEFAULT_NOUNS),
        }
    }

    /// Plain-text files, one lowercase word per line.
    pub fn from_files(verbs: &Path, nouns: &Path) -> Result<Self> {
        let read = |p: &Path| fs::read_to_string(p).map_err(|e| Error::io(p, e));
        Self::new(parse_words(&read(verbs)?), parse_words(&read(nouns)?))
    }
}

pub fn extract_verb_noun(instruction: &str, lexicons: &Lexicons) -> Option<(String, String)> {
    let lower = instruction.to_lowercase();
    let mut tokens = lower
        .split(|c: char| !c.is_alphanumeric() && c != '\'' && c != '-')
        .filter(|t| !t.is_empty());
    let verb = tokens.by_ref().find(|t| lexicons.verbs.contains(*t))?;
    let noun = tokens.find(|t| lexicons.nouns.contains(*t))?;
    Some((verb.to_owned(), noun.to_owned()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slice {
    Top,
    Bottom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerbNounRow {
    pub verb: String,
    pub noun: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerbNounTable {
    pub slice: Slice,
    #[serde(serialize_with = "serialize_sig")]
    pub fraction: f64,
    pub slice_size: usize,
    /// Count descending, then (verb, noun) ascending.
    pub rows: Vec<VerbNounRow>,
}

impl VerbNounTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("verb,noun,count\n");
        for row in &self.rows {
            let _ = writeln!(out, "{},{},{}", csv_field(&row.verb), csv_field(&row.noun), row.count);
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn count_pairs<'a>(
    instructions: impl Iterator<Item = &'a str>,
    lexicons: &Lexicons,
    top_k_rows: usize,
) -> Vec<VerbNounRow> {
    let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
    for instruction in instructions {
        if let Some(pair) = extract_verb_noun(instruction, lexicons) {
            *counts.entry(pair).or_default() += 1;
        }
    }
    let mut rows: Vec<VerbNounRow> = counts
        .into_iter()
        .map(|((verb, noun), count)| VerbNounRow { verb, noun, count })
        .collect();
    // BTreeMap order already gives the (verb, noun) tie-break; sort is stable
    rows.sort_by_key(|r| std::cmp::Reverse(r.count));
    rows.truncate(top_k_rows);
    rows
}

/// Scores joined to their samples, in score order.
fn join<'a>(dataset: &'a Dataset, scores: &'a [ScoredSample]) -> Result<Vec<(&'a ScoredSample, &'a str)>> {
    let instructions: HashMap<&str, &str> = dataset
        .samples
        .iter()
        .map(|s| (s.id.as_str(), s.instruction.as_str()))
        .collect();
    scores
        .iter()
        .map(|s| {
            instructions
                .get(s.id.as_str())
                .map(|instr| (s, *instr))
                .ok_or_else(|| Error::Consistency(format!("scored id {:?} is not in the dataset", s.id)))
        })
        .collect()
}

/// Verb-noun tables for the highest- and lowest-IFD `fraction` of samples.
///
/// No IFD cap is applied here; the slices are the raw tails. Ties keep the
/// original order in both directions.
pub fn verb_noun_report(
    dataset: &Dataset,
    scores: &[ScoredSample],
    fraction: f64,
    top_k_rows: usize,
    lexicons: &Lexicons,
) -> Result<(VerbNounTable, VerbNounTable)> {
    if !(fraction > 0.0 && fraction <= 0.5) {
        return Err(Error::Config(format!("slice fraction must be in (0, 0.5], got {fraction}")));
    }
    let joined = join(dataset, scores)?;
    let slice_size = budget_for(fraction, joined.len());

    let mut order: Vec<usize> = (0..joined.len()).collect();
    order.sort_by(|&a, &b| joined[b].0.ifd.total_cmp(&joined[a].0.ifd).then(a.cmp(&b)));
    let top = order[..slice_size].iter().map(|&i| joined[i].1);

    let mut ascending: Vec<usize> = (0..joined.len()).collect();
    ascending.sort_by(|&a, &b| joined[a].0.ifd.total_cmp(&joined[b].0.ifd).then(a.cmp(&b)));
    let bottom = ascending[..slice_size].iter().map(|&i| joined[i].1);

    let table = |slice, rows| VerbNounTable {
        slice,
        fraction,
        slice_size,
        rows,
    };
    Ok((
        table(Slice::Top, count_pairs(top, lexicons, top_k_rows)),
        table(Slice::Bottom, count_pairs(bottom, lexicons, top_k_rows)),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    pub slice_fraction: f64,
    pub top_k_rows: usize,
    pub ifd_cap: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            slice_fraction: 0.05,
            top_k_rows: 10,
            ifd_cap: SelectionConfig::DEFAULT_IFD_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    #[serde(serialize_with = "serialize_sig")]
    pub p5_to_p95: f64,
    #[serde(serialize_with = "serialize_sig")]
    pub p1_to_p99: f64,
    #[serde(serialize_with = "serialize_sig")]
    pub interquartile: f64,
}

impl Spread {
    fn of(summary: &DistributionSummary) -> Self {
        let q = |p| summary.quantile(p).unwrap_or(f64::NAN);
        Self {
            p5_to_p95: q(95) - q(5),
            p1_to_p99: q(99) - q(1),
            interquartile: q(75) - q(25),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub scorer: String,
    pub n_dataset: usize,
    pub n_scored: usize,
    pub ppl_cond: DistributionSummary,
    pub ifd: DistributionSummary,
    pub ppl_cond_spread: Spread,
    pub ifd_spread: Spread,
    #[serde(serialize_with = "serialize_sig")]
    pub ifd_cap: f64,
    pub n_below_cap: usize,
    pub n_at_or_above_cap: usize,
    #[serde(serialize_with = "serialize_sig")]
    pub fraction_at_or_above_cap: f64,
    pub degenerate: bool,
    pub warnings: Vec<String>,
    pub verb_noun_method: String,
    pub verb_noun_top: VerbNounTable,
    pub verb_noun_bottom: VerbNounTable,
}

pub fn quality_report(
    scores: &[ScoredSample],
    dataset: &Dataset,
    lexicons: &Lexicons,
    options: &ReportOptions,
) -> Result<QualityReport> {
    if scores.is_empty() {
        return Err(Error::Data("no scores to report on".into()));
    }
    let ppl_cond = summarize_distribution(scores, Metric::PplCond)?;
    let ifd = summarize_distribution(scores, Metric::Ifd)?;
    let n_below_cap = scores.iter().filter(|s| s.ifd < options.ifd_cap).count();
    let n_at_or_above_cap = scores.len() - n_below_cap;

    let mut warnings = Vec::new();
    if n_below_cap == 0 {
        warnings.push(format!(
            "degenerate dataset: no sample has IFD below {}; selection would be empty",
            fmt_sig(options.ifd_cap)
        ));
    }
    let constant_ifd = ifd.quantiles.first() == ifd.quantiles.last();
    if constant_ifd {
        warnings.push(format!(
            "degenerate scores: IFD is constant ({}) across percentiles; the scorer ignores the instruction",
            fmt_sig(ifd.quantiles[0])
        ));
    }
    if scores.len() < dataset.n() {
        warnings.push(format!(
            "{} of {} dataset samples have no score",
            dataset.n() - scores.len(),
            dataset.n()
        ));
    }

    let (verb_noun_top, verb_noun_bottom) =
        verb_noun_report(dataset, scores, options.slice_fraction, options.top_k_rows, lexicons)?;

    Ok(QualityReport {
        scorer: ifd.scorer.clone(),
        n_dataset: dataset.n(),
        n_scored: scores.len(),
        ppl_cond_spread: Spread::of(&ppl_cond),
        ifd_spread: Spread::of(&ifd),
        ppl_cond,
        ifd,
        ifd_cap: options.ifd_cap,
        n_below_cap,
        n_at_or_above_cap,
        fraction_at_or_above_cap: n_at_or_above_cap as f64 / scores.len() as f64,
        degenerate: n_below_cap == 0 || constant_ifd,
        warnings,
        verb_noun_method: EXTRACTION_NOTE.into(),
        verb_noun_top,
        verb_noun_bottom,
    })
}

impl QualityReport {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Dataset quality report ({})", self.scorer);
        let _ = writeln!(out, "samples: {} scored of {}", self.n_scored, self.n_dataset);
        let _ = writeln!(
            out,
            "IFD >= {}: {} ({:.2}%), below: {}",
            fmt_sig(self.ifd_cap),
            self.n_at_or_above_cap,
            self.fraction_at_or_above_cap * 100.0,
            self.n_below_cap
        );
        if self.degenerate {
            let _ = writeln!(out, "DEGENERATE");
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        let _ = writeln!(out);
        let header: Vec<String> = SUMMARY_PERCENTILES.iter().map(|p| format!("p{p}")).collect();
        let _ = writeln!(out, "{:<10} {} mean", "metric", header.join(" "));
        for summary in [&self.ppl_cond, &self.ifd] {
            let cells: Vec<String> = summary.quantiles.iter().map(|q| fmt_sig(*q)).collect();
            let _ = writeln!(out, "{:<10} {} {}", summary.metric.to_string(), cells.join(" "), fmt_sig(summary.mean));
        }
        let _ = writeln!(
            out,
            "IFD spread: p5-p95 {}, p1-p99 {}, IQR {}",
            fmt_sig(self.ifd_spread.p5_to_p95),
            fmt_sig(self.ifd_spread.p1_to_p99),
            fmt_sig(self.ifd_spread.interquartile)
        );
        for table in [&self.verb_noun_top, &self.verb_noun_bottom] {
            let _ = writeln!(out);
            let label = match table.slice {
                Slice::Top => "Top",
                Slice::Bottom => "Bottom",
            };
            let _ = writeln!(
                out,
                "{label} {}% IFD verb-noun pairs ({} samples)",
                fmt_sig(table.fraction * 100.0),
                table.slice_size
            );
            for row in &table.rows {
                let _ = writeln!(out, "  {:<12} {:<12} {}", row.verb, row.noun, row.count);
            }
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "note: {}", self.verb_noun_method);
        out
    }
}

/// Plot-ready quantiles: one row per percentile, one column per summary.
pub fn quantile_csv(summaries: &[&DistributionSummary]) -> String {
    let mut out = String::from("percentile");
    for s in summaries {
        let _ = write!(out, ",{}", csv_field(&format!("{}:{}", s.scorer, s.metric)));
    }
    out.push('\n');
    for (row, p) in SUMMARY_PERCENTILES.iter().enumerate() {
        let _ = write!(out, "{p}");
        for s in summaries {
            let _ = write!(out, ",{}", fmt_sig(s.quantiles[row]));
        }
        out.push('\n');
    }
    out
}
