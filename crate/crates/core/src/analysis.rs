//! Weak-to-strong consistency statistics and distribution summaries.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numfmt::{serialize_sig, serialize_sig_opt, serialize_sig_vec};
use crate::scoring::ScoredSample;
use crate::selection::{budget_for, select_top_ifd, SelectionConfig};

/// 1-based ranks with ties assigned the average of the positions they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end share their mean rank
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman's rank correlation: Pearson correlation of the average-rank vectors.
pub fn spearman_rho(values_a: &[f64], values_b: &[f64]) -> Result<f64> {
    if values_a.len() != values_b.len() {
        return Err(Error::Data(format!(
            "paired lists differ in length ({} vs {})",
            values_a.len(),
            values_b.len()
        )));
    }
    if values_a.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!(
            "need at least 2 pairs, got {}",
            values_a.len()
        )));
    }
    if values_a.iter().chain(values_b).any(|v| !v.is_finite()) {
        return Err(Error::Data("correlation inputs must be finite".into()));
    }
    let ra = average_ranks(values_a);
    let rb = average_ranks(values_b);
    // mean of 1..=n ranks, unchanged by tie averaging
    let mean = (ra.len() + 1) as f64 / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (a, b) in ra.iter().zip(&rb) {
        let (da, db) = (a - mean, b - mean);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "all values are identical in at least one list (zero rank variance)".into(),
        ));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Restricts both score sets to ids present in both, each keeping its own order.
pub fn common_pool<'a>(
    scores_a: &'a [ScoredSample],
    scores_b: &'a [ScoredSample],
) -> (Vec<&'a ScoredSample>, Vec<&'a ScoredSample>) {
    let ids_a: HashSet<&str> = scores_a.iter().map(|s| s.id.as_str()).collect();
    let ids_b: HashSet<&str> = scores_b.iter().map(|s| s.id.as_str()).collect();
    let a = scores_a.iter().filter(|s| ids_b.contains(s.id.as_str())).collect();
    let b = scores_b.iter().filter(|s| ids_a.contains(s.id.as_str())).collect();
    (a, b)
}

/// Fraction of the selection budget chosen identically by both scorers.
///
/// Both score sets are restricted to their common ids; each is then passed
/// through [`select_top_ifd`] with the same fraction and cap. The
/// denominator is the larger of the two selection sizes, which equals the
/// budget unless the cap leaves a side underfilled; two empty selections
/// agree trivially and give 1.0.
pub fn overlap_ratio_capped(
    scores_a: &[ScoredSample],
    scores_b: &[ScoredSample],
    budget_fraction: f64,
    ifd_cap: f64,
) -> Result<f64> {
    let (pool_a, pool_b) = common_pool(scores_a, scores_b);
    if pool_a.is_empty() {
        return Err(Error::Data("score sets share no ids".into()));
    }
    let config = SelectionConfig::new(budget_fraction).with_cap(ifd_cap);
    config.validate()?;
    if budget_for(budget_fraction, pool_a.len()) == 0 {
        return Err(Error::Config(format!(
            "fraction {budget_fraction} of {} common samples gives an empty budget",
            pool_a.len()
        )));
    }
    let owned_a: Vec<ScoredSample> = pool_a.into_iter().cloned().collect();
    let owned_b: Vec<ScoredSample> = pool_b.into_iter().cloned().collect();
    let sel_a = select_top_ifd(&owned_a, &config)?;
    let sel_b = select_top_ifd(&owned_b, &config)?;
    let denom = sel_a.selected_ids.len().max(sel_b.selected_ids.len());
    if denom == 0 {
        return Ok(1.0);
    }
    let chosen_a: HashSet<&str> = sel_a.selected_ids.iter().map(String::as_str).collect();
    let shared = sel_b
        .selected_ids
        .iter()
        .filter(|id| chosen_a.contains(id.as_str()))
        .count();
    Ok(shared as f64 / denom as f64)
}

pub fn overlap_ratio(
    scores_a: &[ScoredSample],
    scores_b: &[ScoredSample],
    budget_fraction: f64,
) -> Result<f64> {
    overlap_ratio_capped(scores_a, scores_b, budget_fraction, SelectionConfig::DEFAULT_IFD_CAP)
}

/// `(wins - losses) / total + 1`, in [0, 2] with 1.0 meaning parity.
pub fn winning_score(wins: u64, ties: u64, losses: u64) -> Result<f64> {
    let total = wins + ties + losses;
    if total == 0 {
        return Err(Error::Config("winning score needs at least one comparison".into()));
    }
    // single rounding: (wins - losses + total) / total
    let numerator = (wins + total) as f64 - losses as f64;
    Ok(numerator / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    PplCond,
    PplUncond,
    Ifd,
}

impl Metric {
    pub fn of(self, s: &ScoredSample) -> f64 {
        match self {
            Metric::PplCond => s.ppl_cond,
            Metric::PplUncond => s.ppl_uncond,
            Metric::Ifd => s.ifd,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::PplCond => "ppl_cond",
            Metric::PplUncond => "ppl_uncond",
            Metric::Ifd => "ifd",
        })
    }
}

pub const SUMMARY_PERCENTILES: [u32; 7] = [1, 5, 25, 50, 75, 95, 99];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub scorer: String,
    pub metric: Metric,
    pub percentiles: Vec<u32>,
    #[serde(serialize_with = "serialize_sig_vec")]
    pub quantiles: Vec<f64>,
    #[serde(serialize_with = "serialize_sig")]
    pub mean: f64,
    pub count: usize,
}

impl DistributionSummary {
    pub fn quantile(&self, percentile: u32) -> Option<f64> {
        self.percentiles
            .iter()
            .position(|&p| p == percentile)
            .map(|i| self.quantiles[i])
    }
}

/// Nearest-rank percentile of an ascending slice: the value at rank ceil(p/100 * n).
pub fn nearest_rank(sorted: &[f64], percentile: u32) -> f64 {
    let n = sorted.len();
    // integer ceil avoids float error in p * n / 100
    let rank = (percentile as usize * n).div_ceil(100).max(1);
    sorted[rank.min(n) - 1]
}

pub fn summarize_values(scorer: &str, metric: Metric, values: &[f64]) -> Result<DistributionSummary> {
    if values.is_empty() {
        return Err(Error::Data("cannot summarize an empty distribution".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let quantiles = SUMMARY_PERCENTILES.iter().map(|&p| nearest_rank(&sorted, p)).collect();
    Ok(DistributionSummary {
        scorer: scorer.to_owned(),
        metric,
        percentiles: SUMMARY_PERCENTILES.to_vec(),
        quantiles,
        mean: values.iter().sum::<f64>() / values.len() as f64,
        count: values.len(),
    })
}

/// Quantiles (nearest-rank), mean and count of one metric.
pub fn summarize_distribution(scores: &[ScoredSample], metric: Metric) -> Result<DistributionSummary> {
    let values: Vec<f64> = scores.iter().map(|s| metric.of(s)).collect();
    let scorer = scores.first().map(|s| s.scorer.as_str()).unwrap_or_default();
    summarize_values(scorer, metric, &values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub scorer_a: String,
    pub scorer_b: String,
    /// `None` when the correlation is undefined; see `notes`.
    #[serde(serialize_with = "serialize_sig_opt")]
    pub spearman_ppl: Option<f64>,
    #[serde(serialize_with = "serialize_sig_opt")]
    pub spearman_ifd: Option<f64>,
    /// Budget fraction (formatted) to overlap ratio.
    pub overlap: BTreeMap<String, f64>,
    pub n_common: usize,
    #[serde(serialize_with = "serialize_sig")]
    pub ifd_cap: f64,
    pub overlap_method: String,
    #[serde(default)]
    pub notes: Vec<String>,
}

/// Key used for a budget fraction in [`ConsistencyReport::overlap`].
pub fn budget_key(fraction: f64) -> String {
    format!("{fraction:.2}")
}

fn scorer_name(scores: &[ScoredSample], fallback: &str) -> String {
    scores
        .first()
        .map(|s| s.scorer.clone())
        .unwrap_or_else(|| fallback.to_owned())
}

/// Spearman's rho on conditional perplexity and IFD plus per-budget
/// overlap ratios, all over the ids the two score sets share.
pub fn compare_scores(
    scores_a: &[ScoredSample],
    scores_b: &[ScoredSample],
    budgets: &[f64],
    ifd_cap: f64,
) -> Result<ConsistencyReport> {
    let (pool_a, pool_b) = common_pool(scores_a, scores_b);
    let n_common = pool_a.len();
    if n_common == 0 {
        return Err(Error::Data("score sets share no ids".into()));
    }
    let by_id: HashMap<&str, &ScoredSample> = pool_b.iter().map(|s| (s.id.as_str(), *s)).collect();
    let paired: Vec<(&ScoredSample, &ScoredSample)> =
        pool_a.iter().map(|a| (*a, by_id[a.id.as_str()])).collect();

    let mut notes = Vec::new();
    let mut rho = |metric: Metric| -> Result<Option<f64>> {
        let xs: Vec<f64> = paired.iter().map(|(a, _)| metric.of(a)).collect();
        let ys: Vec<f64> = paired.iter().map(|(_, b)| metric.of(b)).collect();
        match spearman_rho(&xs, &ys) {
            Ok(r) => Ok(Some(r)),
            Err(Error::UndefinedCorrelation(why)) => {
                notes.push(format!("spearman on {metric} is degenerate: {why}"));
                Ok(None)
            }
            Err(e) => Err(e),
        }
    };
    let spearman_ppl = rho(Metric::PplCond)?;
    let spearman_ifd = rho(Metric::Ifd)?;

    let owned_a: Vec<ScoredSample> = pool_a.iter().map(|s| (*s).clone()).collect();
    let owned_b: Vec<ScoredSample> = pool_b.iter().map(|s| (*s).clone()).collect();
    let mut overlap = BTreeMap::new();
    for &fraction in budgets {
        let value = overlap_ratio_capped(&owned_a, &owned_b, fraction, ifd_cap)?;
        overlap.insert(budget_key(fraction), value);
    }

    Ok(ConsistencyReport {
        scorer_a: scorer_name(scores_a, "a"),
        scorer_b: scorer_name(scores_b, "b"),
        spearman_ppl,
        spearman_ifd,
        overlap,
        n_common,
        ifd_cap,
        overlap_method: "cap-then-select over the common-id pool; budget = floor(fraction * n_common)".into(),
        notes,
    })
}
