//! Top-IFD selection under a cap, and subset materialization.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numfmt::serialize_sig;
use crate::scoring::ScoredSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    /// Equal scores keep their original dataset order.
    #[default]
    OriginalOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Budget as a fraction of the full dataset size.
    pub ratio: f64,
    /// Samples with `ifd >= ifd_cap` are never selected.
    #[serde(serialize_with = "serialize_sig")]
    pub ifd_cap: f64,
    pub tie_break: TieBreak,
}

impl SelectionConfig {
    pub const DEFAULT_IFD_CAP: f64 = 1.0;

    pub fn new(ratio: f64) -> Self {
        Self {
            ratio,
            ifd_cap: Self::DEFAULT_IFD_CAP,
            tie_break: TieBreak::OriginalOrder,
        }
    }

    pub fn with_cap(mut self, ifd_cap: f64) -> Self {
        self.ifd_cap = ifd_cap;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::Config(format!("ratio must be in (0, 1], got {}", self.ratio)));
        }
        if self.ifd_cap.is_nan() || self.ifd_cap <= 0.0 {
            return Err(Error::Config(format!("ifd cap must be > 0, got {}", self.ifd_cap)));
        }
        Ok(())
    }

    /// floor(ratio * n), computed on the full dataset size.
    pub fn budget(&self, n: usize) -> usize {
        budget_for(self.ratio, n)
    }
}

/// floor(ratio * n) with a guard against `0.05 * 52000 = 2599.9999…` style
/// representation error: products within 1e-9 of an integer snap to it.
pub fn budget_for(ratio: f64, n: usize) -> usize {
    let exact = ratio * n as f64;
    let nearest = exact.round();
    if (exact - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as usize
    } else {
        exact.floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Selected ids, highest IFD first.
    pub selected_ids: Vec<String>,
    pub budget: usize,
    pub n_excluded_by_cap: usize,
    pub underfilled: bool,
}

/// Eligible sample positions ordered by IFD descending, ties by position.
fn ranked_eligible(scores: &[ScoredSample], ifd_cap: f64) -> Vec<usize> {
    let mut eligible: Vec<usize> = (0..scores.len()).filter(|&i| scores[i].ifd < ifd_cap).collect();
    eligible.sort_by(|&a, &b| scores[b].ifd.total_cmp(&scores[a].ifd).then(a.cmp(&b)));
    eligible
}

/// Picks the `floor(ratio * n)` highest-IFD samples strictly below the cap.
///
/// The slice order is the original dataset order and breaks ties.
pub fn select_top_ifd(scores: &[ScoredSample], config: &SelectionConfig) -> Result<SelectionResult> {
    config.validate()?;
    if scores.is_empty() {
        return Err(Error::Config("no scored samples to select from".into()));
    }
    let budget = config.budget(scores.len());
    if budget == 0 {
        return Err(Error::Config(format!(
            "ratio {} of {} samples gives an empty budget",
            config.ratio,
            scores.len()
        )));
    }
    let ranked = ranked_eligible(scores, config.ifd_cap);
    let n_excluded_by_cap = scores.len() - ranked.len();
    let underfilled = ranked.len() < budget;
    let selected_ids = ranked
        .into_iter()
        .take(budget)
        .map(|i| scores[i].id.clone())
        .collect();
    Ok(SelectionResult {
        selected_ids,
        budget,
        n_excluded_by_cap,
        underfilled,
    })
}

/// The selected samples in selection order (highest IFD first).
pub fn materialize_subset(dataset: &Dataset, result: &SelectionResult) -> Result<Dataset> {
    let index: HashMap<&str, usize> = dataset
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();
    let samples = result
        .selected_ids
        .iter()
        .map(|id| {
            index
                .get(id.as_str())
                .map(|&i| dataset.samples[i].clone())
                .ok_or_else(|| Error::Consistency(format!("selected id {id:?} is not in the dataset")))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, dataset.source_path.clone())
}
