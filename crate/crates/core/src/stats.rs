//! Accuracy, consistency and Pearson correlation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompts::PromptOrder;
use crate::runner::{ConsistencyPair, TrialRecord};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("no input values")]
    EmptyInput,
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("a series has zero variance")]
    DegenerateVariance,
    #[error("need at least two models, got {0}")]
    InsufficientModels(usize),
    #[error("records mix different (model, dataset, strategy) groups")]
    MixedGroups,
}

/// Per (model, dataset) aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub model_name: String,
    pub dataset_name: String,
    /// Absent for strategies that were not run or had no counted questions.
    pub accuracy_by_strategy: BTreeMap<PromptOrder, f64>,
    /// Present only when both answer-first and logic-first were run.
    pub consistency: Option<f64>,
    pub counted: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellFlag {
    InsufficientModels,
    DegenerateVariance,
}

impl CellFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            CellFlag::InsufficientModels => "insufficient_models",
            CellFlag::DegenerateVariance => "degenerate_variance",
        }
    }
}

/// One Pearson coefficient between consistency and accuracy across models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    pub dataset_name: String,
    pub strategy: PromptOrder,
    /// `None` exactly when `flag` is set.
    pub r: Option<f64>,
    pub n_models: usize,
    pub flag: Option<CellFlag>,
}

/// Fraction of correct records. All records must share model, dataset and order.
pub fn accuracy(records: &[TrialRecord]) -> Result<f64, StatsError> {
    let first = records.first().ok_or(StatsError::EmptyInput)?;
    if records.iter().any(|r| {
        r.model_name != first.model_name || r.dataset_name != first.dataset_name || r.order != first.order
    }) {
        return Err(StatsError::MixedGroups);
    }
    let correct = records.iter().filter(|r| r.correct).count();
    Ok(correct as f64 / records.len() as f64)
}

/// Fraction of consistent answer-first / logic-first pairs.
pub fn consistency(pairs: &[ConsistencyPair]) -> Result<f64, StatsError> {
    if pairs.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let agreeing = pairs.iter().filter(|p| p.consistent).count();
    Ok(agreeing as f64 / pairs.len() as f64)
}

/// Sample Pearson correlation, two-pass form.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooFewPoints(x.len()));
    }
    let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
    if constant(x) || constant(y) {
        return Err(StatsError::DegenerateVariance);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::DegenerateVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// One cell per (dataset, strategy): Pearson r between each model's
/// consistency and its accuracy under that strategy.
///
/// Datasets appear in first-seen order, strategies in [`PromptOrder::ALL`]
/// order. Models without a consistency value or without an accuracy for the
/// strategy are left out of that cell.
pub fn correlation_table(summaries: &[RunSummary]) -> Result<Vec<CorrelationCell>, StatsError> {
    let mut models: Vec<&str> = summaries.iter().map(|s| s.model_name.as_str()).collect();
    models.sort_unstable();
    models.dedup();
    if models.len() < 2 {
        return Err(StatsError::InsufficientModels(models.len()));
    }

    let mut datasets: Vec<&str> = Vec::new();
    for s in summaries {
        if !datasets.contains(&s.dataset_name.as_str()) {
            datasets.push(&s.dataset_name);
        }
    }
    let strategies: Vec<PromptOrder> = PromptOrder::ALL
        .into_iter()
        .filter(|o| summaries.iter().any(|s| s.accuracy_by_strategy.contains_key(o)))
        .collect();

    let mut cells = Vec::new();
    for dataset in &datasets {
        for &strategy in &strategies {
            let (x, y): (Vec<f64>, Vec<f64>) = summaries
                .iter()
                .filter(|s| s.dataset_name == *dataset)
                .filter_map(|s| Some((s.consistency?, *s.accuracy_by_strategy.get(&strategy)?)))
                .unzip();
            let n_models = x.len();
            let (r, flag) = if n_models < 2 {
                (None, Some(CellFlag::InsufficientModels))
            } else {
                match pearson(&x, &y) {
                    Ok(r) => (Some(r), None),
                    Err(_) => (None, Some(CellFlag::DegenerateVariance)),
                }
            };
            cells.push(CorrelationCell {
                dataset_name: dataset.to_string(),
                strategy,
                r,
                n_models,
                flag,
            });
        }
    }
    Ok(cells)
}
