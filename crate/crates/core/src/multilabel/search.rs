//! Hyperparameter grid search on cross-validated micro-F1, plus per-label
//! threshold tuning on out-of-fold probabilities.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::eval::micro_f1;
use super::folds::{stratified_kfold, FoldAssignment};
use super::model::{train_heads, ParamsSpec};
use super::MultilabelError;
use crate::boost::{GBTParams, Matrix};

/// Candidate values per hyperparameter; cells are the Cartesian product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamGrid {
    pub learning_rate: Vec<f64>,
    pub max_depth: Vec<usize>,
    pub min_loss_reduction: Vec<f64>,
    pub l2_weight: Vec<f64>,
    pub l1_weight: Vec<f64>,
    pub n_rounds: Vec<usize>,
    pub min_child_weight: Vec<f64>,
}

impl Default for ParamGrid {
    fn default() -> Self {
        ParamGrid {
            learning_rate: vec![0.05, 0.1, 0.3],
            max_depth: vec![3, 5, 7],
            min_loss_reduction: vec![0.0, 1.0],
            l2_weight: vec![1.0, 10.0],
            l1_weight: vec![0.0, 1.0],
            n_rounds: vec![100, 300],
            min_child_weight: vec![1.0],
        }
    }
}

impl ParamGrid {
    pub fn single(p: &GBTParams) -> Self {
        ParamGrid {
            learning_rate: vec![p.learning_rate],
            max_depth: vec![p.max_depth],
            min_loss_reduction: vec![p.min_loss_reduction],
            l2_weight: vec![p.l2_weight],
            l1_weight: vec![p.l1_weight],
            n_rounds: vec![p.n_rounds],
            min_child_weight: vec![p.min_child_weight],
        }
    }

    /// Every cell in a fixed nesting order (learning rate outermost).
    pub fn cells(&self, seed: u64) -> Result<Vec<GBTParams>, MultilabelError> {
        let lens = [
            self.learning_rate.len(),
            self.max_depth.len(),
            self.min_loss_reduction.len(),
            self.l2_weight.len(),
            self.l1_weight.len(),
            self.n_rounds.len(),
            self.min_child_weight.len(),
        ];
        if lens.contains(&0) {
            return Err(MultilabelError::EmptyGrid);
        }
        let mut out = Vec::new();
        for &learning_rate in &self.learning_rate {
            for &max_depth in &self.max_depth {
                for &min_loss_reduction in &self.min_loss_reduction {
                    for &l2_weight in &self.l2_weight {
                        for &l1_weight in &self.l1_weight {
                            for &n_rounds in &self.n_rounds {
                                for &min_child_weight in &self.min_child_weight {
                                    let p = GBTParams {
                                        learning_rate,
                                        n_rounds,
                                        max_depth,
                                        min_loss_reduction,
                                        l2_weight,
                                        l1_weight,
                                        min_child_weight,
                                        seed,
                                    };
                                    p.validate()?;
                                    out.push(p);
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub params: GBTParams,
    pub mean_micro_f1: f64,
    pub fold_micro_f1: Vec<f64>,
    /// Training failed on some fold; the cell scores 0.
    pub failed: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: GBTParams,
    pub best_index: usize,
    pub cells: Vec<CellScore>,
    /// Labels left out of scoring for having fewer than two positives.
    pub excluded_labels: Vec<String>,
    pub folds: FoldAssignment,
}

/// Labels with at least two positives; the others cannot be spread over
/// folds and are left out of CV scoring.
pub fn scorable_labels(
    labelsets: &[BTreeSet<String>],
    labels: &[String],
) -> (Vec<String>, Vec<String>) {
    labels
        .iter()
        .cloned()
        .partition(|l| labelsets.iter().filter(|s| s.contains(l)).count() >= 2)
}

/// Out-of-fold probabilities for every example and label.
pub fn cross_validated_probabilities(
    features: &Matrix,
    labelsets: &[BTreeSet<String>],
    labels: &[String],
    params: &GBTParams,
    folds: &FoldAssignment,
) -> Result<Vec<BTreeMap<String, f64>>, MultilabelError> {
    let mut out = vec![BTreeMap::new(); features.rows()];
    for f in 0..folds.k() {
        let (train, test) = folds.split(f);
        let x = features.select_rows(&train);
        let y: Vec<BTreeSet<String>> = train.iter().map(|&i| labelsets[i].clone()).collect();
        let heads = train_heads(&x, &y, labels, &ParamsSpec::Shared(params.clone()))?;
        for &i in &test {
            for h in &heads {
                out[i].insert(h.label.clone(), h.model.predict_proba(features.row(i))?);
            }
        }
    }
    Ok(out)
}

fn cell_score(
    features: &Matrix,
    labelsets: &[BTreeSet<String>],
    labels: &[String],
    params: &GBTParams,
    folds: &FoldAssignment,
) -> Result<Vec<f64>, MultilabelError> {
    (0..folds.k())
        .map(|f| {
            let (train, test) = folds.split(f);
            let x = features.select_rows(&train);
            let y: Vec<BTreeSet<String>> = train.iter().map(|&i| labelsets[i].clone()).collect();
            let heads = train_heads(&x, &y, labels, &ParamsSpec::Shared(params.clone()))?;
            let mut pred = Vec::with_capacity(test.len());
            for &i in &test {
                let mut set = BTreeSet::new();
                for h in &heads {
                    if h.model.predict_proba(features.row(i))? >= h.threshold {
                        set.insert(h.label.clone());
                    }
                }
                pred.push(set);
            }
            let truth: Vec<BTreeSet<String>> = test.iter().map(|&i| labelsets[i].clone()).collect();
            Ok(micro_f1(&pred, &truth, labels))
        })
        .collect()
}

/// Scores every grid cell with k-fold CV on one shared fold assignment and
/// returns the best by mean micro-F1. Ties go to fewer rounds, then
/// shallower trees, then earlier grid position.
pub fn grid_search(
    features: &Matrix,
    labelsets: &[BTreeSet<String>],
    labels: &[String],
    grid: &ParamGrid,
    k: usize,
    seed: u64,
) -> Result<SearchResult, MultilabelError> {
    if labelsets.len() != features.rows() {
        return Err(MultilabelError::LengthMismatch {
            expected: features.rows(),
            got: labelsets.len(),
        });
    }
    let cells = grid.cells(seed)?;
    let folds = stratified_kfold(labelsets, k, seed)?;
    let (scored, excluded_labels) = scorable_labels(labelsets, labels);
    if !excluded_labels.is_empty() {
        log::warn!(
            "excluded from CV scoring (fewer than 2 positives): {}",
            excluded_labels.join(", ")
        );
    }
    // Labels outside the scored set are stripped so they neither train nor
    // count.
    let trimmed: Vec<BTreeSet<String>> = labelsets
        .iter()
        .map(|s| s.iter().filter(|l| scored.contains(l)).cloned().collect())
        .collect();

    let run = |p: &GBTParams| -> CellScore {
        match cell_score(features, &trimmed, &scored, p, &folds) {
            Ok(scores) => CellScore {
                params: p.clone(),
                mean_micro_f1: scores.iter().sum::<f64>() / scores.len() as f64,
                fold_micro_f1: scores,
                failed: None,
            },
            Err(e) => {
                log::warn!("grid cell failed: {e}");
                CellScore {
                    params: p.clone(),
                    mean_micro_f1: 0.0,
                    fold_micro_f1: Vec::new(),
                    failed: Some(e.to_string()),
                }
            }
        }
    };
    #[cfg(feature = "parallel")]
    let scores: Vec<CellScore> = {
        use rayon::prelude::*;
        cells.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let scores: Vec<CellScore> = cells.iter().map(run).collect();

    let mut best_index = 0;
    for (i, c) in scores.iter().enumerate().skip(1) {
        let b = &scores[best_index];
        let better = c.mean_micro_f1 > b.mean_micro_f1
            || (c.mean_micro_f1 == b.mean_micro_f1
                && (c.params.n_rounds, c.params.max_depth)
                    < (b.params.n_rounds, b.params.max_depth));
        if better {
            best_index = i;
        }
    }
    Ok(SearchResult {
        best: scores[best_index].params.clone(),
        best_index,
        cells: scores,
        excluded_labels,
        folds,
    })
}

/// Candidate decision thresholds: 0.05, 0.10, ..., 0.95.
pub fn threshold_candidates() -> Vec<f64> {
    (1..20).map(|i| i as f64 / 20.0).collect()
}

/// Per-label threshold maximizing that label's F1 on out-of-fold
/// probabilities. Ties keep the candidate closest to 0.5.
pub fn tune_thresholds(
    probabilities: &[BTreeMap<String, f64>],
    labelsets: &[BTreeSet<String>],
    labels: &[String],
) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for label in labels {
        let mut best: (f64, f64) = (f64::NEG_INFINITY, 0.5);
        for t in threshold_candidates() {
            let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
            for (p, truth) in probabilities.iter().zip(labelsets) {
                let predicted = p.get(label).is_some_and(|&x| x >= t);
                match (predicted, truth.contains(label)) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => {}
                }
            }
            let den = 2 * tp + fp + fn_;
            let f1 = if den == 0 {
                0.0
            } else {
                2.0 * tp as f64 / den as f64
            };
            if f1 > best.0 || (f1 == best.0 && (t - 0.5).abs() < (best.1 - 0.5).abs()) {
                best = (f1, t);
            }
        }
        out.insert(label.clone(), best.1);
    }
    out
}

/// Out-of-fold label sets with per-label thresholds tuned by an inner
/// `inner_k`-fold CV on each outer training part only, so an example never
/// influences the threshold it is judged by.
pub fn nested_cv_predictions(
    features: &Matrix,
    labelsets: &[BTreeSet<String>],
    labels: &[String],
    params: &GBTParams,
    folds: &FoldAssignment,
    inner_k: usize,
    seed: u64,
) -> Result<Vec<BTreeSet<String>>, MultilabelError> {
    let outer = cross_validated_probabilities(features, labelsets, labels, params, folds)?;
    let mut out = vec![BTreeSet::new(); features.rows()];
    for f in 0..folds.k() {
        let (train, test) = folds.split(f);
        let x = features.select_rows(&train);
        let y: Vec<BTreeSet<String>> = train.iter().map(|&i| labelsets[i].clone()).collect();
        let inner = stratified_kfold(&y, inner_k, seed.wrapping_add(f as u64))?;
        let probs = cross_validated_probabilities(&x, &y, labels, params, &inner)?;
        let thresholds = tune_thresholds(&probs, &y, labels);
        for &i in &test {
            out[i] = outer[i]
                .iter()
                .filter(|(l, &p)| p >= thresholds[*l])
                .map(|(l, _)| l.clone())
                .collect();
        }
    }
    Ok(out)
}
