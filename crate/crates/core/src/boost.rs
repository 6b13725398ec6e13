//! Binary gradient-boosted decision trees with logistic loss.
//!
//! Second-order boosting: each round fits a regression tree to the
//! gradients `g = p - y` and hessians `h = p(1 - p)` of the current
//! predictions. Splits are found by exact greedy search over sorted feature
//! values and scored with
//!
//! ```text
//! gain = 1/2 [ T(G_L)^2/(H_L+λ) + T(G_R)^2/(H_R+λ) - T(G)^2/(H+λ) ] - γ
//! ```
//!
//! where `T` is L1 soft-thresholding by `α` (the identity when `α = 0`).
//! Leaves get `w = -T(G)/(H+λ)` and predictions are
//! `sigmoid(base_score + η Σ w)`.
//!
//! Training is deterministic and independent of row order: rows are put in
//! a canonical order before any sums are taken.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BoostError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{features} feature rows but {targets} targets")]
    LengthMismatch { features: usize, targets: usize },
    #[error("no training rows")]
    EmptyData,
    #[error("non-finite feature value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("model was not trained with loss recording")]
    NotRecorded,
    #[error("malformed model dump: {0}")]
    Format(String),
    #[error("embedding fingerprint mismatch: model has {model}, caller has {caller}")]
    FingerprintMismatch { model: String, caller: String },
}

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Matrix {
    pub fn new(data: Vec<f64>, rows: usize, cols: usize) -> Result<Self, BoostError> {
        if data.len() != rows * cols {
            return Err(BoostError::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Matrix { data, rows, cols })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, BoostError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(BoostError::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            data,
            rows: rows.len(),
            cols,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            data,
            rows: idx.len(),
            cols: self.cols,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GBTParams {
    /// Shrinkage η applied to every tree, in (0, 1].
    pub learning_rate: f64,
    pub n_rounds: usize,
    pub max_depth: usize,
    /// γ: minimum gain a split must exceed.
    pub min_loss_reduction: f64,
    /// λ
    pub l2_weight: f64,
    /// α
    pub l1_weight: f64,
    /// Minimum hessian sum on each side of a split.
    pub min_child_weight: f64,
    /// Reserved for row/column subsampling; training does not sample yet.
    pub seed: u64,
}

impl Default for GBTParams {
    fn default() -> Self {
        GBTParams {
            learning_rate: 0.3,
            n_rounds: 100,
            max_depth: 6,
            min_loss_reduction: 0.0,
            l2_weight: 1.0,
            l1_weight: 0.0,
            min_child_weight: 1.0,
            seed: 0,
        }
    }
}

impl GBTParams {
    pub fn validate(&self) -> Result<(), BoostError> {
        let bad = |msg: String| Err(BoostError::InvalidParams(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!(
                "learning_rate {} not in (0, 1]",
                self.learning_rate
            ));
        }
        if self.max_depth == 0 {
            return bad("max_depth must be positive".into());
        }
        for (name, v) in [
            ("min_loss_reduction", self.min_loss_reduction),
            ("l2_weight", self.l2_weight),
            ("l1_weight", self.l1_weight),
            ("min_child_weight", self.min_child_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} {v} must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn leaf(weight: f64) -> Self {
        RegressionTree {
            nodes: vec![Node::Leaf { weight }],
        }
    }

    /// Builds a tree from raw nodes (root at index 0), checking that every
    /// child index points forward and every node is reachable exactly once.
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self, BoostError> {
        if nodes.is_empty() {
            return Err(BoostError::Format("tree has no nodes".into()));
        }
        let mut parents = vec![0usize; nodes.len()];
        for (i, n) in nodes.iter().enumerate() {
            if let Node::Split {
                left,
                right,
                threshold,
                ..
            } = n
            {
                if !threshold.is_finite() {
                    return Err(BoostError::Format(format!(
                        "node {i}: non-finite threshold"
                    )));
                }
                for &c in [left, right] {
                    if c <= i || c >= nodes.len() {
                        return Err(BoostError::Format(format!("node {i}: bad child {c}")));
                    }
                    parents[c] += 1;
                }
            }
        }
        if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
            return Err(BoostError::Format("nodes do not form a tree".into()));
        }
        Ok(RegressionTree { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Index of the leaf node `x` falls into.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] < threshold { left } else { right },
            }
        }
    }

    /// Unscaled leaf weight for `x`.
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(x)] {
            Node::Leaf { weight } => weight,
            Node::Split { .. } => unreachable!("leaf_index returns leaves"),
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GBTModel {
    trees: Vec<RegressionTree>,
    params: GBTParams,
    /// Log-odds offset added before the trees.
    base_score: f64,
    n_features: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    loss_curve: Option<Vec<f64>>,
    /// Set when training saw a single class and fell back to the base rate.
    #[serde(default)]
    degenerate: bool,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn logistic_loss(margin: f64, y: bool) -> f64 {
    if y {
        softplus(-margin)
    } else {
        softplus(margin)
    }
}

const PROB_FLOOR: f64 = 1e-15;

impl GBTModel {
    /// Model from hand-built trees, mainly for tests and inspection.
    pub fn from_trees(
        trees: Vec<RegressionTree>,
        params: GBTParams,
        base_score: f64,
        n_features: usize,
    ) -> Result<Self, BoostError> {
        params.validate()?;
        if let Some(f) = trees.iter().filter_map(RegressionTree::max_feature).max() {
            if f >= n_features {
                return Err(BoostError::DimensionMismatch {
                    expected: n_features,
                    got: f + 1,
                });
            }
        }
        Ok(GBTModel {
            trees,
            params,
            base_score,
            n_features,
            loss_curve: None,
            degenerate: false,
        })
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn params(&self) -> &GBTParams {
        &self.params
    }

    pub fn base_score(&self) -> f64 {
        self.base_score
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    fn margin(&self, x: &[f64]) -> f64 {
        let eta = self.params.learning_rate;
        self.base_score + self.trees.iter().map(|t| eta * t.predict(x)).sum::<f64>()
    }

    /// Probability of the positive class, strictly inside (0, 1).
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, BoostError> {
        if x.len() != self.n_features {
            return Err(BoostError::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(sigmoid(self.margin(x)).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR))
    }

    /// Mean training log-loss after each boosting round.
    pub fn training_loss_curve(&self) -> Result<&[f64], BoostError> {
        self.loss_curve.as_deref().ok_or(BoostError::NotRecorded)
    }

    pub fn to_json(&self, fingerprint: Option<&str>) -> String {
        let dump = ModelDump {
            format: MODEL_FORMAT.to_string(),
            fingerprint: fingerprint.map(str::to_string),
            model: self.clone(),
        };
        serde_json::to_string_pretty(&dump).expect("model is serializable")
    }

    /// Parses a dump written by [`GBTModel::to_json`]. When `fingerprint`
    /// is given, the dump must carry the same one.
    pub fn from_json(s: &str, fingerprint: Option<&str>) -> Result<Self, BoostError> {
        let dump: ModelDump =
            serde_json::from_str(s).map_err(|e| BoostError::Format(e.to_string()))?;
        if dump.format != MODEL_FORMAT {
            return Err(BoostError::Format(format!(
                "unsupported format `{}`",
                dump.format
            )));
        }
        if let Some(expected) = fingerprint {
            let found = dump.fingerprint.unwrap_or_default();
            if found != expected {
                return Err(BoostError::FingerprintMismatch {
                    model: found,
                    caller: expected.to_string(),
                });
            }
        }
        let m = dump.model;
        m.params.validate()?;
        let trees = m
            .trees
            .into_iter()
            .map(|t| RegressionTree::from_nodes(t.nodes))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(GBTModel { trees, ..m })
    }
}

const MODEL_FORMAT: &str = "uxfeedback-gbt/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDump {
    format: String,
    fingerprint: Option<String>,
    model: GBTModel,
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

fn soft_threshold(g: f64, alpha: f64) -> f64 {
    if g > alpha {
        g - alpha
    } else if g < -alpha {
        g + alpha
    } else {
        0.0
    }
}

fn leaf_weight(g: f64, h: f64, p: &GBTParams) -> f64 {
    let denom = h + p.l2_weight;
    if denom <= 0.0 {
        return 0.0;
    }
    -soft_threshold(g, p.l1_weight) / denom
}

fn score(g: f64, h: f64, p: &GBTParams) -> f64 {
    let t = soft_threshold(g, p.l1_weight);
    t * t / (h + p.l2_weight)
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    g: f64,
    h: f64,
}

struct Grower<'a> {
    x: &'a Matrix,
    params: &'a GBTParams,
    /// Row indices per feature, ascending by value.
    sorted: Vec<Vec<u32>>,
}

impl<'a> Grower<'a> {
    fn new(x: &'a Matrix, params: &'a GBTParams) -> Self {
        let sorted = (0..x.cols())
            .map(|f| {
                let mut idx: Vec<u32> = (0..x.rows() as u32).collect();
                idx.sort_by(|&a, &b| x.get(a as usize, f).total_cmp(&x.get(b as usize, f)));
                idx
            })
            .collect();
        Grower { x, params, sorted }
    }

    fn split_gain(&self, left: Stats, total: Stats) -> Option<f64> {
        let p = self.params;
        let right = Stats {
            g: total.g - left.g,
            h: total.h - left.h,
        };
        if left.h < p.min_child_weight || right.h < p.min_child_weight {
            return None;
        }
        if left.h + p.l2_weight <= 0.0
            || right.h + p.l2_weight <= 0.0
            || total.h + p.l2_weight <= 0.0
        {
            return None;
        }
        let gain = 0.5
            * (score(left.g, left.h, p) + score(right.g, right.h, p) - score(total.g, total.h, p))
            - p.min_loss_reduction;
        Some(gain)
    }

    /// Best split of feature `f` for every open node. Scans rows in value
    /// order once, keeping running left-hand sums per node.
    fn best_for_feature(
        &self,
        f: usize,
        node_of: &[usize],
        open: &[Option<Stats>],
        grad: &[Stats],
    ) -> Vec<Option<Candidate>> {
        let mut running = vec![Stats::default(); open.len()];
        let mut last: Vec<Option<f64>> = vec![None; open.len()];
        let mut best: Vec<Option<Candidate>> = vec![None; open.len()];
        for &i in &self.sorted[f] {
            let i = i as usize;
            let node = node_of[i];
            let Some(total) = open[node] else { continue };
            let v = self.x.get(i, f);
            if let Some(prev) = last[node] {
                if v > prev {
                    if let Some(gain) = self.split_gain(running[node], total) {
                        if gain > 0.0 && best[node].map_or(true, |b| gain > b.gain) {
                            let mut threshold = prev + (v - prev) / 2.0;
                            if threshold <= prev {
                                threshold = v;
                            }
                            best[node] = Some(Candidate {
                                gain,
                                feature: f,
                                threshold,
                            });
                        }
                    }
                }
            }
            running[node].g += grad[i].g;
            running[node].h += grad[i].h;
            last[node] = Some(v);
        }
        best
    }

    fn best_splits(
        &self,
        node_of: &[usize],
        open: &[Option<Stats>],
        grad: &[Stats],
    ) -> Vec<Option<Candidate>> {
        #[cfg(feature = "parallel")]
        let per_feature: Vec<Vec<Option<Candidate>>> = {
            use rayon::prelude::*;
            (0..self.x.cols())
                .into_par_iter()
                .map(|f| self.best_for_feature(f, node_of, open, grad))
                .collect()
        };
        #[cfg(not(feature = "parallel"))]
        let per_feature: Vec<Vec<Option<Candidate>>> = (0..self.x.cols())
            .map(|f| self.best_for_feature(f, node_of, open, grad))
            .collect();
        // Reduce in feature order; strict comparison keeps the lowest
        // feature index among equal gains.
        let mut best: Vec<Option<Candidate>> = vec![None; open.len()];
        for cands in per_feature {
            for (b, c) in best.iter_mut().zip(cands) {
                if let Some(c) = c {
                    if b.map_or(true, |b| c.gain > b.gain) {
                        *b = Some(c);
                    }
                }
            }
        }
        best
    }

    /// Grows one tree level by level. Returns the tree and the leaf node of
    /// every training row.
    fn grow(&self, grad: &[Stats]) -> (RegressionTree, Vec<usize>) {
        let n = self.x.rows();
        let mut nodes: Vec<Node> = vec![Node::Leaf { weight: 0.0 }];
        let mut node_of = vec![0usize; n];
        let mut frontier = vec![0usize];
        for depth in 0..=self.params.max_depth {
            let mut stats = vec![Stats::default(); nodes.len()];
            for i in 0..n {
                stats[node_of[i]].g += grad[i].g;
                stats[node_of[i]].h += grad[i].h;
            }
            let mut open: Vec<Option<Stats>> = vec![None; nodes.len()];
            if depth < self.params.max_depth {
                for &nd in &frontier {
                    open[nd] = Some(stats[nd]);
                }
            }
            let best = if depth < self.params.max_depth {
                self.best_splits(&node_of, &open, grad)
            } else {
                vec![None; nodes.len()]
            };
            let mut next = Vec::new();
            for &nd in &frontier {
                match best[nd] {
                    Some(c) => {
                        let left = nodes.len();
                        nodes.push(Node::Leaf { weight: 0.0 });
                        nodes.push(Node::Leaf { weight: 0.0 });
                        nodes[nd] = Node::Split {
                            feature: c.feature,
                            threshold: c.threshold,
                            left,
                            right: left + 1,
                        };
                        next.push(left);
                        next.push(left + 1);
                    }
                    None => {
                        nodes[nd] = Node::Leaf {
                            weight: leaf_weight(stats[nd].g, stats[nd].h, self.params),
                        };
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            for (i, nd) in node_of.iter_mut().enumerate() {
                if let Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } = nodes[*nd]
                {
                    *nd = if self.x.get(i, feature) < threshold {
                        left
                    } else {
                        right
                    };
                }
            }
            frontier = next;
        }
        (RegressionTree { nodes }, node_of)
    }
}

fn lexicographic(x: &Matrix, y: &[bool], a: usize, b: usize) -> Ordering {
    x.row(a)
        .iter()
        .zip(x.row(b))
        .map(|(u, v)| u.total_cmp(v))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
        .then(y[a].cmp(&y[b]))
}

/// Trains a binary classifier on `features` (n × d) and 0/1 `targets`.
///
/// Single-class targets do not fail: the result is a tree-less model
/// predicting the (clamped) base rate, flagged by
/// [`GBTModel::is_degenerate`].
pub fn train_binary(
    features: &Matrix,
    targets: &[bool],
    params: &GBTParams,
) -> Result<GBTModel, BoostError> {
    params.validate()?;
    let n = features.rows();
    if n == 0 {
        return Err(BoostError::EmptyData);
    }
    if targets.len() != n {
        return Err(BoostError::LengthMismatch {
            features: n,
            targets: targets.len(),
        });
    }
    for i in 0..n {
        if let Some(col) = features.row(i).iter().position(|v| !v.is_finite()) {
            return Err(BoostError::NonFinite { row: i, col });
        }
    }
    let d = features.cols();
    if params.n_rounds == 0 {
        return Ok(GBTModel {
            trees: Vec::new(),
            params: params.clone(),
            base_score: 0.0,
            n_features: d,
            loss_curve: Some(Vec::new()),
            degenerate: false,
        });
    }
    let positives = targets.iter().filter(|&&t| t).count();
    if positives == 0 || positives == n {
        let rate = (positives as f64 / n as f64).clamp(1e-6, 1.0 - 1e-6);
        log::warn!("single-class targets ({positives} of {n} positive); using a base-rate model");
        return Ok(GBTModel {
            trees: Vec::new(),
            params: params.clone(),
            base_score: (rate / (1.0 - rate)).ln(),
            n_features: d,
            loss_curve: None,
            degenerate: true,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| lexicographic(features, targets, a, b));
    let x = features.select_rows(&order);
    let y: Vec<bool> = order.iter().map(|&i| targets[i]).collect();

    let grower = Grower::new(&x, params);
    let mut margin = vec![0.0; n];
    let mut trees = Vec::with_capacity(params.n_rounds);
    let mut curve = Vec::with_capacity(params.n_rounds);
    let eta = params.learning_rate;
    for _ in 0..params.n_rounds {
        let grad: Vec<Stats> = margin
            .iter()
            .zip(&y)
            .map(|(&m, &t)| {
                let p = sigmoid(m);
                Stats {
                    g: p - if t { 1.0 } else { 0.0 },
                    h: p * (1.0 - p),
                }
            })
            .collect();
        let (tree, leaf_of) = grower.grow(&grad);
        for (m, &leaf) in margin.iter_mut().zip(&leaf_of) {
            if let Node::Leaf { weight } = tree.nodes[leaf] {
                *m += eta * weight;
            }
        }
        let loss = margin
            .iter()
            .zip(&y)
            .map(|(&m, &t)| logistic_loss(m, t))
            .sum::<f64>()
            / n as f64;
        curve.push(loss);
        trees.push(tree);
    }
    Ok(GBTModel {
        trees,
        params: params.clone(),
        base_score: 0.0,
        n_features: d,
        loss_curve: Some(curve),
        degenerate: false,
    })
}
