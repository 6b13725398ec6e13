use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use uxfeedback::boost::GBTParams;
use uxfeedback::corpus::{self, Format, LabelSource};
use uxfeedback::multilabel::{
    cross_validated_probabilities, evaluate as score, fit_corpus, grid_search,
    nested_cv_predictions, predict_labels, retrain, scorable_labels, stratified_kfold,
    tune_thresholds, CellScore, MultilabelError, OneVsRestModel, ParamsSpec, DEFAULT_THRESHOLD,
};

use super::{embedder, labeled_data, load_corpus, write_file};
use crate::config::PipelineConfig;
use crate::error::{coded, Code};

/// What `tune` leaves behind for `train` and `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub params: GBTParams,
    pub mean_micro_f1: f64,
    pub k: usize,
    pub seed: u64,
    /// Per-label thresholds from out-of-fold probabilities; empty when
    /// threshold tuning is off.
    pub thresholds: BTreeMap<String, f64>,
    pub excluded_labels: Vec<String>,
    pub cells: Vec<CellScore>,
}

fn read_tuning(cfg: &PipelineConfig) -> anyhow::Result<Option<TuningResult>> {
    let path = &cfg.paths.tuning;
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let t = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Some(t))
}

/// Tuned parameters when available, else the configured ones.
fn chosen(cfg: &PipelineConfig) -> anyhow::Result<(GBTParams, BTreeMap<String, f64>)> {
    Ok(match read_tuning(cfg)? {
        Some(t) => (t.params, t.thresholds),
        None => (cfg.training.params.clone(), BTreeMap::new()),
    })
}

pub fn tune(cfg: &PipelineConfig, out: &mut dyn Write) -> anyhow::Result<()> {
    let corpus = load_corpus(cfg, false, false)?;
    let emb = embedder(cfg)?;
    let data = labeled_data(&corpus, &emb)?;
    let (k, seed) = (cfg.training.k, cfg.seed());
    let res = grid_search(
        &data.features,
        &data.labelsets,
        &data.labels,
        &cfg.training.grid,
        k,
        seed,
    )?;
    let thresholds = if cfg.training.tune_thresholds {
        let (scored, _) = scorable_labels(&data.labelsets, &data.labels);
        let probs = cross_validated_probabilities(
            &data.features,
            &data.labelsets,
            &scored,
            &res.best,
            &res.folds,
        )?;
        tune_thresholds(&probs, &data.labelsets, &scored)
    } else {
        BTreeMap::new()
    };
    let result = TuningResult {
        params: res.best.clone(),
        mean_micro_f1: res.cells[res.best_index].mean_micro_f1,
        k,
        seed,
        thresholds,
        excluded_labels: res.excluded_labels,
        cells: res.cells,
    };
    write_file(
        &cfg.paths.tuning,
        &(serde_json::to_string_pretty(&result)? + "\n"),
    )?;
    log::info!("tuning result written to {}", cfg.paths.tuning.display());
    let brief = serde_json::json!({
        "params": result.params,
        "mean_micro_f1": result.mean_micro_f1,
        "thresholds": result.thresholds,
        "cells": result.cells.len(),
    });
    writeln!(out, "{brief}")?;
    Ok(())
}

pub fn train(cfg: &PipelineConfig, retraining: bool, out: &mut dyn Write) -> anyhow::Result<()> {
    let corpus = load_corpus(cfg, false, false)?;
    let emb = embedder(cfg)?;
    let (params, thresholds) = chosen(cfg)?;
    let spec = ParamsSpec::Shared(params);
    let dir = &cfg.paths.models;
    let mut model = if retraining {
        let previous = OneVsRestModel::load_bundle(dir, Some(&emb.fingerprint()))
            .with_context(|| format!("loading previous bundle from {}", dir.display()))?;
        retrain(&previous, &corpus, &emb, &spec)?
    } else {
        fit_corpus(&corpus, &emb, &spec, 1)?
    };
    let known: BTreeMap<String, f64> = thresholds
        .into_iter()
        .filter(|(l, _)| corpus.taxonomy().contains(l))
        .collect();
    model.set_thresholds(&known)?;
    model.save_bundle(dir)?;
    log::info!("model bundle written to {}", dir.display());
    let brief = serde_json::json!({
        "bundle": dir.display().to_string(),
        "metadata": model.metadata(),
        "fingerprint": model.fingerprint(),
        "thresholds": model.thresholds(),
    });
    writeln!(out, "{brief}")?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionLine {
    id: String,
    labels: BTreeSet<String>,
}

fn read_predictions(path: &Path) -> anyhow::Result<Vec<PredictionLine>> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PredictionLine = serde_json::from_str(&line)
            .with_context(|| format!("{} line {}", path.display(), i + 1))?;
        out.push(p);
    }
    Ok(out)
}

/// Table-2 style CSV, either from k-fold CV on the human labels or from a
/// predictions file aligned with them.
const INNER_K: usize = 3;

pub fn evaluate(
    cfg: &PipelineConfig,
    predictions: Option<&Path>,
    out: &mut dyn Write,
) -> anyhow::Result<()> {
    let corpus = load_corpus(cfg, false, false)?;
    let labels: Vec<String> = corpus.taxonomy().names().map(str::to_string).collect();
    let report = match predictions {
        Some(path) => {
            let preds = read_predictions(path)?;
            let truth: Vec<_> = corpus.human_labeled().collect();
            if preds.len() != truth.len() {
                return Err(MultilabelError::LengthMismatch {
                    expected: truth.len(),
                    got: preds.len(),
                })
                .with_context(|| {
                    format!("{} has one line per human-labeled comment", path.display())
                });
            }
            if let Some((p, t)) = preds.iter().zip(&truth).find(|(p, t)| p.id != t.id) {
                return Err(coded(
                    Code::Mismatch,
                    format!("prediction `{}` is aligned with comment `{}`", p.id, t.id),
                ));
            }
            let predicted: Vec<BTreeSet<String>> = preds.into_iter().map(|p| p.labels).collect();
            let truth: Vec<BTreeSet<String>> = truth.iter().map(|c| c.labels.clone()).collect();
            score(&predicted, &truth, &labels)?
                .with_protocol(format!("predictions from {}", path.display()))
        }
        None => {
            let emb = embedder(cfg)?;
            let data = labeled_data(&corpus, &emb)?;
            let (params, thresholds) = chosen(cfg)?;
            let k = cfg.training.k;
            let folds = stratified_kfold(&data.labelsets, k, cfg.seed())?;
            let (predicted, protocol) = if cfg.training.tune_thresholds {
                // Thresholds are re-tuned inside each outer training part; tuned
                // values from the tuning file would have seen the scored folds.
                let predicted = nested_cv_predictions(
                    &data.features,
                    &data.labelsets,
                    &data.labels,
                    &params,
                    &folds,
                    INNER_K,
                    cfg.seed(),
                )?;
                (
                    predicted,
                    format!(
                        "{k}-fold cross-validation, thresholds tuned by inner {INNER_K}-fold CV"
                    ),
                )
            } else {
                let probs = cross_validated_probabilities(
                    &data.features,
                    &data.labelsets,
                    &data.labels,
                    &params,
                    &folds,
                )?;
                let predicted: Vec<BTreeSet<String>> = probs
                    .iter()
                    .map(|row| {
                        row.iter()
                            .filter(|(l, &p)| {
                                p >= thresholds.get(*l).copied().unwrap_or(DEFAULT_THRESHOLD)
                            })
                            .map(|(l, _)| l.clone())
                            .collect()
                    })
                    .collect();
                (predicted, format!("{k}-fold cross-validation"))
            };
            score(&predicted, &data.labelsets, &labels)?.with_protocol(protocol)
        }
    };
    let csv = report.to_csv_string();
    write_file(&cfg.paths.reports.join("evaluation.csv"), &csv)?;
    out.write_all(csv.as_bytes())?;
    Ok(())
}

/// Labels every comment a human has not labeled and writes the corpus back
/// (to `dest`, `paths.labeled`, or in place for JSONL input).
pub fn predict(
    cfg: &PipelineConfig,
    dest: Option<&Path>,
    out: &mut dyn Write,
) -> anyhow::Result<()> {
    let src = &cfg.paths.comments;
    let dest = match dest.or(cfg.paths.labeled.as_deref()) {
        Some(d) => d,
        None if Format::from_path(src) == Format::Jsonl => src.as_path(),
        None => {
            return Err(coded(
                Code::Schema,
                "predict writes JSONL; pass --out for CSV input",
            ))
        }
    };
    let corpus = load_corpus(cfg, false, false)?;
    let emb = embedder(cfg)?;
    let model = OneVsRestModel::load_bundle(&cfg.paths.models, Some(&emb.fingerprint()))?;
    let targets: Vec<_> = corpus
        .comments()
        .iter()
        .filter(|c| c.label_source != LabelSource::Human)
        .collect();
    let texts: Vec<&str> = targets.iter().map(|c| c.analysis_text()).collect();
    let vectors = emb.embed_all(&texts);
    let mut labels = HashMap::new();
    for (c, v) in targets.iter().zip(&vectors) {
        let p = predict_labels(&model, &v.values, &emb.fingerprint())?;
        labels.insert(c.id.clone(), p.labels);
    }
    let labeled = corpus.with_model_labels(&labels)?;
    // Changes are counted against what the destination held before.
    let before: HashMap<String, (BTreeSet<String>, LabelSource)> = if dest.exists() {
        corpus::ingest_with_taxonomy(dest, Format::Jsonl, corpus.taxonomy().clone())?
            .comments()
            .iter()
            .map(|c| (c.id.clone(), (c.labels.clone(), c.label_source)))
            .collect()
    } else {
        HashMap::new()
    };
    let changed = labeled
        .comments()
        .iter()
        .filter(|c| before.get(&c.id) != Some(&(c.labels.clone(), c.label_source)))
        .count();
    if let Some(dir) = dest.parent() {
        fs::create_dir_all(dir)?;
    }
    corpus::export(&labeled, dest, None)?;
    let brief = serde_json::json!({ "predicted": targets.len(), "changed": changed, "written": dest.display().to_string() });
    writeln!(out, "{brief}")?;
    Ok(())
}
