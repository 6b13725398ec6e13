//! WebAssembly bindings for the static demo page in `www/`. Every entry
//! point returns a JSON string; errors become JS exceptions.

use serde_json::{json, Value};
use uxfeedback::multilabel::{fit_corpus, predict_labels, OneVsRestModel, ParamsSpec};
use uxfeedback::stats::{
    binomial_test_one_tailed, bootstrap_ci_cramers_v, chi_squared_test, cramers_v, wilson_interval,
    ContingencyTable,
};
use uxfeedback::synth::{self, SynthConfig};
use uxfeedback::textprep::{Embedder, EmbeddingConfig, PreprocessConfig};
use uxfeedback::{boost::GBTParams, Corpus, TopicTaxonomy};
use wasm_bindgen::prelude::*;

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Parses one row per line, counts separated by commas or whitespace.
pub fn parse_counts(text: &str) -> Result<Vec<Vec<u64>>, String> {
    let rows: Vec<Vec<u64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            line.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<u64>()
                        .map_err(|_| format!("row {}: `{t}` is not a count", i + 1))
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    if rows.len() < 2 || rows[0].len() < 2 {
        return Err("need at least a 2x2 table".into());
    }
    if rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err("rows have different lengths".into());
    }
    Ok(rows)
}

pub fn contingency_json(text: &str, replicates: usize, seed: u64) -> Result<Value, String> {
    let table = ContingencyTable::from_counts(parse_counts(text)?).map_err(|e| e.to_string())?;
    let test = chi_squared_test(&table).map_err(|e| e.to_string())?;
    let v = cramers_v(&table).map_err(|e| e.to_string())?;
    let ci = bootstrap_ci_cramers_v(&table, replicates, 0.95, seed).map_err(|e| e.to_string())?;
    Ok(json!({
        "n": table.total(),
        "chi_squared": test.statistic,
        "df": test.df,
        "p_value": test.p_value,
        "warnings": test.warnings,
        "cramers_v": v,
        "ci": [ci.interval.lower, ci.interval.upper],
        "replicates": ci.replicates,
        "redraws": ci.redraws,
    }))
}

pub fn proportion_json(successes: u64, trials: u64, level: f64, p0: f64) -> Result<Value, String> {
    let w = wilson_interval(successes, trials, level).map_err(|e| e.to_string())?;
    let b = binomial_test_one_tailed(successes, trials, p0).map_err(|e| e.to_string())?;
    Ok(json!({
        "point": w.point,
        "lower": w.lower,
        "upper": w.upper,
        "level": level,
        "p0": p0,
        "p_value": b.p_value,
    }))
}

/// χ², Cramér's V and a bootstrap interval for V.
#[wasm_bindgen]
pub fn analyze_table(counts: &str, replicates: usize, seed: u64) -> Result<String, JsError> {
    contingency_json(counts, replicates, seed)
        .map(|v| v.to_string())
        .map_err(err)
}

/// Wilson interval for `successes / trials` and the one-tailed binomial
/// test of H0: p = p0 against p > p0.
#[wasm_bindgen]
pub fn proportion(successes: u64, trials: u64, level: f64, p0: f64) -> Result<String, JsError> {
    proportion_json(successes, trials, level, p0)
        .map(|v| v.to_string())
        .map_err(err)
}

#[wasm_bindgen]
pub struct TopicClassifier {
    embedder: Embedder,
    model: OneVsRestModel,
    training_size: usize,
}

#[wasm_bindgen]
impl TopicClassifier {
    /// Trains on the synthetic labeled comments. Small settings keep this
    /// around a second in the browser.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64) -> Result<TopicClassifier, JsError> {
        let comments = synth::labeled_comments(&SynthConfig {
            seed,
            ..SynthConfig::default()
        });
        let corpus = Corpus::from_comments(TopicTaxonomy::default(), comments).map_err(err)?;
        let model = EmbeddingConfig {
            dim: 64,
            bucket_count: 200_000,
            ..Default::default()
        }
        .build()
        .map_err(err)?;
        let embedder = Embedder::new(model, PreprocessConfig::default());
        let params = ParamsSpec::Shared(GBTParams {
            learning_rate: 0.3,
            n_rounds: 40,
            max_depth: 3,
            ..Default::default()
        });
        let model = fit_corpus(&corpus, &embedder, &params, 1).map_err(err)?;
        let training_size = model.metadata().training_size;
        Ok(TopicClassifier {
            embedder,
            model,
            training_size,
        })
    }

    #[wasm_bindgen(getter)]
    pub fn training_size(&self) -> usize {
        self.training_size
    }

    /// Topic probabilities for `text`, highest first, with the labels that
    /// clear their threshold.
    pub fn classify(&self, text: &str) -> Result<String, JsError> {
        let v = self.embedder.embed(text);
        let pred =
            predict_labels(&self.model, &v.values, &self.embedder.fingerprint()).map_err(err)?;
        let mut ranked: Vec<(&String, &f64)> = pred.probabilities.iter().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(a.1));
        Ok(json!({
            "labels": pred.labels,
            "probabilities": ranked.iter().map(|(l, p)| json!({"label": l, "p": p})).collect::<Vec<_>>(),
            "empty_text": v.values.iter().all(|x| *x == 0.0),
        })
        .to_string())
    }
}
