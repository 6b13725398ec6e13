//! One binary booster per taxonomy label, persisted as a bundle directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::MultilabelError;
use crate::boost::{train_binary, GBTModel, GBTParams, Matrix};
use crate::corpus::{Corpus, TopicTaxonomy};
use crate::textprep::Embedder;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Hyperparameters for every label, or per label with a fallback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamsSpec {
    Shared(GBTParams),
    PerLabel {
        default: GBTParams,
        overrides: BTreeMap<String, GBTParams>,
    },
}

impl ParamsSpec {
    pub fn for_label(&self, label: &str) -> &GBTParams {
        match self {
            ParamsSpec::Shared(p) => p,
            ParamsSpec::PerLabel { default, overrides } => overrides.get(label).unwrap_or(default),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelHead {
    pub label: String,
    pub model: GBTModel,
    /// Label is predicted when its probability is at least this value.
    pub threshold: f64,
    /// Positive training examples seen for this label.
    pub positives: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    /// Incremented on every retrain.
    pub version: u32,
    pub training_size: usize,
    /// Latest timestamp among the training comments; stable across reruns.
    pub trained_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneVsRestModel {
    heads: Vec<LabelHead>,
    taxonomy_version: u32,
    fingerprint: String,
    n_features: usize,
    metadata: TrainingMetadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub labels: BTreeSet<String>,
    pub probabilities: BTreeMap<String, f64>,
}

fn check_threshold(t: f64) -> Result<(), MultilabelError> {
    if (0.0..1.0).contains(&t) {
        Ok(())
    } else {
        Err(MultilabelError::InvalidThreshold(t))
    }
}

impl OneVsRestModel {
    pub fn new(
        heads: Vec<LabelHead>,
        taxonomy_version: u32,
        fingerprint: String,
        n_features: usize,
        metadata: TrainingMetadata,
    ) -> Result<Self, MultilabelError> {
        for h in &heads {
            check_threshold(h.threshold)?;
            if h.model.n_features() != n_features {
                return Err(MultilabelError::EmbeddingMismatch {
                    expected: n_features,
                    got: h.model.n_features(),
                });
            }
        }
        Ok(OneVsRestModel {
            heads,
            taxonomy_version,
            fingerprint,
            n_features,
            metadata,
        })
    }

    pub fn heads(&self) -> &[LabelHead] {
        &self.heads
    }

    pub fn labels(&self) -> Vec<String> {
        self.heads.iter().map(|h| h.label.clone()).collect()
    }

    pub fn taxonomy_version(&self) -> u32 {
        self.taxonomy_version
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn metadata(&self) -> &TrainingMetadata {
        &self.metadata
    }

    pub fn thresholds(&self) -> BTreeMap<String, f64> {
        self.heads
            .iter()
            .map(|h| (h.label.clone(), h.threshold))
            .collect()
    }

    pub fn set_thresholds(
        &mut self,
        thresholds: &BTreeMap<String, f64>,
    ) -> Result<(), MultilabelError> {
        for (label, &t) in thresholds {
            check_threshold(t)?;
            let head = self
                .heads
                .iter_mut()
                .find(|h| &h.label == label)
                .ok_or_else(|| MultilabelError::UnknownLabel(label.clone()))?;
            head.threshold = t;
        }
        Ok(())
    }
}

/// Trains one booster per label of `taxonomy` on the rows of `features`.
/// Labels without positives get a base-rate model that is never predicted
/// at the default threshold.
pub fn train_ovr(
    features: &Matrix,
    labelsets: &[BTreeSet<String>],
    taxonomy: &TopicTaxonomy,
    params: &ParamsSpec,
    fingerprint: &str,
) -> Result<OneVsRestModel, MultilabelError> {
    let labels: Vec<String> = taxonomy.names().map(str::to_string).collect();
    let heads = train_heads(features, labelsets, &labels, params)?;
    OneVsRestModel::new(
        heads,
        taxonomy.version(),
        fingerprint.to_string(),
        features.cols(),
        TrainingMetadata {
            version: 1,
            training_size: features.rows(),
            trained_at: None,
        },
    )
}

pub(crate) fn train_heads(
    features: &Matrix,
    labelsets: &[BTreeSet<String>],
    labels: &[String],
    params: &ParamsSpec,
) -> Result<Vec<LabelHead>, MultilabelError> {
    if labelsets.len() != features.rows() {
        return Err(MultilabelError::LengthMismatch {
            expected: features.rows(),
            got: labelsets.len(),
        });
    }
    if features.rows() == 0 {
        return Err(MultilabelError::NoTrainingData);
    }
    if let Some(bad) = labelsets.iter().flatten().find(|l| !labels.contains(l)) {
        return Err(MultilabelError::UnknownLabel(bad.clone()));
    }
    let train_one = |label: &String| -> Result<LabelHead, MultilabelError> {
        let y: Vec<bool> = labelsets.iter().map(|s| s.contains(label)).collect();
        let positives = y.iter().filter(|&&b| b).count();
        if positives == 0 {
            log::warn!("label `{label}` has no positive examples; it will not be predicted");
        }
        let model = train_binary(features, &y, params.for_label(label))?;
        Ok(LabelHead {
            label: label.clone(),
            model,
            threshold: DEFAULT_THRESHOLD,
            positives,
        })
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        labels.par_iter().map(train_one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        labels.iter().map(train_one).collect()
    }
}

/// Labels whose probability reaches their threshold.
pub fn predict_labels(
    model: &OneVsRestModel,
    vector: &[f64],
    fingerprint: &str,
) -> Result<Prediction, MultilabelError> {
    if fingerprint != model.fingerprint {
        return Err(MultilabelError::FingerprintMismatch {
            model: model.fingerprint.clone(),
            caller: fingerprint.to_string(),
        });
    }
    predict_unchecked(model, vector)
}

pub(crate) fn predict_unchecked(
    model: &OneVsRestModel,
    vector: &[f64],
) -> Result<Prediction, MultilabelError> {
    if vector.len() != model.n_features {
        return Err(MultilabelError::EmbeddingMismatch {
            expected: model.n_features,
            got: vector.len(),
        });
    }
    let mut labels = BTreeSet::new();
    let mut probabilities = BTreeMap::new();
    for h in &model.heads {
        let p = h.model.predict_proba(vector)?;
        if p >= h.threshold {
            labels.insert(h.label.clone());
        }
        probabilities.insert(h.label.clone(), p);
    }
    Ok(Prediction {
        labels,
        probabilities,
    })
}

/// Trains on every human-labeled comment of `corpus`.
pub fn fit_corpus(
    corpus: &Corpus,
    embedder: &Embedder,
    params: &ParamsSpec,
    version: u32,
) -> Result<OneVsRestModel, MultilabelError> {
    let pool: Vec<_> = corpus.human_labeled().collect();
    if pool.is_empty() {
        return Err(MultilabelError::NoTrainingData);
    }
    let texts: Vec<&str> = pool.iter().map(|c| c.analysis_text()).collect();
    let vectors = embedder.embed_all(&texts);
    let rows: Vec<&[f64]> = vectors.iter().map(|v| v.values.as_slice()).collect();
    let features = Matrix::from_rows(&rows)?;
    let labelsets: Vec<BTreeSet<String>> = pool.iter().map(|c| c.labels.clone()).collect();
    let labels: Vec<String> = corpus.taxonomy().names().map(str::to_string).collect();
    let heads = train_heads(&features, &labelsets, &labels, params)?;
    OneVsRestModel::new(
        heads,
        corpus.taxonomy().version(),
        embedder.fingerprint(),
        embedder.dim(),
        TrainingMetadata {
            version,
            training_size: pool.len(),
            trained_at: pool.iter().map(|c| c.timestamp).max(),
        },
    )
}

/// Full batch retrain on the corpus's human-labeled comments. Thresholds of
/// labels that survive carry over; new labels start at the default.
pub fn retrain(
    previous: &OneVsRestModel,
    corpus: &Corpus,
    embedder: &Embedder,
    params: &ParamsSpec,
) -> Result<OneVsRestModel, MultilabelError> {
    let mut model = fit_corpus(corpus, embedder, params, previous.metadata.version + 1)?;
    let kept: BTreeMap<String, f64> = previous
        .thresholds()
        .into_iter()
        .filter(|(l, _)| corpus.taxonomy().contains(l))
        .collect();
    model.set_thresholds(&kept)?;
    Ok(model)
}

// ---------------------------------------------------------------------------
// Bundle directory
// ---------------------------------------------------------------------------

const BUNDLE_FORMAT: &str = "uxfeedback-ovr/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleManifest {
    format: String,
    taxonomy_version: u32,
    fingerprint: String,
    n_features: usize,
    metadata: TrainingMetadata,
    labels: Vec<ManifestLabel>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestLabel {
    label: String,
    threshold: f64,
    positives: usize,
    file: String,
}

fn model_file_name(i: usize, label: &str) -> String {
    let slug: String = label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect();
    format!("models/{i:02}_{slug}.json")
}

fn io_err(path: &Path, e: std::io::Error) -> MultilabelError {
    MultilabelError::Io(format!("{}: {e}", path.display()))
}

impl OneVsRestModel {
    /// Writes `bundle.json` plus one model file per label under `dir`.
    pub fn save_bundle(&self, dir: &Path) -> Result<(), MultilabelError> {
        fs::create_dir_all(dir.join("models")).map_err(|e| io_err(dir, e))?;
        let mut labels = Vec::with_capacity(self.heads.len());
        for (i, h) in self.heads.iter().enumerate() {
            let file = model_file_name(i, &h.label);
            let path = dir.join(&file);
            fs::write(&path, h.model.to_json(Some(&self.fingerprint)))
                .map_err(|e| io_err(&path, e))?;
            labels.push(ManifestLabel {
                label: h.label.clone(),
                threshold: h.threshold,
                positives: h.positives,
                file,
            });
        }
        let manifest = BundleManifest {
            format: BUNDLE_FORMAT.to_string(),
            taxonomy_version: self.taxonomy_version,
            fingerprint: self.fingerprint.clone(),
            n_features: self.n_features,
            metadata: self.metadata.clone(),
            labels,
        };
        let path = dir.join("bundle.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest is serializable");
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
    }

    /// Reads a bundle; with `fingerprint` set, refuses bundles trained on a
    /// different embedder.
    pub fn load_bundle(dir: &Path, fingerprint: Option<&str>) -> Result<Self, MultilabelError> {
        let path = dir.join("bundle.json");
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let m: BundleManifest =
            serde_json::from_str(&text).map_err(|e| MultilabelError::Format(e.to_string()))?;
        if m.format != BUNDLE_FORMAT {
            return Err(MultilabelError::Format(format!(
                "unsupported bundle format `{}`",
                m.format
            )));
        }
        if let Some(fp) = fingerprint {
            if fp != m.fingerprint {
                return Err(MultilabelError::FingerprintMismatch {
                    model: m.fingerprint,
                    caller: fp.to_string(),
                });
            }
        }
        let mut heads = Vec::with_capacity(m.labels.len());
        for l in m.labels {
            let path = dir.join(&l.file);
            let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            let model = GBTModel::from_json(&text, Some(&m.fingerprint))?;
            heads.push(LabelHead {
                label: l.label,
                model,
                threshold: l.threshold,
                positives: l.positives,
            });
        }
        OneVsRestModel::new(
            heads,
            m.taxonomy_version,
            m.fingerprint,
            m.n_features,
            m.metadata,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boost::RegressionTree;

    fn fixed_head(label: &str, p: f64, threshold: f64) -> LabelHead {
        let params = GBTParams {
            learning_rate: 1.0,
            ..Default::default()
        };
        let logit = (p / (1.0 - p)).ln();
        let model =
            GBTModel::from_trees(vec![RegressionTree::leaf(logit)], params, 0.0, 2).unwrap();
        LabelHead {
            label: label.into(),
            model,
            threshold,
            positives: 1,
        }
    }

    fn meta() -> TrainingMetadata {
        TrainingMetadata {
            version: 1,
            training_size: 0,
            trained_at: None,
        }
    }

    #[test]
    fn thresholding_rules() {
        let heads = vec![
            fixed_head("A", 0.9, 0.5),
            fixed_head("B", 0.6, 0.5),
            fixed_head("C", 0.1, 0.5),
        ];
        let m = OneVsRestModel::new(heads, 1, "fp".into(), 2, meta()).unwrap();
        let p = predict_labels(&m, &[0.0, 0.0], "fp").unwrap();
        assert_eq!(p.labels, ["A", "B"].iter().map(|s| s.to_string()).collect());

        let exact = m.heads()[1].model.predict_proba(&[0.0, 0.0]).unwrap();
        let m = OneVsRestModel::new(vec![fixed_head("B", 0.6, exact)], 1, "fp".into(), 2, meta())
            .unwrap();
        assert!(predict_labels(&m, &[0.0, 0.0], "fp")
            .unwrap()
            .labels
            .contains("B"));

        let low = OneVsRestModel::new(vec![fixed_head("A", 0.2, 0.5)], 1, "fp".into(), 2, meta())
            .unwrap();
        assert!(predict_labels(&low, &[1.0, 1.0], "fp")
            .unwrap()
            .labels
            .is_empty());
        assert!(matches!(
            predict_labels(&low, &[1.0, 1.0], "other"),
            Err(MultilabelError::FingerprintMismatch { .. })
        ));
        assert!(matches!(
            predict_labels(&low, &[1.0], "fp"),
            Err(MultilabelError::EmbeddingMismatch { .. })
        ));
    }

    #[test]
    fn zero_thresholds_predict_everything_and_one_is_rejected() {
        let heads = vec![fixed_head("A", 0.01, 0.0), fixed_head("B", 0.99, 0.0)];
        let m = OneVsRestModel::new(heads, 1, "fp".into(), 2, meta()).unwrap();
        assert_eq!(
            predict_labels(&m, &[0.0, 0.0], "fp").unwrap().labels.len(),
            2
        );
        assert_eq!(
            OneVsRestModel::new(vec![fixed_head("A", 0.5, 1.0)], 1, "fp".into(), 2, meta()),
            Err(MultilabelError::InvalidThreshold(1.0))
        );
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = OneVsRestModel::new(
            vec![fixed_head("Help Docs", 0.7, 0.4)],
            3,
            "fp".into(),
            2,
            meta(),
        )
        .unwrap();
        m.save_bundle(dir.path()).unwrap();
        assert!(dir.path().join("models/00_help_docs.json").exists());
        assert_eq!(
            OneVsRestModel::load_bundle(dir.path(), Some("fp")).unwrap(),
            m
        );
        assert!(matches!(
            OneVsRestModel::load_bundle(dir.path(), Some("nope")),
            Err(MultilabelError::FingerprintMismatch { .. })
        ));
    }
}
