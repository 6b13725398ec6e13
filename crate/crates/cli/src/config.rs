//! Pipeline configuration file (TOML). Unknown keys are rejected so a typo
//! never silently falls back to a default.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use uxfeedback::boost::GBTParams;
use uxfeedback::corpus::Period;
use uxfeedback::multilabel::ParamGrid;
use uxfeedback::stats::StatsConfig;
use uxfeedback::summarize::SummaryConfig;
use uxfeedback::textprep::{EmbeddingConfig, PreprocessConfig};

use crate::error::{coded, Code};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub comments: PathBuf,
    /// Where `predict` writes the model-labeled corpus. Summaries and
    /// reports read it when it exists; training always uses `comments`.
    pub labeled: Option<PathBuf>,
    /// Survey responses; optional for everything but `stats`.
    pub responses: Option<PathBuf>,
    /// JSON taxonomy; the built-in ten labels when unset.
    pub taxonomy: Option<PathBuf>,
    /// Model bundle directory.
    pub models: PathBuf,
    /// Output of `tune`, read by `train` and `evaluate`.
    pub tuning: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            comments: "data/comments.jsonl".into(),
            labeled: None,
            responses: Some("data/responses.jsonl".into()),
            taxonomy: None,
            models: "out/model".into(),
            tuning: "out/tuning.json".into(),
            reports: "out/reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Training {
    /// Used by `train` and `evaluate` when no tuning result exists.
    pub params: GBTParams,
    pub grid: ParamGrid,
    pub k: usize,
    /// Tune per-label thresholds on out-of-fold probabilities.
    pub tune_thresholds: bool,
}

impl Default for Training {
    fn default() -> Self {
        Training {
            params: GBTParams::default(),
            grid: ParamGrid::default(),
            k: 5,
            tune_thresholds: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seeds fold assignment and the bootstrap; overrides `stats.seed`.
    pub seed: Option<u64>,
    /// `2024`, `2024Q3` or `2024-01-01..2024-04-01`, half-open in UTC.
    pub period: Option<String>,
    pub paths: Paths,
    pub preprocess: PreprocessConfig,
    pub embedding: EmbeddingConfig,
    pub training: Training,
    pub stats: StatsConfig,
    pub summary: SummaryConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub period: Option<String>,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).map_err(|e| coded(Code::Schema, format!("config: {e}")))
    }

    /// Reads `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.paths.comments);
        join(&mut self.paths.models);
        join(&mut self.paths.tuning);
        join(&mut self.paths.reports);
        if let Some(p) = self.paths.labeled.as_mut() {
            join(p);
        }
        if let Some(p) = self.paths.responses.as_mut() {
            join(p);
        }
        if let Some(p) = self.paths.taxonomy.as_mut() {
            join(p);
        }
        if let Some(v) = self.embedding.vectors_path.as_mut() {
            if Path::new(v).is_relative() {
                *v = base.join(&*v).display().to_string();
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if o.period.is_some() {
            self.period.clone_from(&o.period);
        }
        if let Some(s) = self.seed {
            self.stats.seed = s;
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn period(&self) -> anyhow::Result<Option<Period>> {
        self.period
            .as_deref()
            .map(|p| p.parse::<Period>().map_err(anyhow::Error::from))
            .transpose()
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.preprocess
            .validate()
            .map_err(|e| coded(Code::Schema, format!("config: {e}")))?;
        self.summary
            .validate()
            .map_err(|e| coded(Code::Schema, format!("config: {e}")))?;
        if self.training.k < 2 {
            return Err(coded(Code::Schema, "config: training.k must be at least 2"));
        }
        self.period()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
