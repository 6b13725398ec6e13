//! Subcommand implementations. Each writes its data to `out` and its
//! diagnostics through `log`.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use uxfeedback::boost::Matrix;
use uxfeedback::corpus::{self, Corpus, Filter, Format, TopicTaxonomy};
use uxfeedback::textprep::Embedder;

use crate::config::PipelineConfig;
use crate::error::{coded, Code};

mod analysis;
mod model;
mod report;

pub use analysis::{stats, summarize, SummaryFile};
pub use model::{evaluate, predict, train, tune, TuningResult};
pub use report::{
    audit, report, ModelInfo, ProductSection, ReportBundle, SectionSummary, ShareRow,
};

pub fn load_taxonomy(cfg: &PipelineConfig) -> anyhow::Result<TopicTaxonomy> {
    let Some(path) = &cfg.paths.taxonomy else {
        return Ok(TopicTaxonomy::default());
    };
    let text =
        fs::read_to_string(path).with_context(|| format!("reading taxonomy {}", path.display()))?;
    let tax: TopicTaxonomy = serde_json::from_str(&text)
        .with_context(|| format!("parsing taxonomy {}", path.display()))?;
    tax.validate()?;
    Ok(tax)
}

/// Comments plus, when `responses` is set and the file is configured,
/// survey responses. With `labeled`, the output of `predict` is preferred
/// when it exists.
pub fn load_corpus(cfg: &PipelineConfig, responses: bool, labeled: bool) -> anyhow::Result<Corpus> {
    let path = match &cfg.paths.labeled {
        Some(p) if labeled && p.exists() => p,
        _ => &cfg.paths.comments,
    };
    let corpus = corpus::ingest_with_taxonomy(path, Format::from_path(path), load_taxonomy(cfg)?)?;
    match (&cfg.paths.responses, responses) {
        (Some(rp), true) => Ok(corpus::ingest_responses(&corpus, rp)?),
        _ => Ok(corpus),
    }
}

/// Restricts to the configured period; an empty result is an error.
pub fn in_period(corpus: &Corpus, cfg: &PipelineConfig) -> anyhow::Result<Corpus> {
    let Some(period) = cfg.period()? else {
        return Ok(corpus.clone());
    };
    let kept = corpus::filter(
        corpus,
        &Filter {
            period: Some(period),
            ..Default::default()
        },
    );
    if kept.is_empty() {
        return Err(coded(
            Code::NoData,
            format!(
                "no comments in period {}",
                cfg.period.as_deref().unwrap_or_default()
            ),
        ));
    }
    Ok(kept)
}

pub fn embedder(cfg: &PipelineConfig) -> anyhow::Result<Embedder> {
    Ok(Embedder::new(
        cfg.embedding.build()?,
        cfg.preprocess.clone(),
    ))
}

pub struct LabeledData {
    pub features: Matrix,
    pub labelsets: Vec<BTreeSet<String>>,
    pub labels: Vec<String>,
}

/// Embeddings and label sets of the human-labeled comments.
pub fn labeled_data(corpus: &Corpus, embedder: &Embedder) -> anyhow::Result<LabeledData> {
    let pool: Vec<_> = corpus.human_labeled().collect();
    if pool.is_empty() {
        return Err(coded(Code::NoData, "no human-labeled comments to train on"));
    }
    let texts: Vec<&str> = pool.iter().map(|c| c.analysis_text()).collect();
    let vectors = embedder.embed_all(&texts);
    let rows: Vec<&[f64]> = vectors.iter().map(|v| v.values.as_slice()).collect();
    Ok(LabeledData {
        features: Matrix::from_rows(&rows)?,
        labelsets: pool.iter().map(|c| c.labels.clone()).collect(),
        labels: corpus.taxonomy().names().map(str::to_string).collect(),
    })
}

pub fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn ingest(
    cfg: &PipelineConfig,
    file: Option<&Path>,
    format: Option<Format>,
    responses: Option<&Path>,
    out: &mut dyn Write,
) -> anyhow::Result<()> {
    let path = file.unwrap_or(&cfg.paths.comments);
    let format = format.unwrap_or_else(|| Format::from_path(path));
    let corpus = corpus::ingest_with_taxonomy(path, format, load_taxonomy(cfg)?)
        .with_context(|| format!("ingesting {}", path.display()))?;
    let corpus = match responses {
        Some(rp) => corpus::ingest_responses(&corpus, rp)
            .with_context(|| format!("ingesting {}", rp.display()))?,
        None => corpus,
    };
    let summary = serde_json::json!({
        "comments": corpus.len(),
        "human_labeled": corpus.human_labeled().count(),
        "products": corpus.product_ids().len(),
        "responses": corpus.responses().len(),
    });
    writeln!(out, "{summary}")?;
    Ok(())
}

pub fn synth(
    cfg: &uxfeedback::synth::SynthConfig,
    dir: &Path,
    out: &mut dyn Write,
) -> anyhow::Result<()> {
    let corpus = uxfeedback::synth::generate(cfg)?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    corpus::export(
        &corpus,
        &dir.join("comments.jsonl"),
        Some(&dir.join("responses.jsonl")),
    )?;
    let summary = serde_json::json!({
        "comments": corpus.len(),
        "human_labeled": corpus.human_labeled().count(),
        "responses": corpus.responses().len(),
    });
    writeln!(out, "{summary}")?;
    Ok(())
}
