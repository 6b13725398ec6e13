use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uxfeedback::corpus::{Comment, Corpus, SurveyKind};
use uxfeedback::stats::{analyze, write_curves_csv, StatsReport};
use uxfeedback::summarize::{summarize_product, ProductOutcome, Transport};

use super::{embedder, in_period, load_corpus, write_file};
use crate::config::PipelineConfig;
use crate::error::{coded, Code};
use crate::http::UreqTransport;

/// Survey kinds with at least one response, in declaration order.
fn present_kinds(corpus: &Corpus) -> Vec<SurveyKind> {
    let seen: BTreeSet<&str> = corpus
        .responses()
        .iter()
        .map(|r| r.survey_kind.as_str())
        .collect();
    [SurveyKind::Tutorial, SurveyKind::AppUsability]
        .into_iter()
        .filter(|k| seen.contains(k.as_str()))
        .collect()
}

/// Statistics for `corpus`; `kinds` empty means every kind present.
pub(crate) fn run_stats(
    corpus: &Corpus,
    kinds: &[SurveyKind],
    cfg: &PipelineConfig,
) -> anyhow::Result<StatsReport> {
    if corpus.responses().is_empty() {
        return Err(coded(Code::NoData, "no survey responses to analyze"));
    }
    let kinds = if kinds.is_empty() {
        present_kinds(corpus)
    } else {
        kinds.to_vec()
    };
    Ok(analyze(corpus, &kinds, &cfg.stats)?)
}

pub fn stats(
    cfg: &PipelineConfig,
    kinds: &[SurveyKind],
    out: &mut dyn Write,
) -> anyhow::Result<()> {
    if cfg.paths.responses.is_none() {
        return Err(coded(Code::NoData, "paths.responses is not configured"));
    }
    let corpus = in_period(&load_corpus(cfg, true, false)?, cfg)?;
    let report = run_stats(&corpus, kinds, cfg)?;
    let dir = &cfg.paths.reports;
    let json = report.to_json();
    write_file(&dir.join("stats.json"), &json)?;
    write_file(&dir.join("stats.md"), &report.to_markdown())?;
    for s in &report.sections {
        let mut buf = Vec::new();
        write_curves_csv(&mut buf, &s.curves, &s.grid)?;
        write_file(
            &dir.join(format!("curves_{}.csv", s.kind.as_str())),
            &String::from_utf8(buf)?,
        )?;
    }
    out.write_all(json.as_bytes())?;
    if !json.ends_with('\n') {
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Stored summary with the period it was computed for, so a report never
/// mixes a summary with comments from another window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryFile {
    pub period: Option<String>,
    pub outcome: ProductOutcome,
}

pub(crate) fn summary_path(cfg: &PipelineConfig, product: &str) -> PathBuf {
    let slug: String = product
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    cfg.paths
        .reports
        .join("summaries")
        .join(format!("{slug}.json"))
}

pub(crate) fn product_comments(corpus: &Corpus, product: &str) -> Vec<Comment> {
    corpus
        .comments()
        .iter()
        .filter(|c| c.product_id == product)
        .cloned()
        .collect()
}

pub fn summarize(
    cfg: &PipelineConfig,
    product: Option<&str>,
    out: &mut dyn Write,
) -> anyhow::Result<()> {
    let corpus = in_period(&load_corpus(cfg, false, true)?, cfg)?;
    let emb = embedder(cfg)?;
    let transport = UreqTransport;
    let transport: Option<&dyn Transport> = cfg
        .summary
        .endpoint
        .as_ref()
        .map(|_| &transport as &dyn Transport);
    let products: Vec<String> = match product {
        Some(p) => {
            if !corpus.product_ids().contains(p) {
                return Err(coded(
                    Code::NoData,
                    format!("no comments for product `{p}`"),
                ));
            }
            vec![p.to_string()]
        }
        None => corpus
            .product_ids()
            .into_iter()
            .map(str::to_string)
            .collect(),
    };
    let mut rejected = Vec::new();
    for p in &products {
        let comments = product_comments(&corpus, p);
        let outcome = summarize_product(p, &comments, &cfg.summary, transport, &emb)?;
        let line = match &outcome {
            ProductOutcome::Skipped {
                total, required, ..
            } => {
                log::warn!(
                    "product {p}: {total} comments, below the {required} needed for a summary"
                );
                serde_json::json!({ "product": p, "status": "skipped", "comments": total })
            }
            ProductOutcome::Summarized(s) if s.draft.categories.is_empty() => {
                log::warn!(
                    "product {p}: no topic reached {} comments, nothing to summarize",
                    s.eligibility.category_floor
                );
                serde_json::json!({ "product": p, "status": "no_categories", "comments": s.eligibility.total })
            }
            ProductOutcome::Summarized(s) => {
                let publishable = s.is_publishable(&cfg.summary);
                if !publishable {
                    for f in s.report.failures() {
                        log::error!(
                            "product {p}: {} / {:?}: {}",
                            f.category,
                            f.status,
                            f.statement
                        );
                    }
                    rejected.push(p.clone());
                }
                for c in &s.changes {
                    log::info!("product {p}: repair: {c}");
                }
                serde_json::json!({
                    "product": p,
                    "status": "summarized",
                    "comments": s.eligibility.total,
                    "categories": s.draft.categories.iter().map(|c| c.name.clone()).collect::<Vec<_>>(),
                    "publishable": publishable,
                })
            }
        };
        let file = SummaryFile {
            period: cfg.period.clone(),
            outcome,
        };
        write_file(
            &summary_path(cfg, p),
            &(serde_json::to_string_pretty(&file)? + "\n"),
        )?;
        writeln!(out, "{line}")?;
    }
    if !rejected.is_empty() {
        return Err(coded(
            Code::Validation,
            format!("summaries failed validation: {}", rejected.join(", ")),
        ));
    }
    Ok(())
}

pub(crate) fn read_summary(path: &Path) -> anyhow::Result<Option<SummaryFile>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path)?;
    let f = serde_json::from_str(&text)
        .map_err(|e| coded(Code::Schema, format!("{}: {e}", path.display())))?;
    Ok(Some(f))
}
