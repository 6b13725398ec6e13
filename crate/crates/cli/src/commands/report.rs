use std::fmt::Write as _;
use std::io::Write;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use uxfeedback::corpus::{self, Comment, Corpus, Filter, Period};
use uxfeedback::multilabel::OneVsRestModel;
use uxfeedback::stats::StatsReport;
use uxfeedback::summarize::{
    render_markdown, validate, Attribute, CategorySummary, Citation, DraftSource, ProductOutcome,
    ProductSummary, SummaryConfig, SummaryDraft,
};

use super::analysis::{product_comments, read_summary, run_stats, summary_path};
use super::{embedder, in_period, load_corpus, write_file};
use crate::config::PipelineConfig;
use crate::error::{coded, Code};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub version: u32,
    pub training_size: usize,
    pub trained_at: Option<DateTime<Utc>>,
    pub taxonomy_version: u32,
    pub fingerprint: String,
    /// The bundle was trained with the embedder configured now.
    pub fingerprint_matches: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareRow {
    pub label: String,
    pub count: usize,
    pub percent: f64,
    pub previous_percent: Option<f64>,
    /// Percentage points versus the previous period.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum SectionSummary {
    Published {
        markdown: String,
    },
    Skipped {
        total: usize,
        required: usize,
    },
    /// Eligible, but no topic reached the per-category floor.
    NoCategories {
        floor: usize,
    },
    Missing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductSection {
    pub product_id: String,
    pub comments: usize,
    pub shares: Vec<ShareRow>,
    pub summary: SectionSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub period: Option<String>,
    pub previous_period: Option<Period>,
    pub comments: usize,
    pub shares: Vec<ShareRow>,
    pub products: Vec<ProductSection>,
    pub stats: Option<StatsReport>,
    pub model: Option<ModelInfo>,
}

fn share_rows(current: &Corpus, previous: Option<&Corpus>) -> anyhow::Result<Vec<ShareRow>> {
    let now = corpus::label_shares(current)?;
    let before = match previous {
        Some(p) if !p.is_empty() => Some(corpus::label_shares(p)?),
        _ => None,
    };
    Ok(now
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let previous_percent = before.as_ref().map(|b| b[i].percent);
            ShareRow {
                delta: previous_percent.map(|p| ((s.percent - p) * 100.0).round() / 100.0),
                previous_percent,
                label: s.label,
                count: s.count,
                percent: s.percent,
            }
        })
        .collect())
}

fn describe(period: Option<&str>) -> String {
    period.map_or("all comments".into(), |p| format!("period {p}"))
}

fn restrict(corpus: &Corpus, product: Option<&str>, period: Option<Period>) -> Corpus {
    corpus::filter(
        corpus,
        &Filter {
            product: product.map(str::to_string),
            period,
            ..Default::default()
        },
    )
}

/// Problems that keep a stored summary out of the report: any citation or
/// snippet that no longer checks out against the comments, or a balance
/// outside tolerance.
pub fn audit(summary: &ProductSummary, comments: &[Comment], cfg: &SummaryConfig) -> Vec<String> {
    let mut problems = Vec::new();
    let mut report = validate(&summary.draft, comments, cfg);
    for f in report.failures() {
        problems.push(format!("{}: {:?}: {}", f.category, f.status, f.statement));
    }
    report.balance = summary.report.balance.clone();
    if report.all_supported() && !report.is_publishable(cfg) {
        problems.push("snippet sentiment balance outside tolerance".to_string());
    }
    let snippets = SummaryDraft {
        product_id: summary.product_id.clone(),
        source: DraftSource::Offline,
        categories: vec![CategorySummary {
            name: "snippets".into(),
            attributes: summary
                .snippets
                .iter()
                .map(|s| Attribute {
                    statement: s.comment_id.clone(),
                    citations: vec![Citation {
                        id: s.comment_id.clone(),
                        extract: s.extract.clone(),
                    }],
                })
                .collect(),
        }],
    };
    let config = SummaryConfig {
        min_citations_per_attribute: 1,
        ..cfg.clone()
    };
    for f in validate(&snippets, comments, &config).failures() {
        problems.push(format!("snippet {}: {:?}", f.statement, f.status));
    }
    problems
}

fn model_info(cfg: &PipelineConfig) -> anyhow::Result<Option<ModelInfo>> {
    if !cfg.paths.models.join("bundle.json").exists() {
        return Ok(None);
    }
    let m = OneVsRestModel::load_bundle(&cfg.paths.models, None)?;
    let fp = embedder(cfg)?.fingerprint();
    Ok(Some(ModelInfo {
        version: m.metadata().version,
        training_size: m.metadata().training_size,
        trained_at: m.metadata().trained_at,
        taxonomy_version: m.taxonomy_version(),
        fingerprint_matches: m.fingerprint() == fp,
        fingerprint: m.fingerprint().to_string(),
    }))
}

pub fn build(cfg: &PipelineConfig) -> anyhow::Result<ReportBundle> {
    let all = load_corpus(cfg, cfg.paths.responses.is_some(), true)?;
    let current = in_period(&all, cfg)?;
    let previous_period = cfg.period()?.map(|p| p.previous());
    let previous = previous_period.map(|p| restrict(&all, None, Some(p)));

    let mut refused = Vec::new();
    let mut products = Vec::new();
    for p in current.product_ids() {
        let comments = product_comments(&current, p);
        let prior = previous_period.map(|pp| restrict(&all, Some(p), Some(pp)));
        let shares = share_rows(&restrict(&current, Some(p), None), prior.as_ref())?;
        let path = summary_path(cfg, p);
        let summary = match read_summary(&path)? {
            None => SectionSummary::Missing,
            Some(f) if f.period != cfg.period => {
                return Err(coded(
                    Code::Schema,
                    format!(
                        "{} was produced for {}, the report is for {}; rerun summarize",
                        path.display(),
                        describe(f.period.as_deref()),
                        describe(cfg.period.as_deref())
                    ),
                ));
            }
            Some(f) => match f.outcome {
                ProductOutcome::Skipped {
                    total, required, ..
                } => SectionSummary::Skipped { total, required },
                ProductOutcome::Summarized(s) if s.draft.categories.is_empty() => {
                    SectionSummary::NoCategories {
                        floor: s.eligibility.category_floor,
                    }
                }
                ProductOutcome::Summarized(s) => {
                    let problems = audit(&s, &comments, &cfg.summary);
                    if problems.is_empty() {
                        SectionSummary::Published {
                            markdown: render_markdown(&s, &cfg.summary),
                        }
                    } else {
                        for m in &problems {
                            log::error!("product {p}: {m}");
                        }
                        refused.push(p.to_string());
                        SectionSummary::Missing
                    }
                }
            },
        };
        products.push(ProductSection {
            product_id: p.to_string(),
            comments: comments.len(),
            shares,
            summary,
        });
    }
    if !refused.is_empty() {
        return Err(coded(
            Code::Validation,
            format!(
                "refusing to report summaries that fail validation: {}",
                refused.join(", ")
            ),
        ));
    }
    let stats = if current.responses().is_empty() {
        None
    } else {
        Some(run_stats(&current, &[], cfg)?)
    };
    Ok(ReportBundle {
        period: cfg.period.clone(),
        previous_period,
        comments: current.len(),
        shares: share_rows(&current, previous.as_ref())?,
        products,
        stats,
        model: model_info(cfg)?,
    })
}

fn shares_table(out: &mut String, rows: &[ShareRow]) {
    let trend = rows.iter().any(|r| r.delta.is_some());
    if trend {
        out.push_str(
            "| Label | Comments | Share | Previous | Change (pp) |\n|---|---|---|---|---|\n",
        );
    } else {
        out.push_str("| Label | Comments | Share |\n|---|---|---|\n");
    }
    for r in rows {
        let _ = write!(out, "| {} | {} | {:.2}% |", r.label, r.count, r.percent);
        if trend {
            let prev = r
                .previous_percent
                .map_or("-".into(), |p| format!("{p:.2}%"));
            let delta = r.delta.map_or("-".into(), |d| format!("{d:+.2}"));
            let _ = write!(out, " {prev} | {delta} |");
        }
        out.push('\n');
    }
    out.push('\n');
}

impl ReportBundle {
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        match &self.period {
            Some(p) => {
                let _ = writeln!(s, "# Feedback report: {p}\n");
            }
            None => s.push_str("# Feedback report\n\n"),
        }
        let _ = writeln!(
            s,
            "{} comments across {} products.\n",
            self.comments,
            self.products.len()
        );
        if let Some(pp) = &self.previous_period {
            let _ = writeln!(
                s,
                "Changes are against {} to {} (end exclusive, UTC).\n",
                pp.start.format("%Y-%m-%d"),
                pp.end.format("%Y-%m-%d")
            );
        }
        s.push_str("## Topics\n\n");
        shares_table(&mut s, &self.shares);
        for p in &self.products {
            let _ = writeln!(s, "## Product {}\n", p.product_id);
            let _ = writeln!(s, "{} comments.\n", p.comments);
            shares_table(&mut s, &p.shares);
            match &p.summary {
                SectionSummary::Published { markdown } => {
                    s.push_str("### Summary\n\n");
                    s.push_str(markdown);
                    s.push('\n');
                }
                SectionSummary::Skipped { total, required } => {
                    let _ = writeln!(s, "No summary: {total} comments, {required} needed.\n");
                }
                SectionSummary::NoCategories { floor } => {
                    let _ = writeln!(s, "No summary: no topic reached {floor} comments.\n");
                }
                SectionSummary::Missing => s.push_str("No summary generated.\n\n"),
            }
        }
        if let Some(stats) = &self.stats {
            s.push_str("## Survey statistics\n\n");
            for sec in &stats.sections {
                s.push_str(&sec.to_markdown(3));
            }
        }
        if let Some(m) = &self.model {
            s.push_str("## Topic model\n\n");
            let trained = m.trained_at.map_or("-".into(), |t| {
                t.format("%Y-%m-%d %H:%M:%S UTC").to_string()
            });
            let _ = writeln!(s, "- Version: {}", m.version);
            let _ = writeln!(s, "- Training comments: {}", m.training_size);
            let _ = writeln!(s, "- Latest training comment: {trained}");
            let _ = writeln!(s, "- Taxonomy version: {}", m.taxonomy_version);
            let _ = writeln!(s, "- Embedding fingerprint: `{}`", m.fingerprint);
            if !m.fingerprint_matches {
                s.push_str("- Warning: trained with a different embedding configuration than the current one.\n");
            }
            s.push_str("\nLabel shares from different model versions are not calibrated against each other.\n");
        }
        s
    }
}

pub fn report(cfg: &PipelineConfig, out: &mut dyn Write) -> anyhow::Result<()> {
    let bundle = build(cfg)?;
    let md = bundle.to_markdown();
    let dir = &cfg.paths.reports;
    write_file(&dir.join("report.md"), &md)?;
    write_file(
        &dir.join("report.json"),
        &(serde_json::to_string_pretty(&bundle)? + "\n"),
    )?;
    out.write_all(md.as_bytes())?;
    Ok(())
}
