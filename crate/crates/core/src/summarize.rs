//! Category-grouped comment summaries with citation checks.
//!
//! The flow per product: decide eligibility and pick categories, build a
//! prompt whose instructional part never changes, obtain a draft (from a
//! text-generation endpoint or the offline extractive fallback), check every
//! citation against the source comments, repair what can be repaired and
//! pick sentiment-balanced snippets. Only drafts whose report is clean are
//! publishable.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Comment, Sentiment};
use crate::textprep::Embedder;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SummarizeError {
    #[error("not eligible for a summary: {total} comments, at least {required} needed")]
    NotEligible { total: usize, required: usize },
    #[error("endpoint timed out after {attempts} attempts")]
    EndpointTimeout { attempts: u32 },
    #[error("endpoint returned status {status}: {body}")]
    EndpointError { status: u16, body: String },
    #[error("endpoint transport failure: {0}")]
    Transport(String),
    #[error("response does not match the summary schema: {0}")]
    ResponseSchema(String),
    #[error("{requested} snippets requested but only {available} supported citations")]
    InsufficientSupported { requested: usize, available: usize },
    #[error("invalid summary config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, SummarizeError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummaryConfig {
    /// Products with fewer comments get no summary.
    pub min_total_comments: usize,
    /// Per-category floor. When unset it scales with volume:
    /// `max(4, ceil(0.02 * total))`.
    pub min_category_comments: Option<usize>,
    pub max_categories: usize,
    /// Categories always included when present, regardless of rank or floor.
    pub include_categories: BTreeSet<String>,
    pub snippet_count: usize,
    /// Supported citations an attribute needs.
    pub min_citations_per_attribute: usize,
    /// Largest allowed gap, in snippets, between a sentiment's snippet count
    /// and its proportional share.
    pub balance_tolerance: f64,
    /// Summaries of at most this many comments carry a caution banner.
    pub low_volume_banner_max: usize,
    pub endpoint: Option<String>,
    pub timeout_secs: u64,
    pub retries: u32,
    pub max_tokens: u32,
    pub temperature: f64,
    /// Fall back to the offline draft when the endpoint fails.
    pub offline_fallback: bool,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        SummaryConfig {
            min_total_comments: 20,
            min_category_comments: None,
            max_categories: 4,
            include_categories: BTreeSet::new(),
            snippet_count: 5,
            min_citations_per_attribute: 1,
            balance_tolerance: 1.0,
            low_volume_banner_max: 50,
            endpoint: None,
            timeout_secs: 60,
            retries: 2,
            max_tokens: 2048,
            temperature: 0.0,
            offline_fallback: false,
        }
    }
}

impl SummaryConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SummarizeError::InvalidConfig(m.to_string()));
        if self.min_total_comments < 1 {
            return bad("min_total_comments must be at least 1");
        }
        if self.max_categories < 1 {
            return bad("max_categories must be at least 1");
        }
        if self.min_citations_per_attribute < 1 {
            return bad("min_citations_per_attribute must be at least 1");
        }
        if !(self.balance_tolerance >= 0.0) {
            return bad("balance_tolerance must be non-negative");
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad("temperature must be in [0, 2]");
        }
        Ok(())
    }

    pub fn category_floor(&self, total: usize) -> usize {
        self.min_category_comments
            .unwrap_or_else(|| 4.max((total * 2).div_ceil(100)))
    }
}

// ---------------------------------------------------------------------------
// Eligibility
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub name: String,
    pub count: usize,
    /// Included through `include_categories` rather than by rank.
    pub manual: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Eligibility {
    pub eligible: bool,
    pub total: usize,
    /// Comments needed for a summary.
    pub required: usize,
    pub category_floor: usize,
    pub categories: Vec<CategoryCount>,
}

/// Ranks categories by comment count (name breaks ties), drops those below
/// the floor, keeps the top `max_categories` and appends manual overrides.
pub fn eligible(comments: &[Comment], config: &SummaryConfig) -> Eligibility {
    let total = comments.len();
    let floor = config.category_floor(total);
    if total < config.min_total_comments {
        return Eligibility {
            eligible: false,
            total,
            required: config.min_total_comments,
            category_floor: floor,
            categories: Vec::new(),
        };
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for c in comments {
        for l in &c.labels {
            *counts.entry(l).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.iter().map(|(k, v)| (*k, *v)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let mut categories: Vec<CategoryCount> = ranked
        .iter()
        .filter(|(_, n)| *n >= floor)
        .take(config.max_categories)
        .map(|(name, count)| CategoryCount {
            name: name.to_string(),
            count: *count,
            manual: false,
        })
        .collect();
    for name in &config.include_categories {
        if categories.iter().any(|c| &c.name == name) {
            continue;
        }
        if let Some(&count) = counts.get(name.as_str()) {
            categories.push(CategoryCount {
                name: name.clone(),
                count,
                manual: true,
            });
        }
    }
    Eligibility {
        eligible: true,
        total,
        required: config.min_total_comments,
        category_floor: floor,
        categories,
    }
}

// ---------------------------------------------------------------------------
// Prompt
// ---------------------------------------------------------------------------

/// Instructional part of every prompt. Product-specific values (category
/// list, floor) live in the product section so this text stays identical
/// across products.
pub const INSTRUCTIONS: &str = "\
You are given user comments about one software product. Each comment has an ID, its text and one or more topic categories.

Task:
1. Review all comments and their categories.
2. For each category listed under \"Categories to summarize\", write a short summary made of attributes. An attribute is one statement about what users said on that topic.
3. Every attribute must cite the comments that support it. A citation gives the comment ID and a verbatim extract copied exactly from that comment's text. Do not paraphrase extracts.
4. Reflect how common each opinion is. Do not base an attribute on a single unusual comment when the other comments disagree, and do not state anything no comment supports.
5. Only summarize the listed categories. Each listed category met the minimum number of comments stated below.

Respond with JSON only, in this shape:
{\"categories\": [{\"name\": \"<category>\", \"attributes\": [{\"statement\": \"<text>\", \"citations\": [{\"id\": \"<comment id>\", \"extract\": \"<verbatim text>\"}]}]}]}
";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptComment {
    pub id: String,
    pub text: String,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptDocument {
    pub instructions: String,
    pub product_id: String,
    pub categories: Vec<String>,
    pub category_floor: usize,
    pub comments: Vec<PromptComment>,
}

impl PromptDocument {
    pub fn render(&self) -> String {
        let mut s = String::with_capacity(self.instructions.len() + 64 * self.comments.len());
        s.push_str(&self.instructions);
        let _ = writeln!(s, "\nProduct: {}", self.product_id);
        let _ = writeln!(
            s,
            "Categories to summarize (minimum {} comments each): {}",
            self.category_floor,
            self.categories.join(", ")
        );
        s.push_str("\nComments:\n");
        for c in &self.comments {
            let _ = writeln!(
                s,
                "[{}] ({}) {}",
                c.id,
                c.labels.join("; "),
                one_line(&c.text)
            );
        }
        s
    }
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Prompt for one product's comments, sorted by id.
pub fn build_prompt(comments: &[Comment], eligibility: &Eligibility) -> Result<PromptDocument> {
    if !eligibility.eligible {
        return Err(SummarizeError::NotEligible {
            total: eligibility.total,
            required: eligibility.required,
        });
    }
    let mut sorted: Vec<&Comment> = comments.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(PromptDocument {
        instructions: INSTRUCTIONS.to_string(),
        product_id: comments
            .first()
            .map(|c| c.product_id.clone())
            .unwrap_or_default(),
        categories: eligibility
            .categories
            .iter()
            .map(|c| c.name.clone())
            .collect(),
        category_floor: eligibility.category_floor,
        comments: sorted
            .into_iter()
            .map(|c| PromptComment {
                id: c.id.clone(),
                text: c.analysis_text().to_string(),
                labels: c.labels.iter().cloned().collect(),
            })
            .collect(),
    })
}

// ---------------------------------------------------------------------------
// Drafts
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Citation {
    pub id: String,
    pub extract: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attribute {
    pub statement: String,
    pub citations: Vec<Citation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategorySummary {
    pub name: String,
    pub attributes: Vec<Attribute>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DraftSource {
    Endpoint,
    Offline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryDraft {
    pub product_id: String,
    pub source: DraftSource,
    pub categories: Vec<CategorySummary>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EndpointResponse {
    categories: Vec<CategorySummary>,
}

/// Strictly parses an endpoint reply against the prompt it answers.
pub fn parse_response(body: &str, prompt: &PromptDocument) -> Result<SummaryDraft> {
    let schema = |m: String| SummarizeError::ResponseSchema(m);
    let resp: EndpointResponse =
        serde_json::from_str(body.trim()).map_err(|e| schema(e.to_string()))?;
    let mut seen = BTreeSet::new();
    for cat in &resp.categories {
        if !prompt.categories.contains(&cat.name) {
            return Err(schema(format!("category `{}` was not requested", cat.name)));
        }
        if !seen.insert(&cat.name) {
            return Err(schema(format!("category `{}` appears twice", cat.name)));
        }
        for a in &cat.attributes {
            if a.statement.trim().is_empty() {
                return Err(schema(format!("empty statement in `{}`", cat.name)));
            }
            if a.citations.is_empty() {
                return Err(schema(format!(
                    "uncited attribute in `{}`: {}",
                    cat.name, a.statement
                )));
            }
        }
    }
    Ok(SummaryDraft {
        product_id: prompt.product_id.clone(),
        source: DraftSource::Endpoint,
        categories: resp.categories,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Timeout,
    Status(u16, String),
    Other(String),
}

/// One HTTP POST of a JSON body, returning the response body. Implemented
/// by the binary so the library stays free of network code.
pub trait Transport {
    fn post_json(
        &self,
        url: &str,
        body: &str,
        timeout: Duration,
    ) -> std::result::Result<String, TransportError>;
}

#[derive(Serialize)]
struct EndpointRequest<'a> {
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
}

/// Sends the prompt, retrying timeouts, transport failures and 5xx replies
/// up to `retries` more times.
pub fn generate_remote(
    prompt: &PromptDocument,
    config: &SummaryConfig,
    url: &str,
    transport: &dyn Transport,
) -> Result<SummaryDraft> {
    let rendered = prompt.render();
    let body = serde_json::to_string(&EndpointRequest {
        prompt: &rendered,
        max_tokens: config.max_tokens,
        temperature: config.temperature,
    })
    .expect("request serializes");
    let timeout = Duration::from_secs(config.timeout_secs);
    let attempts = config.retries + 1;
    let mut last = TransportError::Timeout;
    for attempt in 1..=attempts {
        match transport.post_json(url, &body, timeout) {
            Ok(reply) => return parse_response(&reply, prompt),
            Err(TransportError::Status(s, b)) if s < 500 => {
                return Err(SummarizeError::EndpointError { status: s, body: b });
            }
            Err(e) => {
                log::warn!("summary endpoint attempt {attempt}/{attempts} failed: {e:?}");
                last = e;
            }
        }
    }
    Err(match last {
        TransportError::Timeout => SummarizeError::EndpointTimeout { attempts },
        TransportError::Status(status, body) => SummarizeError::EndpointError { status, body },
        TransportError::Other(m) => SummarizeError::Transport(m),
    })
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Extractive draft: for each category, the comment closest (cosine) to the
/// category's mean embedding becomes the single attribute, citing itself.
/// Ties go to the smaller comment id.
pub fn generate_offline(prompt: &PromptDocument, embedder: &Embedder) -> SummaryDraft {
    let texts: Vec<&str> = prompt.comments.iter().map(|c| c.text.as_str()).collect();
    let vectors = embedder.embed_all(&texts);
    let mut categories = Vec::new();
    for name in &prompt.categories {
        let members: Vec<usize> = (0..prompt.comments.len())
            .filter(|&i| prompt.comments[i].labels.contains(name))
            .collect();
        if members.is_empty() {
            continue;
        }
        let mut centroid = vec![0.0; embedder.dim()];
        for &i in &members {
            for (c, v) in centroid.iter_mut().zip(&vectors[i].values) {
                *c += v;
            }
        }
        let mut best = members[0];
        let mut best_sim = f64::NEG_INFINITY;
        for &i in &members {
            let s = cosine(&vectors[i].values, &centroid);
            if s > best_sim {
                best_sim = s;
                best = i;
            }
        }
        let c = &prompt.comments[best];
        categories.push(CategorySummary {
            name: name.clone(),
            attributes: vec![Attribute {
                statement: one_line(&c.text),
                citations: vec![Citation {
                    id: c.id.clone(),
                    extract: c.text.clone(),
                }],
            }],
        });
    }
    SummaryDraft {
        product_id: prompt.product_id.clone(),
        source: DraftSource::Offline,
        categories,
    }
}

/// Endpoint when configured and a transport is given, otherwise offline.
/// Endpoint failures fall back to offline only when the config says so.
pub fn generate(
    prompt: &PromptDocument,
    config: &SummaryConfig,
    transport: Option<&dyn Transport>,
    embedder: &Embedder,
) -> Result<SummaryDraft> {
    match (config.endpoint.as_deref(), transport) {
        (Some(url), Some(t)) => match generate_remote(prompt, config, url, t) {
            Ok(d) => Ok(d),
            Err(e) if config.offline_fallback => {
                log::warn!("summary endpoint failed ({e}); using the offline draft");
                Ok(generate_offline(prompt, embedder))
            }
            Err(e) => Err(e),
        },
        _ => Ok(generate_offline(prompt, embedder)),
    }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// Case-folded text with straight quotes and single spaces.
pub fn normalize(text: &str) -> String {
    let folded: String = text
        .chars()
        .map(|c| match c {
            '\u{2018}' | '\u{2019}' | '\u{201A}' | '\u{2032}' => '\'',
            '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{2033}' => '"',
            c => c,
        })
        .collect::<String>()
        .to_lowercase();
    folded.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CitationStatus {
    Supported,
    MissingId,
    ExtractNotFound,
    UnderSupported,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeCheck {
    pub category: String,
    pub statement: String,
    pub status: CitationStatus,
    /// One status per citation, in draft order.
    pub citations: Vec<CitationStatus>,
}

/// Counts per sentiment, indexed like [`Sentiment::ALL`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentBalance {
    pub corpus: [usize; 3],
    pub target: [usize; 3],
    pub snippets: [usize; 3],
    /// Largest gap between a sentiment's snippet count and its exact
    /// proportional share.
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub attributes: Vec<AttributeCheck>,
    pub balance: Option<SentimentBalance>,
}

impl ValidationReport {
    pub fn all_supported(&self) -> bool {
        self.attributes
            .iter()
            .all(|a| a.status == CitationStatus::Supported)
    }

    pub fn is_publishable(&self, config: &SummaryConfig) -> bool {
        self.all_supported()
            && self
                .balance
                .as_ref()
                .map_or(true, |b| b.deviation <= config.balance_tolerance + 1e-9)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AttributeCheck> + '_ {
        self.attributes
            .iter()
            .filter(|a| a.status != CitationStatus::Supported)
    }
}

fn check_citation(c: &Citation, by_id: &HashMap<&str, &Comment>) -> CitationStatus {
    let Some(comment) = by_id.get(c.id.as_str()) else {
        return CitationStatus::MissingId;
    };
    let needle = normalize(&c.extract);
    if needle.is_empty() {
        return CitationStatus::ExtractNotFound;
    }
    let found = std::iter::once(comment.text.as_str())
        .chain(comment.translated_text.as_deref())
        .any(|t| normalize(t).contains(&needle));
    if found {
        CitationStatus::Supported
    } else {
        CitationStatus::ExtractNotFound
    }
}

/// Checks every citation of the draft against `comments`. An attribute takes
/// the status of its first failing citation, or `UnderSupported` when it has
/// fewer supported citations than the configured floor.
pub fn validate(
    draft: &SummaryDraft,
    comments: &[Comment],
    config: &SummaryConfig,
) -> ValidationReport {
    let by_id: HashMap<&str, &Comment> = comments.iter().map(|c| (c.id.as_str(), c)).collect();
    let mut attributes = Vec::new();
    for cat in &draft.categories {
        for a in &cat.attributes {
            let citations: Vec<CitationStatus> = a
                .citations
                .iter()
                .map(|c| check_citation(c, &by_id))
                .collect();
            let supported = citations
                .iter()
                .filter(|s| **s == CitationStatus::Supported)
                .count();
            let status = citations
                .iter()
                .copied()
                .find(|s| *s != CitationStatus::Supported)
                .unwrap_or(if supported < config.min_citations_per_attribute {
                    CitationStatus::UnderSupported
                } else {
                    CitationStatus::Supported
                });
            attributes.push(AttributeCheck {
                category: cat.name.clone(),
                statement: a.statement.clone(),
                status,
                citations,
            });
        }
    }
    ValidationReport {
        attributes,
        balance: None,
    }
}

// ---------------------------------------------------------------------------
// Repair
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairOutcome {
    pub draft: SummaryDraft,
    /// Human-readable log of every change.
    pub changes: Vec<String>,
    /// `(category, statement)` of removed attributes.
    pub dropped: Vec<(String, String)>,
}

/// Drops failing citations, then attributes left without enough support,
/// then empty categories; merges attributes whose statements normalize to
/// the same text; expands extracts of the comments in `expand` to the full
/// comment text. `report` must come from validating `draft`.
pub fn repair(
    draft: &SummaryDraft,
    report: &ValidationReport,
    comments: &[Comment],
    expand: &BTreeSet<String>,
    config: &SummaryConfig,
) -> RepairOutcome {
    let by_id: HashMap<&str, &Comment> = comments.iter().map(|c| (c.id.as_str(), c)).collect();
    let mut changes = Vec::new();
    let mut dropped = Vec::new();
    let mut checks = report.attributes.iter();
    let mut categories = Vec::new();
    for cat in &draft.categories {
        let mut kept: Vec<Attribute> = Vec::new();
        for a in &cat.attributes {
            let check = checks.next().expect("report matches draft");
            let mut citations = Vec::new();
            for (c, s) in a.citations.iter().zip(&check.citations) {
                if *s != CitationStatus::Supported {
                    changes.push(format!("{}: removed {s:?} citation {}", cat.name, c.id));
                    continue;
                }
                let mut c = c.clone();
                if expand.contains(&c.id) {
                    let full = by_id[c.id.as_str()].analysis_text();
                    if c.extract != full {
                        changes.push(format!("{}: expanded extract of {}", cat.name, c.id));
                        c.extract = full.to_string();
                    }
                }
                if !citations.contains(&c) {
                    citations.push(c);
                }
            }
            if citations.len() < config.min_citations_per_attribute {
                changes.push(format!(
                    "{}: dropped attribute \"{}\"",
                    cat.name, a.statement
                ));
                dropped.push((cat.name.clone(), a.statement.clone()));
                continue;
            }
            let key = normalize(&a.statement);
            if let Some(same) = kept.iter_mut().find(|k| normalize(&k.statement) == key) {
                changes.push(format!(
                    "{}: merged duplicate attribute \"{}\"",
                    cat.name, a.statement
                ));
                for c in citations {
                    if !same.citations.contains(&c) {
                        same.citations.push(c);
                    }
                }
                continue;
            }
            kept.push(Attribute {
                statement: a.statement.clone(),
                citations,
            });
        }
        if kept.is_empty() {
            changes.push(format!(
                "{}: no attributes left, category removed",
                cat.name
            ));
        } else {
            categories.push(CategorySummary {
                name: cat.name.clone(),
                attributes: kept,
            });
        }
    }
    RepairOutcome {
        draft: SummaryDraft {
            product_id: draft.product_id.clone(),
            source: draft.source,
            categories,
        },
        changes,
        dropped,
    }
}

// ---------------------------------------------------------------------------
// Snippets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snippet {
    pub comment_id: String,
    pub extract: String,
    pub sentiment: Option<Sentiment>,
    /// Attributes citing this comment.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnippetSelection {
    pub snippets: Vec<Snippet>,
    pub balance: SentimentBalance,
}

/// Largest-remainder apportionment of `seats` by `weights`. Remainder ties
/// go to the larger weight, then the earlier index.
pub fn largest_remainder(weights: &[usize], seats: usize) -> Vec<usize> {
    let total: usize = weights.iter().sum();
    if total == 0 {
        return vec![0; weights.len()];
    }
    let mut out: Vec<usize> = weights.iter().map(|&w| w * seats / total).collect();
    let mut left = seats - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0).collect();
    // remainders compared exactly as w*seats mod total
    order.sort_by(|&a, &b| {
        let ra = weights[a] * seats % total;
        let rb = weights[b] * seats % total;
        rb.cmp(&ra)
            .then(weights[b].cmp(&weights[a]))
            .then(a.cmp(&b))
    });
    for i in order {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

fn sentiment_index(s: Sentiment) -> usize {
    Sentiment::ALL.iter().position(|x| *x == s).expect("listed")
}

fn supported_pool(
    draft: &SummaryDraft,
    report: &ValidationReport,
    comments: &[Comment],
) -> Vec<Snippet> {
    let by_id: HashMap<&str, &Comment> = comments.iter().map(|c| (c.id.as_str(), c)).collect();
    let mut pool: BTreeMap<&str, Snippet> = BTreeMap::new();
    let mut checks = report.attributes.iter();
    for cat in &draft.categories {
        for a in &cat.attributes {
            let check = checks.next().expect("report matches draft");
            let mut cited_here = BTreeSet::new();
            for (c, s) in a.citations.iter().zip(&check.citations) {
                if *s != CitationStatus::Supported {
                    continue;
                }
                let e = pool.entry(c.id.as_str()).or_insert_with(|| Snippet {
                    comment_id: c.id.clone(),
                    extract: c.extract.clone(),
                    sentiment: by_id[c.id.as_str()].sentiment,
                    support: 0,
                });
                if cited_here.insert(c.id.as_str()) {
                    e.support += 1;
                }
                if c.extract.chars().count() < e.extract.chars().count() {
                    e.extract = c.extract.clone();
                }
            }
        }
    }
    pool.into_values().collect()
}

/// Number of distinct comments with a supported citation.
pub fn supported_count(
    draft: &SummaryDraft,
    report: &ValidationReport,
    comments: &[Comment],
) -> usize {
    supported_pool(draft, report, comments).len()
}

/// Picks `count` snippets among supported citations so their sentiment mix
/// follows the comments' mix (largest remainder). Within a sentiment,
/// comments cited by more attributes come first, then shorter extracts.
/// Shortfalls in one sentiment are filled from the others in the same
/// priority order.
pub fn select_snippets(
    draft: &SummaryDraft,
    report: &ValidationReport,
    comments: &[Comment],
    count: usize,
) -> Result<SnippetSelection> {
    let mut pool = supported_pool(draft, report, comments);
    if count > pool.len() {
        return Err(SummarizeError::InsufficientSupported {
            requested: count,
            available: pool.len(),
        });
    }
    pool.sort_by(|a, b| {
        b.support
            .cmp(&a.support)
            .then(a.extract.chars().count().cmp(&b.extract.chars().count()))
            .then(a.comment_id.cmp(&b.comment_id))
    });
    let mut corpus = [0usize; 3];
    for s in comments.iter().filter_map(|c| c.sentiment) {
        corpus[sentiment_index(s)] += 1;
    }
    let t = largest_remainder(&corpus, count);
    let target = [t[0], t[1], t[2]];
    let mut taken = vec![false; pool.len()];
    let mut snippets = Vec::with_capacity(count);
    let mut have = [0usize; 3];
    for (i, s) in pool.iter().enumerate() {
        if let Some(sent) = s.sentiment {
            let k = sentiment_index(sent);
            if have[k] < target[k] {
                have[k] += 1;
                taken[i] = true;
                snippets.push(s.clone());
            }
        }
    }
    for (i, s) in pool.iter().enumerate() {
        if snippets.len() == count {
            break;
        }
        if !taken[i] {
            taken[i] = true;
            if let Some(sent) = s.sentiment {
                have[sentiment_index(sent)] += 1;
            }
            snippets.push(s.clone());
        }
    }
    let n: usize = corpus.iter().sum();
    let deviation = if n == 0 {
        0.0
    } else {
        (0..3)
            .map(|k| (have[k] as f64 - count as f64 * corpus[k] as f64 / n as f64).abs())
            .fold(0.0, f64::max)
    };
    Ok(SnippetSelection {
        snippets,
        balance: SentimentBalance {
            corpus,
            target,
            snippets: have,
            deviation,
        },
    })
}

/// The largest snippet count, up to `config.snippet_count`, whose selection
/// stays within the balance tolerance. `None` when there is nothing to
/// select.
pub fn fit_snippets(
    draft: &SummaryDraft,
    report: &ValidationReport,
    comments: &[Comment],
    config: &SummaryConfig,
) -> Option<SnippetSelection> {
    let max = config
        .snippet_count
        .min(supported_count(draft, report, comments));
    (1..=max)
        .rev()
        .filter_map(|n| select_snippets(draft, report, comments, n).ok())
        .find(|s| s.balance.deviation <= config.balance_tolerance + 1e-9)
}

// ---------------------------------------------------------------------------
// Per-product pipeline and rendering
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductSummary {
    pub product_id: String,
    pub eligibility: Eligibility,
    pub draft: SummaryDraft,
    pub report: ValidationReport,
    pub changes: Vec<String>,
    pub snippets: Vec<Snippet>,
}

impl ProductSummary {
    pub fn is_publishable(&self, config: &SummaryConfig) -> bool {
        !self.draft.categories.is_empty() && self.report.is_publishable(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum ProductOutcome {
    Skipped {
        product_id: String,
        total: usize,
        required: usize,
    },
    Summarized(Box<ProductSummary>),
}

/// Checks a draft against the comments, repairs it when needed and selects
/// snippets. The returned report belongs to the final draft.
pub fn finalize(
    draft: SummaryDraft,
    comments: &[Comment],
    eligibility: Eligibility,
    config: &SummaryConfig,
) -> ProductSummary {
    let first = validate(&draft, comments, config);
    let (draft, changes) = if first.all_supported() {
        (draft, Vec::new())
    } else {
        let out = repair(&draft, &first, comments, &BTreeSet::new(), config);
        (out.draft, out.changes)
    };
    let mut report = validate(&draft, comments, config);
    let snippets = match fit_snippets(&draft, &report, comments, config) {
        Some(sel) => {
            report.balance = Some(sel.balance);
            sel.snippets
        }
        None => Vec::new(),
    };
    ProductSummary {
        product_id: draft.product_id.clone(),
        eligibility,
        draft,
        report,
        changes,
        snippets,
    }
}

/// Eligibility, prompt, draft, validation, repair and snippets for one
/// product's comments.
pub fn summarize_product(
    product_id: &str,
    comments: &[Comment],
    config: &SummaryConfig,
    transport: Option<&dyn Transport>,
    embedder: &Embedder,
) -> Result<ProductOutcome> {
    config.validate()?;
    let el = eligible(comments, config);
    if !el.eligible {
        return Ok(ProductOutcome::Skipped {
            product_id: product_id.to_string(),
            total: el.total,
            required: config.min_total_comments,
        });
    }
    let prompt = build_prompt(comments, &el)?;
    let draft = generate(&prompt, config, transport, embedder)?;
    Ok(ProductOutcome::Summarized(Box::new(finalize(
        draft, comments, el, config,
    ))))
}

/// Category-prefaced paragraph, e.g. `**Usability:** ... **Help:** ...`,
/// followed by the snippets as quotes.
pub fn render_markdown(summary: &ProductSummary, config: &SummaryConfig) -> String {
    let mut s = String::new();
    let total = summary.eligibility.total;
    if total <= config.low_volume_banner_max {
        let _ = writeln!(
            s,
            "> Low volume ({total} comments): check representativeness before drawing conclusions.\n"
        );
    }
    let paragraph: Vec<String> = summary
        .draft
        .categories
        .iter()
        .map(|c| {
            let body: Vec<&str> = c.attributes.iter().map(|a| a.statement.trim()).collect();
            format!("**{}:** {}", c.name, body.join(" "))
        })
        .collect();
    s.push_str(&paragraph.join(" "));
    s.push('\n');
    if !summary.snippets.is_empty() {
        s.push_str("\nSelected comments:\n\n");
        for sn in &summary.snippets {
            let tag = sn.sentiment.map_or("unrated", Sentiment::as_str);
            let _ = writeln!(
                s,
                "- \"{}\" ({tag}, {})",
                one_line(&sn.extract),
                sn.comment_id
            );
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LabelSource;
    use crate::textprep::{EmbeddingConfig, PreprocessConfig};
    use chrono::{TimeZone, Utc};
    use std::cell::Cell;

    fn comment(id: &str, text: &str, labels: &[&str], sentiment: Option<Sentiment>) -> Comment {
        Comment {
            id: id.to_string(),
            product_id: "P".to_string(),
            timestamp: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
            text: text.to_string(),
            language: "en".to_string(),
            translated_text: None,
            sentiment,
            labels: labels.iter().map(|s| s.to_string()).collect(),
            label_source: LabelSource::Human,
        }
    }

    fn with_counts(counts: &[(&str, usize)]) -> Vec<Comment> {
        let mut out = Vec::new();
        for (name, n) in counts {
            for i in 0..*n {
                out.push(comment(&format!("{name}{i}"), "text", &[name], None));
            }
        }
        out
    }

    fn embedder() -> Embedder {
        let model = EmbeddingConfig {
            dim: 16,
            ..Default::default()
        }
        .build()
        .unwrap();
        Embedder::new(model, PreprocessConfig::default())
    }

    #[test]
    fn nineteen_comments_not_eligible() {
        let cfg = SummaryConfig::default();
        let c = with_counts(&[("Usability", 19)]);
        let e = eligible(&c, &cfg);
        assert!(!e.eligible);
        assert!(matches!(
            build_prompt(&c, &e),
            Err(SummarizeError::NotEligible { .. })
        ));
        assert!(eligible(&with_counts(&[("Usability", 20)]), &cfg).eligible);
    }

    #[test]
    fn category_below_floor_excluded() {
        let cfg = SummaryConfig::default();
        let e = eligible(&with_counts(&[("Usability", 30), ("Help", 3)]), &cfg);
        assert_eq!(e.category_floor, 4);
        assert_eq!(e.categories.len(), 1);
    }

    #[test]
    fn rank_and_truncate() {
        let cfg = SummaryConfig::default();
        let c = with_counts(&[
            ("Usability", 30),
            ("Functionality", 25),
            ("Error", 10),
            ("Help", 8),
            ("Perf", 5),
        ]);
        let names: Vec<String> = eligible(&c, &cfg)
            .categories
            .into_iter()
            .map(|c| c.name)
            .collect();
        assert_eq!(names, ["Usability", "Functionality", "Error", "Help"]);
    }

    #[test]
    fn floor_scales_with_volume_and_manual_override_appends() {
        let mut cfg = SummaryConfig::default();
        assert_eq!(cfg.category_floor(200), 4);
        assert_eq!(cfg.category_floor(201), 5);
        assert_eq!(cfg.category_floor(1000), 20);
        cfg.include_categories.insert("Licensing".into());
        let e = eligible(&with_counts(&[("Usability", 30), ("Licensing", 2)]), &cfg);
        assert_eq!(
            e.categories.last().unwrap(),
            &CategoryCount {
                name: "Licensing".into(),
                count: 2,
                manual: true
            }
        );
    }

    #[test]
    fn prompt_instructions_shared_and_labels_listed() {
        let cfg = SummaryConfig::default();
        let mut a = with_counts(&[("Usability", 25)]);
        a[0].labels.insert("Help".into());
        let mut b = with_counts(&[("Error", 40)]);
        for c in &mut b {
            c.product_id = "Q".into();
        }
        let pa = build_prompt(&a, &eligible(&a, &cfg)).unwrap();
        let pb = build_prompt(&b, &eligible(&b, &cfg)).unwrap();
        assert_eq!(pa.instructions, pb.instructions);
        assert!(pa.render().starts_with(INSTRUCTIONS) && pb.render().starts_with(INSTRUCTIONS));
        assert_eq!(
            pa.render(),
            build_prompt(&a, &eligible(&a, &cfg)).unwrap().render()
        );
        assert!(pa.render().contains("[Usability0] (Help; Usability) text"));
    }

    #[test]
    fn normalized_substring_rule() {
        let cs = vec![comment(
            "c1",
            "Very  EASY to use\noverall, it\u{2019}s fine",
            &[],
            None,
        )];
        let draft = SummaryDraft {
            product_id: "P".into(),
            source: DraftSource::Endpoint,
            categories: vec![CategorySummary {
                name: "Usability".into(),
                attributes: vec![
                    Attribute {
                        statement: "a".into(),
                        citations: vec![Citation {
                            id: "c1".into(),
                            extract: "easy to use overall, it's".into(),
                        }],
                    },
                    Attribute {
                        statement: "b".into(),
                        citations: vec![Citation {
                            id: "c999".into(),
                            extract: "easy".into(),
                        }],
                    },
                    Attribute {
                        statement: "c".into(),
                        citations: vec![Citation {
                            id: "c1".into(),
                            extract: "hard to use".into(),
                        }],
                    },
                ],
            }],
        };
        let r = validate(&draft, &cs, &SummaryConfig::default());
        let st: Vec<CitationStatus> = r.attributes.iter().map(|a| a.status).collect();
        assert_eq!(
            st,
            [
                CitationStatus::Supported,
                CitationStatus::MissingId,
                CitationStatus::ExtractNotFound
            ]
        );
        let mut cfg = SummaryConfig::default();
        cfg.min_citations_per_attribute = 2;
        assert_eq!(
            validate(&draft, &cs, &cfg).attributes[0].status,
            CitationStatus::UnderSupported
        );
    }

    fn two_citation_draft() -> (SummaryDraft, Vec<Comment>) {
        let cs = vec![
            comment("a", "slow start", &["Perf"], None),
            comment("b", "very slow start", &["Perf"], None),
        ];
        let d = SummaryDraft {
            product_id: "P".into(),
            source: DraftSource::Endpoint,
            categories: vec![CategorySummary {
                name: "Perf".into(),
                attributes: vec![
                    Attribute {
                        statement: "Slow.".into(),
                        citations: vec![
                            Citation {
                                id: "a".into(),
                                extract: "slow".into(),
                            },
                            Citation {
                                id: "zz".into(),
                                extract: "slow".into(),
                            },
                        ],
                    },
                    Attribute {
                        statement: "Fast.".into(),
                        citations: vec![Citation {
                            id: "zz".into(),
                            extract: "fast".into(),
                        }],
                    },
                ],
            }],
        };
        (d, cs)
    }

    #[test]
    fn repair_rules() {
        let cfg = SummaryConfig::default();
        let (d, cs) = two_citation_draft();
        let r = validate(&d, &cs, &cfg);
        let out = repair(&d, &r, &cs, &BTreeSet::new(), &cfg);
        assert_eq!(out.draft.categories[0].attributes.len(), 1);
        assert_eq!(out.draft.categories[0].attributes[0].citations.len(), 1);
        assert_eq!(out.dropped, vec![("Perf".to_string(), "Fast.".to_string())]);
        let again = validate(&out.draft, &cs, &cfg);
        assert!(again.all_supported());
        // idempotent, and a clean report leaves the draft alone
        let twice = repair(&out.draft, &again, &cs, &BTreeSet::new(), &cfg);
        assert_eq!(twice.draft, out.draft);
        assert!(twice.changes.is_empty());
        // operator-flagged truncation is expanded
        let exp: BTreeSet<String> = ["a".to_string()].into();
        let e = repair(&out.draft, &again, &cs, &exp, &cfg);
        assert_eq!(
            e.draft.categories[0].attributes[0].citations[0].extract,
            "slow start"
        );
    }

    #[test]
    fn apportionment() {
        assert_eq!(largest_remainder(&[75, 0, 25], 4), vec![3, 0, 1]);
        assert_eq!(largest_remainder(&[0, 0, 10], 5), vec![0, 0, 5]);
        assert_eq!(largest_remainder(&[1, 1, 1], 2), vec![1, 1, 0]);
        assert_eq!(largest_remainder(&[60, 20, 20], 4), vec![2, 1, 1]);
        assert_eq!(largest_remainder(&[0, 0, 0], 3), vec![0, 0, 0]);
    }

    fn snippet_case() -> (SummaryDraft, Vec<Comment>) {
        use Sentiment::*;
        let mut cs = Vec::new();
        let mut cits = Vec::new();
        for i in 0..6 {
            cs.push(comment(
                &format!("n{i}"),
                &format!("bad thing number {i} here"),
                &["U"],
                Some(Negative),
            ));
            cits.push(Citation {
                id: format!("n{i}"),
                extract: format!("bad thing number {i}"),
            });
        }
        for i in 0..2 {
            cs.push(comment(
                &format!("p{i}"),
                &format!("good {i}"),
                &["U"],
                Some(Positive),
            ));
            cits.push(Citation {
                id: format!("p{i}"),
                extract: format!("good {i}"),
            });
        }
        let d = SummaryDraft {
            product_id: "P".into(),
            source: DraftSource::Endpoint,
            categories: vec![CategorySummary {
                name: "U".into(),
                attributes: vec![Attribute {
                    statement: "s".into(),
                    citations: cits,
                }],
            }],
        };
        (d, cs)
    }

    #[test]
    fn snippets_follow_sentiment_mix() {
        let (d, cs) = snippet_case();
        let r = validate(&d, &cs, &SummaryConfig::default());
        let sel = select_snippets(&d, &r, &cs, 4).unwrap();
        assert_eq!(sel.balance.snippets, [3, 0, 1]);
        assert!(sel.balance.deviation <= 1.0);
        assert!(matches!(
            select_snippets(&d, &r, &cs, 9),
            Err(SummarizeError::InsufficientSupported {
                requested: 9,
                available: 8
            })
        ));
    }

    #[test]
    fn remote_retries_then_times_out() {
        struct Slow(Cell<u32>);
        impl Transport for Slow {
            fn post_json(
                &self,
                _: &str,
                _: &str,
                _: Duration,
            ) -> std::result::Result<String, TransportError> {
                self.0.set(self.0.get() + 1);
                Err(TransportError::Timeout)
            }
        }
        let cfg = SummaryConfig {
            retries: 2,
            ..Default::default()
        };
        let c = with_counts(&[("Usability", 25)]);
        let p = build_prompt(&c, &eligible(&c, &cfg)).unwrap();
        let t = Slow(Cell::new(0));
        assert_eq!(
            generate_remote(&p, &cfg, "http://x", &t),
            Err(SummarizeError::EndpointTimeout { attempts: 3 })
        );
        assert_eq!(t.0.get(), 3);
    }

    #[test]
    fn malformed_and_unrequested_responses_rejected() {
        let cfg = SummaryConfig::default();
        let c = with_counts(&[("Usability", 25)]);
        let p = build_prompt(&c, &eligible(&c, &cfg)).unwrap();
        assert!(matches!(
            parse_response("{not json", &p),
            Err(SummarizeError::ResponseSchema(_))
        ));
        let other = r#"{"categories":[{"name":"Help","attributes":[]}]}"#;
        assert!(matches!(
            parse_response(other, &p),
            Err(SummarizeError::ResponseSchema(_))
        ));
        let uncited = r#"{"categories":[{"name":"Usability","attributes":[{"statement":"x","citations":[]}]}]}"#;
        assert!(matches!(
            parse_response(uncited, &p),
            Err(SummarizeError::ResponseSchema(_))
        ));
        let ok = r#"{"categories":[{"name":"Usability","attributes":[{"statement":"x","citations":[{"id":"Usability0","extract":"text"}]}]}]}"#;
        assert_eq!(parse_response(ok, &p).unwrap().categories.len(), 1);
    }

    #[test]
    fn offline_draft_self_cites_one_attribute_per_category() {
        let cfg = SummaryConfig::default();
        let mut cs = Vec::new();
        for i in 0..15 {
            cs.push(comment(
                &format!("u{i:02}"),
                &format!("the menu layout is confusing {i}"),
                &["Usability"],
                Some(Sentiment::Negative),
            ));
        }
        for i in 0..10 {
            cs.push(comment(
                &format!("e{i:02}"),
                &format!("it crashes on save {i}"),
                &["Error"],
                Some(Sentiment::Negative),
            ));
        }
        let el = eligible(&cs, &cfg);
        let p = build_prompt(&cs, &el).unwrap();
        let d = generate_offline(&p, &embedder());
        assert_eq!(d.categories.len(), 2);
        for cat in &d.categories {
            assert_eq!(cat.attributes.len(), 1);
            let cit = &cat.attributes[0].citations;
            assert_eq!(cit.len(), 1);
            assert!(cs
                .iter()
                .any(|c| c.id == cit[0].id && c.labels.contains(&cat.name)));
        }
        assert_eq!(d, generate_offline(&p, &embedder()));
        let s = finalize(d, &cs, el, &cfg);
        assert!(s.is_publishable(&cfg));
        let md = render_markdown(&s, &cfg);
        assert!(
            md.contains("**Usability:** ") && md.contains("**Error:** "),
            "{md}"
        );
        assert!(md.starts_with("> Low volume (25 comments)"));
    }
}
