//! Comments, survey responses and the topic taxonomy.
//!
//! A [`Corpus`] is an immutable snapshot: every mutating operation returns a
//! new value. Persistence is plain JSONL (one record per line), with a CSV
//! reader for comment exports coming from spreadsheets.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Duration, NaiveDate, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: field `{field}`: {message}")]
    Schema {
        line: usize,
        field: String,
        message: String,
    },
    #[error("duplicate comment id `{0}`")]
    DuplicateId(String),
    #[error("unknown comment `{0}`")]
    UnknownComment(String),
    #[error("label `{0}` is not in the taxonomy")]
    UnknownLabel(String),
    #[error("corpus has no comments")]
    EmptyCorpus,
    #[error("invalid taxonomy: {0}")]
    InvalidTaxonomy(String),
    #[error("invalid period `{0}`")]
    InvalidPeriod(String),
}

impl CorpusError {
    fn schema(line: usize, field: &str, message: impl Into<String>) -> Self {
        CorpusError::Schema {
            line,
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Negative,
    Mixed,
    Positive,
}

impl Sentiment {
    pub const ALL: [Sentiment; 3] = [Sentiment::Negative, Sentiment::Mixed, Sentiment::Positive];

    pub fn as_str(self) -> &'static str {
        match self {
            Sentiment::Positive => "Positive",
            Sentiment::Mixed => "Mixed",
            Sentiment::Negative => "Negative",
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sentiment {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "positive" => Ok(Sentiment::Positive),
            "mixed" => Ok(Sentiment::Mixed),
            "negative" => Ok(Sentiment::Negative),
            other => Err(format!("unknown sentiment `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Human,
    Model,
    Unlabeled,
}

impl FromStr for LabelSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "human" => Ok(LabelSource::Human),
            "model" => Ok(LabelSource::Model),
            "unlabeled" => Ok(LabelSource::Unlabeled),
            other => Err(format!("unknown label_source `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comment {
    pub id: String,
    pub product_id: String,
    pub timestamp: DateTime<Utc>,
    pub text: String,
    pub language: String,
    pub translated_text: Option<String>,
    pub sentiment: Option<Sentiment>,
    pub labels: BTreeSet<String>,
    pub label_source: LabelSource,
}

impl Comment {
    /// Text used for classification and summaries: the translation when one
    /// exists, the original otherwise.
    pub fn analysis_text(&self) -> &str {
        self.translated_text.as_deref().unwrap_or(&self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyLabel {
    pub name: String,
    pub definition: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicTaxonomy {
    labels: Vec<TaxonomyLabel>,
    version: u32,
}

const DEFAULT_LABELS: [(&str, &str); 10] = [
    (
        "Usability",
        "Ease of use, navigation, learnability and interaction flow of the product.",
    ),
    (
        "Functionality",
        "Features, capabilities and missing or requested functions.",
    ),
    (
        "Error",
        "Bugs, failures, crashes, error messages and unexpected behavior.",
    ),
    ("Other", "Topics not covered by any other label."),
    (
        "Performance",
        "Speed, latency, loading times and responsiveness.",
    ),
    (
        "General Feedback",
        "Overall praise or criticism without a specific topic.",
    ),
    (
        "Help",
        "Documentation, tutorials, guidance and support material.",
    ),
    (
        "Visual Design",
        "Layout, look and feel, colors, fonts and visual presentation.",
    ),
    (
        "Integration",
        "Connectivity and interplay with other systems, services and APIs.",
    ),
    (
        "Licensing",
        "Pricing, licenses, subscriptions, entitlements and cost.",
    ),
];

impl Default for TopicTaxonomy {
    fn default() -> Self {
        let labels = DEFAULT_LABELS
            .iter()
            .map(|(name, definition)| TaxonomyLabel {
                name: name.to_string(),
                definition: definition.to_string(),
            })
            .collect();
        TopicTaxonomy { labels, version: 1 }
    }
}

impl TopicTaxonomy {
    pub fn new(labels: Vec<TaxonomyLabel>, version: u32) -> Result<Self> {
        let taxonomy = TopicTaxonomy { labels, version };
        taxonomy.validate()?;
        Ok(taxonomy)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for label in &self.labels {
            if label.name.trim().is_empty() {
                return Err(CorpusError::InvalidTaxonomy("empty label name".into()));
            }
            if !seen.insert(label.name.as_str()) {
                return Err(CorpusError::InvalidTaxonomy(format!(
                    "duplicate label `{}`",
                    label.name
                )));
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> &[TaxonomyLabel] {
        &self.labels
    }

    pub fn names(&self) -> impl Iterator<Item = &str> + '_ {
        self.labels.iter().map(|l| l.name.as_str())
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index_of(name).is_some()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l.name == name)
    }

    pub fn add_label(&self, name: &str, definition: &str) -> Result<Self> {
        let mut labels = self.labels.clone();
        labels.push(TaxonomyLabel {
            name: name.to_string(),
            definition: definition.to_string(),
        });
        TopicTaxonomy::new(labels, self.version + 1)
    }

    pub fn remove_label(&self, name: &str) -> Result<Self> {
        if !self.contains(name) {
            return Err(CorpusError::UnknownLabel(name.to_string()));
        }
        let labels = self
            .labels
            .iter()
            .filter(|l| l.name != name)
            .cloned()
            .collect();
        TopicTaxonomy::new(labels, self.version + 1)
    }

    pub fn set_definition(&self, name: &str, definition: &str) -> Result<Self> {
        let idx = self
            .index_of(name)
            .ok_or_else(|| CorpusError::UnknownLabel(name.to_string()))?;
        let mut labels = self.labels.clone();
        labels[idx].definition = definition.to_string();
        TopicTaxonomy::new(labels, self.version + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SurveyKind {
    #[serde(rename = "tutorial")]
    Tutorial,
    #[serde(rename = "app")]
    AppUsability,
}

impl SurveyKind {
    /// Inclusive rating range of every item in this survey.
    pub fn rating_range(self) -> (i64, i64) {
        match self {
            SurveyKind::Tutorial => (0, 10),
            SurveyKind::AppUsability => (1, 5),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SurveyKind::Tutorial => "tutorial",
            SurveyKind::AppUsability => "app",
        }
    }
}

impl FromStr for SurveyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "tutorial" => Ok(SurveyKind::Tutorial),
            "app" => Ok(SurveyKind::AppUsability),
            other => Err(format!("unknown survey_kind `{other}`")),
        }
    }
}

/// Question keys used by the two bundled survey kinds.
pub mod questions {
    /// Tutorial quality items, each rated 0-10.
    pub const TUTORIAL_ITEMS: [&str; 5] = [
        "realistic",
        "relevant",
        "duration",
        "structure",
        "motivation",
    ];
    pub const NPS: &str = "nps";
    pub const PSAT: &str = "psat";
    pub const DOES_WHAT: &str = "does_what";
    pub const EASE: &str = "ease";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyResponse {
    pub respondent_id: String,
    pub product_id: String,
    pub timestamp: DateTime<Utc>,
    pub survey_kind: SurveyKind,
    pub answers: std::collections::BTreeMap<String, i64>,
    pub comment_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    Csv,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(Format::Jsonl),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format `{other}`")),
        }
    }
}

impl Format {
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Jsonl,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    comments: Vec<Comment>,
    responses: Vec<SurveyResponse>,
    taxonomy: TopicTaxonomy,
    index: HashMap<String, usize>,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.comments == other.comments
            && self.responses == other.responses
            && self.taxonomy == other.taxonomy
    }
}

impl Corpus {
    /// Builds a corpus, checking id uniqueness, label membership, rating
    /// ranges and response-to-comment references.
    pub fn new(
        taxonomy: TopicTaxonomy,
        comments: Vec<Comment>,
        responses: Vec<SurveyResponse>,
    ) -> Result<Self> {
        taxonomy.validate()?;
        let mut index = HashMap::with_capacity(comments.len());
        for (i, c) in comments.iter().enumerate() {
            if c.id.is_empty() {
                return Err(CorpusError::schema(i + 1, "id", "empty id"));
            }
            if index.insert(c.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(c.id.clone()));
            }
            if let Some(bad) = c.labels.iter().find(|l| !taxonomy.contains(l)) {
                return Err(CorpusError::UnknownLabel(bad.clone()));
            }
            if c.label_source == LabelSource::Unlabeled && !c.labels.is_empty() {
                return Err(CorpusError::schema(
                    i + 1,
                    "label_source",
                    "unlabeled comment carries labels",
                ));
            }
        }
        for (i, r) in responses.iter().enumerate() {
            check_answers(r, i + 1)?;
            if let Some(cid) = &r.comment_id {
                if !index.contains_key(cid) {
                    return Err(CorpusError::UnknownComment(cid.clone()));
                }
            }
        }
        Ok(Corpus {
            comments,
            responses,
            taxonomy,
            index,
        })
    }

    pub fn from_comments(taxonomy: TopicTaxonomy, comments: Vec<Comment>) -> Result<Self> {
        Corpus::new(taxonomy, comments, Vec::new())
    }

    pub fn with_responses(&self, responses: Vec<SurveyResponse>) -> Result<Self> {
        Corpus::new(self.taxonomy.clone(), self.comments.clone(), responses)
    }

    pub fn with_taxonomy(&self, taxonomy: TopicTaxonomy) -> Result<Self> {
        Corpus::new(taxonomy, self.comments.clone(), self.responses.clone())
    }

    pub fn comments(&self) -> &[Comment] {
        &self.comments
    }

    pub fn responses(&self) -> &[SurveyResponse] {
        &self.responses
    }

    pub fn taxonomy(&self) -> &TopicTaxonomy {
        &self.taxonomy
    }

    pub fn len(&self) -> usize {
        self.comments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comments.is_empty()
    }

    pub fn comment(&self, id: &str) -> Option<&Comment> {
        self.index.get(id).map(|&i| &self.comments[i])
    }

    /// Human-labeled comments: the training pool for the classifier.
    pub fn human_labeled(&self) -> impl Iterator<Item = &Comment> + '_ {
        self.comments
            .iter()
            .filter(|c| c.label_source == LabelSource::Human)
    }

    /// Replaces the labels of the given comments (model predictions).
    pub fn with_model_labels(&self, labels: &HashMap<String, BTreeSet<String>>) -> Result<Self> {
        let mut comments = self.comments.clone();
        for c in comments.iter_mut() {
            if let Some(new) = labels.get(&c.id) {
                c.labels = new.clone();
                c.label_source = LabelSource::Model;
            }
        }
        Corpus::new(self.taxonomy.clone(), comments, self.responses.clone())
    }

    pub fn product_ids(&self) -> BTreeSet<&str> {
        self.comments
            .iter()
            .map(|c| c.product_id.as_str())
            .collect()
    }
}

fn check_answers(r: &SurveyResponse, line: usize) -> Result<()> {
    let (lo, hi) = r.survey_kind.rating_range();
    for (key, &v) in &r.answers {
        if v < lo || v > hi {
            return Err(CorpusError::schema(
                line,
                &format!("answers.{key}"),
                format!("rating {v} outside [{lo}, {hi}]"),
            ));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

/// Reads a comment file using the default taxonomy.
pub fn ingest(path: &Path, format: Format) -> Result<Corpus> {
    ingest_with_taxonomy(path, format, TopicTaxonomy::default())
}

pub fn ingest_with_taxonomy(
    path: &Path,
    format: Format,
    taxonomy: TopicTaxonomy,
) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let comments = match format {
        Format::Jsonl => read_comments_jsonl(BufReader::new(file), &taxonomy)?,
        Format::Csv => read_comments_csv(file, &taxonomy)?,
    };
    Corpus::from_comments(taxonomy, comments)
}

/// Reads a response file and attaches it to `corpus`.
pub fn ingest_responses(corpus: &Corpus, path: &Path) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let responses = read_responses_jsonl(BufReader::new(file))?;
    corpus.with_responses(responses)
}

pub fn read_comments_jsonl<R: BufRead>(
    reader: R,
    taxonomy: &TopicTaxonomy,
) -> Result<Vec<Comment>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::Io {
            path: format!("line {line_no}"),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let obj = match serde_json::from_str::<Value>(&line) {
            Ok(Value::Object(m)) => m,
            Ok(_) => {
                return Err(CorpusError::schema(
                    line_no,
                    "<record>",
                    "expected a JSON object",
                ))
            }
            Err(e) => return Err(CorpusError::schema(line_no, "<record>", e.to_string())),
        };
        let c = comment_from_map(&obj, line_no, taxonomy)?;
        if !seen.insert(c.id.clone()) {
            return Err(CorpusError::DuplicateId(c.id));
        }
        out.push(c);
    }
    Ok(out)
}

pub fn read_comments_csv<R: Read>(reader: R, taxonomy: &TopicTaxonomy) -> Result<Vec<Comment>> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(false)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CorpusError::schema(1, "<header>", e.to_string()))?
        .clone();
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            CorpusError::schema(line, "<record>", e.to_string())
        })?;
        let line_no = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let mut obj = Map::new();
        for (h, v) in headers.iter().zip(record.iter()) {
            let value = if v.is_empty() {
                Value::Null
            } else if h == "labels" {
                Value::Array(
                    v.split('|')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| Value::String(s.to_string()))
                        .collect(),
                )
            } else {
                Value::String(v.to_string())
            };
            obj.insert(h.to_string(), value);
        }
        let c = comment_from_map(&obj, line_no, taxonomy)?;
        if !seen.insert(c.id.clone()) {
            return Err(CorpusError::DuplicateId(c.id));
        }
        out.push(c);
    }
    Ok(out)
}

fn required_str<'a>(obj: &'a Map<String, Value>, key: &str, line: usize) -> Result<&'a str> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s),
        Some(Value::Null) | None => Err(CorpusError::schema(line, key, "missing")),
        Some(_) => Err(CorpusError::schema(line, key, "expected a string")),
    }
}

fn optional_str<'a>(
    obj: &'a Map<String, Value>,
    key: &str,
    line: usize,
) -> Result<Option<&'a str>> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(Some(s)),
        Some(Value::Null) | None => Ok(None),
        Some(_) => Err(CorpusError::schema(line, key, "expected a string or null")),
    }
}

fn parse_timestamp(obj: &Map<String, Value>, line: usize) -> Result<DateTime<Utc>> {
    let raw = required_str(obj, "timestamp", line)?;
    DateTime::parse_from_rfc3339(raw)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| CorpusError::schema(line, "timestamp", e.to_string()))
}

fn comment_from_map(
    obj: &Map<String, Value>,
    line: usize,
    taxonomy: &TopicTaxonomy,
) -> Result<Comment> {
    let id = required_str(obj, "id", line)?;
    if id.is_empty() {
        return Err(CorpusError::schema(line, "id", "empty id"));
    }
    let product_id = required_str(obj, "product_id", line)?;
    let timestamp = parse_timestamp(obj, line)?;
    let text = required_str(obj, "text", line)?;
    let language = optional_str(obj, "language", line)?.unwrap_or("unknown");
    let translated_text = optional_str(obj, "translated_text", line)?.map(str::to_string);
    let sentiment = optional_str(obj, "sentiment", line)?
        .map(|s| s.parse::<Sentiment>())
        .transpose()
        .map_err(|e| CorpusError::schema(line, "sentiment", e))?;
    let labels: BTreeSet<String> = match obj.get("labels") {
        None | Some(Value::Null) => BTreeSet::new(),
        Some(Value::Array(items)) => {
            let mut set = BTreeSet::new();
            for item in items {
                let name = item.as_str().ok_or_else(|| {
                    CorpusError::schema(line, "labels", "expected an array of strings")
                })?;
                if !taxonomy.contains(name) {
                    return Err(CorpusError::schema(
                        line,
                        "labels",
                        format!("unknown label `{name}`"),
                    ));
                }
                set.insert(name.to_string());
            }
            set
        }
        Some(_) => return Err(CorpusError::schema(line, "labels", "expected an array")),
    };
    let label_source = match optional_str(obj, "label_source", line)? {
        Some(s) => s
            .parse::<LabelSource>()
            .map_err(|e| CorpusError::schema(line, "label_source", e))?,
        None if labels.is_empty() => LabelSource::Unlabeled,
        None => {
            return Err(CorpusError::schema(
                line,
                "label_source",
                "missing for a labeled comment",
            ))
        }
    };
    if label_source == LabelSource::Unlabeled && !labels.is_empty() {
        return Err(CorpusError::schema(
            line,
            "label_source",
            "unlabeled comment carries labels",
        ));
    }
    Ok(Comment {
        id: id.to_string(),
        product_id: product_id.to_string(),
        timestamp,
        text: text.to_string(),
        language: language.to_string(),
        translated_text,
        sentiment,
        labels,
        label_source,
    })
}

pub fn read_responses_jsonl<R: BufRead>(reader: R) -> Result<Vec<SurveyResponse>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::Io {
            path: format!("line {line_no}"),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let obj = match serde_json::from_str::<Value>(&line) {
            Ok(Value::Object(m)) => m,
            Ok(_) => {
                return Err(CorpusError::schema(
                    line_no,
                    "<record>",
                    "expected a JSON object",
                ))
            }
            Err(e) => return Err(CorpusError::schema(line_no, "<record>", e.to_string())),
        };
        let respondent_id = required_str(&obj, "respondent_id", line_no)?.to_string();
        let product_id = required_str(&obj, "product_id", line_no)?.to_string();
        let timestamp = parse_timestamp(&obj, line_no)?;
        let survey_kind = required_str(&obj, "survey_kind", line_no)?
            .parse::<SurveyKind>()
            .map_err(|e| CorpusError::schema(line_no, "survey_kind", e))?;
        let mut answers = std::collections::BTreeMap::new();
        match obj.get("answers") {
            Some(Value::Object(m)) => {
                for (k, v) in m {
                    let rating = v.as_i64().ok_or_else(|| {
                        CorpusError::schema(line_no, &format!("answers.{k}"), "expected an integer")
                    })?;
                    answers.insert(k.clone(), rating);
                }
            }
            None | Some(Value::Null) => {
                return Err(CorpusError::schema(line_no, "answers", "missing"))
            }
            Some(_) => {
                return Err(CorpusError::schema(
                    line_no,
                    "answers",
                    "expected an object",
                ))
            }
        }
        let comment_id = optional_str(&obj, "comment_id", line_no)?.map(str::to_string);
        let response = SurveyResponse {
            respondent_id,
            product_id,
            timestamp,
            survey_kind,
            answers,
            comment_id,
        };
        check_answers(&response, line_no)?;
        out.push(response);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

pub fn write_comments_jsonl<W: Write>(mut w: W, comments: &[Comment]) -> std::io::Result<()> {
    for c in comments {
        serde_json::to_writer(&mut w, c)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_responses_jsonl<W: Write>(
    mut w: W,
    responses: &[SurveyResponse],
) -> std::io::Result<()> {
    for r in responses {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes the corpus comments (and responses, when `responses_path` is
/// given) as JSONL.
pub fn export(corpus: &Corpus, comments_path: &Path, responses_path: Option<&Path>) -> Result<()> {
    let f = File::create(comments_path).map_err(|e| CorpusError::io(comments_path, e))?;
    let mut w = BufWriter::new(f);
    write_comments_jsonl(&mut w, &corpus.comments)
        .and_then(|_| w.flush())
        .map_err(|e| CorpusError::io(comments_path, e))?;
    if let Some(rp) = responses_path {
        let f = File::create(rp).map_err(|e| CorpusError::io(rp, e))?;
        let mut w = BufWriter::new(f);
        write_responses_jsonl(&mut w, &corpus.responses)
            .and_then(|_| w.flush())
            .map_err(|e| CorpusError::io(rp, e))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Human-in-the-loop corrections
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correction {
    pub comment_id: String,
    pub labels: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub comment_id: String,
    pub old_labels: BTreeSet<String>,
    pub new_labels: BTreeSet<String>,
    pub old_source: LabelSource,
    pub at: DateTime<Utc>,
    /// Coder who issued the correction, when known. Both coders' records are
    /// kept; how disagreements are settled is up to the caller.
    pub coder: Option<String>,
}

/// Applies human label corrections. The returned corpus is the new training
/// pool; the audit records should be persisted with [`append_audit`].
pub fn merge_corrections(
    corpus: &Corpus,
    corrections: &[Correction],
    at: DateTime<Utc>,
    coder: Option<&str>,
) -> Result<(Corpus, Vec<AuditRecord>)> {
    for c in corrections {
        if !corpus.index.contains_key(&c.comment_id) {
            return Err(CorpusError::UnknownComment(c.comment_id.clone()));
        }
        if let Some(bad) = c.labels.iter().find(|l| !corpus.taxonomy.contains(l)) {
            return Err(CorpusError::UnknownLabel(bad.clone()));
        }
    }
    let mut comments = corpus.comments.clone();
    let mut audit = Vec::with_capacity(corrections.len());
    for c in corrections {
        let comment = &mut comments[corpus.index[&c.comment_id]];
        audit.push(AuditRecord {
            comment_id: c.comment_id.clone(),
            old_labels: comment.labels.clone(),
            new_labels: c.labels.clone(),
            old_source: comment.label_source,
            at,
            coder: coder.map(str::to_string),
        });
        comment.labels = c.labels.clone();
        comment.label_source = LabelSource::Human;
    }
    let merged = Corpus {
        comments,
        responses: corpus.responses.clone(),
        taxonomy: corpus.taxonomy.clone(),
        index: corpus.index.clone(),
    };
    Ok((merged, audit))
}

/// Appends audit records to a JSONL log, creating it if needed.
pub fn append_audit(path: &Path, records: &[AuditRecord]) -> Result<()> {
    let f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CorpusError::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| CorpusError::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| CorpusError::io(path, e))?;
    }
    w.flush().map_err(|e| CorpusError::io(path, e))
}

pub fn read_corrections_jsonl<R: BufRead>(reader: R) -> Result<Vec<Correction>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CorpusError::Io {
            path: format!("line {}", i + 1),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let c: Correction = serde_json::from_str(&line)
            .map_err(|e| CorpusError::schema(i + 1, "<record>", e.to_string()))?;
        out.push(c);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Descriptive statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelShare {
    pub label: String,
    pub count: usize,
    /// Exact fraction of comments carrying the label.
    pub share: f64,
    /// Share in percent, rounded half away from zero to two decimals.
    pub percent: f64,
}

/// Percent rounded to hundredths using integer arithmetic so that values
/// like 26.155 round the same way a hand calculation would.
pub fn rounded_percent(count: usize, total: usize) -> f64 {
    let num = count as u128 * 10_000 * 2 + total as u128;
    let hundredths = num / (2 * total as u128);
    hundredths as f64 / 100.0
}

pub fn shares_from_counts(counts: &[(String, usize)], total: usize) -> Result<Vec<LabelShare>> {
    if total == 0 {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(counts
        .iter()
        .map(|(label, count)| LabelShare {
            label: label.clone(),
            count: *count,
            share: *count as f64 / total as f64,
            percent: rounded_percent(*count, total),
        })
        .collect())
}

/// Count and share of comments per taxonomy label, in taxonomy order. Shares
/// can sum above 100% because comments may carry several labels.
pub fn label_shares(corpus: &Corpus) -> Result<Vec<LabelShare>> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let counts: Vec<(String, usize)> = corpus
        .taxonomy
        .names()
        .map(|name| {
            let n = corpus
                .comments
                .iter()
                .filter(|c| c.labels.contains(name))
                .count();
            (name.to_string(), n)
        })
        .collect();
    shares_from_counts(&counts, corpus.len())
}

pub fn multi_label_share(corpus: &Corpus) -> Result<f64> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let multi = corpus
        .comments
        .iter()
        .filter(|c| c.labels.len() >= 2)
        .count();
    Ok(multi as f64 / corpus.len() as f64)
}

// ---------------------------------------------------------------------------
// Filtering
// ---------------------------------------------------------------------------

/// Half-open UTC time interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Period {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl Period {
    pub fn contains(&self, t: &DateTime<Utc>) -> bool {
        *t >= self.start && *t < self.end
    }

    pub fn year(year: i32) -> Option<Period> {
        Some(Period {
            start: utc_date(year, 1, 1)?,
            end: utc_date(year + 1, 1, 1)?,
        })
    }

    pub fn quarter(year: i32, quarter: u32) -> Option<Period> {
        if !(1..=4).contains(&quarter) {
            return None;
        }
        let start = utc_date(year, 3 * (quarter - 1) + 1, 1)?;
        let end = if quarter == 4 {
            utc_date(year + 1, 1, 1)?
        } else {
            utc_date(year, 3 * quarter + 1, 1)?
        };
        Some(Period { start, end })
    }

    /// The period of the same kind immediately before this one: the previous
    /// quarter or year for calendar periods, an equal-length window otherwise.
    pub fn previous(&self) -> Period {
        let s = self.start;
        let e = self.end;
        let calendar_year = Period::year(s.year()).filter(|p| p == self);
        if calendar_year.is_some() {
            return Period::year(s.year() - 1).expect("valid year");
        }
        let q = (s.month() - 1) / 3 + 1;
        if Period::quarter(s.year(), q).as_ref() == Some(self) {
            return if q == 1 {
                Period::quarter(s.year() - 1, 4).expect("valid quarter")
            } else {
                Period::quarter(s.year(), q - 1).expect("valid quarter")
            };
        }
        let len: Duration = e - s;
        Period {
            start: s - len,
            end: s,
        }
    }
}

fn utc_date(y: i32, m: u32, d: u32) -> Option<DateTime<Utc>> {
    let date = NaiveDate::from_ymd_opt(y, m, d)?;
    Some(Utc.from_utc_datetime(&date.and_hms_opt(0, 0, 0)?))
}

impl FromStr for Period {
    type Err = CorpusError;

    /// Accepts `2024`, `2024Q3` or `2024-01-01..2024-04-01`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || CorpusError::InvalidPeriod(s.to_string());
        let s = s.trim();
        if let Some((a, b)) = s.split_once("..") {
            let parse = |x: &str| {
                NaiveDate::parse_from_str(x.trim(), "%Y-%m-%d")
                    .ok()
                    .and_then(|d| utc_date(d.year(), d.month(), d.day()))
            };
            let start = parse(a).ok_or_else(bad)?;
            let end = parse(b).ok_or_else(bad)?;
            if end <= start {
                return Err(bad());
            }
            return Ok(Period { start, end });
        }
        if let Some((y, q)) = s.split_once(['Q', 'q']) {
            let year: i32 = y.parse().map_err(|_| bad())?;
            let quarter: u32 = q.parse().map_err(|_| bad())?;
            return Period::quarter(year, quarter).ok_or_else(bad);
        }
        let year: i32 = s.parse().map_err(|_| bad())?;
        Period::year(year).ok_or_else(bad)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    pub product: Option<String>,
    pub period: Option<Period>,
    /// Matches comments carrying any of these labels.
    pub labels: Option<BTreeSet<String>>,
    pub sentiment: Option<Sentiment>,
}

impl Filter {
    pub fn matches(&self, c: &Comment) -> bool {
        self.product.as_deref().map_or(true, |p| c.product_id == p)
            && self.period.map_or(true, |p| p.contains(&c.timestamp))
            && self
                .labels
                .as_ref()
                .map_or(true, |wanted| wanted.iter().any(|l| c.labels.contains(l)))
            && self.sentiment.map_or(true, |s| c.sentiment == Some(s))
    }

    fn matches_response(&self, r: &SurveyResponse) -> bool {
        self.product.as_deref().map_or(true, |p| r.product_id == p)
            && self.period.map_or(true, |p| p.contains(&r.timestamp))
    }
}

/// Keeps the comments matching `filter`. Responses are kept when their
/// product and time match and the comment they reference (if any) survived.
pub fn filter(corpus: &Corpus, filter: &Filter) -> Corpus {
    let comments: Vec<Comment> = corpus
        .comments
        .iter()
        .filter(|c| filter.matches(c))
        .cloned()
        .collect();
    let kept: BTreeSet<&str> = comments.iter().map(|c| c.id.as_str()).collect();
    let responses = corpus
        .responses
        .iter()
        .filter(|r| filter.matches_response(r))
        .filter(|r| r.comment_id.as_deref().map_or(true, |id| kept.contains(id)))
        .cloned()
        .collect();
    let index = comments
        .iter()
        .enumerate()
        .map(|(i, c)| (c.id.clone(), i))
        .collect();
    Corpus {
        comments,
        responses,
        taxonomy: corpus.taxonomy.clone(),
        index,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2023, 5, 1, 12, 0, 0).unwrap()
    }

    fn comment(id: &str, labels: &[&str], sentiment: Option<Sentiment>) -> Comment {
        Comment {
            id: id.into(),
            product_id: "p1".into(),
            timestamp: ts(),
            text: format!("comment {id}"),
            language: "en".into(),
            translated_text: None,
            sentiment,
            labels: labels.iter().map(|s| s.to_string()).collect(),
            label_source: if labels.is_empty() {
                LabelSource::Unlabeled
            } else {
                LabelSource::Model
            },
        }
    }

    fn corpus(comments: Vec<Comment>) -> Corpus {
        Corpus::from_comments(TopicTaxonomy::default(), comments).unwrap()
    }

    const VALID: &str = r#"{"id":"c1","product_id":"p1","timestamp":"2023-01-02T03:04:05Z","text":"Great tool","language":"en","translated_text":null,"sentiment":"positive","labels":["General Feedback"],"label_source":"human"}
{"id":"c2","product_id":"p1","timestamp":"2023-01-03T03:04:05Z","text":"Slow","language":"en","translated_text":null,"sentiment":"negative","labels":["Performance"],"label_source":"model"}
{"id":"c3","product_id":"p2","timestamp":"2023-01-04T03:04:05+02:00","text":"Hallo","language":"de","translated_text":"Hello","sentiment":null,"labels":[],"label_source":"unlabeled"}
"#;

    #[test]
    fn reads_valid_jsonl() {
        let comments = read_comments_jsonl(VALID.as_bytes(), &TopicTaxonomy::default()).unwrap();
        assert_eq!(comments.len(), 3);
        assert_eq!(comments[2].analysis_text(), "Hello");
        assert_eq!(
            comments[2].timestamp,
            Utc.with_ymd_and_hms(2023, 1, 4, 1, 4, 5).unwrap()
        );
    }

    #[test]
    fn missing_text_is_a_schema_error_at_that_line() {
        let input = VALID.replace(r#""text":"Slow","#, "");
        let err = read_comments_jsonl(input.as_bytes(), &TopicTaxonomy::default()).unwrap_err();
        match err {
            CorpusError::Schema { line, field, .. } => {
                assert_eq!(line, 2);
                assert_eq!(field, "text");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let input = VALID.replace(r#""id":"c2""#, r#""id":"c1""#);
        let err = read_comments_jsonl(input.as_bytes(), &TopicTaxonomy::default()).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId(id) if id == "c1"));
    }

    #[test]
    fn unknown_label_at_ingest() {
        let input = VALID.replace("Performance", "Foo");
        let err = read_comments_jsonl(input.as_bytes(), &TopicTaxonomy::default()).unwrap_err();
        assert!(matches!(err, CorpusError::Schema { line: 2, ref field, .. } if field == "labels"));
    }

    #[test]
    fn csv_with_pipe_separated_labels() {
        let csv = "id,product_id,timestamp,text,language,translated_text,sentiment,labels,label_source\n\
                   c1,p1,2023-01-02T03:04:05Z,\"Slow, crashes\",en,,negative,Error|Performance,human\n\
                   c2,p1,2023-01-02T03:04:05Z,ok,en,,,,\n";
        let comments = read_comments_csv(csv.as_bytes(), &TopicTaxonomy::default()).unwrap();
        assert_eq!(comments.len(), 2);
        assert_eq!(comments[0].labels.len(), 2);
        assert_eq!(comments[0].text, "Slow, crashes");
        assert_eq!(comments[1].label_source, LabelSource::Unlabeled);
        assert_eq!(comments[1].sentiment, None);
    }

    #[test]
    fn responses_rating_range_checked() {
        let ok = r#"{"respondent_id":"r1","product_id":"p1","timestamp":"2023-01-02T00:00:00Z","survey_kind":"app","answers":{"psat":5,"ease":1},"comment_id":null}"#;
        assert_eq!(read_responses_jsonl(ok.as_bytes()).unwrap().len(), 1);
        let bad = ok.replace("\"ease\":1", "\"ease\":0");
        let err = read_responses_jsonl(bad.as_bytes()).unwrap_err();
        assert!(
            matches!(err, CorpusError::Schema { line: 1, ref field, .. } if field == "answers.ease")
        );
        let tutorial = ok
            .replace("\"app\"", "\"tutorial\"")
            .replace("\"psat\":5", "\"nps\":10");
        let err = read_responses_jsonl(tutorial.as_bytes());
        assert!(err.is_ok(), "0 is a valid tutorial rating");
    }

    #[test]
    fn dangling_response_reference_rejected() {
        let c = corpus(vec![comment("c1", &[], None)]);
        let r = SurveyResponse {
            respondent_id: "r".into(),
            product_id: "p1".into(),
            timestamp: ts(),
            survey_kind: SurveyKind::Tutorial,
            answers: Default::default(),
            comment_id: Some("nope".into()),
        };
        assert!(matches!(
            c.with_responses(vec![r]),
            Err(CorpusError::UnknownComment(_))
        ));
    }

    #[test]
    fn correction_replaces_labels_and_marks_human() {
        let c = corpus(vec![comment("c1", &["Usability"], None)]);
        let corr = Correction {
            comment_id: "c1".into(),
            labels: ["Error".to_string()].into(),
        };
        let (merged, audit) = merge_corrections(&c, &[corr], ts(), Some("coder-a")).unwrap();
        let c1 = merged.comment("c1").unwrap();
        assert_eq!(c1.labels, ["Error".to_string()].into());
        assert_eq!(c1.label_source, LabelSource::Human);
        assert_eq!(audit[0].old_labels, ["Usability".to_string()].into());
        assert_eq!(audit[0].old_source, LabelSource::Model);
    }

    #[test]
    fn empty_corrections_is_identity() {
        let c = corpus(vec![comment("c1", &["Usability"], None)]);
        let (merged, audit) = merge_corrections(&c, &[], ts(), None).unwrap();
        assert_eq!(merged, c);
        assert!(audit.is_empty());
    }

    #[test]
    fn correction_errors() {
        let c = corpus(vec![comment("c1", &["Usability"], None)]);
        let foo = Correction {
            comment_id: "c1".into(),
            labels: ["Foo".to_string()].into(),
        };
        assert!(matches!(
            merge_corrections(&c, &[foo], ts(), None),
            Err(CorpusError::UnknownLabel(l)) if l == "Foo"
        ));
        let missing = Correction {
            comment_id: "c9".into(),
            labels: BTreeSet::new(),
        };
        assert!(matches!(
            merge_corrections(&c, &[missing], ts(), None),
            Err(CorpusError::UnknownComment(id)) if id == "c9"
        ));
    }

    #[test]
    fn audit_log_appends() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        let c = corpus(vec![comment("c1", &["Usability"], None)]);
        let corr = Correction {
            comment_id: "c1".into(),
            labels: ["Help".to_string()].into(),
        };
        let (_, audit) = merge_corrections(&c, &[corr], ts(), None).unwrap();
        append_audit(&path, &audit).unwrap();
        append_audit(&path, &audit).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn label_share_examples() {
        let c = corpus(vec![
            comment("1", &["Usability"], None),
            comment("2", &["Usability"], None),
            comment("3", &["Usability", "Help"], None),
            comment("4", &["Help"], None),
        ]);
        let shares = label_shares(&c).unwrap();
        let get = |l: &str| shares.iter().find(|s| s.label == l).unwrap().percent;
        assert_eq!(get("Usability"), 75.0);
        assert_eq!(get("Help"), 50.0);
        assert_eq!(multi_label_share(&c).unwrap(), 0.25);

        let single = corpus(vec![comment("1", &["Error"], None)]);
        let shares = label_shares(&single).unwrap();
        assert_eq!(
            shares.iter().find(|s| s.label == "Error").unwrap().percent,
            100.0
        );
        assert_eq!(multi_label_share(&single).unwrap(), 0.0);
    }

    #[test]
    fn table_one_usability_share() {
        assert_eq!(rounded_percent(721, 2756), 26.16);
        assert_eq!(rounded_percent(1, 8), 12.5);
        // 1/800 = 0.125% exactly: half rounds away from zero
        assert_eq!(rounded_percent(1, 800), 0.13);
    }

    #[test]
    fn empty_corpus_errors() {
        let c = corpus(vec![]);
        assert!(matches!(label_shares(&c), Err(CorpusError::EmptyCorpus)));
        assert!(matches!(
            multi_label_share(&c),
            Err(CorpusError::EmptyCorpus)
        ));
    }

    #[test]
    fn filter_examples() {
        use Sentiment::*;
        let c = corpus(vec![
            comment("a", &["Error", "Usability"], Some(Negative)),
            comment("b", &["Help"], Some(Positive)),
            comment("c", &[], Some(Negative)),
        ]);
        let neg = filter(
            &c,
            &Filter {
                sentiment: Some(Negative),
                ..Default::default()
            },
        );
        assert_eq!(neg.len(), 2);
        let err = filter(
            &c,
            &Filter {
                labels: Some(["Error".to_string()].into()),
                ..Default::default()
            },
        );
        assert_eq!(
            err.comments()
                .iter()
                .map(|c| c.id.as_str())
                .collect::<Vec<_>>(),
            ["a"]
        );
        assert_eq!(filter(&c, &Filter::default()), c);
    }

    #[test]
    fn periods() {
        let q: Period = "2023Q2".parse().unwrap();
        assert!(q.contains(&ts()));
        assert!(!q.contains(&Utc.with_ymd_and_hms(2023, 7, 1, 0, 0, 0).unwrap()));
        assert_eq!(q.previous(), "2023Q1".parse().unwrap());
        assert_eq!(
            "2023Q1".parse::<Period>().unwrap().previous(),
            "2022Q4".parse().unwrap()
        );
        assert_eq!(
            "2023".parse::<Period>().unwrap().previous(),
            "2022".parse().unwrap()
        );
        let r: Period = "2023-01-10..2023-01-20".parse().unwrap();
        assert_eq!(r.previous(), "2022-12-31..2023-01-10".parse().unwrap());
        assert!("2023Q5".parse::<Period>().is_err());
        assert!("2023-02-01..2023-01-01".parse::<Period>().is_err());
    }

    #[test]
    fn taxonomy_versions_bump_on_mutation() {
        let t = TopicTaxonomy::default();
        assert_eq!(t.len(), 10);
        let t2 = t
            .add_label("Non-English", "Comment not written in English.")
            .unwrap();
        assert_eq!(t2.version(), t.version() + 1);
        let t3 = t2.set_definition("Non-English", "x").unwrap();
        assert_eq!(t3.version(), t2.version() + 1);
        let t4 = t3.remove_label("Non-English").unwrap();
        assert_eq!(t4.version(), t3.version() + 1);
        assert!(t.add_label("Usability", "dup").is_err());
        assert!(t.add_label("", "empty").is_err());
    }
}
