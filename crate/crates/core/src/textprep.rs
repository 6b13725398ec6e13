//! Comment preprocessing and embeddings.
//!
//! Comments are tokenized, cleaned and lemmatized, then embedded as the mean
//! of L2-normalized word vectors. Word vectors come either from hashed
//! character n-grams (the default, fully deterministic) or from an external
//! pre-trained vector file, with n-gram hashing as the out-of-vocabulary
//! fallback.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("cannot embed an empty token")]
    EmptyToken,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: vector dimension does not match {expected}")]
    DimensionMismatch { line: usize, expected: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid embedding configuration: {0}")]
    InvalidConfig(String),
}

const DEFAULT_STOPWORDS: &str = include_str!("stopwords.txt");

pub fn default_stopwords() -> BTreeSet<String> {
    DEFAULT_STOPWORDS
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub stopwords: BTreeSet<String>,
    pub strip_urls: bool,
    pub strip_punctuation: bool,
    pub lemmatize: bool,
    pub lowercase: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            stopwords: default_stopwords(),
            strip_urls: true,
            strip_punctuation: true,
            lemmatize: true,
            lowercase: true,
        }
    }
}

impl PreprocessConfig {
    /// No cleaning at all; meant for contextual embedders that need the raw
    /// text.
    pub fn passthrough() -> Self {
        PreprocessConfig {
            stopwords: BTreeSet::new(),
            strip_urls: false,
            strip_punctuation: false,
            lemmatize: false,
            lowercase: false,
        }
    }

    pub fn with_stopwords<I, S>(mut self, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.stopwords = words.into_iter().map(Into::into).collect();
        self
    }

    pub fn validate(&self) -> Result<(), TextError> {
        match self.stopwords.iter().find(|w| w.to_lowercase() != **w) {
            Some(w) => Err(TextError::InvalidConfig(format!(
                "stopword `{w}` is not lowercase"
            ))),
            None => Ok(()),
        }
    }
}

fn url_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(?:https?://|www\.)\S+").expect("valid regex"))
}

/// Splits `text` into cleaned tokens.
pub fn preprocess(text: &str, config: &PreprocessConfig) -> Vec<String> {
    let mut s = text.replace(['\n', '\r', '\t'], " ");
    if config.strip_urls {
        s = url_regex().replace_all(&s, " ").into_owned();
    }
    if config.lowercase {
        s = s.to_lowercase();
    }
    if config.strip_punctuation {
        s = s
            .chars()
            .filter(|c| !matches!(c, '\'' | '\u{2019}' | '\u{2018}'))
            .map(|c| {
                if c.is_alphanumeric() || c.is_whitespace() {
                    c
                } else {
                    ' '
                }
            })
            .collect();
    }
    s.split_whitespace()
        .filter(|t| !config.stopwords.contains(&t.to_lowercase()))
        .map(|t| {
            if config.lemmatize {
                lemmatize(t)
            } else {
                t.to_string()
            }
        })
        .collect()
}

const LEMMA_EXCEPTIONS: &[(&str, &str)] = &[
    ("is", "be"),
    ("are", "be"),
    ("was", "be"),
    ("were", "be"),
    ("been", "be"),
    ("being", "be"),
    ("has", "have"),
    ("had", "have"),
    ("having", "have"),
    ("does", "do"),
    ("did", "do"),
    ("done", "do"),
    ("doing", "do"),
    ("goes", "go"),
    ("went", "go"),
    ("gone", "go"),
    ("made", "make"),
    ("making", "make"),
    ("uses", "use"),
    ("used", "use"),
    ("using", "use"),
    ("got", "get"),
    ("gets", "get"),
    ("getting", "get"),
    ("ran", "run"),
    ("running", "run"),
    ("took", "take"),
    ("taking", "take"),
    ("gave", "give"),
    ("giving", "give"),
    ("saw", "see"),
    ("seen", "see"),
    ("found", "find"),
    ("thought", "think"),
    ("felt", "feel"),
    ("paid", "pay"),
    ("said", "say"),
    ("wrote", "write"),
    ("written", "write"),
    ("writing", "write"),
    ("came", "come"),
    ("coming", "come"),
    ("knew", "know"),
    ("known", "know"),
    ("lost", "lose"),
    ("better", "good"),
    ("best", "good"),
    ("worse", "bad"),
    ("worst", "bad"),
    ("children", "child"),
    ("people", "people"),
    ("data", "data"),
    ("status", "status"),
    ("analysis", "analysis"),
    ("business", "business"),
    ("series", "series"),
    ("news", "news"),
    ("always", "always"),
    ("this", "this"),
    ("its", "its"),
];

fn undouble(stem: &str) -> String {
    let b = stem.as_bytes();
    let n = b.len();
    if n >= 3
        && b[n - 1] == b[n - 2]
        && b[n - 1].is_ascii_alphabetic()
        && !matches!(
            b[n - 1],
            b'a' | b'e' | b'i' | b'o' | b'u' | b'l' | b's' | b'z'
        )
    {
        stem[..n - 1].to_string()
    } else {
        stem.to_string()
    }
}

/// Rule-based suffix stripping: plural `-s`/`-es`/`-ies`, gerund `-ing` and
/// past `-ed`, with an exception table for common irregular forms.
pub fn lemmatize(token: &str) -> String {
    if let Some((_, lemma)) = LEMMA_EXCEPTIONS.iter().find(|(w, _)| *w == token) {
        return lemma.to_string();
    }
    let len = token.chars().count();
    if len > 4 && token.ends_with("ies") {
        return format!("{}y", &token[..token.len() - 3]);
    }
    if len > 4 && token.ends_with("ied") {
        return format!("{}y", &token[..token.len() - 3]);
    }
    if token.ends_with("sses") {
        return token[..token.len() - 2].to_string();
    }
    if len > 4
        && ["ches", "shes", "xes", "zes"]
            .iter()
            .any(|s| token.ends_with(s))
    {
        return token[..token.len() - 2].to_string();
    }
    if len > 3 && token.ends_with('s') && !["ss", "us", "is"].iter().any(|s| token.ends_with(s)) {
        return token[..token.len() - 1].to_string();
    }
    if len >= 6 && token.ends_with("ing") {
        return undouble(&token[..token.len() - 3]);
    }
    if len >= 5 && token.ends_with("ed") {
        return undouble(&token[..token.len() - 2]);
    }
    token.to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    SubwordHash,
    ExternalVectors,
}

/// Word embedding source. Immutable after construction.
#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    dim: usize,
    mode: EmbeddingMode,
    ngram_min: usize,
    ngram_max: usize,
    bucket_count: u32,
    seed: u64,
    vectors: HashMap<String, Vec<f64>>,
}

pub const DEFAULT_DIM: usize = 300;
pub const DEFAULT_BUCKETS: u32 = 2_000_000;
pub const DEFAULT_SEED: u64 = 42;

impl Default for EmbeddingModel {
    fn default() -> Self {
        EmbeddingModel::subword(DEFAULT_DIM, 3, 6, DEFAULT_BUCKETS, DEFAULT_SEED)
            .expect("valid defaults")
    }
}

impl EmbeddingModel {
    pub fn subword(
        dim: usize,
        ngram_min: usize,
        ngram_max: usize,
        bucket_count: u32,
        seed: u64,
    ) -> Result<Self, TextError> {
        if dim == 0 {
            return Err(TextError::InvalidConfig("dim must be positive".into()));
        }
        if ngram_min == 0 || ngram_min > ngram_max {
            return Err(TextError::InvalidConfig(format!(
                "need 1 <= ngram_min <= ngram_max, got {ngram_min}..{ngram_max}"
            )));
        }
        if bucket_count == 0 {
            return Err(TextError::InvalidConfig(
                "bucket_count must be positive".into(),
            ));
        }
        Ok(EmbeddingModel {
            dim,
            mode: EmbeddingMode::SubwordHash,
            ngram_min,
            ngram_max,
            bucket_count,
            seed,
            vectors: HashMap::new(),
        })
    }

    /// Switches to external vectors; out-of-vocabulary words keep using this
    /// model's n-gram hashing.
    pub fn with_vectors(self, vectors: HashMap<String, Vec<f64>>) -> Result<Self, TextError> {
        if let Some((w, _)) = vectors.iter().find(|(_, v)| v.len() != self.dim) {
            return Err(TextError::InvalidConfig(format!(
                "vector for `{w}` does not have dimension {}",
                self.dim
            )));
        }
        Ok(EmbeddingModel {
            mode: EmbeddingMode::ExternalVectors,
            vectors,
            ..self
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> EmbeddingMode {
        self.mode
    }

    pub fn vocabulary_size(&self) -> usize {
        self.vectors.len()
    }

    pub fn vector(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    fn bucket(&self, bytes: &[u8]) -> u32 {
        fnv1a(bytes) % self.bucket_count
    }

    fn add_bucket(&self, bucket: u32, acc: &mut [f64]) {
        // Uniform on [-sqrt(3), sqrt(3)] has unit variance.
        const HALF_WIDTH: f64 = 1.732_050_807_568_877_2;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(bucket as u64);
        for a in acc.iter_mut() {
            let u: f64 = rng.gen();
            *a += (2.0 * u - 1.0) * HALF_WIDTH;
        }
    }

    /// Bucket ids contributing to `word`: every character n-gram of `<word>`
    /// with length in `[ngram_min, ngram_max]`, plus the whole-word bucket.
    pub fn subword_buckets(&self, word: &str) -> Vec<u32> {
        let padded: Vec<char> = format!("<{word}>").chars().collect();
        let mut out = Vec::new();
        let mut buf = String::new();
        for n in self.ngram_min..=self.ngram_max {
            if n > padded.len() {
                break;
            }
            for start in 0..=padded.len() - n {
                buf.clear();
                buf.extend(&padded[start..start + n]);
                out.push(self.bucket(buf.as_bytes()));
            }
        }
        // The word itself hashes in its own namespace so it cannot collide
        // with an identical n-gram.
        let mut whole = Vec::with_capacity(word.len() + 1);
        whole.push(0x01);
        whole.extend_from_slice(word.as_bytes());
        out.push(self.bucket(&whole));
        out
    }

    fn subword_vector(&self, word: &str) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for b in self.subword_buckets(word) {
            self.add_bucket(b, &mut acc);
        }
        acc
    }

    /// Unit-length vector for one token.
    pub fn embed_word(&self, word: &str) -> Result<Vec<f64>, TextError> {
        if word.is_empty() {
            return Err(TextError::EmptyToken);
        }
        let raw = match self.mode {
            EmbeddingMode::ExternalVectors => match self.vectors.get(word) {
                Some(v) if l2_norm(v) > 0.0 => v.clone(),
                _ => self.subword_vector(word),
            },
            EmbeddingMode::SubwordHash => self.subword_vector(word),
        };
        Ok(normalized(raw))
    }

    /// Stable identifier of everything that determines the vectors.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!(
            "mode={:?};dim={};ngram={}-{};buckets={};seed={}",
            self.mode, self.dim, self.ngram_min, self.ngram_max, self.bucket_count, self.seed
        ));
        if self.mode == EmbeddingMode::ExternalVectors {
            let mut words: Vec<&String> = self.vectors.keys().collect();
            words.sort();
            for w in words {
                h.update(w.as_bytes());
                for x in &self.vectors[w] {
                    h.update(x.to_bits().to_le_bytes());
                }
            }
        }
        hex::encode(&h.finalize()[..8])
    }
}

/// 32-bit FNV-1a, the hash fastText-style models use for n-gram buckets.
fn fnv1a(bytes: &[u8]) -> u32 {
    let mut h: u32 = 2_166_136_261;
    for &b in bytes {
        h ^= b as u32;
        h = h.wrapping_mul(16_777_619);
    }
    h
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = l2_norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommentVector {
    pub values: Vec<f64>,
    pub token_count: usize,
}

impl CommentVector {
    pub fn zero(dim: usize) -> Self {
        CommentVector {
            values: vec![0.0; dim],
            token_count: 0,
        }
    }
}

fn mean_of_words<'a, F>(tokens: &mut Vec<String>, dim: usize, mut word_vec: F) -> CommentVector
where
    F: FnMut(&str) -> &'a [f64],
{
    if tokens.is_empty() {
        return CommentVector::zero(dim);
    }
    // Summing in sorted order makes the result depend only on the multiset
    // of tokens, bit for bit.
    tokens.sort();
    let mut acc = vec![0.0; dim];
    for t in tokens.iter() {
        for (a, x) in acc.iter_mut().zip(word_vec(t)) {
            *a += x;
        }
    }
    let n = tokens.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    CommentVector {
        values: acc,
        token_count: tokens.len(),
    }
}

/// Mean of the unit word vectors of the preprocessed tokens; the zero vector
/// when nothing survives preprocessing.
pub fn embed_comment(
    text: &str,
    model: &EmbeddingModel,
    config: &PreprocessConfig,
) -> CommentVector {
    let mut tokens = preprocess(text, config);
    let vectors: HashMap<String, Vec<f64>> = tokens
        .iter()
        .map(|t| {
            (
                t.clone(),
                model.embed_word(t).expect("tokens are non-empty"),
            )
        })
        .collect();
    mean_of_words(&mut tokens, model.dim, |t| &vectors[t])
}

/// Embedding model plus the preprocessing attached to it. This is the one
/// interface the classifier consumes.
#[derive(Debug, Clone)]
pub struct Embedder {
    pub model: EmbeddingModel,
    pub preprocess: PreprocessConfig,
}

impl Embedder {
    pub fn new(model: EmbeddingModel, preprocess: PreprocessConfig) -> Self {
        Embedder { model, preprocess }
    }

    pub fn dim(&self) -> usize {
        self.model.dim
    }

    pub fn embed(&self, text: &str) -> CommentVector {
        embed_comment(text, &self.model, &self.preprocess)
    }

    /// Embeds many texts, computing each distinct word vector once.
    pub fn embed_all<S: AsRef<str>>(&self, texts: &[S]) -> Vec<CommentVector> {
        let tokenized: Vec<Vec<String>> = texts
            .iter()
            .map(|t| preprocess(t.as_ref(), &self.preprocess))
            .collect();
        let vocab: BTreeSet<&String> = tokenized.iter().flatten().collect();
        let vocab: Vec<&String> = vocab.into_iter().collect();
        #[cfg(feature = "parallel")]
        let vectors: Vec<Vec<f64>> = {
            use rayon::prelude::*;
            vocab
                .par_iter()
                .map(|w| self.model.embed_word(w).expect("tokens are non-empty"))
                .collect()
        };
        #[cfg(not(feature = "parallel"))]
        let vectors: Vec<Vec<f64>> = vocab
            .iter()
            .map(|w| self.model.embed_word(w).expect("tokens are non-empty"))
            .collect();
        let table: HashMap<&str, &[f64]> = vocab
            .iter()
            .map(|w| w.as_str())
            .zip(vectors.iter().map(Vec::as_slice))
            .collect();
        tokenized
            .iter()
            .map(|toks| mean_of_words(&mut toks.clone(), self.model.dim, |t| table[t]))
            .collect()
    }

    /// Fingerprint of the model and preprocessing together; classifiers
    /// record it and refuse vectors from a different embedder.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.model.fingerprint());
        h.update(serde_json::to_vec(&self.preprocess).expect("serializable"));
        hex::encode(&h.finalize()[..8])
    }
}

/// Serializable embedding settings as they appear in the pipeline config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub mode: EmbeddingMode,
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub bucket_count: u32,
    pub seed: u64,
    /// Text vector file, required in `external_vectors` mode.
    pub vectors_path: Option<String>,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            dim: DEFAULT_DIM,
            mode: EmbeddingMode::SubwordHash,
            ngram_min: 3,
            ngram_max: 6,
            bucket_count: DEFAULT_BUCKETS,
            seed: DEFAULT_SEED,
            vectors_path: None,
        }
    }
}

impl EmbeddingConfig {
    pub fn build(&self) -> Result<EmbeddingModel, TextError> {
        let base = EmbeddingModel::subword(
            self.dim,
            self.ngram_min,
            self.ngram_max,
            self.bucket_count,
            self.seed,
        )?;
        match self.mode {
            EmbeddingMode::SubwordHash => Ok(base),
            EmbeddingMode::ExternalVectors => {
                let path = self.vectors_path.as_deref().ok_or_else(|| {
                    TextError::InvalidConfig("external_vectors mode needs vectors_path".into())
                })?;
                let loaded = load_vectors(Path::new(path), self.dim)?;
                base.with_vectors(loaded.vectors)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Text vector files
// ---------------------------------------------------------------------------

/// Loads a text vector file: an optional `count dim` header, then one word
/// per line followed by `dim` floats.
pub fn load_vectors(path: &Path, dim: usize) -> Result<EmbeddingModel, TextError> {
    let f = File::open(path).map_err(|e| TextError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    read_vectors(BufReader::new(f), dim)
}

pub fn read_vectors<R: BufRead>(reader: R, dim: usize) -> Result<EmbeddingModel, TextError> {
    let mut vectors = HashMap::new();
    let mut first = true;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| TextError::Io {
            path: format!("line {line_no}"),
            source: e,
        })?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.is_empty() {
            continue;
        }
        if first {
            first = false;
            if parts.len() == 2 {
                if let (Ok(_), Ok(d)) = (parts[0].parse::<usize>(), parts[1].parse::<usize>()) {
                    if d != dim {
                        return Err(TextError::DimensionMismatch {
                            line: line_no,
                            expected: dim,
                        });
                    }
                    continue;
                }
            }
        }
        if parts.len() - 1 != dim {
            return Err(TextError::DimensionMismatch {
                line: line_no,
                expected: dim,
            });
        }
        let values = parts[1..]
            .iter()
            .map(|p| {
                p.parse::<f64>().map_err(|e| TextError::Parse {
                    line: line_no,
                    message: format!("`{p}`: {e}"),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        vectors.entry(parts[0].to_string()).or_insert(values);
    }
    let defaults = EmbeddingConfig::default();
    EmbeddingModel::subword(
        dim,
        defaults.ngram_min,
        defaults.ngram_max,
        defaults.bucket_count,
        defaults.seed,
    )?
    .with_vectors(vectors)
}

/// Writes the model's external vectors in the text format `read_vectors`
/// accepts, words sorted.
pub fn write_vectors<W: Write>(mut w: W, model: &EmbeddingModel) -> std::io::Result<()> {
    writeln!(w, "{} {}", model.vectors.len(), model.dim)?;
    let mut words: Vec<&String> = model.vectors.keys().collect();
    words.sort();
    for word in words {
        write!(w, "{word}")?;
        for x in &model.vectors[word] {
            write!(w, " {x}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
