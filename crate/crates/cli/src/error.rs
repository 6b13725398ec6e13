//! Exit codes. Library errors map onto them by type, so commands can use
//! `?` freely; [`coded`] covers the cases decided in the CLI itself.

use std::fmt;

use uxfeedback::corpus::CorpusError;
use uxfeedback::multilabel::MultilabelError;
use uxfeedback::stats::StatsError;
use uxfeedback::textprep::TextError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Code {
    /// Missing or unreadable files, and anything not listed below.
    Io = 1,
    /// Malformed input, config or bundle.
    Schema = 2,
    /// Model and embedder disagree, or inputs of different lengths.
    Mismatch = 3,
    /// Nothing to analyze: no responses, or an empty period.
    NoData = 4,
    /// A summary failed citation validation.
    Validation = 5,
}

#[derive(Debug)]
pub struct CodedError {
    pub code: Code,
    pub message: String,
}

impl fmt::Display for CodedError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CodedError {}

pub fn coded(code: Code, message: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(CodedError {
        code,
        message: message.into(),
    })
}

fn classify(e: &(dyn std::error::Error + 'static)) -> Option<Code> {
    if let Some(c) = e.downcast_ref::<CodedError>() {
        return Some(c.code);
    }
    if let Some(c) = e.downcast_ref::<CorpusError>() {
        return Some(match c {
            CorpusError::Io { .. } => Code::Io,
            CorpusError::EmptyCorpus => Code::NoData,
            _ => Code::Schema,
        });
    }
    if let Some(m) = e.downcast_ref::<MultilabelError>() {
        return Some(match m {
            MultilabelError::FingerprintMismatch { .. }
            | MultilabelError::EmbeddingMismatch { .. }
            | MultilabelError::LengthMismatch { .. } => Code::Mismatch,
            MultilabelError::Format(_)
            | MultilabelError::UnknownLabel(_)
            | MultilabelError::InvalidThreshold(_) => Code::Schema,
            MultilabelError::NoTrainingData => Code::NoData,
            _ => Code::Io,
        });
    }
    if let Some(s) = e.downcast_ref::<StatsError>() {
        return Some(match s {
            StatsError::NoResponses(_) => Code::NoData,
            _ => Code::Io,
        });
    }
    if let Some(t) = e.downcast_ref::<TextError>() {
        return Some(match t {
            TextError::Io { .. } => Code::Io,
            _ => Code::Schema,
        });
    }
    if e.downcast_ref::<serde_json::Error>().is_some()
        || e.downcast_ref::<toml::de::Error>().is_some()
    {
        return Some(Code::Schema);
    }
    None
}

/// Process exit status for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    err.chain().find_map(classify).unwrap_or(Code::Io) as i32
}

/// The cause chain on one line, skipping causes a wrapper already quotes.
pub fn render(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if out.ends_with(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}
