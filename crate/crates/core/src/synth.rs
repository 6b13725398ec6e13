//! Deterministic synthetic data: a labeled comment corpus whose topics leave
//! recognizable words in the text, and survey responses that replay fixed
//! sentiment-by-rating cell counts with generated comments attached.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    self, questions, Comment, Corpus, LabelSource, Sentiment, SurveyKind, SurveyResponse,
    TopicTaxonomy,
};

/// Tutorial NPS cells: rows Negative, Mixed, Positive; columns Detractor,
/// Passive, Promoter.
pub const TUTORIAL_REPLAY: [[u64; 3]; 3] = [[120, 52, 154], [4, 7, 27], [5, 13, 157]];

/// Application PSAT cells: rows Negative, Mixed, Positive; columns Very
/// Dissatisfied through Very Satisfied.
pub const APP_REPLAY: [[u64; 5]; 3] = [
    [893, 826, 548, 539, 106],
    [45, 66, 161, 345, 135],
    [35, 3, 15, 232, 380],
];

/// Relative label frequencies of the labeled corpus, in taxonomy order.
const LABEL_WEIGHTS: [(&str, u32); 10] = [
    ("Usability", 721),
    ("Functionality", 606),
    ("Error", 420),
    ("Other", 352),
    ("Performance", 339),
    ("General Feedback", 239),
    ("Help", 207),
    ("Visual Design", 114),
    ("Integration", 113),
    ("Licensing", 91),
];

fn signal_words(label: &str) -> &'static [&'static str] {
    match label {
        "Usability" => &[
            "intuitive",
            "navigation",
            "workflow",
            "clunky",
            "learnability",
            "clicks",
        ],
        "Functionality" => &[
            "feature",
            "missing",
            "option",
            "capability",
            "filter",
            "export",
        ],
        "Error" => &["crash", "bug", "error", "freezes", "broken", "exception"],
        "Other" => &[
            "weather",
            "coffee",
            "colleague",
            "vacation",
            "holiday",
            "lunch",
        ],
        "Performance" => &["slow", "lag", "loading", "latency", "sluggish", "speed"],
        "General Feedback" => &[
            "overall",
            "love",
            "awesome",
            "excellent",
            "terrible",
            "amazing",
        ],
        "Help" => &[
            "documentation",
            "tutorial",
            "manual",
            "guide",
            "docs",
            "examples",
        ],
        "Visual Design" => &["colors", "font", "icons", "theme", "contrast", "palette"],
        "Integration" => &[
            "api",
            "plugin",
            "sync",
            "connector",
            "webhook",
            "integration",
        ],
        "Licensing" => &[
            "license",
            "price",
            "subscription",
            "cost",
            "pricing",
            "seat",
        ],
        _ => &["thing"],
    }
}

const FILLER: [&str; 16] = [
    "the", "tool", "product", "when", "i", "it", "today", "really", "my", "team", "project",
    "window", "using", "after", "update", "again",
];

fn tone_words(s: Sentiment) -> &'static [&'static str] {
    match s {
        Sentiment::Negative => &["annoying", "frustrating", "bad", "poor", "disappointing"],
        Sentiment::Mixed => &[
            "okay",
            "mostly fine",
            "could be better",
            "decent but uneven",
        ],
        Sentiment::Positive => &["nice", "good", "pleasant", "helpful", "great"],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Human-labeled comments spread over the main products.
    pub labeled_comments: usize,
    /// Products sharing the labeled comments, by relative weight.
    pub products: Vec<(String, u32)>,
    /// A product with this many labeled comments, too few to summarize.
    pub small_product: Option<(String, usize)>,
    /// Attach replayed survey responses and their unlabeled comments.
    pub surveys: bool,
    /// Survey responses without a comment, per commented response.
    pub uncommented_ratio: f64,
    pub year: i32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            labeled_comments: 500,
            products: vec![
                ("alpha".into(), 4),
                ("bravo".into(), 3),
                ("charlie".into(), 3),
            ],
            small_product: Some(("echo".into(), 19)),
            surveys: true,
            uncommented_ratio: 0.25,
            year: 2024,
            seed: 7,
        }
    }
}

struct Gen {
    rng: ChaCha8Rng,
    start: DateTime<Utc>,
}

impl Gen {
    fn timestamp(&mut self) -> DateTime<Utc> {
        self.start + Duration::seconds(self.rng.gen_range(0..365 * 24 * 3600))
    }

    fn sentiment(&mut self) -> Sentiment {
        let x: f64 = self.rng.gen();
        if x < 0.55 {
            Sentiment::Negative
        } else if x < 0.70 {
            Sentiment::Mixed
        } else {
            Sentiment::Positive
        }
    }

    fn labels(&mut self) -> BTreeSet<String> {
        let weights: Vec<u32> = LABEL_WEIGHTS.iter().map(|(_, w)| *w).collect();
        let total: u32 = weights.iter().sum();
        let pick = |rng: &mut ChaCha8Rng| {
            let mut x = rng.gen_range(0..total);
            for (i, w) in weights.iter().enumerate() {
                if x < *w {
                    return LABEL_WEIGHTS[i].0.to_string();
                }
                x -= w;
            }
            unreachable!()
        };
        let mut out = BTreeSet::new();
        out.insert(pick(&mut self.rng));
        if self.rng.gen_bool(0.16) {
            out.insert(pick(&mut self.rng));
        }
        out
    }

    /// One clause per label carrying a signal word, plus tone and filler.
    /// Negative comments run longer.
    fn text(&mut self, labels: &BTreeSet<String>, sentiment: Sentiment) -> String {
        let mut clauses = Vec::new();
        for l in labels {
            let sig = *signal_words(l).choose(&mut self.rng).expect("non-empty");
            let tone = *tone_words(sentiment)
                .choose(&mut self.rng)
                .expect("non-empty");
            let filler: Vec<&str> = (0..self.rng.gen_range(1..4))
                .map(|_| *FILLER.choose(&mut self.rng).expect("non-empty"))
                .collect();
            clauses.push(format!("the {sig} is {tone} {}", filler.join(" ")));
        }
        if sentiment == Sentiment::Negative && self.rng.gen_bool(0.6) {
            let filler: Vec<&str> = (0..self.rng.gen_range(3..9))
                .map(|_| *FILLER.choose(&mut self.rng).expect("non-empty"))
                .collect();
            clauses.push(format!("and {}", filler.join(" ")));
        }
        let mut s = clauses.join(", ");
        if let Some(first) = s.get(..1) {
            s = first.to_uppercase() + &s[1..];
        }
        s.push('.');
        s
    }

    fn untopical_text(&mut self, sentiment: Sentiment) -> String {
        let tone = *tone_words(sentiment)
            .choose(&mut self.rng)
            .expect("non-empty");
        let filler: Vec<&str> = (0..self.rng.gen_range(2..7))
            .map(|_| *FILLER.choose(&mut self.rng).expect("non-empty"))
            .collect();
        format!("It is {tone}, {}.", filler.join(" "))
    }
}

fn pick_weighted<'a>(rng: &mut ChaCha8Rng, items: &'a [(String, u32)]) -> &'a str {
    let total: u32 = items.iter().map(|(_, w)| *w).sum();
    let mut x = rng.gen_range(0..total.max(1));
    for (name, w) in items {
        if x < *w {
            return name;
        }
        x -= w;
    }
    &items[items.len() - 1].0
}

/// Labeled comments only.
pub fn labeled_comments(cfg: &SynthConfig) -> Vec<Comment> {
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        start: Utc
            .with_ymd_and_hms(cfg.year, 1, 1, 0, 0, 0)
            .single()
            .expect("valid year"),
    };
    let small = cfg
        .small_product
        .as_ref()
        .map_or(0, |(_, n)| *n)
        .min(cfg.labeled_comments);
    let mut out = Vec::with_capacity(cfg.labeled_comments);
    for i in 0..cfg.labeled_comments {
        let product = if i < small {
            cfg.small_product.as_ref().expect("small > 0").0.clone()
        } else {
            pick_weighted(&mut g.rng, &cfg.products).to_string()
        };
        let sentiment = g.sentiment();
        let labels = g.labels();
        let text = g.text(&labels, sentiment);
        // a few comments arrive in German with an English translation
        let (text, language, translated_text) = if g.rng.gen_bool(0.05) {
            (format!("Übersetzt: {text}"), "de".to_string(), Some(text))
        } else {
            (text, "en".to_string(), None)
        };
        out.push(Comment {
            id: format!("L{i:04}"),
            product_id: product,
            timestamp: g.timestamp(),
            text,
            language,
            translated_text,
            sentiment: Some(sentiment),
            labels,
            label_source: LabelSource::Human,
        });
    }
    out
}

/// Replayed responses and their (unlabeled) comments. Each table cell
/// becomes that many commented responses whose comment has the row's
/// sentiment and whose rating falls in the column's category.
pub fn survey_replay(cfg: &SynthConfig) -> (Vec<Comment>, Vec<SurveyResponse>) {
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed),
        start: Utc
            .with_ymd_and_hms(cfg.year, 1, 1, 0, 0, 0)
            .single()
            .expect("valid year"),
    };
    let mut comments = Vec::new();
    let mut responses = Vec::new();
    let mut next = 0usize;

    let mut emit = |g: &mut Gen,
                    kind: SurveyKind,
                    sentiment: Option<Sentiment>,
                    answers: BTreeMap<String, i64>| {
        let product = pick_weighted(&mut g.rng, &cfg.products).to_string();
        let ts = g.timestamp();
        let comment_id = sentiment.map(|s| {
            let id = format!("S{next:05}");
            let text = if g.rng.gen_bool(0.7) {
                let labels = g.labels();
                g.text(&labels, s)
            } else {
                g.untopical_text(s)
            };
            comments.push(Comment {
                id: id.clone(),
                product_id: product.clone(),
                timestamp: ts,
                text,
                language: "en".into(),
                translated_text: None,
                sentiment: Some(s),
                labels: BTreeSet::new(),
                label_source: LabelSource::Unlabeled,
            });
            id
        });
        responses.push(SurveyResponse {
            respondent_id: format!("R{next:05}"),
            product_id: product,
            timestamp: ts,
            survey_kind: kind,
            answers,
            comment_id,
        });
        next += 1;
    };

    let nps_range = [(0, 6), (7, 8), (9, 10)];
    for (r, row) in TUTORIAL_REPLAY.iter().enumerate() {
        for (c, &n) in row.iter().enumerate() {
            for _ in 0..n {
                let nps = g.rng.gen_range(nps_range[c].0..=nps_range[c].1);
                let answers = tutorial_answers(&mut g.rng, nps);
                emit(
                    &mut g,
                    SurveyKind::Tutorial,
                    Some(Sentiment::ALL[r]),
                    answers,
                );
            }
        }
    }
    for (r, row) in APP_REPLAY.iter().enumerate() {
        for (c, &n) in row.iter().enumerate() {
            for _ in 0..n {
                let answers = app_answers(&mut g.rng, c as i64 + 1);
                emit(
                    &mut g,
                    SurveyKind::AppUsability,
                    Some(Sentiment::ALL[r]),
                    answers,
                );
            }
        }
    }
    let commented: u64 = TUTORIAL_REPLAY
        .iter()
        .flatten()
        .chain(APP_REPLAY.iter().flatten())
        .sum();
    let extra = (commented as f64 * cfg.uncommented_ratio).round() as usize;
    for i in 0..extra {
        if i % 8 == 0 {
            let nps = g.rng.gen_range(0..=10);
            let answers = tutorial_answers(&mut g.rng, nps);
            emit(&mut g, SurveyKind::Tutorial, None, answers);
        } else {
            let psat = g.rng.gen_range(1..=5);
            let answers = app_answers(&mut g.rng, psat);
            emit(&mut g, SurveyKind::AppUsability, None, answers);
        }
    }
    (comments, responses)
}

fn jitter(rng: &mut ChaCha8Rng, centre: i64, lo: i64, hi: i64) -> i64 {
    (centre + rng.gen_range(-1..=1)).clamp(lo, hi)
}

fn tutorial_answers(rng: &mut ChaCha8Rng, nps: i64) -> BTreeMap<String, i64> {
    let mut a = BTreeMap::new();
    a.insert(questions::NPS.to_string(), nps);
    for q in questions::TUTORIAL_ITEMS {
        a.insert(q.to_string(), jitter(rng, nps, 0, 10));
    }
    a
}

fn app_answers(rng: &mut ChaCha8Rng, psat: i64) -> BTreeMap<String, i64> {
    let mut a = BTreeMap::new();
    a.insert(questions::PSAT.to_string(), psat);
    a.insert(questions::EASE.to_string(), jitter(rng, psat, 1, 5));
    a.insert(questions::DOES_WHAT.to_string(), jitter(rng, psat, 1, 5));
    a
}

/// The full synthetic corpus under the default taxonomy.
pub fn generate(cfg: &SynthConfig) -> corpus::Result<Corpus> {
    let mut comments = labeled_comments(cfg);
    let mut responses = Vec::new();
    if cfg.surveys {
        let (c, r) = survey_replay(cfg);
        comments.extend(c);
        responses = r;
    }
    Corpus::new(TopicTaxonomy::default(), comments, responses)
}
