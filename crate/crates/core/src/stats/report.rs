//! Runs the full battery of sentiment-versus-metric analyses over a corpus
//! and renders the result as JSON, markdown and curve CSV.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::contingency::{
    bootstrap_ci_cramers_v, chi_squared_test, conditional_probability_any, probability_difference,
    BootstrapInterval, ContingencyTable, TestResult,
};
use super::curves::{
    cumulative_frequency, group_mean_sd, linear_grid, CumulativeCurve, GroupSummary, ScoreSeries,
};
use super::intervals::{binomial_test_one_tailed, wilson_interval, IntervalEstimate};
use super::metrics::{
    nps_categorize, tutorial_quality_score, uxlite_score, NpsCategory, SatisfactionLevel,
};
use super::{Category, StatsError};
use crate::corpus::{questions, Corpus, Sentiment, SurveyKind, SurveyResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    /// Confidence level for every interval.
    pub level: f64,
    pub bootstrap_replicates: usize,
    pub seed: u64,
    pub tutorial_grid_step: f64,
    pub uxlite_grid_step: f64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            level: 0.95,
            bootstrap_replicates: 10_000,
            seed: 42,
            tutorial_grid_step: 0.5,
            uxlite_grid_step: 12.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalEstimate {
    /// Column categories counted as a hit (any of).
    pub target: Vec<String>,
    pub given: String,
    pub successes: u64,
    pub trials: u64,
    pub interval: IntervalEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinomialSection {
    pub description: String,
    pub successes: u64,
    pub trials: u64,
    pub p0: f64,
    pub result: TestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Difference {
    pub description: String,
    pub percentage_points: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveySection {
    pub kind: SurveyKind,
    pub responses: usize,
    pub with_comment: usize,
    pub table: ContingencyTable,
    pub chi_squared: Option<TestResult>,
    pub cramers_v: Option<BootstrapInterval>,
    pub conditionals: Vec<ConditionalEstimate>,
    pub differences: Vec<Difference>,
    pub binomial: Option<BinomialSection>,
    pub score_name: String,
    pub grid: Vec<f64>,
    pub curves: Vec<CumulativeCurve>,
    pub score_summary: Vec<GroupSummary>,
    /// Comment length in characters per sentiment.
    pub comment_length: Vec<GroupSummary>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub config: StatsConfig,
    pub sections: Vec<SurveySection>,
}

/// A response joined to the sentiment of its comment.
struct Joined<'a> {
    response: &'a SurveyResponse,
    sentiment: Sentiment,
    comment_chars: usize,
}

fn join<'a>(corpus: &'a Corpus, kind: SurveyKind) -> (usize, Vec<Joined<'a>>) {
    let mut total = 0;
    let mut joined = Vec::new();
    for r in corpus.responses().iter().filter(|r| r.survey_kind == kind) {
        total += 1;
        let Some(c) = r.comment_id.as_deref().and_then(|id| corpus.comment(id)) else {
            continue;
        };
        if let Some(sentiment) = c.sentiment {
            joined.push(Joined {
                response: r,
                sentiment,
                comment_chars: c.text.chars().count(),
            });
        }
    }
    (total, joined)
}

fn by_sentiment(values: impl Iterator<Item = (Sentiment, f64)>) -> Vec<ScoreSeries> {
    let mut groups: HashMap<Sentiment, Vec<f64>> = HashMap::new();
    for (s, v) in values {
        groups.entry(s).or_default().push(v);
    }
    Sentiment::ALL
        .iter()
        .map(|&s| ScoreSeries::new(s.as_str(), groups.remove(&s).unwrap_or_default()))
        .collect()
}

fn conditional(
    table: &ContingencyTable,
    given: &str,
    targets: &[&str],
    level: f64,
) -> Result<ConditionalEstimate, StatsError> {
    let f = conditional_probability_any(table, given, targets)?;
    Ok(ConditionalEstimate {
        target: targets.iter().map(|s| s.to_string()).collect(),
        given: given.to_string(),
        successes: f.numerator,
        trials: f.denominator,
        interval: wilson_interval(f.numerator, f.denominator, level)?,
    })
}

/// Collects an optional analysis, turning its error into a note.
fn attempt<T>(notes: &mut Vec<String>, what: &str, r: Result<T, StatsError>) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("{what} skipped: {e}"));
            None
        }
    }
}

struct SectionInput {
    kind: SurveyKind,
    responses: usize,
    with_comment: usize,
    table: ContingencyTable,
    score_name: &'static str,
    scores: Vec<ScoreSeries>,
    grid: Vec<f64>,
    lengths: Vec<ScoreSeries>,
    notes: Vec<String>,
}

fn common_section(input: SectionInput, cfg: &StatsConfig) -> Result<SurveySection, StatsError> {
    let mut notes = input.notes;
    let chi_squared = attempt(
        &mut notes,
        "chi-squared test",
        chi_squared_test(&input.table),
    );
    let cramers_v = if chi_squared.is_some() {
        attempt(
            &mut notes,
            "Cramér's V",
            bootstrap_ci_cramers_v(&input.table, cfg.bootstrap_replicates, cfg.level, cfg.seed),
        )
    } else {
        None
    };
    let curves = cumulative_frequency(&input.scores, &input.grid)?;
    Ok(SurveySection {
        kind: input.kind,
        responses: input.responses,
        with_comment: input.with_comment,
        table: input.table,
        chi_squared,
        cramers_v,
        conditionals: Vec::new(),
        differences: Vec::new(),
        binomial: None,
        score_name: input.score_name.to_string(),
        grid: input.grid,
        curves,
        score_summary: group_mean_sd(&input.scores),
        comment_length: group_mean_sd(&input.lengths),
        notes,
    })
}

fn tutorial_section(corpus: &Corpus, cfg: &StatsConfig) -> Result<SurveySection, StatsError> {
    let (responses, joined) = join(corpus, SurveyKind::Tutorial);
    if responses == 0 {
        return Err(StatsError::NoResponses(
            SurveyKind::Tutorial.as_str().into(),
        ));
    }
    let mut notes = Vec::new();
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for j in &joined {
        match j
            .response
            .answers
            .get(questions::NPS)
            .map(|&r| nps_categorize(r))
        {
            Some(Ok(cat)) => pairs.push((j.sentiment, cat)),
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        notes.push(format!(
            "{skipped} commented responses without a usable NPS answer"
        ));
    }
    let scores = by_sentiment(joined.iter().filter_map(|j| {
        let items: Vec<Option<i64>> = questions::TUTORIAL_ITEMS
            .iter()
            .map(|q| j.response.answers.get(*q).copied())
            .collect();
        tutorial_quality_score(&items)
            .ok()
            .map(|s| (j.sentiment, s))
    }));
    let lengths = by_sentiment(joined.iter().map(|j| (j.sentiment, j.comment_chars as f64)));
    let table = ContingencyTable::from_pairs(&pairs);
    let mut section = common_section(
        SectionInput {
            kind: SurveyKind::Tutorial,
            responses,
            with_comment: joined.len(),
            table,
            score_name: "tutorial quality score",
            scores,
            grid: linear_grid(0.0, 10.0, cfg.tutorial_grid_step),
            lengths,
            notes,
        },
        cfg,
    )?;
    let neg = Sentiment::Negative.as_str();
    let promoter = NpsCategory::Promoter.label();
    for target in [promoter, NpsCategory::Detractor.label()] {
        if let Some(c) = attempt(
            &mut section.notes,
            "conditional probability",
            conditional(&section.table, neg, &[target], cfg.level),
        ) {
            section.conditionals.push(c);
        }
    }
    if let Some(c) = section.conditionals.first() {
        let (k, n) = (c.successes, c.trials);
        section.binomial = attempt(
            &mut section.notes,
            "binomial test",
            binomial_test_one_tailed(k, n, 0.5).map(|result| BinomialSection {
                description: format!("{promoter} versus not {promoter} among {neg} comments"),
                successes: k,
                trials: n,
                p0: 0.5,
                result,
            }),
        );
    }
    Ok(section)
}

fn app_section(corpus: &Corpus, cfg: &StatsConfig) -> Result<SurveySection, StatsError> {
    let (responses, joined) = join(corpus, SurveyKind::AppUsability);
    if responses == 0 {
        return Err(StatsError::NoResponses(
            SurveyKind::AppUsability.as_str().into(),
        ));
    }
    let mut notes = Vec::new();
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for j in &joined {
        match j
            .response
            .answers
            .get(questions::PSAT)
            .map(|&r| SatisfactionLevel::from_rating(r))
        {
            Some(Ok(level)) => pairs.push((j.sentiment, level)),
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        notes.push(format!(
            "{skipped} commented responses without a usable satisfaction answer"
        ));
    }
    let scores = by_sentiment(joined.iter().filter_map(|j| {
        let a = &j.response.answers;
        let (ease, does) = (a.get(questions::EASE)?, a.get(questions::DOES_WHAT)?);
        uxlite_score(*ease, *does).ok().map(|s| (j.sentiment, s))
    }));
    let lengths = by_sentiment(joined.iter().map(|j| (j.sentiment, j.comment_chars as f64)));
    let table = ContingencyTable::from_pairs(&pairs);
    let mut section = common_section(
        SectionInput {
            kind: SurveyKind::AppUsability,
            responses,
            with_comment: joined.len(),
            table,
            score_name: "UX-Lite score",
            scores,
            grid: linear_grid(0.0, 100.0, cfg.uxlite_grid_step),
            lengths,
            notes,
        },
        cfg,
    )?;
    let satisfied: Vec<&str> = SatisfactionLevel::ALL
        .iter()
        .filter(|l| l.is_satisfied())
        .map(|l| l.label())
        .collect();
    let dissatisfied: Vec<&str> = SatisfactionLevel::ALL
        .iter()
        .filter(|l| l.is_dissatisfied())
        .map(|l| l.label())
        .collect();
    let (pos, neg) = (Sentiment::Positive.as_str(), Sentiment::Negative.as_str());
    for given in [pos, neg] {
        if let Some(c) = attempt(
            &mut section.notes,
            "conditional probability",
            conditional(&section.table, given, &satisfied, cfg.level),
        ) {
            section.conditionals.push(c);
        }
    }
    if let Some(pp) = attempt(
        &mut section.notes,
        "satisfaction gap",
        probability_difference(&section.table, neg, &dissatisfied, &satisfied),
    ) {
        section.differences.push(Difference {
            description: format!(
                "Pr({} | {neg}) - Pr({} | {neg})",
                dissatisfied.join(" or "),
                satisfied.join(" or ")
            ),
            percentage_points: pp,
        });
        // Among negative comments with a polar answer, is dissatisfaction
        // more likely than satisfaction?
        let d =
            conditional_probability_any(&section.table, neg, &dissatisfied).map(|f| f.numerator);
        let s = conditional_probability_any(&section.table, neg, &satisfied).map(|f| f.numerator);
        if let (Ok(d), Ok(s)) = (d, s) {
            section.binomial = attempt(
                &mut section.notes,
                "binomial test",
                binomial_test_one_tailed(d, d + s, 0.5).map(|result| BinomialSection {
                    description: format!("dissatisfied versus satisfied among {neg} comments"),
                    successes: d,
                    trials: d + s,
                    p0: 0.5,
                    result,
                }),
            );
        }
    }
    Ok(section)
}

/// Runs every analysis for the requested survey kinds. Fails with
/// [`StatsError::NoResponses`] when a requested kind has no responses at
/// all; thinner data yields a section with notes instead.
pub fn analyze(
    corpus: &Corpus,
    kinds: &[SurveyKind],
    cfg: &StatsConfig,
) -> Result<StatsReport, StatsError> {
    let sections = kinds
        .iter()
        .map(|k| match k {
            SurveyKind::Tutorial => tutorial_section(corpus, cfg),
            SurveyKind::AppUsability => app_section(corpus, cfg),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StatsReport {
        config: cfg.clone(),
        sections,
    })
}

fn fmt_p(p: f64) -> String {
    if p == 0.0 {
        "< 1e-300".to_string()
    } else if p < 1e-3 {
        format!("{p:.1e}")
    } else {
        format!("{p:.3}")
    }
}

fn pct(x: f64) -> String {
    format!("{:.2}%", x * 100.0)
}

fn summary_table(out: &mut String, title: &str, rows: &[GroupSummary]) {
    let _ = writeln!(out, "| Sentiment | n | {title} mean | SD |");
    let _ = writeln!(out, "|---|---|---|---|");
    for g in rows {
        let mean = g.mean.map_or("-".into(), |m| format!("{m:.2}"));
        let sd = g.sd.map_or("-".into(), |s| format!("{s:.2}"));
        let _ = writeln!(out, "| {} | {} | {mean} | {sd} |", g.group, g.n);
    }
    out.push('\n');
}

impl SurveySection {
    pub fn title(&self) -> &'static str {
        match self.kind {
            SurveyKind::Tutorial => "Tutorial survey",
            SurveyKind::AppUsability => "Application usability survey",
        }
    }

    pub fn to_markdown(&self, heading_level: usize) -> String {
        let h = "#".repeat(heading_level);
        let mut out = String::new();
        let _ = writeln!(out, "{h} {}\n", self.title());
        let _ = writeln!(
            out,
            "Responses: {} ({} with a comment)\n",
            self.responses, self.with_comment
        );

        let t = &self.table;
        let _ = writeln!(out, "| Sentiment | {} | Total |", t.cols().join(" | "));
        let _ = writeln!(out, "|---|{}---|", "---|".repeat(t.cols().len()));
        for (i, row) in t.counts().iter().enumerate() {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            let _ = writeln!(
                out,
                "| {} | {} | {} |",
                t.rows()[i],
                cells.join(" | "),
                t.row_total(i)
            );
        }
        out.push('\n');

        if let Some(c) = &self.chi_squared {
            let _ = writeln!(
                out,
                "- χ²(df = {}) = {:.2}, p = {}",
                c.df.unwrap_or(0),
                c.statistic,
                fmt_p(c.p_value)
            );
        }
        if let Some(b) = &self.cramers_v {
            let iv = &b.interval;
            let _ = writeln!(
                out,
                "- Cramér's V = {:.2} ({:.0}% bootstrap CI [{:.2}, {:.2}], {} replicates)",
                iv.point,
                iv.level * 100.0,
                iv.lower,
                iv.upper,
                b.replicates
            );
        }
        for c in &self.conditionals {
            let iv = &c.interval;
            let _ = writeln!(
                out,
                "- Pr({} | {}) = {} ({}/{}; {:.0}% CI [{}, {}])",
                c.target.join(" or "),
                c.given,
                pct(iv.point),
                c.successes,
                c.trials,
                iv.level * 100.0,
                pct(iv.lower),
                pct(iv.upper)
            );
        }
        for d in &self.differences {
            let _ = writeln!(
                out,
                "- {} = {:.2} percentage points",
                d.description, d.percentage_points
            );
        }
        if let Some(b) = &self.binomial {
            let _ = writeln!(
                out,
                "- One-tailed exact binomial test, {} ({} of {}, p0 = {}): p = {}",
                b.description,
                b.successes,
                b.trials,
                b.p0,
                fmt_p(b.result.p_value)
            );
        }
        out.push('\n');
        summary_table(&mut out, &self.score_name, &self.score_summary);
        summary_table(&mut out, "comment length", &self.comment_length);
        for n in &self.notes {
            let _ = writeln!(out, "> Note: {n}");
        }
        if !self.notes.is_empty() {
            out.push('\n');
        }
        out
    }
}

impl StatsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Sentiment and UX metrics\n\n");
        for s in &self.sections {
            out.push_str(&s.to_markdown(2));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Comment, LabelSource, TopicTaxonomy};
    use chrono::{TimeZone, Utc};
    use std::collections::{BTreeMap, BTreeSet};

    fn corpus_from_table3() -> Corpus {
        let t = Utc.with_ymd_and_hms(2024, 3, 1, 0, 0, 0).unwrap();
        let counts = [[120, 52, 154], [4, 7, 27], [5, 13, 157]];
        let ratings = [3, 7, 10];
        let mut comments = Vec::new();
        let mut responses = Vec::new();
        for (i, row) in counts.iter().enumerate() {
            for (j, &n) in row.iter().enumerate() {
                for _ in 0..n {
                    let id = format!("c{}", comments.len());
                    comments.push(Comment {
                        id: id.clone(),
                        product_id: "p".into(),
                        timestamp: t,
                        text: "x".repeat(10 + i),
                        language: "en".into(),
                        translated_text: None,
                        sentiment: Some(Sentiment::ALL[i]),
                        labels: BTreeSet::new(),
                        label_source: LabelSource::Unlabeled,
                    });
                    let mut answers = BTreeMap::new();
                    answers.insert(questions::NPS.to_string(), ratings[j]);
                    answers.insert("realistic".to_string(), 8);
                    responses.push(SurveyResponse {
                        respondent_id: format!("r{id}"),
                        product_id: "p".into(),
                        timestamp: t,
                        survey_kind: SurveyKind::Tutorial,
                        answers,
                        comment_id: Some(id),
                    });
                }
            }
        }
        Corpus::from_comments(TopicTaxonomy::default(), comments)
            .unwrap()
            .with_responses(responses)
            .unwrap()
    }

    #[test]
    fn tutorial_replay_reproduces_table3() {
        let cfg = StatsConfig {
            bootstrap_replicates: 500,
            ..Default::default()
        };
        let report = analyze(&corpus_from_table3(), &[SurveyKind::Tutorial], &cfg).unwrap();
        let s = &report.sections[0];
        assert_eq!(
            s.table.counts(),
            &[vec![120, 52, 154], vec![4, 7, 27], vec![5, 13, 157]]
        );
        let md = report.to_markdown();
        assert!(md.contains("χ²(df = 4) = 98.11, p = 2.5e-20"), "{md}");
        assert!(md.contains("Cramér's V = 0.30"));
        assert!(md.contains("Pr(Promoter | Negative) = 47.24% (154/326; 95% CI [41.88%, 52.66%])"));
        assert!(md.contains("p = 0.854"));
        assert_eq!(s.score_summary[0].mean, Some(8.0));
    }

    #[test]
    fn missing_kind_is_an_error() {
        let err = analyze(
            &corpus_from_table3(),
            &[SurveyKind::AppUsability],
            &StatsConfig::default(),
        )
        .unwrap_err();
        assert_eq!(err, StatsError::NoResponses("app".into()));
    }
}
