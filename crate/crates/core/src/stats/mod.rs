//! Survey statistics: metric scoring, contingency-table tests, interval
//! estimates, cumulative curves and the assembled statistics report.

use thiserror::Error;

pub mod contingency;
pub mod curves;
pub mod intervals;
pub mod metrics;
pub mod report;
pub mod special;

pub use contingency::{
    bootstrap_ci_cramers_v, chi_squared_test, conditional_probability, conditional_probability_any,
    cramers_v, probability_difference, BootstrapInterval, ContingencyTable, Fraction, TestMethod,
    TestResult,
};
pub use curves::{
    cumulative_frequency, group_mean_sd, linear_grid, write_curves_csv, CumulativeCurve,
    GroupSummary, ScoreSeries,
};
pub use intervals::{binomial_test_one_tailed, wilson_interval, IntervalEstimate, IntervalMethod};
pub use metrics::{
    net_promoter_score, nps_categorize, psat_share, tutorial_quality_score, uxlite_score,
    NpsCategory, SatisfactionLevel,
};
pub use report::{analyze, StatsConfig, StatsReport, SurveySection};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("{what} {value} is out of range")]
    OutOfRange { what: &'static str, value: f64 },
    #[error("no answered items")]
    AllMissing,
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("degenerate table: {0}")]
    DegenerateTable(String),
    #[error("no observations in condition `{0}`")]
    EmptyCondition(String),
    #[error("invalid counts: {successes} successes out of {trials} trials")]
    InvalidCounts { successes: u64, trials: u64 },
    #[error("column sets overlap")]
    OverlappingSets,
    #[error("{0} bootstrap replicates requested")]
    TooFewReplicates(usize),
    #[error("no usable bootstrap resample after {attempts} attempts")]
    ResampleExhausted { attempts: usize },
    #[error("confidence level {0} not in (0, 1)")]
    InvalidLevel(f64),
    #[error("grid must be finite and strictly increasing")]
    InvalidGrid,
    #[error("table shape: {0}")]
    Shape(String),
    #[error("no {0} survey responses")]
    NoResponses(String),
}

/// A closed set of categories with a fixed display order.
pub trait Category: Copy + Eq + std::fmt::Debug + 'static {
    const ALL: &'static [Self];
    fn label(self) -> &'static str;
}

impl Category for crate::corpus::Sentiment {
    const ALL: &'static [Self] = &crate::corpus::Sentiment::ALL;

    fn label(self) -> &'static str {
        self.as_str()
    }
}

fn check_level(level: f64) -> Result<(), StatsError> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(StatsError::InvalidLevel(level))
    }
}
