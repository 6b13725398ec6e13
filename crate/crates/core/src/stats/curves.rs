//! Per-group empirical CDFs and descriptive statistics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::StatsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub group: String,
    pub values: Vec<f64>,
}

impl ScoreSeries {
    pub fn new(group: impl Into<String>, values: Vec<f64>) -> Self {
        ScoreSeries {
            group: group.into(),
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeCurve {
    pub group: String,
    /// Fraction of scores `<= grid[i]`; `None` when the group is empty.
    pub fractions: Option<Vec<f64>>,
}

/// Empirical CDF of every series evaluated at `grid`.
pub fn cumulative_frequency(
    series: &[ScoreSeries],
    grid: &[f64],
) -> Result<Vec<CumulativeCurve>, StatsError> {
    if grid.iter().any(|x| !x.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(StatsError::InvalidGrid);
    }
    Ok(series
        .iter()
        .map(|s| {
            let fractions = if s.values.is_empty() {
                log::warn!("group `{}` has no scores; curve omitted", s.group);
                None
            } else {
                let mut sorted = s.values.clone();
                sorted.sort_by(f64::total_cmp);
                let n = sorted.len() as f64;
                Some(
                    grid.iter()
                        .map(|&x| sorted.partition_point(|&v| v <= x) as f64 / n)
                        .collect(),
                )
            };
            CumulativeCurve {
                group: s.group.clone(),
                fractions,
            }
        })
        .collect())
}

/// Evenly spaced grid from `start` to `end` inclusive.
pub fn linear_grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    let n = ((end - start) / step).round() as usize;
    (0..=n).map(|i| start + i as f64 * step).collect()
}

/// Writes curves as CSV rows `group,x,cumulative_fraction`; empty groups
/// are skipped.
pub fn write_curves_csv<W: Write>(
    w: W,
    curves: &[CumulativeCurve],
    grid: &[f64],
) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["group", "x", "cumulative_fraction"])?;
    for c in curves {
        if let Some(fr) = &c.fractions {
            for (x, f) in grid.iter().zip(fr) {
                out.write_record([c.group.as_str(), &x.to_string(), &f.to_string()])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub n: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation (n - 1 denominator); needs n >= 2.
    pub sd: Option<f64>,
}

pub fn group_mean_sd(series: &[ScoreSeries]) -> Vec<GroupSummary> {
    series
        .iter()
        .map(|s| {
            let n = s.values.len();
            let mean = (n > 0).then(|| s.values.iter().sum::<f64>() / n as f64);
            let sd = mean.filter(|_| n >= 2).map(|m| {
                let ss: f64 = s.values.iter().map(|v| (v - m) * (v - m)).sum();
                (ss / (n - 1) as f64).sqrt()
            });
            GroupSummary {
                group: s.group.clone(),
                n,
                mean,
                sd,
            }
        })
        .collect()
}
