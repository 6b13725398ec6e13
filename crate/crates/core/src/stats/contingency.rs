//! Contingency tables, Pearson's χ², Cramér's V and its bootstrap interval.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::intervals::{percentile, IntervalEstimate, IntervalMethod};
use super::special::chi_squared_sf;
use super::{Category, StatsError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    rows: Vec<String>,
    cols: Vec<String>,
    counts: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestMethod {
    ChiSquared,
    BinomialOneTailedUpper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    /// Degrees of freedom; absent for the binomial test.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df: Option<usize>,
    pub p_value: f64,
    pub method: TestMethod,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// `numerator / denominator`, kept as counts so intervals can be derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraction {
    pub numerator: u64,
    pub denominator: u64,
}

impl Fraction {
    pub fn value(self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }
}

impl ContingencyTable {
    pub fn new(
        rows: Vec<String>,
        cols: Vec<String>,
        counts: Vec<Vec<u64>>,
    ) -> Result<Self, StatsError> {
        if counts.len() != rows.len() || counts.iter().any(|r| r.len() != cols.len()) {
            return Err(StatsError::Shape(format!(
                "{} row labels and {} column labels do not match the count matrix",
                rows.len(),
                cols.len()
            )));
        }
        Ok(ContingencyTable { rows, cols, counts })
    }

    /// Unlabelled table with rows `R0, R1, ...` and columns `C0, C1, ...`.
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self, StatsError> {
        let r = counts.len();
        let c = counts.first().map_or(0, Vec::len);
        let rows = (0..r).map(|i| format!("R{i}")).collect();
        let cols = (0..c).map(|j| format!("C{j}")).collect();
        Self::new(rows, cols, counts)
    }

    /// Tallies `(row, column)` pairs over the full declared domains, so
    /// categories that never occur still get a zero row or column.
    pub fn from_pairs<R: Category, C: Category>(pairs: &[(R, C)]) -> Self {
        let idx = |all: &[R], v: R| {
            all.iter()
                .position(|&a| a == v)
                .expect("ALL lists every variant")
        };
        let cidx = |all: &[C], v: C| {
            all.iter()
                .position(|&a| a == v)
                .expect("ALL lists every variant")
        };
        let mut counts = vec![vec![0u64; C::ALL.len()]; R::ALL.len()];
        for &(r, c) in pairs {
            counts[idx(R::ALL, r)][cidx(C::ALL, c)] += 1;
        }
        ContingencyTable {
            rows: R::ALL.iter().map(|r| r.label().to_string()).collect(),
            cols: C::ALL.iter().map(|c| c.label().to_string()).collect(),
            counts,
        }
    }

    /// Like [`ContingencyTable::from_pairs`] but with string categories
    /// checked against declared domains.
    pub fn from_labeled_pairs(
        rows: &[&str],
        cols: &[&str],
        pairs: &[(&str, &str)],
    ) -> Result<Self, StatsError> {
        let mut counts = vec![vec![0u64; cols.len()]; rows.len()];
        for &(r, c) in pairs {
            let i = rows
                .iter()
                .position(|&x| x == r)
                .ok_or_else(|| StatsError::UnknownCategory(r.to_string()))?;
            let j = cols
                .iter()
                .position(|&x| x == c)
                .ok_or_else(|| StatsError::UnknownCategory(c.to_string()))?;
            counts[i][j] += 1;
        }
        Self::new(
            rows.iter().map(|s| s.to_string()).collect(),
            cols.iter().map(|s| s.to_string()).collect(),
            counts,
        )
    }

    pub fn rows(&self) -> &[String] {
        &self.rows
    }

    pub fn cols(&self) -> &[String] {
        &self.cols
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_total(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_total(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn row_index(&self, label: &str) -> Result<usize, StatsError> {
        self.rows
            .iter()
            .position(|r| r == label)
            .ok_or_else(|| StatsError::UnknownCategory(label.to_string()))
    }

    pub fn col_index(&self, label: &str) -> Result<usize, StatsError> {
        self.cols
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| StatsError::UnknownCategory(label.to_string()))
    }

    /// Copy without all-zero rows and columns.
    pub fn without_empty(&self) -> ContingencyTable {
        let keep_r: Vec<usize> = (0..self.rows.len())
            .filter(|&i| self.row_total(i) > 0)
            .collect();
        let keep_c: Vec<usize> = (0..self.cols.len())
            .filter(|&j| self.col_total(j) > 0)
            .collect();
        ContingencyTable {
            rows: keep_r.iter().map(|&i| self.rows[i].clone()).collect(),
            cols: keep_c.iter().map(|&j| self.cols[j].clone()).collect(),
            counts: keep_r
                .iter()
                .map(|&i| keep_c.iter().map(|&j| self.counts[i][j]).collect())
                .collect(),
        }
    }

    /// Expands the table back into one `(row, column)` index pair per count.
    pub fn to_index_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.total() as usize);
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &n) in row.iter().enumerate() {
                out.extend(std::iter::repeat((i, j)).take(n as usize));
            }
        }
        out
    }
}

/// Pearson statistic of a table with no empty rows or columns.
fn pearson(counts: &[Vec<u64>]) -> f64 {
    let row_tot: Vec<f64> = counts
        .iter()
        .map(|r| r.iter().sum::<u64>() as f64)
        .collect();
    let ncol = counts[0].len();
    let col_tot: Vec<f64> = (0..ncol)
        .map(|j| counts.iter().map(|r| r[j]).sum::<u64>() as f64)
        .collect();
    let n: f64 = row_tot.iter().sum();
    let mut stat = 0.0;
    for (i, row) in counts.iter().enumerate() {
        for (j, &o) in row.iter().enumerate() {
            let e = row_tot[i] * col_tot[j] / n;
            let d = o as f64 - e;
            stat += d * d / e;
        }
    }
    stat
}

fn reduced(table: &ContingencyTable) -> Result<(ContingencyTable, Vec<String>), StatsError> {
    let r = table.without_empty();
    let mut warnings = Vec::new();
    if r.rows.len() != table.rows.len() || r.cols.len() != table.cols.len() {
        let dropped: Vec<&str> = table
            .rows
            .iter()
            .chain(&table.cols)
            .filter(|l| !r.rows.contains(l) && !r.cols.contains(l))
            .map(String::as_str)
            .collect();
        let msg = format!("dropped empty categories: {}", dropped.join(", "));
        log::warn!("{msg}");
        warnings.push(msg);
    }
    if r.rows.len() < 2 || r.cols.len() < 2 {
        return Err(StatsError::DegenerateTable(format!(
            "{}x{} after dropping empty rows and columns",
            r.rows.len(),
            r.cols.len()
        )));
    }
    Ok((r, warnings))
}

/// Pearson χ² test of independence, without continuity correction.
/// Empty rows and columns are dropped (with a warning) before testing.
pub fn chi_squared_test(table: &ContingencyTable) -> Result<TestResult, StatsError> {
    let (t, warnings) = reduced(table)?;
    let statistic = pearson(&t.counts);
    let df = (t.rows.len() - 1) * (t.cols.len() - 1);
    Ok(TestResult {
        statistic,
        df: Some(df),
        p_value: chi_squared_sf(statistic, df as f64),
        method: TestMethod::ChiSquared,
        warnings,
    })
}

fn v_from_counts(counts: &[Vec<u64>]) -> f64 {
    let n: u64 = counts.iter().flatten().sum();
    let k = counts.len().min(counts[0].len());
    (pearson(counts) / (n as f64 * (k - 1) as f64))
        .sqrt()
        .min(1.0)
}

/// Cramér's V = sqrt(χ² / (n (min(r, c) - 1))), bias-uncorrected.
pub fn cramers_v(table: &ContingencyTable) -> Result<f64, StatsError> {
    let (t, _) = reduced(table)?;
    Ok(v_from_counts(&t.counts))
}

/// Attempts per replicate before the bootstrap gives up on drawing a
/// table with every row and column occupied.
pub const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub interval: IntervalEstimate,
    pub replicates: usize,
    /// Resamples discarded because a row or column came out empty.
    pub redraws: usize,
}

fn one_replicate(
    pairs: &[(usize, usize)],
    r: usize,
    c: usize,
    seed: u64,
    index: u64,
) -> Result<(f64, usize), StatsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let n = pairs.len();
    for attempt in 0..MAX_REDRAWS {
        let mut counts = vec![vec![0u64; c]; r];
        for _ in 0..n {
            let (i, j) = pairs[rng.gen_range(0..n)];
            counts[i][j] += 1;
        }
        let full = r >= 2
            && c >= 2
            && counts.iter().all(|row| row.iter().any(|&x| x > 0))
            && (0..c).all(|j| counts.iter().any(|row| row[j] > 0));
        if full {
            return Ok((v_from_counts(&counts), attempt));
        }
    }
    Err(StatsError::ResampleExhausted {
        attempts: MAX_REDRAWS,
    })
}

/// Percentile bootstrap interval for Cramér's V by resampling the
/// observation pairs behind `table`.
///
/// Replicate `i` draws from its own ChaCha stream `(seed, i)`, so the
/// result does not depend on thread scheduling.
pub fn bootstrap_ci_cramers_v(
    table: &ContingencyTable,
    replicates: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapInterval, StatsError> {
    super::check_level(level)?;
    if replicates == 0 {
        return Err(StatsError::TooFewReplicates(0));
    }
    if replicates < 1000 {
        log::warn!("{replicates} bootstrap replicates; at least 1000 are recommended for reported intervals");
    }
    let base = table.without_empty();
    let (r, c) = (base.rows.len(), base.cols.len());
    let pairs = base.to_index_pairs();
    if pairs.is_empty() {
        return Err(StatsError::DegenerateTable("empty table".into()));
    }

    let run = |i: usize| one_replicate(&pairs, r, c, seed, i as u64);
    #[cfg(feature = "parallel")]
    let results: Vec<Result<(f64, usize), StatsError>> = {
        use rayon::prelude::*;
        (0..replicates).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<(f64, usize), StatsError>> = (0..replicates).map(run).collect();

    let mut values = Vec::with_capacity(replicates);
    let mut redraws = 0;
    for res in results {
        let (v, extra) = res?;
        values.push(v);
        redraws += extra;
    }
    if redraws > 0 {
        log::info!("bootstrap redrew {redraws} degenerate resamples");
    }
    let point = cramers_v(table)?;
    values.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    Ok(BootstrapInterval {
        interval: IntervalEstimate {
            point,
            lower: percentile(&values, alpha / 2.0),
            upper: percentile(&values, 1.0 - alpha / 2.0),
            level,
            method: IntervalMethod::BootstrapPercentile,
        },
        replicates,
        redraws,
    })
}

/// Share of row `given` falling in any of the `targets` columns.
pub fn conditional_probability_any(
    table: &ContingencyTable,
    given: &str,
    targets: &[&str],
) -> Result<Fraction, StatsError> {
    let i = table.row_index(given)?;
    let mut seen = Vec::new();
    let mut numerator = 0;
    for t in targets {
        let j = table.col_index(t)?;
        if !seen.contains(&j) {
            seen.push(j);
            numerator += table.counts[i][j];
        }
    }
    let denominator = table.row_total(i);
    if denominator == 0 {
        return Err(StatsError::EmptyCondition(given.to_string()));
    }
    Ok(Fraction {
        numerator,
        denominator,
    })
}

/// Pr(target | given) = cell count / row total.
pub fn conditional_probability(
    table: &ContingencyTable,
    given: &str,
    target: &str,
) -> Result<Fraction, StatsError> {
    conditional_probability_any(table, given, &[target])
}

/// Pr(any of `a` | given) - Pr(any of `b` | given), in percentage points.
pub fn probability_difference(
    table: &ContingencyTable,
    given: &str,
    a: &[&str],
    b: &[&str],
) -> Result<f64, StatsError> {
    if a.iter().any(|x| b.contains(x)) {
        return Err(StatsError::OverlappingSets);
    }
    let pa = conditional_probability_any(table, given, a)?;
    let pb = conditional_probability_any(table, given, b)?;
    Ok((pa.numerator as f64 - pb.numerator as f64) / pa.denominator as f64 * 100.0)
}
