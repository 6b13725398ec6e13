//! UX metric scoring: NPS, tutorial quality, UX-Lite and PSAT.

use serde::{Deserialize, Serialize};

use super::{Category, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NpsCategory {
    Detractor,
    Passive,
    Promoter,
}

impl Category for NpsCategory {
    const ALL: &'static [Self] = &[
        NpsCategory::Detractor,
        NpsCategory::Passive,
        NpsCategory::Promoter,
    ];

    fn label(self) -> &'static str {
        match self {
            NpsCategory::Detractor => "Detractor",
            NpsCategory::Passive => "Passive",
            NpsCategory::Promoter => "Promoter",
        }
    }
}

/// Promoters rate 9-10, passives 7-8, detractors 0-6.
pub fn nps_categorize(rating: i64) -> Result<NpsCategory, StatsError> {
    match rating {
        0..=6 => Ok(NpsCategory::Detractor),
        7..=8 => Ok(NpsCategory::Passive),
        9..=10 => Ok(NpsCategory::Promoter),
        _ => Err(StatsError::OutOfRange {
            what: "NPS rating",
            value: rating as f64,
        }),
    }
}

/// Percentage of promoters minus percentage of detractors, in [-100, 100].
pub fn net_promoter_score(ratings: &[i64]) -> Result<f64, StatsError> {
    if ratings.is_empty() {
        return Err(StatsError::AllMissing);
    }
    let mut promoters = 0i64;
    let mut detractors = 0i64;
    for &r in ratings {
        match nps_categorize(r)? {
            NpsCategory::Promoter => promoters += 1,
            NpsCategory::Detractor => detractors += 1,
            NpsCategory::Passive => {}
        }
    }
    Ok((promoters - detractors) as f64 / ratings.len() as f64 * 100.0)
}

/// Mean of the answered tutorial items (each 0-10).
pub fn tutorial_quality_score(items: &[Option<i64>]) -> Result<f64, StatsError> {
    let mut sum = 0i64;
    let mut n = 0i64;
    for &v in items.iter().flatten() {
        if !(0..=10).contains(&v) {
            return Err(StatsError::OutOfRange {
                what: "tutorial item",
                value: v as f64,
            });
        }
        sum += v;
        n += 1;
    }
    if n == 0 {
        return Err(StatsError::AllMissing);
    }
    Ok(sum as f64 / n as f64)
}

/// Two five-point items rescaled to 0-100.
pub fn uxlite_score(ease: i64, does_what: i64) -> Result<f64, StatsError> {
    for (what, v) in [("UX-Lite ease", ease), ("UX-Lite does-what", does_what)] {
        if !(1..=5).contains(&v) {
            return Err(StatsError::OutOfRange {
                what,
                value: v as f64,
            });
        }
    }
    Ok(((does_what - 1) + (ease - 1)) as f64 / 8.0 * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SatisfactionLevel {
    VeryDissatisfied,
    Dissatisfied,
    Neither,
    Satisfied,
    VerySatisfied,
}

impl Category for SatisfactionLevel {
    const ALL: &'static [Self] = &[
        SatisfactionLevel::VeryDissatisfied,
        SatisfactionLevel::Dissatisfied,
        SatisfactionLevel::Neither,
        SatisfactionLevel::Satisfied,
        SatisfactionLevel::VerySatisfied,
    ];

    fn label(self) -> &'static str {
        match self {
            SatisfactionLevel::VeryDissatisfied => "Very Dissatisfied",
            SatisfactionLevel::Dissatisfied => "Dissatisfied",
            SatisfactionLevel::Neither => "Neither",
            SatisfactionLevel::Satisfied => "Satisfied",
            SatisfactionLevel::VerySatisfied => "Very Satisfied",
        }
    }
}

impl SatisfactionLevel {
    /// PSAT answer 1 (very dissatisfied) through 5 (very satisfied).
    pub fn from_rating(rating: i64) -> Result<Self, StatsError> {
        usize::try_from(rating - 1)
            .ok()
            .and_then(|i| Self::ALL.get(i).copied())
            .ok_or(StatsError::OutOfRange {
                what: "PSAT rating",
                value: rating as f64,
            })
    }

    pub fn is_satisfied(self) -> bool {
        matches!(
            self,
            SatisfactionLevel::Satisfied | SatisfactionLevel::VerySatisfied
        )
    }

    pub fn is_dissatisfied(self) -> bool {
        matches!(
            self,
            SatisfactionLevel::VeryDissatisfied | SatisfactionLevel::Dissatisfied
        )
    }
}

/// Share of respondents answering Satisfied or Very Satisfied.
pub fn psat_share(ratings: &[i64]) -> Result<f64, StatsError> {
    if ratings.is_empty() {
        return Err(StatsError::AllMissing);
    }
    let mut sat = 0usize;
    for &r in ratings {
        if SatisfactionLevel::from_rating(r)?.is_satisfied() {
            sat += 1;
        }
    }
    Ok(sat as f64 / ratings.len() as f64)
}
