//! Survey dimension score → descriptor level, and respondent age cohorts.

use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("{0}")]
    Range(String),
    #[error("levels table: {0}")]
    Csv(#[from] csv::Error),
}

/// Whether a high raw value maps to a high score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "+")]
    Positive,
    #[serde(rename = "-")]
    Negative,
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "+" => Ok(Direction::Positive),
            "-" | "−" => Ok(Direction::Negative),
            other => Err(format!("direction must be + or -, got `{other}`")),
        }
    }
}

/// `(raw − lo)/(hi − lo)`, flipped for [`Direction::Negative`].
pub fn normalise_dimension(
    raw_mean: f64,
    lo: f64,
    hi: f64,
    direction: Direction,
) -> Result<f64, ProfileError> {
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(ProfileError::Range(format!("scale [{lo}, {hi}] is empty")));
    }
    if !(lo..=hi).contains(&raw_mean) {
        return Err(ProfileError::Range(format!(
            "raw mean {raw_mean} is outside [{lo}, {hi}]"
        )));
    }
    let s = (raw_mean - lo) / (hi - lo);
    Ok(match direction {
        Direction::Positive => s,
        Direction::Negative => 1.0 - s,
    })
}

/// Quartile bucket: `≥0.75 → 1`, `≥0.50 → 2`, `≥0.25 → 3`, otherwise `4`.
pub fn descriptor_level(score: f64) -> u8 {
    if score >= 0.75 {
        1
    } else if score >= 0.5 {
        2
    } else if score >= 0.25 {
        3
    } else {
        4
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgeCohort {
    /// Under 36.
    Young,
    /// 36 to 55 inclusive.
    Middle,
    /// Over 55.
    Older,
}

/// Cohort of a respondent, or `None` when the record is excluded (birth year
/// outside 1900..=2010 or survey year before 2015).
pub fn age_cohort(birth_year: i32, survey_year: i32) -> Option<AgeCohort> {
    if !(1900..=2010).contains(&birth_year) || survey_year < 2015 {
        return None;
    }
    let age = survey_year - birth_year;
    Some(if age < 36 {
        AgeCohort::Young
    } else if age <= 55 {
        AgeCohort::Middle
    } else {
        AgeCohort::Older
    })
}

/// One input row of the levels table.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct DimensionRow {
    pub dimension: String,
    pub raw_mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub direction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimensionLevel {
    pub dimension: String,
    pub score: f64,
    pub level: u8,
}

/// Reads `dimension,raw_mean,lo,hi,direction` rows and scores each.
pub fn levels_table(reader: impl Read) -> Result<Vec<DimensionLevel>, ProfileError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    rdr.deserialize::<DimensionRow>()
        .map(|row| {
            let row = row?;
            let dir = row.direction.parse().map_err(ProfileError::Range)?;
            let score = normalise_dimension(row.raw_mean, row.lo, row.hi, dir)?;
            Ok(DimensionLevel {
                level: descriptor_level(score),
                dimension: row.dimension,
                score,
            })
        })
        .collect()
}

pub fn write_levels_table(writer: impl Write, rows: &[DimensionLevel]) -> Result<(), ProfileError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalise_examples() {
        assert_eq!(normalise_dimension(1.0, 1.0, 4.0, Direction::Positive).unwrap(), 0.0);
        assert_eq!(normalise_dimension(4.0, 1.0, 4.0, Direction::Negative).unwrap(), 0.0);
        assert_eq!(normalise_dimension(2.5, 1.0, 4.0, Direction::Positive).unwrap(), 0.5);
        assert!(normalise_dimension(5.0, 1.0, 4.0, Direction::Positive).is_err());
        assert!(normalise_dimension(1.0, 4.0, 1.0, Direction::Positive).is_err());
    }

    #[test]
    fn level_examples() {
        assert_eq!(descriptor_level(0.75), 1);
        assert_eq!(descriptor_level(0.50), 2);
        assert_eq!(descriptor_level(0.25), 3);
        assert_eq!(descriptor_level(0.2499), 4);
        assert_eq!(descriptor_level(1.0), 1);
        assert_eq!(descriptor_level(0.0), 4);
    }

    #[test]
    fn cohort_examples() {
        assert_eq!(age_cohort(1990, 2020), Some(AgeCohort::Young));
        assert_eq!(age_cohort(1980, 2020), Some(AgeCohort::Middle));
        assert_eq!(age_cohort(1899, 2020), None);
        assert_eq!(age_cohort(2011, 2020), None);
        assert_eq!(age_cohort(1980, 2014), None);
    }

    #[test]
    fn cohort_boundaries() {
        assert_eq!(age_cohort(1985, 2020), Some(AgeCohort::Young));
        assert_eq!(age_cohort(1984, 2020), Some(AgeCohort::Middle));
        assert_eq!(age_cohort(1965, 2020), Some(AgeCohort::Middle));
        assert_eq!(age_cohort(1964, 2020), Some(AgeCohort::Older));
    }

    #[test]
    fn levels_table_round_trip() {
        let input = "dimension,raw_mean,lo,hi,direction\n\
                     trust,2.5,1,4,+\n\
                     religiosity,3.7,1,4,-\n";
        let rows = levels_table(input.as_bytes()).unwrap();
        assert_eq!(rows[0].level, 2);
        assert_eq!(rows[1].level, 4);
        let mut out = Vec::new();
        write_levels_table(&mut out, &rows).unwrap();
        assert!(String::from_utf8(out).unwrap().starts_with("dimension,score,level\n"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn level_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                prop_assert!(descriptor_level(hi) <= descriptor_level(lo));
            }

            #[test]
            fn double_flip_is_identity(s in 0.0f64..=1.0) {
                let once = normalise_dimension(s, 0.0, 1.0, Direction::Negative).unwrap();
                let twice = normalise_dimension(once, 0.0, 1.0, Direction::Negative).unwrap();
                prop_assert!((twice - s).abs() < 1e-15);
            }
        }
    }
}
