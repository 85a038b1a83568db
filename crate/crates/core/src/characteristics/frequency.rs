//! Period-to-week frequency conversion.
//!
//! Monthly and quarterly series (CCIs, surprises, shocks) enter the weekly
//! panel as step functions: a week carries the value of the source period
//! containing its Monday, with no interpolation. An optional publication lag
//! shifts the lookup back by whole weeks.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Days, NaiveDate};

use crate::date::{month_period, parse_month, Period, WeekIndex};
use crate::error::{Error, Result};

/// A piecewise-constant series over non-overlapping date periods.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSeries {
    /// Sorted by period start; periods never overlap.
    segments: Vec<(Period, f64)>,
}

impl StepSeries {
    pub fn new(mut segments: Vec<(Period, f64)>) -> Result<StepSeries> {
        segments.sort_by_key(|(p, _)| p.start);
        for (period, _) in &segments {
            if period.end < period.start {
                return Err(Error::Invalid(format!(
                    "period ends before it starts: {}..{}",
                    period.start, period.end
                )));
            }
        }
        for pair in segments.windows(2) {
            if pair[1].0.start <= pair[0].0.end {
                return Err(Error::Invalid(format!(
                    "overlapping periods: {}..{} and {}..{}",
                    pair[0].0.start, pair[0].0.end, pair[1].0.start, pair[1].0.end
                )));
            }
        }
        Ok(StepSeries { segments })
    }

    /// The value of the period containing `date`, if any.
    pub fn at(&self, date: NaiveDate) -> Option<f64> {
        let i = self.segments.partition_point(|(p, _)| p.start <= date);
        if i == 0 {
            return None;
        }
        let (period, value) = &self.segments[i - 1];
        period.contains(date).then_some(*value)
    }

    /// Expands to the given weeks. A week maps to the period containing its
    /// Monday, shifted back by `lag_weeks` weeks; weeks outside every period
    /// are absent from the result.
    pub fn weekly(&self, weeks: &[WeekIndex], lag_weeks: i64) -> BTreeMap<WeekIndex, f64> {
        let mut out = BTreeMap::new();
        for &week in weeks {
            let mut anchor = week.monday();
            if lag_weeks >= 0 {
                anchor = anchor - Days::new(7 * lag_weeks as u64);
            } else {
                anchor = anchor + Days::new(7 * (-lag_weeks) as u64);
            }
            if let Some(v) = self.at(anchor) {
                out.insert(week, v);
            }
        }
        out
    }
}

/// Loads the monthly consumer confidence file (`month,ccis`).
pub fn load_ccis(path: &Path) -> Result<StepSeries> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::file_format(path, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::file_format(path, e.to_string()))?;
    if headers.iter().take(2).ne(["month", "ccis"]) {
        return Err(Error::file_format(path, "expected columns month,ccis"));
    }
    let mut segments = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::file_format(path, e.to_string()))?;
        let month = record.get(0).unwrap_or("");
        let (year, m) = parse_month(month)?;
        let value: f64 = record
            .get(1)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::file_format(path, format!("bad ccis value for {month}")))?;
        segments.push((month_period(year, m)?, value));
    }
    StepSeries::new(segments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::date::{weeks_through, Quarter, WeekConvention};

    fn week_of(s: &str) -> WeekIndex {
        let d = NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap();
        WeekIndex::from_date(d, WeekConvention::Iso)
    }

    #[test]
    fn quarterly_value_covers_contained_weeks() {
        let q = Quarter::parse("2015Q2").unwrap();
        let series = StepSeries::new(vec![(q.period(), 0.47)]).unwrap();
        // 2015Q2 is Apr..Jun; W15 Monday is 2015-04-06, W26 Monday 2015-06-22.
        let weeks = weeks_through(week_of("2015-04-06"), week_of("2015-06-22"));
        assert_eq!(weeks.len(), 12);
        let weekly = series.weekly(&weeks, 0);
        assert_eq!(weekly.len(), 12);
        assert!(weekly.values().all(|&v| v == 0.47));
    }

    #[test]
    fn week_straddling_a_boundary_follows_its_monday() {
        let series = StepSeries::new(vec![
            (month_period(2015, 3).unwrap(), 107.93),
            (month_period(2015, 4).unwrap(), 108.5),
        ])
        .unwrap();
        // 2015-W14 runs Mar 30 .. Apr 5: Monday is in March.
        let w = week_of("2015-03-30");
        let weekly = series.weekly(&[w], 0);
        assert_eq!(weekly[&w], 107.93);
    }

    #[test]
    fn weeks_outside_coverage_are_missing() {
        let series = StepSeries::new(vec![(month_period(2015, 3).unwrap(), 1.0)]).unwrap();
        let weekly = series.weekly(&[week_of("2015-02-02"), week_of("2015-03-09")], 0);
        assert_eq!(weekly.len(), 1);
        assert!(weekly.contains_key(&week_of("2015-03-09")));
    }

    #[test]
    fn idempotent_on_weekly_periods_and_preserves_values() {
        // Build a weekly step series directly from week spans.
        let weeks = weeks_through(week_of("2015-03-02"), week_of("2015-04-27"));
        let segments: Vec<(Period, f64)> = weeks
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let (start, end) = w.span(WeekConvention::Iso);
                (Period { start, end }, i as f64 * 1.5 - 2.0)
            })
            .collect();
        let values: Vec<f64> = segments.iter().map(|(_, v)| *v).collect();
        let series = StepSeries::new(segments).unwrap();
        let weekly = series.weekly(&weeks, 0);
        let got: Vec<f64> = weeks.iter().map(|w| weekly[w]).collect();
        assert_eq!(got, values);
    }

    #[test]
    fn publication_lag_shifts_lookup() {
        let series = StepSeries::new(vec![
            (month_period(2015, 3).unwrap(), 3.0),
            (month_period(2015, 4).unwrap(), 4.0),
        ])
        .unwrap();
        // 2015-W15 Monday is Apr 6; with a 1-week lag it reads Mar 30.
        let w = week_of("2015-04-06");
        assert_eq!(series.weekly(&[w], 0)[&w], 4.0);
        assert_eq!(series.weekly(&[w], 1)[&w], 3.0);
    }

    #[test]
    fn overlap_is_rejected() {
        let overlapping = vec![
            (month_period(2015, 3).unwrap(), 1.0),
            (
                Period {
                    start: NaiveDate::from_ymd_opt(2015, 3, 31).unwrap(),
                    end: NaiveDate::from_ymd_opt(2015, 4, 30).unwrap(),
                },
                2.0,
            ),
        ];
        assert!(StepSeries::new(overlapping).is_err());
    }

    #[test]
    fn loads_ccis_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ccis.csv");
        std::fs::write(&path, "month,ccis\n2015-03,107.93\n2015-04,108.2\n").unwrap();
        let series = load_ccis(&path).unwrap();
        assert_eq!(
            series.at(NaiveDate::from_ymd_opt(2015, 3, 15).unwrap()),
            Some(107.93)
        );
        assert_eq!(series.at(NaiveDate::from_ymd_opt(2015, 5, 1).unwrap()), None);
    }
}
