//! Calendar weeks, quarters, and periods.
//!
//! Weeks are the panel's time unit. A [`WeekIndex`] is a (year, week) label
//! under a [`WeekConvention`]; its [`ordinal`](WeekIndex::ordinal) is a
//! monotone week counter used to detect calendar gaps, so lag logic never
//! confuses "previous row" with "previous week".

use chrono::{Datelike, Days, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

/// How calendar dates are grouped into weeks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeekConvention {
    /// ISO-8601 weeks, Monday through Sunday.
    Iso,
    /// Trading weeks running Saturday through Friday, so that a week's
    /// reviews strictly precede the Friday close they are matched to.
    FridayAnchored,
}

impl Default for WeekConvention {
    fn default() -> Self {
        WeekConvention::Iso
    }
}

impl WeekConvention {
    /// Parses the textual form used in config files.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "iso" => Ok(WeekConvention::Iso),
            "friday_anchored" => Ok(WeekConvention::FridayAnchored),
            other => Err(Error::Invalid(format!(
                "unknown week convention {other:?}; expected \"iso\" or \"friday_anchored\""
            ))),
        }
    }
}

impl fmt::Display for WeekConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeekConvention::Iso => write!(f, "iso"),
            WeekConvention::FridayAnchored => write!(f, "friday_anchored"),
        }
    }
}

/// A week label: ISO year and week number.
///
/// Under [`WeekConvention::FridayAnchored`] the label is the ISO week of the
/// date shifted forward by two days, which maps Saturday..Friday onto
/// Monday..Sunday; labels from different conventions must not be mixed.
///
/// Lexicographic ordering of (year, week) is chronological.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WeekIndex {
    pub year: i32,
    pub week: u8,
}

impl WeekIndex {
    /// Labels `date` under the given convention.
    pub fn from_date(date: NaiveDate, convention: WeekConvention) -> Self {
        let shifted = match convention {
            WeekConvention::Iso => date,
            WeekConvention::FridayAnchored => date + Days::new(2),
        };
        let iso = shifted.iso_week();
        WeekIndex {
            year: iso.year(),
            week: iso.week() as u8,
        }
    }

    /// Checks that (year, week) names an existing ISO week.
    pub fn validate(&self) -> Result<()> {
        NaiveDate::from_isoywd_opt(self.year, self.week as u32, Weekday::Mon)
            .map(|_| ())
            .ok_or_else(|| Error::Invalid(format!("no such ISO week: {self}")))
    }

    /// Monday of the labeled ISO week.
    ///
    /// Panics on a label that fails [`validate`](Self::validate); labels
    /// built by [`from_date`](Self::from_date) are always valid.
    pub fn monday(&self) -> NaiveDate {
        NaiveDate::from_isoywd_opt(self.year, self.week as u32, Weekday::Mon)
            .unwrap_or_else(|| panic!("no such ISO week: {self}"))
    }

    /// Monotone week counter: consecutive calendar weeks differ by exactly 1.
    pub fn ordinal(&self) -> i64 {
        // Day 1 of the common era is a Monday, so Mondays are ≡ 1 (mod 7).
        (self.monday().num_days_from_ce() as i64 - 1).div_euclid(7)
    }

    /// The next calendar week.
    pub fn next(&self) -> WeekIndex {
        WeekIndex::from_date(self.monday() + Days::new(7), WeekConvention::Iso)
    }

    /// First and last calendar date covered by this week under `convention`.
    pub fn span(&self, convention: WeekConvention) -> (NaiveDate, NaiveDate) {
        let monday = self.monday();
        match convention {
            WeekConvention::Iso => (monday, monday + Days::new(6)),
            WeekConvention::FridayAnchored => (monday - Days::new(2), monday + Days::new(4)),
        }
    }
}

impl fmt::Display for WeekIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-W{:02}", self.year, self.week)
    }
}

/// All weeks from `first` to `last` inclusive, in order.
pub fn weeks_through(first: WeekIndex, last: WeekIndex) -> Vec<WeekIndex> {
    let mut out = Vec::new();
    let mut w = first;
    while w <= last {
        out.push(w);
        w = w.next();
    }
    out
}

/// A calendar quarter, e.g. `2016Q3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Quarter {
    pub year: i32,
    pub quarter: u8,
}

impl Quarter {
    pub fn new(year: i32, quarter: u8) -> Result<Self> {
        if (1..=4).contains(&quarter) {
            Ok(Quarter { year, quarter })
        } else {
            Err(Error::Invalid(format!("quarter out of range: {quarter}")))
        }
    }

    /// The quarter containing `date`.
    pub fn containing(date: NaiveDate) -> Quarter {
        Quarter {
            year: date.year(),
            quarter: (date.month0() / 3 + 1) as u8,
        }
    }

    /// Parses `"2016Q3"`.
    pub fn parse(s: &str) -> Result<Self> {
        let (y, q) = s
            .split_once('Q')
            .ok_or_else(|| Error::Invalid(format!("bad quarter {s:?}; expected e.g. 2016Q3")))?;
        let year: i32 = y
            .parse()
            .map_err(|_| Error::Invalid(format!("bad quarter year in {s:?}")))?;
        let quarter: u8 = q
            .parse()
            .map_err(|_| Error::Invalid(format!("bad quarter number in {s:?}")))?;
        Quarter::new(year, quarter)
    }

    /// Quarters since year 0, for lag arithmetic across year boundaries.
    pub fn index(&self) -> i64 {
        self.year as i64 * 4 + (self.quarter as i64 - 1)
    }

    pub fn from_index(index: i64) -> Self {
        Quarter {
            year: index.div_euclid(4) as i32,
            quarter: (index.rem_euclid(4) + 1) as u8,
        }
    }

    /// This quarter shifted back by `k` quarters.
    pub fn minus(&self, k: i64) -> Self {
        Quarter::from_index(self.index() - k)
    }

    /// This quarter shifted forward by `k` quarters.
    pub fn plus(&self, k: i64) -> Self {
        Quarter::from_index(self.index() + k)
    }

    /// The calendar dates the quarter covers.
    pub fn period(&self) -> Period {
        let first_month = (self.quarter as u32 - 1) * 3 + 1;
        let start = NaiveDate::from_ymd_opt(self.year, first_month, 1).unwrap();
        let end = end_of_month(self.year, first_month + 2);
        Period { start, end }
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.year, self.quarter)
    }
}

/// An inclusive span of calendar dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Period {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl Period {
    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }
}

fn end_of_month(year: i32, month: u32) -> NaiveDate {
    let (ny, nm) = if month == 12 {
        (year + 1, 1)
    } else {
        (year, month + 1)
    };
    NaiveDate::from_ymd_opt(ny, nm, 1).unwrap() - Days::new(1)
}

/// The calendar month containing `date`, as a period.
pub fn month_period(year: i32, month: u32) -> Result<Period> {
    let start = NaiveDate::from_ymd_opt(year, month, 1)
        .ok_or_else(|| Error::Invalid(format!("bad month: {year}-{month:02}")))?;
    Ok(Period {
        start,
        end: end_of_month(year, month),
    })
}

/// The calendar year `year`, as a period.
pub fn year_period(year: i32) -> Period {
    Period {
        start: NaiveDate::from_ymd_opt(year, 1, 1).unwrap(),
        end: NaiveDate::from_ymd_opt(year, 12, 31).unwrap(),
    }
}

/// Parses `"2015-03"` into (year, month).
pub fn parse_month(s: &str) -> Result<(i32, u32)> {
    let (y, m) = s
        .split_once('-')
        .ok_or_else(|| Error::Invalid(format!("bad month {s:?}; expected e.g. 2015-03")))?;
    let year: i32 = y
        .parse()
        .map_err(|_| Error::Invalid(format!("bad year in month {s:?}")))?;
    let month: u32 = m
        .parse()
        .map_err(|_| Error::Invalid(format!("bad month number in {s:?}")))?;
    if !(1..=12).contains(&month) {
        return Err(Error::Invalid(format!("month out of range in {s:?}")));
    }
    Ok((year, month))
}
