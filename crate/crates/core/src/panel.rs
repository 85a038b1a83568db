//! Firm-week aggregation and review features.
//!
//! Classified reviews are grouped into firm-week cells holding level counts
//! (reviews, negative, positive, per-star). Week-over-week features are then
//! computed per firm:
//!
//! * `diff_neg`, `diff_pos`: change in the negative / positive review count
//!   relative to the immediately preceding calendar week;
//! * `diff_star1`, `diff_star5`: change in the one-star / five-star share of
//!   reviews relative to the immediately preceding calendar week.
//!
//! A diff is defined only when both the week and the preceding calendar week
//! have at least one review; a gap in coverage yields missing diffs, never a
//! diff against an older week.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::date::{weeks_through, WeekConvention, WeekIndex};
use crate::error::{Error, Result};
use crate::ingest::ReviewRecord;
use crate::sentiment::{classify, Lexicon, Polarity};

/// A review reduced to what aggregation needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassifiedReview {
    pub firm_id: String,
    pub date: NaiveDate,
    pub stars: u8,
    pub polarity: Polarity,
}

/// Runs the lexicon over every record. Order is preserved.
pub fn classify_reviews(records: &[ReviewRecord], lexicon: &Lexicon) -> Vec<ClassifiedReview> {
    records
        .par_iter()
        .map(|rec| ClassifiedReview {
            firm_id: rec.review.firm_id.clone(),
            date: rec.review.date,
            stars: rec.review.stars,
            polarity: classify(lexicon.count(&rec.review.text)),
        })
        .collect()
}

/// One firm-week cell of the panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmWeekRow {
    pub firm_id: String,
    pub week: WeekIndex,
    pub n_reviews: u32,
    pub n_neg: u32,
    pub n_pos: u32,
    /// Review counts by star rating, index 0 = one star.
    pub star_counts: [u32; 5],
    pub diff_neg: Option<f64>,
    pub diff_pos: Option<f64>,
    pub diff_star1: Option<f64>,
    pub diff_star5: Option<f64>,
}

impl FirmWeekRow {
    /// Share of reviews with the given star rating (1-based).
    pub fn star_ratio(&self, stars: u8) -> f64 {
        debug_assert!((1..=5).contains(&stars));
        self.star_counts[stars as usize - 1] as f64 / self.n_reviews as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Cell {
    n: u32,
    neg: u32,
    pos: u32,
    stars: [u32; 5],
}

impl Cell {
    fn add(&mut self, review: &ClassifiedReview) {
        self.n += 1;
        match review.polarity {
            Polarity::Negative => self.neg += 1,
            Polarity::Positive => self.pos += 1,
            Polarity::Neutral => {}
        }
        self.stars[review.stars as usize - 1] += 1;
    }

    fn merge(&mut self, other: &Cell) {
        self.n += other.n;
        self.neg += other.neg;
        self.pos += other.pos;
        for s in 0..5 {
            self.stars[s] += other.stars[s];
        }
    }
}

/// Aggregates classified reviews into firm-week level rows, sorted by
/// (firm, week). Diff fields are left unset.
pub fn aggregate(reviews: &[ClassifiedReview], convention: WeekConvention) -> Vec<FirmWeekRow> {
    let mut cells: BTreeMap<(&str, WeekIndex), Cell> = BTreeMap::new();
    for review in reviews {
        let week = WeekIndex::from_date(review.date, convention);
        cells
            .entry((&review.firm_id, week))
            .or_default()
            .add(review);
    }
    cells
        .into_iter()
        .map(|((firm, week), cell)| FirmWeekRow {
            firm_id: firm.to_owned(),
            week,
            n_reviews: cell.n,
            n_neg: cell.neg,
            n_pos: cell.pos,
            star_counts: cell.stars,
            diff_neg: None,
            diff_pos: None,
            diff_star1: None,
            diff_star5: None,
        })
        .collect()
}

/// Replaces each week's levels with sums over the trailing `window` weeks
/// (the week itself plus `window - 1` predecessors). Rows are emitted for
/// weeks between a firm's first and last observed week whose window holds at
/// least one review; coverage never extends past the observed range.
/// `window = 1` is the identity.
pub fn accumulate(rows: Vec<FirmWeekRow>, window: u32) -> Vec<FirmWeekRow> {
    assert!(window >= 1, "accumulation window must be at least 1");
    if window == 1 {
        return rows;
    }
    let mut by_firm: BTreeMap<String, BTreeMap<i64, (WeekIndex, Cell)>> = BTreeMap::new();
    for row in rows {
        let cell = Cell {
            n: row.n_reviews,
            neg: row.n_neg,
            pos: row.n_pos,
            stars: row.star_counts,
        };
        by_firm
            .entry(row.firm_id)
            .or_default()
            .insert(row.week.ordinal(), (row.week, cell));
    }

    let mut out = Vec::new();
    for (firm, cells) in by_firm {
        let first = cells.values().next().unwrap().0;
        let last = cells.values().next_back().unwrap().0;
        for week in weeks_through(first, last) {
            let o = week.ordinal();
            let mut sum = Cell::default();
            for back in 0..window as i64 {
                if let Some((_, cell)) = cells.get(&(o - back)) {
                    sum.merge(cell);
                }
            }
            if sum.n > 0 {
                out.push(FirmWeekRow {
                    firm_id: firm.clone(),
                    week,
                    n_reviews: sum.n,
                    n_neg: sum.neg,
                    n_pos: sum.pos,
                    star_counts: sum.stars,
                    diff_neg: None,
                    diff_pos: None,
                    diff_star1: None,
                    diff_star5: None,
                });
            }
        }
    }
    out
}

/// Fills the diff features in place. `rows` must be sorted by (firm, week),
/// as produced by [`aggregate`].
pub fn compute_diffs(rows: &mut [FirmWeekRow]) {
    for i in 0..rows.len() {
        let (before, rest) = rows.split_at_mut(i);
        let row = &mut rest[0];
        row.diff_neg = None;
        row.diff_pos = None;
        row.diff_star1 = None;
        row.diff_star5 = None;
        let Some(prev) = before.last() else { continue };
        if prev.firm_id != row.firm_id {
            continue;
        }
        if prev.week.ordinal() + 1 != row.week.ordinal() {
            continue;
        }
        if prev.n_reviews == 0 || row.n_reviews == 0 {
            continue;
        }
        row.diff_neg = Some(row.n_neg as f64 - prev.n_neg as f64);
        row.diff_pos = Some(row.n_pos as f64 - prev.n_pos as f64);
        row.diff_star1 = Some(row.star_ratio(1) - prev.star_ratio(1));
        row.diff_star5 = Some(row.star_ratio(5) - prev.star_ratio(5));
    }
}

/// Classifies, aggregates, accumulates, and differences in one call.
pub fn build_features(
    records: &[ReviewRecord],
    lexicon: &Lexicon,
    convention: WeekConvention,
    accumulation_window: u32,
) -> Vec<FirmWeekRow> {
    let classified = classify_reviews(records, lexicon);
    let mut rows = accumulate(aggregate(&classified, convention), accumulation_window);
    compute_diffs(&mut rows);
    rows
}

/// Minimum activity a firm needs to enter the panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EligibilityPolicy {
    pub min_reviews: u64,
    pub min_span_days: i64,
}

impl Default for EligibilityPolicy {
    fn default() -> Self {
        EligibilityPolicy {
            min_reviews: 1000,
            min_span_days: 365,
        }
    }
}

/// Why a firm was excluded. Review count is checked before timespan, so a
/// firm failing both is reported under review count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason")]
pub enum ExclusionReason {
    #[serde(rename = "review count")]
    ReviewCount { count: u64 },
    #[serde(rename = "timespan")]
    Timespan { days: i64 },
}

/// Partition of firms into panel members and excluded firms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct EligibilitySet {
    pub eligible: BTreeSet<String>,
    pub excluded: BTreeMap<String, ExclusionReason>,
}

/// Screens firms on total review count and inclusive first-to-last-review
/// span in days (a single review day counts as a span of 1).
pub fn screen_firms(records: &[ReviewRecord], policy: &EligibilityPolicy) -> EligibilitySet {
    let mut stats: BTreeMap<&str, (u64, NaiveDate, NaiveDate)> = BTreeMap::new();
    for rec in records {
        let r = &rec.review;
        stats
            .entry(&r.firm_id)
            .and_modify(|(n, min, max)| {
                *n += 1;
                *min = (*min).min(r.date);
                *max = (*max).max(r.date);
            })
            .or_insert((1, r.date, r.date));
    }
    let mut set = EligibilitySet::default();
    for (firm, (count, min, max)) in stats {
        let days = (max - min).num_days() + 1;
        if count < policy.min_reviews {
            set.excluded
                .insert(firm.to_owned(), ExclusionReason::ReviewCount { count });
        } else if days < policy.min_span_days {
            set.excluded
                .insert(firm.to_owned(), ExclusionReason::Timespan { days });
        } else {
            set.eligible.insert(firm.to_owned());
        }
    }
    set
}

const FEATURE_COLUMNS: [&str; 15] = [
    "firm_id",
    "iso_year",
    "iso_week",
    "n_reviews",
    "n_neg",
    "n_pos",
    "star1",
    "star2",
    "star3",
    "star4",
    "star5",
    "diff_neg",
    "diff_pos",
    "diff_star1",
    "diff_star5",
];

fn opt_to_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the feature table. Missing diffs are empty fields.
pub fn write_features(path: &Path, rows: &[FirmWeekRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::file_format(path, e.to_string()))?;
    w.write_record(FEATURE_COLUMNS)
        .map_err(|e| Error::file_format(path, e.to_string()))?;
    for row in rows {
        w.write_record([
            row.firm_id.as_str(),
            &row.week.year.to_string(),
            &row.week.week.to_string(),
            &row.n_reviews.to_string(),
            &row.n_neg.to_string(),
            &row.n_pos.to_string(),
            &row.star_counts[0].to_string(),
            &row.star_counts[1].to_string(),
            &row.star_counts[2].to_string(),
            &row.star_counts[3].to_string(),
            &row.star_counts[4].to_string(),
            &opt_to_field(row.diff_neg),
            &opt_to_field(row.diff_pos),
            &opt_to_field(row.diff_star1),
            &opt_to_field(row.diff_star5),
        ])
        .map_err(|e| Error::file_format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a feature table written by [`write_features`].
pub fn read_features(path: &Path) -> Result<Vec<FirmWeekRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::file_format(path, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::file_format(path, e.to_string()))?
        .clone();
    if headers.iter().take(FEATURE_COLUMNS.len()).ne(FEATURE_COLUMNS) {
        return Err(Error::file_format(path, "unexpected feature columns"));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::file_format(path, e.to_string()))?;
        let get = |i: usize| record.get(i).unwrap_or("");
        let int = |i: usize| -> Result<u32> {
            get(i)
                .parse()
                .map_err(|_| Error::file_format(path, format!("bad integer {:?}", get(i))))
        };
        let opt = |i: usize| -> Result<Option<f64>> {
            match get(i) {
                "" => Ok(None),
                s => s
                    .parse()
                    .map(Some)
                    .map_err(|_| Error::file_format(path, format!("bad number {s:?}"))),
            }
        };
        let week = WeekIndex {
            year: get(1)
                .parse()
                .map_err(|_| Error::file_format(path, format!("bad iso_year {:?}", get(1))))?,
            week: get(2)
                .parse()
                .map_err(|_| Error::file_format(path, format!("bad iso_week {:?}", get(2))))?,
        };
        week.validate()?;
        rows.push(FirmWeekRow {
            firm_id: get(0).to_owned(),
            week,
            n_reviews: int(3)?,
            n_neg: int(4)?,
            n_pos: int(5)?,
            star_counts: [int(6)?, int(7)?, int(8)?, int(9)?, int(10)?],
            diff_neg: opt(11)?,
            diff_pos: opt(12)?,
            diff_star1: opt(13)?,
            diff_star5: opt(14)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn review(firm: &str, date: &str, stars: u8, polarity: Polarity) -> ClassifiedReview {
        ClassifiedReview {
            firm_id: firm.into(),
            date: d(date),
            stars,
            polarity,
        }
    }

    // 2015-03-02 is the Monday of 2015-W10.
    fn sample_reviews() -> Vec<ClassifiedReview> {
        use Polarity::*;
        vec![
            // Week 10: 4 reviews, 2 neg, 1 pos; stars 1,1,3,5.
            review("F1", "2015-03-02", 1, Negative),
            review("F1", "2015-03-04", 1, Negative),
            review("F1", "2015-03-05", 3, Neutral),
            review("F1", "2015-03-08", 5, Positive),
            // Week 11: 2 reviews, 0 neg, 2 pos; stars 5,4.
            review("F1", "2015-03-09", 5, Positive),
            review("F1", "2015-03-15", 4, Positive),
            // Week 13 (week 12 skipped): 1 review.
            review("F1", "2015-03-23", 2, Negative),
            // Second firm, one week.
            review("F2", "2015-03-03", 4, Positive),
        ]
    }

    #[test]
    fn aggregates_levels_by_firm_week() {
        let rows = aggregate(&sample_reviews(), WeekConvention::Iso);
        assert_eq!(rows.len(), 4);
        let w10 = &rows[0];
        assert_eq!(w10.firm_id, "F1");
        assert_eq!(w10.week, WeekIndex { year: 2015, week: 10 });
        assert_eq!(w10.n_reviews, 4);
        assert_eq!(w10.n_neg, 2);
        assert_eq!(w10.n_pos, 1);
        assert_eq!(w10.star_counts, [2, 0, 1, 0, 1]);
        assert_eq!(rows[3].firm_id, "F2");
    }

    #[test]
    fn aggregation_ignores_input_order() {
        let mut reviews = sample_reviews();
        reviews.reverse();
        assert_eq!(
            aggregate(&reviews, WeekConvention::Iso),
            aggregate(&sample_reviews(), WeekConvention::Iso)
        );
    }

    #[test]
    fn diffs_match_hand_computation() {
        let mut rows = aggregate(&sample_reviews(), WeekConvention::Iso);
        compute_diffs(&mut rows);

        // First observed week has no diffs.
        assert_eq!(rows[0].diff_neg, None);
        assert_eq!(rows[0].diff_star5, None);

        // Week 11 vs week 10.
        let w11 = &rows[1];
        assert_eq!(w11.diff_neg, Some(0.0 - 2.0));
        assert_eq!(w11.diff_pos, Some(2.0 - 1.0));
        assert_eq!(w11.diff_star1, Some(0.0 / 2.0 - 2.0 / 4.0));
        assert_eq!(w11.diff_star5, Some(1.0 / 2.0 - 1.0 / 4.0));

        // Week 13 follows a gap, so no diffs.
        let w13 = &rows[2];
        assert_eq!(w13.week.week, 13);
        assert_eq!(w13.diff_neg, None);
        assert_eq!(w13.diff_star1, None);

        // F2 has a single week.
        assert_eq!(rows[3].diff_pos, None);
    }

    #[test]
    fn star_shares_sum_to_one_and_diffs_to_zero() {
        let mut rows = aggregate(&sample_reviews(), WeekConvention::Iso);
        compute_diffs(&mut rows);
        for row in &rows {
            let total: f64 = (1..=5).map(|s| row.star_ratio(s)).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        // Full per-star diff across a defined pair telescopes to zero.
        let prev = &rows[0];
        let cur = &rows[1];
        let sum: f64 = (1..=5)
            .map(|s| cur.star_ratio(s) - prev.star_ratio(s))
            .sum();
        assert!(sum.abs() < 1e-12);
    }

    #[test]
    fn count_diffs_telescope() {
        use Polarity::*;
        // Three consecutive weeks for one firm.
        let reviews = vec![
            review("F1", "2015-03-02", 1, Negative),
            review("F1", "2015-03-09", 1, Negative),
            review("F1", "2015-03-10", 2, Negative),
            review("F1", "2015-03-11", 5, Positive),
            review("F1", "2015-03-16", 4, Neutral),
        ];
        let mut rows = aggregate(&reviews, WeekConvention::Iso);
        compute_diffs(&mut rows);
        let total: f64 = rows.iter().filter_map(|r| r.diff_neg).sum();
        let first = rows.first().unwrap().n_neg as f64;
        let last = rows.last().unwrap().n_neg as f64;
        assert_eq!(total, last - first);
    }

    #[test]
    fn accumulation_window_sums_trailing_weeks() {
        let rows = aggregate(&sample_reviews(), WeekConvention::Iso);
        let acc = accumulate(rows.clone(), 2);
        let f1: Vec<_> = acc.iter().filter(|r| r.firm_id == "F1").collect();
        // Observed range is weeks 10..13; windows: 10 (itself), 11 (10+11),
        // 12 (11), 13 (13).
        assert_eq!(f1.len(), 4);
        assert_eq!(f1[0].n_reviews, 4);
        assert_eq!(f1[1].n_reviews, 6);
        assert_eq!(f1[1].n_neg, 2);
        assert_eq!(f1[1].star_counts, [2, 0, 1, 1, 2]);
        assert_eq!(f1[2].week.week, 12);
        assert_eq!(f1[2].n_reviews, 2);
        assert_eq!(f1[3].week.week, 13);
        assert_eq!(f1[3].n_reviews, 1);
        // Window 1 is the identity.
        assert_eq!(accumulate(rows.clone(), 1), rows);
    }

    #[test]
    fn eligibility_boundaries_are_inclusive() {
        use crate::ingest::{RawReview, ReviewRecord};
        let mk = |firm: &str, date: NaiveDate, i: u64| ReviewRecord {
            record_id: i,
            review: RawReview {
                firm_id: firm.into(),
                product_id: format!("P{i}"),
                reviewer_id: format!("U{i}"),
                date,
                stars: 3,
                text: String::new(),
                order_to_review_days: None,
            },
        };
        let policy = EligibilityPolicy {
            min_reviews: 3,
            min_span_days: 365,
        };
        let mut records = Vec::new();
        // F1: 3 reviews over exactly 365 inclusive days.
        records.push(mk("F1", d("2015-01-01"), 1));
        records.push(mk("F1", d("2015-06-01"), 2));
        records.push(mk("F1", d("2015-12-31"), 3));
        // F2: only 2 reviews over a long span.
        records.push(mk("F2", d("2015-01-01"), 4));
        records.push(mk("F2", d("2016-12-31"), 5));
        // F3: enough reviews, one day short.
        records.push(mk("F3", d("2015-01-01"), 6));
        records.push(mk("F3", d("2015-06-01"), 7));
        records.push(mk("F3", d("2015-12-30"), 8));

        let set = screen_firms(&records, &policy);
        assert!(set.eligible.contains("F1"));
        assert_eq!(
            set.excluded["F2"],
            ExclusionReason::ReviewCount { count: 2 }
        );
        assert_eq!(set.excluded["F3"], ExclusionReason::Timespan { days: 364 });
    }

    #[test]
    fn review_count_is_checked_before_timespan() {
        use crate::ingest::{RawReview, ReviewRecord};
        let records = vec![ReviewRecord {
            record_id: 1,
            review: RawReview {
                firm_id: "F1".into(),
                product_id: "P".into(),
                reviewer_id: "U".into(),
                date: d("2015-01-01"),
                stars: 3,
                text: String::new(),
                order_to_review_days: None,
            },
        }];
        let set = screen_firms(
            &records,
            &EligibilityPolicy {
                min_reviews: 2,
                min_span_days: 365,
            },
        );
        assert_eq!(
            set.excluded["F1"],
            ExclusionReason::ReviewCount { count: 1 }
        );
    }

    #[test]
    fn feature_csv_round_trips() {
        let mut rows = aggregate(&sample_reviews(), WeekConvention::Iso);
        compute_diffs(&mut rows);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");
        write_features(&path, &rows).unwrap();
        let back = read_features(&path).unwrap();
        assert_eq!(back, rows);
        let text = std::fs::read_to_string(&path).unwrap();
        let first_line = text.lines().next().unwrap();
        assert_eq!(first_line.split(',').count(), 15);
        // Missing diffs are empty fields, not sentinel values.
        assert!(text.lines().nth(1).unwrap().ends_with(",,,,"));
    }
}
