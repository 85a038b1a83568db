//! Review dump ingestion.
//!
//! Dumps are flat files of raw reviews, one review per CSV row or JSON line.
//! Parsing is forgiving at the row level and strict at the file level: a
//! malformed row is counted, logged with its line number, and skipped, while
//! a missing file or unusable header fails the whole operation.
//!
//! Rows that survive validation are deduplicated on the key
//! (firm_id, product_id, reviewer_id, date), keeping the first occurrence in
//! input order, then written to a clean store partitioned by firm.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclusive date range a review must fall in to be valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl Default for SampleWindow {
    /// The default window covers late 2008 through end of 2017, the span the
    /// review platform data is usable for.
    fn default() -> Self {
        SampleWindow {
            start: NaiveDate::from_ymd_opt(2008, 11, 1).unwrap(),
            end: NaiveDate::from_ymd_opt(2017, 12, 31).unwrap(),
        }
    }
}

impl SampleWindow {
    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }
}

/// Raw dump file layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DumpFormat {
    Csv,
    Jsonl,
}

impl DumpFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DumpFormat::Csv),
            "jsonl" => Ok(DumpFormat::Jsonl),
            other => Err(Error::Invalid(format!(
                "unknown dump format {other:?}; expected \"csv\" or \"jsonl\""
            ))),
        }
    }
}

/// One validated review.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawReview {
    pub firm_id: String,
    pub product_id: String,
    pub reviewer_id: String,
    pub date: NaiveDate,
    pub stars: u8,
    pub text: String,
    pub order_to_review_days: Option<u32>,
}

impl RawReview {
    /// The deduplication key: one review per reviewer, product, firm, day.
    pub fn key(&self) -> (&str, &str, &str, NaiveDate) {
        (
            &self.firm_id,
            &self.product_id,
            &self.reviewer_id,
            self.date,
        )
    }
}

/// A deduplicated review with its stable store id.
///
/// Ids are assigned sequentially from 1 in kept order, so reruns over the
/// same dumps produce identical stores.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub record_id: u64,
    #[serde(flatten)]
    pub review: RawReview,
}

/// Machine-readable tally of one ingest run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub records_read: u64,
    pub records_kept: u64,
    pub duplicates_dropped: u64,
    pub invalid_dropped: u64,
    /// Kept records per firm.
    pub per_firm_counts: BTreeMap<String, u64>,
}

impl IngestReport {
    /// Every parsed row must be kept, a duplicate, or invalid.
    pub fn is_consistent(&self) -> bool {
        self.records_read
            == self.records_kept + self.duplicates_dropped + self.invalid_dropped
            && self.per_firm_counts.values().sum::<u64>() == self.records_kept
    }
}

/// Parses one dump file, returning valid reviews in file order along with
/// (rows read, rows dropped as invalid).
pub fn parse_dump(
    path: &Path,
    format: DumpFormat,
    window: &SampleWindow,
) -> Result<(Vec<RawReview>, u64, u64)> {
    match format {
        DumpFormat::Csv => parse_csv_dump(path, window),
        DumpFormat::Jsonl => parse_jsonl_dump(path, window),
    }
}

const CSV_COLUMNS: [&str; 6] = [
    "firm_id",
    "product_id",
    "reviewer_id",
    "date",
    "stars",
    "text",
];

fn parse_csv_dump(path: &Path, window: &SampleWindow) -> Result<(Vec<RawReview>, u64, u64)> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_open_error(path, e))?;

    let headers = reader
        .headers()
        .map_err(|e| Error::file_format(path, format!("cannot read header: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut idx = [0usize; 6];
    for (i, name) in CSV_COLUMNS.iter().enumerate() {
        idx[i] = col(name)
            .ok_or_else(|| Error::file_format(path, format!("missing column {name:?}")))?;
    }
    let days_idx = col("order_to_review_days");

    let mut reviews = Vec::new();
    let mut read = 0u64;
    let mut invalid = 0u64;
    for (row_no, record) in reader.records().enumerate() {
        read += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e
                    .position()
                    .map(|p| p.line().to_string())
                    .unwrap_or_else(|| format!("row {}", row_no + 1));
                log::warn!("{}:{}: unparseable row: {}", path.display(), line, e);
                invalid += 1;
                continue;
            }
        };
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or(row_no as u64 + 2);
        let field = |i: usize| record.get(i);
        let parts = (
            field(idx[0]),
            field(idx[1]),
            field(idx[2]),
            field(idx[3]),
            field(idx[4]),
            field(idx[5]),
        );
        let (Some(firm), Some(product), Some(reviewer), Some(date), Some(stars), Some(text)) =
            parts
        else {
            log::warn!("{}:{}: row has too few fields", path.display(), line);
            invalid += 1;
            continue;
        };
        let days = days_idx.and_then(|i| record.get(i)).unwrap_or("");
        match validate_row(firm, product, reviewer, date, stars, text, days, window) {
            Ok(review) => reviews.push(review),
            Err(reason) => {
                log::warn!("{}:{}: {}", path.display(), line, reason);
                invalid += 1;
            }
        }
    }
    Ok((reviews, read, invalid))
}

fn csv_open_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::file_format(path, format!("{other:?}")),
    }
}

#[derive(Deserialize)]
struct JsonRow {
    firm_id: String,
    product_id: String,
    reviewer_id: String,
    date: String,
    stars: i64,
    text: String,
    #[serde(default)]
    order_to_review_days: Option<i64>,
}

fn parse_jsonl_dump(path: &Path, window: &SampleWindow) -> Result<(Vec<RawReview>, u64, u64)> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reviews = Vec::new();
    let mut read = 0u64;
    let mut invalid = 0u64;
    for (line_no, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        read += 1;
        let row: JsonRow = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("{}:{}: bad JSON row: {}", path.display(), line_no + 1, e);
                invalid += 1;
                continue;
            }
        };
        let days = row
            .order_to_review_days
            .map(|d| d.to_string())
            .unwrap_or_default();
        match validate_row(
            &row.firm_id,
            &row.product_id,
            &row.reviewer_id,
            &row.date,
            &row.stars.to_string(),
            &row.text,
            &days,
            window,
        ) {
            Ok(review) => reviews.push(review),
            Err(reason) => {
                log::warn!("{}:{}: {}", path.display(), line_no + 1, reason);
                invalid += 1;
            }
        }
    }
    Ok((reviews, read, invalid))
}

#[allow(clippy::too_many_arguments)]
fn validate_row(
    firm: &str,
    product: &str,
    reviewer: &str,
    date: &str,
    stars: &str,
    text: &str,
    days: &str,
    window: &SampleWindow,
) -> std::result::Result<RawReview, String> {
    let stars: i64 = stars
        .trim()
        .parse()
        .map_err(|_| format!("stars is not an integer: {stars:?}"))?;
    if !(1..=5).contains(&stars) {
        return Err(format!("stars out of range: {stars}"));
    }
    let date = NaiveDate::parse_from_str(date.trim(), "%Y-%m-%d")
        .map_err(|_| format!("bad date: {date:?}"))?;
    if !window.contains(date) {
        return Err(format!(
            "date {date} outside sample window {}..{}",
            window.start, window.end
        ));
    }
    let order_to_review_days = match days.trim() {
        "" => None,
        s => Some(
            s.parse::<u32>()
                .map_err(|_| format!("order_to_review_days is not a non-negative integer: {s:?}"))?,
        ),
    };
    Ok(RawReview {
        firm_id: firm.to_owned(),
        product_id: product.to_owned(),
        reviewer_id: reviewer.to_owned(),
        date,
        stars: stars as u8,
        text: text.to_owned(),
        order_to_review_days,
    })
}

/// Drops later occurrences of each dedup key and assigns record ids.
pub fn deduplicate(reviews: Vec<RawReview>) -> (Vec<ReviewRecord>, u64) {
    let mut seen: HashSet<(String, String, String, NaiveDate)> =
        HashSet::with_capacity(reviews.len());
    let mut kept = Vec::with_capacity(reviews.len());
    let mut duplicates = 0u64;
    for review in reviews {
        let key = (
            review.firm_id.clone(),
            review.product_id.clone(),
            review.reviewer_id.clone(),
            review.date,
        );
        if seen.insert(key) {
            kept.push(ReviewRecord {
                record_id: kept.len() as u64 + 1,
                review,
            });
        } else {
            duplicates += 1;
        }
    }
    (kept, duplicates)
}

/// Parses, validates, and deduplicates one or more dump files.
///
/// Files are concatenated in the order given, so "first occurrence" is well
/// defined across files.
pub fn ingest(
    paths: &[PathBuf],
    format: DumpFormat,
    window: &SampleWindow,
) -> Result<(Vec<ReviewRecord>, IngestReport)> {
    let mut all = Vec::new();
    let mut read = 0u64;
    let mut invalid = 0u64;
    for path in paths {
        let (reviews, r, i) = parse_dump(path, format, window)?;
        all.extend(reviews);
        read += r;
        invalid += i;
    }
    let (records, duplicates) = deduplicate(all);
    let mut per_firm: BTreeMap<String, u64> = BTreeMap::new();
    for rec in &records {
        *per_firm.entry(rec.review.firm_id.clone()).or_insert(0) += 1;
    }
    let report = IngestReport {
        records_read: read,
        records_kept: records.len() as u64,
        duplicates_dropped: duplicates,
        invalid_dropped: invalid,
        per_firm_counts: per_firm,
    };
    debug_assert!(report.is_consistent());
    Ok((records, report))
}

const STORE_INDEX: &str = "index.json";
const STORE_COLUMNS: [&str; 8] = [
    "record_id",
    "firm_id",
    "product_id",
    "reviewer_id",
    "date",
    "stars",
    "text",
    "order_to_review_days",
];

/// Maps a firm id to a filesystem-safe file stem.
fn sanitize_stem(firm_id: &str) -> String {
    let safe: String = firm_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    if safe.is_empty() {
        "firm".to_owned()
    } else {
        safe
    }
}

/// Writes the clean store: one CSV per firm plus an index mapping firm ids
/// to file names.
pub fn write_store(dir: &Path, records: &[ReviewRecord]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut by_firm: BTreeMap<&str, Vec<&ReviewRecord>> = BTreeMap::new();
    for rec in records {
        by_firm.entry(&rec.review.firm_id).or_default().push(rec);
    }

    let mut index: BTreeMap<String, String> = BTreeMap::new();
    let mut used: HashSet<String> = HashSet::new();
    for (firm, rows) in &by_firm {
        let stem = sanitize_stem(firm);
        let mut name = format!("{stem}.csv");
        let mut n = 1;
        while !used.insert(name.clone()) {
            n += 1;
            name = format!("{stem}-{n}.csv");
        }
        index.insert((*firm).to_owned(), name.clone());

        let path = dir.join(&name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_open_error(&path, e))?;
        w.write_record(STORE_COLUMNS)
            .map_err(|e| Error::file_format(&path, e.to_string()))?;
        for rec in rows {
            let r = &rec.review;
            let days = r
                .order_to_review_days
                .map(|d| d.to_string())
                .unwrap_or_default();
            w.write_record([
                rec.record_id.to_string().as_str(),
                &r.firm_id,
                &r.product_id,
                &r.reviewer_id,
                &r.date.to_string(),
                &r.stars.to_string(),
                &r.text,
                &days,
            ])
            .map_err(|e| Error::file_format(&path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }

    let index_path = dir.join(STORE_INDEX);
    let json = serde_json::to_string_pretty(&index).expect("index serializes");
    std::fs::write(&index_path, json + "\n").map_err(|e| Error::io(&index_path, e))
}

/// Reads a clean store back, sorted by record id.
pub fn read_store(dir: &Path) -> Result<Vec<ReviewRecord>> {
    let index_path = dir.join(STORE_INDEX);
    let json = std::fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let index: BTreeMap<String, String> = serde_json::from_str(&json)
        .map_err(|e| Error::file_format(&index_path, format!("bad store index: {e}")))?;

    let mut records = Vec::new();
    for file in index.values() {
        let path = dir.join(file);
        let mut reader = csv::Reader::from_path(&path).map_err(|e| csv_open_error(&path, e))?;
        for row in reader.records() {
            let row = row.map_err(|e| Error::file_format(&path, e.to_string()))?;
            let get = |i: usize| row.get(i).unwrap_or("");
            let record_id: u64 = get(0)
                .parse()
                .map_err(|_| Error::file_format(&path, format!("bad record_id {:?}", get(0))))?;
            let date = NaiveDate::parse_from_str(get(4), "%Y-%m-%d")
                .map_err(|_| Error::file_format(&path, format!("bad date {:?}", get(4))))?;
            let stars: u8 = get(5)
                .parse()
                .map_err(|_| Error::file_format(&path, format!("bad stars {:?}", get(5))))?;
            let order_to_review_days = match get(7) {
                "" => None,
                s => Some(s.parse::<u32>().map_err(|_| {
                    Error::file_format(&path, format!("bad order_to_review_days {s:?}"))
                })?),
            };
            records.push(ReviewRecord {
                record_id,
                review: RawReview {
                    firm_id: get(1).to_owned(),
                    product_id: get(2).to_owned(),
                    reviewer_id: get(3).to_owned(),
                    date,
                    stars,
                    text: get(6).to_owned(),
                    order_to_review_days,
                },
            });
        }
    }
    records.sort_by_key(|r| r.record_id);
    Ok(records)
}
