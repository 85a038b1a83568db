//! Daily market data and weekly trading controls.
//!
//! Inputs are a per-firm daily file (returns, volume, tradable cap,
//! turnover) and a daily factor file. Weekly controls follow the usual
//! definitions:
//!
//! * return: compounded daily returns over the week;
//! * size: log tradable market cap on the week's last trading day;
//! * turn: mean daily turnover;
//! * illiq: mean of |return|/volume over days with positive volume, scaled;
//! * ivol: sample std of daily residuals from a three-factor regression
//!   (intercept, mkt, smb, hml) within the week;
//! * beta: slope on the market return over a trailing window of the firm's
//!   trading days.
//!
//! Every control is either a value or missing; insufficient data never
//! produces a silent zero.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use nalgebra::{DMatrix, DVector};

use crate::date::{WeekConvention, WeekIndex};
use crate::error::{Error, Result};
use crate::linalg::{ols, sample_std};

/// One firm trading day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketDay {
    pub date: NaiveDate,
    pub ret: f64,
    pub volume: f64,
    pub tradable_cap: f64,
    pub turnover: f64,
}

/// Daily market data for all firms, sorted by date within firm.
#[derive(Debug, Clone, Default)]
pub struct MarketData {
    by_firm: BTreeMap<String, Vec<MarketDay>>,
}

impl MarketData {
    pub fn from_rows(rows: Vec<(String, MarketDay)>) -> Result<MarketData> {
        let mut by_firm: BTreeMap<String, Vec<MarketDay>> = BTreeMap::new();
        for (firm, day) in rows {
            if day.volume < 0.0 {
                return Err(Error::Invalid(format!(
                    "negative volume for {firm} on {}",
                    day.date
                )));
            }
            by_firm.entry(firm).or_default().push(day);
        }
        for (firm, days) in &mut by_firm {
            days.sort_by_key(|d| d.date);
            for pair in days.windows(2) {
                if pair[0].date == pair[1].date {
                    return Err(Error::Invalid(format!(
                        "duplicate market day for {firm} on {}",
                        pair[0].date
                    )));
                }
            }
        }
        Ok(MarketData { by_firm })
    }

    /// Loads the daily market CSV
    /// (`date,firm_id,return,volume,tradable_cap,turnover`).
    pub fn load(path: &Path) -> Result<MarketData> {
        let mut reader =
            csv::Reader::from_path(path).map_err(|e| Error::file_format(path, e.to_string()))?;
        let headers = reader
            .headers()
            .map_err(|e| Error::file_format(path, e.to_string()))?;
        let expected = ["date", "firm_id", "return", "volume", "tradable_cap", "turnover"];
        if headers.iter().take(6).ne(expected) {
            return Err(Error::file_format(
                path,
                format!("expected columns {}", expected.join(",")),
            ));
        }
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::file_format(path, e.to_string()))?;
            let get = |j: usize| record.get(j).unwrap_or("");
            let num = |j: usize| -> Result<f64> {
                get(j).parse().map_err(|_| {
                    Error::file_format(path, format!("row {}: bad number {:?}", i + 2, get(j)))
                })
            };
            let date = NaiveDate::parse_from_str(get(0), "%Y-%m-%d").map_err(|_| {
                Error::file_format(path, format!("row {}: bad date {:?}", i + 2, get(0)))
            })?;
            rows.push((
                get(1).to_owned(),
                MarketDay {
                    date,
                    ret: num(2)?,
                    volume: num(3)?,
                    tradable_cap: num(4)?,
                    turnover: num(5)?,
                },
            ));
        }
        MarketData::from_rows(rows)
    }

    pub fn firm(&self, id: &str) -> Option<&[MarketDay]> {
        self.by_firm.get(id).map(Vec::as_slice)
    }

    pub fn firms(&self) -> impl Iterator<Item = &str> {
        self.by_firm.keys().map(String::as_str)
    }
}

/// One day of factor returns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorDay {
    pub mkt: f64,
    pub smb: f64,
    pub hml: f64,
    pub umd: f64,
}

/// Daily factor returns keyed by date.
#[derive(Debug, Clone, Default)]
pub struct FactorData {
    days: BTreeMap<NaiveDate, FactorDay>,
}

impl FactorData {
    pub fn from_rows(rows: Vec<(NaiveDate, FactorDay)>) -> Result<FactorData> {
        let mut days = BTreeMap::new();
        for (date, day) in rows {
            if days.insert(date, day).is_some() {
                return Err(Error::Invalid(format!("duplicate factor day {date}")));
            }
        }
        Ok(FactorData { days })
    }

    /// Loads the daily factor CSV (`date,mkt,smb,hml,umd`).
    pub fn load(path: &Path) -> Result<FactorData> {
        let mut reader =
            csv::Reader::from_path(path).map_err(|e| Error::file_format(path, e.to_string()))?;
        let headers = reader
            .headers()
            .map_err(|e| Error::file_format(path, e.to_string()))?;
        let expected = ["date", "mkt", "smb", "hml", "umd"];
        if headers.iter().take(5).ne(expected) {
            return Err(Error::file_format(
                path,
                format!("expected columns {}", expected.join(",")),
            ));
        }
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::file_format(path, e.to_string()))?;
            let get = |j: usize| record.get(j).unwrap_or("");
            let num = |j: usize| -> Result<f64> {
                get(j).parse().map_err(|_| {
                    Error::file_format(path, format!("row {}: bad number {:?}", i + 2, get(j)))
                })
            };
            let date = NaiveDate::parse_from_str(get(0), "%Y-%m-%d").map_err(|_| {
                Error::file_format(path, format!("row {}: bad date {:?}", i + 2, get(0)))
            })?;
            rows.push((
                date,
                FactorDay {
                    mkt: num(1)?,
                    smb: num(2)?,
                    hml: num(3)?,
                    umd: num(4)?,
                },
            ));
        }
        FactorData::from_rows(rows)
    }

    pub fn at(&self, date: NaiveDate) -> Option<&FactorDay> {
        self.days.get(&date)
    }
}

/// Tuning knobs for the weekly market controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketPolicy {
    /// Minimum within-week observations for the three-factor residual fit.
    pub ivol_min_obs: usize,
    /// Trailing trading-day window for beta.
    pub beta_window: usize,
    /// Minimum overlapping days within the beta window.
    pub beta_min_obs: usize,
    /// Multiplier applied to mean |return|/volume.
    pub illiq_scale: f64,
}

impl Default for MarketPolicy {
    fn default() -> Self {
        MarketPolicy {
            ivol_min_obs: 4,
            beta_window: 50,
            beta_min_obs: 30,
            illiq_scale: 1e6,
        }
    }
}

/// The sub-slice of `days` falling inside `week`.
pub fn days_in_week(
    days: &[MarketDay],
    week: WeekIndex,
    convention: WeekConvention,
) -> &[MarketDay] {
    let (start, end) = week.span(convention);
    let lo = days.partition_point(|d| d.date < start);
    let hi = days.partition_point(|d| d.date <= end);
    &days[lo..hi]
}

/// Compounded return over the week's trading days.
pub fn weekly_return(days: &[MarketDay]) -> Option<f64> {
    if days.is_empty() {
        return None;
    }
    Some(days.iter().fold(1.0, |acc, d| acc * (1.0 + d.ret)) - 1.0)
}

/// Log tradable market cap on the last trading day of the week.
pub fn weekly_size(days: &[MarketDay]) -> Option<f64> {
    let cap = days.last()?.tradable_cap;
    (cap > 0.0).then(|| cap.ln())
}

/// Mean daily turnover over the week.
pub fn weekly_turnover(days: &[MarketDay]) -> Option<f64> {
    if days.is_empty() {
        return None;
    }
    Some(days.iter().map(|d| d.turnover).sum::<f64>() / days.len() as f64)
}

/// Mean |return|/volume over days with positive volume, times `scale`.
/// Missing when no day traded.
pub fn weekly_illiquidity(days: &[MarketDay], scale: f64) -> Option<f64> {
    let ratios: Vec<f64> = days
        .iter()
        .filter(|d| d.volume > 0.0)
        .map(|d| d.ret.abs() / d.volume)
        .collect();
    if ratios.is_empty() {
        return None;
    }
    Some(scale * ratios.iter().sum::<f64>() / ratios.len() as f64)
}

/// Sample standard deviation of daily three-factor residuals within the
/// week. Missing with fewer than `min_obs` days carrying factor data.
pub fn weekly_ivol(days: &[MarketDay], factors: &FactorData, min_obs: usize) -> Option<f64> {
    let paired: Vec<(f64, FactorDay)> = days
        .iter()
        .filter_map(|d| factors.at(d.date).map(|f| (d.ret, *f)))
        .collect();
    let n = paired.len();
    if n < min_obs {
        return None;
    }

    // Factor columns that are constant within the week carry no slope
    // information and would collide with the intercept; drop them.
    let candidates: [(&str, fn(&FactorDay) -> f64); 3] = [
        ("mkt", |f| f.mkt),
        ("smb", |f| f.smb),
        ("hml", |f| f.hml),
    ];
    let mut names: Vec<&str> = vec!["const"];
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
    for (name, get) in candidates {
        let values: Vec<f64> = paired.iter().map(|(_, f)| get(f)).collect();
        let varying = values.iter().any(|&v| v != values[0]);
        if varying {
            names.push(name);
            cols.push(values);
        }
    }
    let k = cols.len();
    let x = DMatrix::from_fn(n, k, |i, j| cols[j][i]);
    let y = DVector::from_iterator(n, paired.iter().map(|(r, _)| *r));
    match ols(&x, &y, &names) {
        Ok(fit) => {
            let residuals: Vec<f64> = fit.residuals.iter().copied().collect();
            sample_std(&residuals)
        }
        Err(e) => {
            log::debug!("ivol fit skipped: {e}");
            None
        }
    }
}

/// Slope from regressing the firm's daily returns on the market return over
/// the last `window` of its trading days ending at `through` (inclusive).
/// Missing with fewer than `min_obs` days overlapping the factor calendar.
pub fn trailing_beta(
    days: &[MarketDay],
    through: NaiveDate,
    factors: &FactorData,
    window: usize,
    min_obs: usize,
) -> Option<f64> {
    let hi = days.partition_point(|d| d.date <= through);
    let lo = hi.saturating_sub(window);
    let paired: Vec<(f64, f64)> = days[lo..hi]
        .iter()
        .filter_map(|d| factors.at(d.date).map(|f| (d.ret, f.mkt)))
        .collect();
    let n = paired.len();
    if n < min_obs.max(2) {
        return None;
    }
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { paired[i].1 });
    let y = DVector::from_iterator(n, paired.iter().map(|(r, _)| *r));
    match ols(&x, &y, &["const", "mkt"]) {
        Ok(fit) => Some(fit.coef[1]),
        Err(e) => {
            log::debug!("beta fit skipped through {through}: {e}");
            None
        }
    }
}
