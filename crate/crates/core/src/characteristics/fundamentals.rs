//! Quarterly financials and fundamentals-based measures.
//!
//! Inputs are one row per firm-quarter. Measures computed here:
//!
//! * simple ratios: roa, book-to-market, gross profitability, asset growth,
//!   advertising and R&D intensity;
//! * earnings volatility: trailing sample std of roa;
//! * revenue and earnings surprises (`sur`, `sue`): year-over-year change
//!   scaled by a trailing dispersion. The scale differs by construction:
//!   `sur` uses the std of the year-over-year revenue-per-share changes,
//!   `sue` the std of the operating-profit levels, each over the trailing
//!   window including the current quarter;
//! * annual accounting-transparency measures: accrual intensity over lagged
//!   assets, and the ratio of scaled-CFO std to scaled-net-profit std over
//!   four years;
//! * cross-sectional profitability forecasts and the implied shocks:
//!   next-quarter roa regressed on market-to-assets, a no-dividend dummy,
//!   dividends-to-book, current roa, and optionally earnings volatility; the
//!   shock realized in quarter q+1 is the realization minus the forecast
//!   from coefficients fitted one quarter earlier applied to quarter-q
//!   regressors.
//!
//! Every function returns `Option<f64>`: zero denominators and insufficient
//! history are missing values, never silent zeros.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::date::Quarter;
use crate::error::{Error, Result};
use crate::linalg::{ols, sample_std};

/// One firm-quarter of financial statement data. Absent fields are missing,
/// not zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarterRow {
    pub firm_id: String,
    pub quarter: Quarter,
    pub total_assets: Option<f64>,
    pub net_profit: Option<f64>,
    pub operating_profit: Option<f64>,
    pub revenue_per_share: Option<f64>,
    pub cfo: Option<f64>,
    pub accruals: Option<f64>,
    pub book_equity: Option<f64>,
    pub sales_expense: Option<f64>,
    pub operating_revenue: Option<f64>,
    pub rd_expense: Option<f64>,
    pub dividends: Option<f64>,
    pub book_value: Option<f64>,
    pub market_value: Option<f64>,
    pub pays_dividend: Option<bool>,
    /// True when `accruals` was filled in as net_profit − cfo at load time.
    #[serde(default)]
    pub accruals_from_fallback: bool,
}

/// A firm's quarterly history.
pub type FirmQuarters = BTreeMap<Quarter, QuarterRow>;

/// All firms' quarterly financials.
#[derive(Debug, Clone, Default)]
pub struct FinancialData {
    by_firm: BTreeMap<String, FirmQuarters>,
}

const FINANCIAL_COLUMNS: [&str; 16] = [
    "firm_id",
    "quarter",
    "total_assets",
    "net_profit",
    "operating_profit",
    "revenue_per_share",
    "cfo",
    "accruals",
    "book_equity",
    "sales_expense",
    "operating_revenue",
    "rd_expense",
    "dividends",
    "book_value",
    "market_value",
    "pays_dividend",
];

impl FinancialData {
    /// Builds the table, filling missing accruals with net_profit − cfo
    /// where both parts exist (flagged per row).
    pub fn from_rows(rows: Vec<QuarterRow>) -> Result<FinancialData> {
        let mut by_firm: BTreeMap<String, FirmQuarters> = BTreeMap::new();
        for mut row in rows {
            if row.accruals.is_none() {
                if let (Some(ni), Some(cfo)) = (row.net_profit, row.cfo) {
                    row.accruals = Some(ni - cfo);
                    row.accruals_from_fallback = true;
                }
            }
            let firm = row.firm_id.clone();
            let quarter = row.quarter;
            if by_firm
                .entry(firm.clone())
                .or_default()
                .insert(quarter, row)
                .is_some()
            {
                return Err(Error::Invalid(format!(
                    "duplicate financials row for {firm} {quarter}"
                )));
            }
        }
        Ok(FinancialData { by_firm })
    }

    /// Loads the quarterly financials CSV. Numeric fields may be empty
    /// (missing); `pays_dividend` accepts 1/0/true/false or empty.
    pub fn load(path: &Path) -> Result<FinancialData> {
        let mut reader =
            csv::Reader::from_path(path).map_err(|e| Error::file_format(path, e.to_string()))?;
        let headers = reader
            .headers()
            .map_err(|e| Error::file_format(path, e.to_string()))?;
        if headers.iter().take(FINANCIAL_COLUMNS.len()).ne(FINANCIAL_COLUMNS) {
            return Err(Error::file_format(
                path,
                format!("expected columns {}", FINANCIAL_COLUMNS.join(",")),
            ));
        }
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::file_format(path, e.to_string()))?;
            let get = |j: usize| record.get(j).unwrap_or("");
            let num = |j: usize| -> Result<Option<f64>> {
                match get(j) {
                    "" => Ok(None),
                    s => s.parse().map(Some).map_err(|_| {
                        Error::file_format(path, format!("row {}: bad number {s:?}", i + 2))
                    }),
                }
            };
            let pays = match get(15) {
                "" => None,
                "1" | "true" => Some(true),
                "0" | "false" => Some(false),
                s => {
                    return Err(Error::file_format(
                        path,
                        format!("row {}: bad pays_dividend {s:?}", i + 2),
                    ))
                }
            };
            rows.push(QuarterRow {
                firm_id: get(0).to_owned(),
                quarter: Quarter::parse(get(1))?,
                total_assets: num(2)?,
                net_profit: num(3)?,
                operating_profit: num(4)?,
                revenue_per_share: num(5)?,
                cfo: num(6)?,
                accruals: num(7)?,
                book_equity: num(8)?,
                sales_expense: num(9)?,
                operating_revenue: num(10)?,
                rd_expense: num(11)?,
                dividends: num(12)?,
                book_value: num(13)?,
                market_value: num(14)?,
                pays_dividend: pays,
                accruals_from_fallback: false,
            });
        }
        FinancialData::from_rows(rows)
    }

    pub fn firm(&self, id: &str) -> Option<&FirmQuarters> {
        self.by_firm.get(id)
    }

    pub fn firms(&self) -> impl Iterator<Item = &str> {
        self.by_firm.keys().map(String::as_str)
    }

    /// Union of quarters present across firms.
    pub fn quarters(&self) -> BTreeSet<Quarter> {
        self.by_firm
            .values()
            .flat_map(|h| h.keys().copied())
            .collect()
    }

    /// Rows whose accruals came from the net_profit − cfo fallback.
    pub fn accrual_fallback_count(&self) -> usize {
        self.by_firm
            .values()
            .flat_map(|h| h.values())
            .filter(|r| r.accruals_from_fallback)
            .count()
    }
}

/// Windows and clamps for the trailing-history measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FundamentalsPolicy {
    /// Trailing window (quarters, inclusive of current) for surprise scales.
    pub surprise_window: usize,
    /// Minimum values inside the surprise window.
    pub surprise_min_obs: usize,
    /// Trailing window for earnings volatility.
    pub vol_window: usize,
    /// Minimum values inside the volatility window.
    pub vol_min_obs: usize,
    /// Optional symmetric clamp on sur/sue.
    pub surprise_clamp: Option<f64>,
}

impl Default for FundamentalsPolicy {
    fn default() -> Self {
        FundamentalsPolicy {
            surprise_window: 8,
            surprise_min_obs: 4,
            vol_window: 8,
            vol_min_obs: 6,
            surprise_clamp: None,
        }
    }
}

fn row<'a>(h: &'a FirmQuarters, q: Quarter) -> Option<&'a QuarterRow> {
    h.get(&q)
}

fn positive(v: Option<f64>) -> Option<f64> {
    v.filter(|x| *x > 0.0)
}

fn nonzero(v: Option<f64>) -> Option<f64> {
    v.filter(|x| *x != 0.0)
}

/// Net profit over total assets.
pub fn roa(h: &FirmQuarters, q: Quarter) -> Option<f64> {
    let r = row(h, q)?;
    Some(r.net_profit? / positive(r.total_assets)?)
}

/// Book equity over market value.
pub fn book_to_market(h: &FirmQuarters, q: Quarter) -> Option<f64> {
    let r = row(h, q)?;
    Some(r.book_equity? / positive(r.market_value)?)
}

/// Operating profit over total assets.
pub fn gross_profitability(h: &FirmQuarters, q: Quarter) -> Option<f64> {
    let r = row(h, q)?;
    Some(r.operating_profit? / positive(r.total_assets)?)
}

/// Quarterly total-asset growth rate.
pub fn asset_growth(h: &FirmQuarters, q: Quarter) -> Option<f64> {
    let ta = row(h, q)?.total_assets?;
    let prev = positive(row(h, q.minus(1))?.total_assets)?;
    Some(ta / prev - 1.0)
}

/// Sales expense over operating revenue.
pub fn ad_intensity(h: &FirmQuarters, q: Quarter) -> Option<f64> {
    let r = row(h, q)?;
    Some(r.sales_expense? / nonzero(r.operating_revenue)?)
}

/// R&D expense over operating revenue.
pub fn rd_intensity(h: &FirmQuarters, q: Quarter) -> Option<f64> {
    let r = row(h, q)?;
    Some(r.rd_expense? / nonzero(r.operating_revenue)?)
}

/// Trailing sample std of roa over `policy.vol_window` quarters ending at
/// `q`, requiring `policy.vol_min_obs` values.
pub fn earnings_vol(h: &FirmQuarters, q: Quarter, policy: &FundamentalsPolicy) -> Option<f64> {
    let values: Vec<f64> = (0..policy.vol_window as i64)
        .filter_map(|back| roa(h, q.minus(back)))
        .collect();
    if values.len() < policy.vol_min_obs {
        return None;
    }
    sample_std(&values)
}

fn clamp(v: f64, policy: &FundamentalsPolicy) -> f64 {
    match policy.surprise_clamp {
        Some(c) => v.clamp(-c, c),
        None => v,
    }
}

/// Standardized revenue surprise: the year-over-year change in revenue per
/// share, divided by the sample std of that change series over the trailing
/// window. Missing when history is short or the std is zero.
pub fn sur(h: &FirmQuarters, q: Quarter, policy: &FundamentalsPolicy) -> Option<f64> {
    let yoy = |at: Quarter| -> Option<f64> {
        let cur = row(h, at)?.revenue_per_share?;
        let prev = row(h, at.minus(4))?.revenue_per_share?;
        Some(cur - prev)
    };
    let numerator = yoy(q)?;
    let changes: Vec<f64> = (0..policy.surprise_window as i64)
        .filter_map(|back| yoy(q.minus(back)))
        .collect();
    if changes.len() < policy.surprise_min_obs {
        return None;
    }
    let sigma = sample_std(&changes)?;
    if sigma == 0.0 {
        return None;
    }
    Some(clamp(numerator / sigma, policy))
}

/// Standardized earnings surprise: the year-over-year change in operating
/// profit, divided by the sample std of the operating-profit levels over the
/// trailing window. Missing when history is short or the std is zero.
pub fn sue(h: &FirmQuarters, q: Quarter, policy: &FundamentalsPolicy) -> Option<f64> {
    let cur = row(h, q)?.operating_profit?;
    let prev = row(h, q.minus(4))?.operating_profit?;
    let levels: Vec<f64> = (0..policy.surprise_window as i64)
        .filter_map(|back| row(h, q.minus(back)).and_then(|r| r.operating_profit))
        .collect();
    if levels.len() < policy.surprise_min_obs {
        return None;
    }
    let sigma = sample_std(&levels)?;
    if sigma == 0.0 {
        return None;
    }
    Some(clamp((cur - prev) / sigma, policy))
}

/// One year of annualized statement data: flows summed over exactly four
/// quarters, assets taken at year end.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AnnualRow {
    pub total_assets: Option<f64>,
    pub net_profit: Option<f64>,
    pub cfo: Option<f64>,
    pub accruals: Option<f64>,
}

/// Collapses quarterly history to years. A flow is present only when all
/// four quarters carry it; assets require the Q4 value.
pub fn annualize(h: &FirmQuarters) -> BTreeMap<i32, AnnualRow> {
    let years: BTreeSet<i32> = h.keys().map(|q| q.year).collect();
    let mut out = BTreeMap::new();
    for year in years {
        let quarters: Vec<Option<&QuarterRow>> = (1..=4)
            .map(|qn| h.get(&Quarter { year, quarter: qn }))
            .collect();
        let sum = |get: fn(&QuarterRow) -> Option<f64>| -> Option<f64> {
            quarters
                .iter()
                .map(|r| r.and_then(get))
                .sum::<Option<f64>>()
        };
        out.insert(
            year,
            AnnualRow {
                total_assets: quarters[3].and_then(|r| r.total_assets),
                net_profit: sum(|r| r.net_profit),
                cfo: sum(|r| r.cfo),
                accruals: sum(|r| r.accruals),
            },
        );
    }
    out
}

/// Accrual intensity: annual accruals over prior-year total assets.
pub fn earnings_aggressiveness(annual: &BTreeMap<i32, AnnualRow>, year: i32) -> Option<f64> {
    let acc = annual.get(&year)?.accruals?;
    let ta_prev = positive(annual.get(&(year - 1))?.total_assets)?;
    Some(acc / ta_prev)
}

/// Smoothing ratio: std of CFO scaled by lagged assets over std of net
/// profit scaled by lagged assets, across the four years ending at `year`.
/// Missing when any input year is incomplete or the denominator std is zero.
pub fn earnings_smoothing(annual: &BTreeMap<i32, AnnualRow>, year: i32) -> Option<f64> {
    let mut cfo_ratios = Vec::with_capacity(4);
    let mut ni_ratios = Vec::with_capacity(4);
    for k in 0..4 {
        let y = year - k;
        let cur = annual.get(&y)?;
        let assets_prev = positive(annual.get(&(y - 1))?.total_assets)?;
        cfo_ratios.push(cur.cfo? / assets_prev);
        ni_ratios.push(cur.net_profit? / assets_prev);
    }
    let num = sample_std(&cfo_ratios)?;
    let den = sample_std(&ni_ratios)?;
    if den == 0.0 {
        return None;
    }
    Some(num / den)
}

/// Which profitability forecast model to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProfitModel {
    /// Regressors: intercept, market value / assets, no-dividend dummy,
    /// dividends / book value, current roa.
    Hvz,
    /// The same plus trailing earnings volatility.
    Vol,
}

impl ProfitModel {
    fn regressor_names(&self) -> Vec<&'static str> {
        let mut names = vec!["const", "va", "dd", "db", "prof"];
        if *self == ProfitModel::Vol {
            names.push("vol");
        }
        names
    }
}

/// One firm's regressor set for the profitability cross-section at some
/// quarter, with the realized next-quarter outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfitObs {
    pub firm_id: String,
    /// Market value over total assets.
    pub va: f64,
    /// 1 when the firm pays no dividend.
    pub dd: f64,
    /// Dividends over book value.
    pub db: f64,
    /// Current roa.
    pub prof: f64,
    /// Trailing earnings volatility (used by [`ProfitModel::Vol`]).
    pub vol: Option<f64>,
    /// Realized roa one quarter ahead.
    pub prof_next: f64,
}

/// A fitted cross-sectional forecast: coefficient per retained regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfitFit {
    pub model: ProfitModel,
    pub names: Vec<String>,
    pub coefs: Vec<f64>,
    /// Regressors dropped for having no cross-sectional variation.
    pub dropped: Vec<String>,
    pub n_obs: usize,
}

impl ProfitFit {
    /// The forecast this fit implies for a regressor vector.
    pub fn predict(&self, obs: &ProfitObs) -> Option<f64> {
        let mut total = 0.0;
        for (name, coef) in self.names.iter().zip(&self.coefs) {
            let x = match name.as_str() {
                "const" => 1.0,
                "va" => obs.va,
                "dd" => obs.dd,
                "db" => obs.db,
                "prof" => obs.prof,
                "vol" => obs.vol?,
                other => unreachable!("unknown regressor {other}"),
            };
            total += coef * x;
        }
        Some(total)
    }
}

/// Fits the cross-sectional profitability forecast for one quarter.
///
/// Regressors without cross-sectional variation (for example the
/// no-dividend dummy when every firm pays) are dropped and recorded. Needs
/// at least parameters + 5 observations.
pub fn fit_profit_model(cross_section: &[ProfitObs], model: ProfitModel) -> Result<ProfitFit> {
    let all_names = model.regressor_names();
    let value = |obs: &ProfitObs, name: &str| -> f64 {
        match name {
            "const" => 1.0,
            "va" => obs.va,
            "dd" => obs.dd,
            "db" => obs.db,
            "prof" => obs.prof,
            "vol" => obs.vol.expect("vol-complete cross-section"),
            other => unreachable!("unknown regressor {other}"),
        }
    };
    let rows: Vec<&ProfitObs> = match model {
        ProfitModel::Hvz => cross_section.iter().collect(),
        ProfitModel::Vol => cross_section.iter().filter(|o| o.vol.is_some()).collect(),
    };
    let needed = all_names.len() + 5;
    if rows.len() < needed {
        return Err(Error::Insufficient {
            what: "firms in profitability cross-section",
            needed,
            found: rows.len(),
        });
    }

    let mut names: Vec<&str> = Vec::new();
    let mut dropped: Vec<String> = Vec::new();
    for name in &all_names {
        if *name == "const" {
            names.push(name);
            continue;
        }
        let first = value(rows[0], name);
        if rows.iter().any(|o| value(o, name) != first) {
            names.push(name);
        } else {
            dropped.push((*name).to_owned());
        }
    }

    let n = rows.len();
    let k = names.len();
    let x = DMatrix::from_fn(n, k, |i, j| value(rows[i], names[j]));
    let y = DVector::from_iterator(n, rows.iter().map(|o| o.prof_next));
    let fit = ols(&x, &y, &names)?;
    Ok(ProfitFit {
        model,
        names: names.iter().map(|s| (*s).to_owned()).collect(),
        coefs: fit.coef.iter().copied().collect(),
        dropped,
        n_obs: n,
    })
}

/// Builds a firm's regressor set at quarter `q`, requiring the realized
/// outcome at `q + 1`.
pub fn profit_obs(
    firm_id: &str,
    h: &FirmQuarters,
    q: Quarter,
    policy: &FundamentalsPolicy,
) -> Option<ProfitObs> {
    let r = row(h, q)?;
    let ta = positive(r.total_assets)?;
    let va = r.market_value? / ta;
    let dd = if r.pays_dividend? { 0.0 } else { 1.0 };
    let db = r.dividends? / positive(r.book_value)?;
    let prof = roa(h, q)?;
    let prof_next = roa(h, q.plus(1))?;
    Some(ProfitObs {
        firm_id: firm_id.to_owned(),
        va,
        dd,
        db,
        prof,
        vol: earnings_vol(h, q, policy),
        prof_next,
    })
}

/// Profitability shocks for every firm-quarter they are defined.
///
/// For each quarter q the cross-section (regressors at q, outcome at q+1) is
/// fitted; the shock realized at q+1 is the realized roa minus the forecast
/// from the fit at q−1 applied to the quarter-q regressors. Quarters whose
/// fit fails are skipped (logged), which leaves the dependent shocks
/// missing.
pub fn profit_shock_series(
    financials: &FinancialData,
    model: ProfitModel,
    policy: &FundamentalsPolicy,
) -> BTreeMap<(String, Quarter), f64> {
    let quarters = financials.quarters();
    let mut fits: BTreeMap<Quarter, ProfitFit> = BTreeMap::new();
    for &q in &quarters {
        let cross: Vec<ProfitObs> = financials
            .by_firm
            .iter()
            .filter_map(|(firm, h)| profit_obs(firm, h, q, policy))
            .collect();
        match fit_profit_model(&cross, model) {
            Ok(fit) => {
                fits.insert(q, fit);
            }
            Err(e) => log::debug!("profitability fit at {q} skipped: {e}"),
        }
    }

    let mut shocks = BTreeMap::new();
    for &q in &quarters {
        let Some(fit) = fits.get(&q.minus(1)) else {
            continue;
        };
        for (firm, h) in &financials.by_firm {
            let Some(obs) = profit_obs(firm, h, q, policy) else {
                continue;
            };
            let Some(expected) = fit.predict(&obs) else {
                continue;
            };
            shocks.insert((firm.clone(), q.plus(1)), obs.prof_next - expected);
        }
    }
    shocks
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn q(s: &str) -> Quarter {
        Quarter::parse(s).unwrap()
    }

    fn history(rows: Vec<QuarterRow>) -> FirmQuarters {
        rows.into_iter().map(|r| (r.quarter, r)).collect()
    }

    fn bare(quarter: &str) -> QuarterRow {
        QuarterRow {
            firm_id: "F1".into(),
            quarter: q(quarter),
            total_assets: None,
            net_profit: None,
            operating_profit: None,
            revenue_per_share: None,
            cfo: None,
            accruals: None,
            book_equity: None,
            sales_expense: None,
            operating_revenue: None,
            rd_expense: None,
            dividends: None,
            book_value: None,
            market_value: None,
            pays_dividend: None,
            accruals_from_fallback: false,
        }
    }

    #[test]
    fn simple_ratios() {
        let mut r = bare("2015Q2");
        r.net_profit = Some(2.0);
        r.total_assets = Some(100.0);
        r.book_equity = Some(30.0);
        r.market_value = Some(120.0);
        r.operating_profit = Some(5.0);
        r.sales_expense = Some(4.0);
        r.operating_revenue = Some(80.0);
        r.rd_expense = Some(1.6);
        let mut prev = bare("2015Q1");
        prev.total_assets = Some(100.0);
        let h = history(vec![prev, r]);

        let at = q("2015Q2");
        assert_relative_eq!(roa(&h, at).unwrap(), 0.02);
        assert_relative_eq!(book_to_market(&h, at).unwrap(), 0.25);
        assert_relative_eq!(gross_profitability(&h, at).unwrap(), 0.05);
        assert_relative_eq!(asset_growth(&h, at).unwrap(), 0.0);
        assert_relative_eq!(ad_intensity(&h, at).unwrap(), 0.05);
        assert_relative_eq!(rd_intensity(&h, at).unwrap(), 0.02);
    }

    #[test]
    fn zero_denominators_are_missing() {
        let mut r = bare("2015Q2");
        r.net_profit = Some(2.0);
        r.total_assets = Some(0.0);
        r.book_equity = Some(30.0);
        r.market_value = Some(0.0);
        r.sales_expense = Some(4.0);
        r.operating_revenue = Some(0.0);
        let mut prev = bare("2015Q1");
        prev.total_assets = Some(0.0);
        let h = history(vec![prev, r]);
        let at = q("2015Q2");
        assert_eq!(roa(&h, at), None);
        assert_eq!(book_to_market(&h, at), None);
        assert_eq!(ad_intensity(&h, at), None);
        assert_eq!(asset_growth(&h, at), None);
    }

    #[test]
    fn asset_growth_spans_year_boundary() {
        let mut a = bare("2015Q4");
        a.total_assets = Some(100.0);
        let mut b = bare("2016Q1");
        b.total_assets = Some(110.0);
        let h = history(vec![a, b]);
        assert_relative_eq!(asset_growth(&h, q("2016Q1")).unwrap(), 0.1);
    }

    fn revenue_history(revs: &[f64], start: &str) -> FirmQuarters {
        let first = q(start);
        history(
            revs.iter()
                .enumerate()
                .map(|(i, &rev)| {
                    let mut r = bare("2000Q1");
                    r.quarter = first.plus(i as i64);
                    r.revenue_per_share = Some(rev);
                    r
                })
                .collect(),
        )
    }

    #[test]
    fn sur_matches_brute_force_oracle() {
        // 12 quarters of revenue per share, irregular but smooth.
        let revs = [1.0, 1.1, 0.9, 1.2, 1.3, 1.25, 1.05, 1.5, 1.45, 1.6, 1.2, 1.8];
        let h = revenue_history(&revs, "2013Q1");
        let at = q("2015Q4"); // index 11
        let got = sur(&h, at, &FundamentalsPolicy::default()).unwrap();

        // Brute force: all year-over-year changes for the trailing 8
        // quarters (indices 4..=11), two-pass sample std.
        let changes: Vec<f64> = (4..=11).map(|j| revs[j] - revs[j - 4]).collect();
        let m = changes.iter().sum::<f64>() / changes.len() as f64;
        let ss: f64 = changes.iter().map(|c| (c - m) * (c - m)).sum();
        let sigma = (ss / (changes.len() as f64 - 1.0)).sqrt();
        let oracle = (revs[11] - revs[7]) / sigma;
        assert_relative_eq!(got, oracle, max_relative = 1e-12);
    }

    #[test]
    fn sur_is_zero_on_flat_yoy_and_missing_on_zero_sigma() {
        // Current change is zero but earlier changes vary.
        let revs = [1.0, 1.0, 1.0, 1.0, 1.5, 1.2, 0.8, 1.0, 1.5, 1.2, 0.8, 1.0];
        let h = revenue_history(&revs, "2013Q1");
        assert_eq!(
            sur(&h, q("2015Q4"), &FundamentalsPolicy::default()),
            Some(0.0)
        );

        // Perfectly seasonal revenue: every change is zero, sigma = 0.
        let flat = [1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0];
        let h = revenue_history(&flat, "2013Q1");
        assert_eq!(sur(&h, q("2015Q4"), &FundamentalsPolicy::default()), None);
    }

    #[test]
    fn sur_requires_minimum_history() {
        // Only 5 quarters: a single year-over-year change exists.
        let revs = [1.0, 1.1, 0.9, 1.2, 1.3];
        let h = revenue_history(&revs, "2014Q1");
        assert_eq!(sur(&h, q("2015Q1"), &FundamentalsPolicy::default()), None);
    }

    fn earnings_history(earns: &[f64], start: &str) -> FirmQuarters {
        let first = q(start);
        history(
            earns
                .iter()
                .enumerate()
                .map(|(i, &e)| {
                    let mut r = bare("2000Q1");
                    r.quarter = first.plus(i as i64);
                    r.operating_profit = Some(e);
                    r
                })
                .collect(),
        )
    }

    #[test]
    fn sue_uses_level_dispersion() {
        let earns = [5.0, 6.0, 4.5, 5.5, 6.5, 7.0, 5.0, 6.0, 7.5, 8.0, 6.0, 7.2];
        let h = earnings_history(&earns, "2013Q1");
        let at = q("2015Q4");
        let got = sue(&h, at, &FundamentalsPolicy::default()).unwrap();

        let levels = &earns[4..12];
        let m = levels.iter().sum::<f64>() / 8.0;
        let ss: f64 = levels.iter().map(|e| (e - m) * (e - m)).sum();
        let sigma = (ss / 7.0).sqrt();
        let oracle = (earns[11] - earns[7]) / sigma;
        assert_relative_eq!(got, oracle, max_relative = 1e-12);
    }

    #[test]
    fn sue_zero_when_yoy_flat() {
        let earns = [5.0, 6.0, 4.5, 5.5, 6.5, 7.0, 5.0, 6.0, 7.5, 8.0, 6.0, 6.0];
        let h = earnings_history(&earns, "2013Q1");
        // earns[11] == earns[7], levels still vary.
        assert_eq!(
            sue(&h, q("2015Q4"), &FundamentalsPolicy::default()),
            Some(0.0)
        );
    }

    #[test]
    fn surprise_clamp_is_symmetric_and_optional() {
        // Window levels of {0,0,0,−10,0,0,0,10} put the year-over-year jump
        // at its dispersion-relative extreme (√14 ≈ 3.74 > 3.5).
        let earns = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -10.0, 0.0, 0.0, 0.0, 10.0];
        let h = earnings_history(&earns, "2013Q1");
        let policy = FundamentalsPolicy::default();
        let raw = sue(&h, q("2015Q4"), &policy).unwrap();
        assert!(raw > 3.5);
        let clamped = sue(
            &h,
            q("2015Q4"),
            &FundamentalsPolicy {
                surprise_clamp: Some(3.5),
                ..policy
            },
        )
        .unwrap();
        assert_eq!(clamped, 3.5);
    }

    #[test]
    fn earnings_vol_needs_six_quarters() {
        let mut rows = Vec::new();
        for i in 0..8 {
            let mut r = bare("2014Q1");
            r.quarter = q("2014Q1").plus(i);
            r.net_profit = Some(1.0 + 0.1 * i as f64);
            r.total_assets = Some(100.0);
            rows.push(r);
        }
        let h = history(rows);
        let policy = FundamentalsPolicy::default();
        let at = q("2015Q4");
        let got = earnings_vol(&h, at, &policy).unwrap();
        let roas: Vec<f64> = (0..8).map(|i| (1.0 + 0.1 * i as f64) / 100.0).collect();
        assert_relative_eq!(got, sample_std(&roas).unwrap(), max_relative = 1e-12);

        // Only five quarters of history inside the window.
        assert_eq!(earnings_vol(&h, q("2016Q4"), &policy), None);
    }

    fn annual_rows(
        ta: &[(i32, f64)],
        ni: &[(i32, f64)],
        cfo: &[(i32, f64)],
        acc: &[(i32, f64)],
    ) -> BTreeMap<i32, AnnualRow> {
        let mut out: BTreeMap<i32, AnnualRow> = BTreeMap::new();
        for &(y, v) in ta {
            out.entry(y).or_default().total_assets = Some(v);
        }
        for &(y, v) in ni {
            out.entry(y).or_default().net_profit = Some(v);
        }
        for &(y, v) in cfo {
            out.entry(y).or_default().cfo = Some(v);
        }
        for &(y, v) in acc {
            out.entry(y).or_default().accruals = Some(v);
        }
        out
    }

    #[test]
    fn accrual_intensity_arithmetic() {
        let annual = annual_rows(
            &[(2014, 100.0), (2015, 110.0)],
            &[],
            &[],
            &[(2015, 13.0)],
        );
        assert_relative_eq!(earnings_aggressiveness(&annual, 2015).unwrap(), 0.13);

        let annual = annual_rows(&[(2014, 100.0)], &[], &[], &[(2015, -12.0)]);
        assert_relative_eq!(earnings_aggressiveness(&annual, 2015).unwrap(), -0.12);

        let annual = annual_rows(&[(2014, 100.0)], &[], &[], &[(2015, 0.0)]);
        assert_eq!(earnings_aggressiveness(&annual, 2015), Some(0.0));

        // Missing prior-year assets.
        let annual = annual_rows(&[(2015, 110.0)], &[], &[], &[(2015, 13.0)]);
        assert_eq!(earnings_aggressiveness(&annual, 2015), None);
    }

    #[test]
    fn smoothing_is_one_for_identical_series_and_missing_when_degenerate() {
        let ta: Vec<(i32, f64)> = (2010..=2015).map(|y| (y, 100.0 + y as f64)).collect();
        let flows: Vec<(i32, f64)> = (2011..=2015).map(|y| (y, 3.0 + (y % 3) as f64)).collect();
        let annual = annual_rows(&ta, &flows, &flows, &[]);
        assert_relative_eq!(
            earnings_smoothing(&annual, 2015).unwrap(),
            1.0,
            max_relative = 1e-12
        );

        // Constant net profit with varying assets: denominator still varies,
        // so force exact degeneracy with constant assets and constant NI.
        let ta: Vec<(i32, f64)> = (2010..=2015).map(|y| (y, 100.0)).collect();
        let ni: Vec<(i32, f64)> = (2011..=2015).map(|y| (y, 5.0)).collect();
        let cfo: Vec<(i32, f64)> = (2011..=2015).map(|y| (y, 3.0 + (y % 2) as f64)).collect();
        let annual = annual_rows(&ta, &ni, &cfo, &[]);
        assert_eq!(earnings_smoothing(&annual, 2015), None);
    }

    #[test]
    fn smoothing_matches_two_pass_oracle() {
        let ta = [
            (2010, 90.0),
            (2011, 100.0),
            (2012, 105.0),
            (2013, 112.0),
            (2014, 121.0),
            (2015, 130.0),
        ];
        let ni = [
            (2012, 4.0),
            (2013, 5.5),
            (2014, 4.8),
            (2015, 6.1),
        ];
        let cfo = [
            (2012, 3.0),
            (2013, 6.5),
            (2014, 4.1),
            (2015, 7.4),
        ];
        let annual = annual_rows(&ta, &ni, &cfo, &[]);
        let got = earnings_smoothing(&annual, 2015).unwrap();

        let lagged = |y: i32| ta.iter().find(|(yy, _)| *yy == y - 1).unwrap().1;
        let two_pass = |vals: &[f64]| {
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let ss: f64 = vals.iter().map(|v| (v - m) * (v - m)).sum();
            (ss / (vals.len() as f64 - 1.0)).sqrt()
        };
        let cfo_ratio: Vec<f64> = cfo.iter().map(|&(y, v)| v / lagged(y)).collect();
        let ni_ratio: Vec<f64> = ni.iter().map(|&(y, v)| v / lagged(y)).collect();
        let oracle = two_pass(&cfo_ratio) / two_pass(&ni_ratio);
        assert_relative_eq!(got, oracle, max_relative = 1e-12);
    }

    #[test]
    fn smoothing_requires_four_complete_years() {
        let ta: Vec<(i32, f64)> = (2012..=2015).map(|y| (y, 100.0)).collect();
        let flows: Vec<(i32, f64)> = (2013..=2015).map(|y| (y, 3.0 + y as f64)).collect();
        let annual = annual_rows(&ta, &flows, &flows, &[]);
        assert_eq!(earnings_smoothing(&annual, 2015), None);
    }

    #[test]
    fn annualize_sums_flows_and_takes_year_end_assets() {
        let mut rows = Vec::new();
        for qn in 1..=4 {
            let mut r = bare("2015Q1");
            r.quarter = Quarter { year: 2015, quarter: qn };
            r.total_assets = Some(100.0 + qn as f64);
            r.net_profit = Some(qn as f64);
            r.cfo = Some(2.0 * qn as f64);
            r.accruals = Some(-(qn as f64));
            rows.push(r);
        }
        // 2016 misses Q3: flows must be missing, assets present via Q4.
        for qn in [1, 2, 4] {
            let mut r = bare("2016Q1");
            r.quarter = Quarter { year: 2016, quarter: qn };
            r.total_assets = Some(200.0 + qn as f64);
            r.net_profit = Some(1.0);
            r.cfo = Some(1.0);
            r.accruals = Some(0.0);
            rows.push(r);
        }
        let annual = annualize(&history(rows));
        let y2015 = annual[&2015];
        assert_eq!(y2015.total_assets, Some(104.0));
        assert_eq!(y2015.net_profit, Some(10.0));
        assert_eq!(y2015.cfo, Some(20.0));
        assert_eq!(y2015.accruals, Some(-10.0));
        let y2016 = annual[&2016];
        assert_eq!(y2016.total_assets, Some(204.0));
        assert_eq!(y2016.net_profit, None);
    }

    fn planted_cross_section(
        n: usize,
        alpha: &[f64; 5],
        noise: impl Fn(usize) -> f64,
        all_pay: bool,
    ) -> Vec<ProfitObs> {
        (0..n)
            .map(|i| {
                let t = i as f64;
                let va = 0.8 + 0.01 * t;
                let dd = if all_pay { 0.0 } else { (i % 3 == 0) as u8 as f64 };
                let db = 0.002 * ((i % 7) as f64);
                let prof = 0.01 + 0.001 * ((i % 11) as f64) - 0.003 * ((i % 5) as f64);
                let prof_next = alpha[0] + alpha[1] * va + alpha[2] * dd + alpha[3] * db
                    + alpha[4] * prof
                    + noise(i);
                ProfitObs {
                    firm_id: format!("F{i:03}"),
                    va,
                    dd,
                    db,
                    prof,
                    vol: Some(0.01 + 0.0005 * ((i % 4) as f64)),
                    prof_next,
                }
            })
            .collect()
    }

    #[test]
    fn persistence_only_model_recovers_exactly() {
        let cross = planted_cross_section(40, &[0.0, 0.0, 0.0, 0.0, 1.0], |_| 0.0, false);
        let fit = fit_profit_model(&cross, ProfitModel::Hvz).unwrap();
        assert!(fit.dropped.is_empty());
        let expect = [0.0, 0.0, 0.0, 0.0, 1.0];
        for (name, coef) in fit.names.iter().zip(&fit.coefs) {
            let idx = ["const", "va", "dd", "db", "prof"]
                .iter()
                .position(|n| n == name)
                .unwrap();
            assert!(
                (coef - expect[idx]).abs() < 1e-10,
                "{name} = {coef}"
            );
        }
        // Prediction reproduces prof exactly.
        let shock = cross[7].prof_next - fit.predict(&cross[7]).unwrap();
        assert!(shock.abs() < 1e-12);
    }

    #[test]
    fn planted_model_matches_normal_equations_oracle() {
        let alpha = [0.002, 0.01, -0.004, 0.3, 0.8];
        let cross = planted_cross_section(60, &alpha, |i| 0.001 * ((i as f64 * 0.9).sin()), false);
        let fit = fit_profit_model(&cross, ProfitModel::Hvz).unwrap();

        let n = cross.len();
        let x = DMatrix::from_fn(n, 5, |i, j| {
            let o = &cross[i];
            [1.0, o.va, o.dd, o.db, o.prof][j]
        });
        let y = DVector::from_iterator(n, cross.iter().map(|o| o.prof_next));
        let oracle = (x.transpose() * &x).try_inverse().unwrap() * x.transpose() * y;
        for j in 0..5 {
            assert!(
                (fit.coefs[j] - oracle[j]).abs() < 1e-10,
                "{}: {} vs {}",
                fit.names[j],
                fit.coefs[j],
                oracle[j]
            );
        }
    }

    #[test]
    fn constant_dividend_dummy_is_dropped_and_recorded() {
        let cross = planted_cross_section(30, &[0.001, 0.0, 0.0, 0.0, 0.9], |_| 0.0, true);
        let fit = fit_profit_model(&cross, ProfitModel::Hvz).unwrap();
        assert_eq!(fit.dropped, vec!["dd".to_owned()]);
        assert!(!fit.names.iter().any(|n| n == "dd"));
    }

    #[test]
    fn vol_model_adds_the_volatility_column() {
        let cross = planted_cross_section(40, &[0.0, 0.0, 0.0, 0.0, 0.9], |_| 0.0, false);
        let fit = fit_profit_model(&cross, ProfitModel::Vol).unwrap();
        assert!(fit.names.iter().any(|n| n == "vol"));
    }

    #[test]
    fn small_cross_sections_are_rejected() {
        let cross = planted_cross_section(8, &[0.0; 5], |_| 0.0, false);
        assert!(matches!(
            fit_profit_model(&cross, ProfitModel::Hvz),
            Err(Error::Insufficient { .. })
        ));
    }

    /// Builds a firm history with enough structure for the shock pipeline.
    fn shock_financials(n_firms: usize) -> FinancialData {
        let mut rows = Vec::new();
        for f in 0..n_firms {
            for i in 0..10i64 {
                let mut r = bare("2013Q1");
                r.firm_id = format!("F{f:03}");
                r.quarter = q("2013Q1").plus(i);
                r.total_assets = Some(100.0);
                // roa varies by firm and quarter, deterministic.
                r.net_profit = Some(1.0 + 0.1 * (f % 5) as f64 + 0.05 * (i % 3) as f64);
                r.market_value = Some(80.0 + (f % 7) as f64);
                r.book_value = Some(50.0);
                // Dividends vary among payers so db is not collinear with dd.
                r.dividends = Some(if f % 3 == 0 {
                    0.0
                } else {
                    0.3 + 0.1 * (f % 4) as f64
                });
                r.pays_dividend = Some(f % 3 != 0);
                rows.push(r);
            }
        }
        FinancialData::from_rows(rows).unwrap()
    }

    #[test]
    fn shock_series_uses_prior_quarter_coefficients() {
        let fin = shock_financials(30);
        let policy = FundamentalsPolicy::default();
        let shocks = profit_shock_series(&fin, ProfitModel::Hvz, &policy);
        assert!(!shocks.is_empty());

        // Recompute one shock by hand.
        let ((firm, at), &got) = shocks.iter().next().unwrap();
        let regressor_q = at.minus(1);
        let fit_q = regressor_q.minus(1);
        // Rebuild the fit at fit_q.
        let cross: Vec<ProfitObs> = fin
            .by_firm
            .iter()
            .filter_map(|(f, h)| profit_obs(f, h, fit_q, &policy))
            .collect();
        let fit = fit_profit_model(&cross, ProfitModel::Hvz).unwrap();
        let h = fin.firm(firm).unwrap();
        let obs = profit_obs(firm, h, regressor_q, &policy).unwrap();
        let oracle = obs.prof_next - fit.predict(&obs).unwrap();
        assert_relative_eq!(got, oracle, max_relative = 1e-12);
    }

    #[test]
    fn financials_csv_round_trip_with_fallback() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fin.csv");
        let mut header = FINANCIAL_COLUMNS.join(",");
        header.push('\n');
        std::fs::write(
            &path,
            format!(
                "{header}F1,2015Q1,100,5,7,1.2,4,,30,4,80,1.6,0.5,50,120,1\n\
                 F1,2015Q2,105,6,8,1.3,5,2,31,4,82,1.7,0,51,125,0\n"
            ),
        )
        .unwrap();
        let fin = FinancialData::load(&path).unwrap();
        let h = fin.firm("F1").unwrap();
        let q1 = &h[&q("2015Q1")];
        assert_eq!(q1.accruals, Some(1.0)); // 5 − 4 fallback
        assert!(q1.accruals_from_fallback);
        let q2 = &h[&q("2015Q2")];
        assert_eq!(q2.accruals, Some(2.0));
        assert!(!q2.accruals_from_fallback);
        assert_eq!(q2.pays_dividend, Some(false));
        assert_eq!(fin.accrual_fallback_count(), 1);
    }
}
