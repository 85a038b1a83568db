//! Firm-week control variables.
//!
//! Joins three input frequencies onto the weekly panel grid:
//!
//! * daily market and factor data, collapsed to weekly values (`size`,
//!   `turn`, `illiq`, `ivol`, `beta`, and the realized weekly return);
//! * quarterly financial statements, expanded as step functions (`roa`,
//!   `bm`, `gp`, `ag`, `ad`, `rd`, `sur`, `sue`, profitability shocks) and
//!   annual measures (`ea`, `es`);
//! * the monthly consumer confidence index (`ccis`).
//!
//! Low-frequency values follow the step-function rule of
//! [`frequency::StepSeries`]: a week carries the period containing its
//! Monday, shifted back by an optional publication lag. A field the inputs
//! cannot support is missing, never zero.

pub mod frequency;
pub mod fundamentals;
pub mod market;

use std::collections::BTreeMap;
use std::path::Path;

use chrono::Datelike;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::date::{Quarter, WeekConvention, WeekIndex};
use crate::error::{Error, Result};
pub use frequency::{load_ccis, StepSeries};
pub use fundamentals::{FinancialData, FundamentalsPolicy, ProfitModel, QuarterRow};
pub use market::{FactorData, MarketData, MarketPolicy};

/// Controls and split variables for one firm-week, plus the realized weekly
/// return the panel regressions use to build outcomes. `None` is missing.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlRow {
    pub ret: Option<f64>,
    pub size: Option<f64>,
    pub bm: Option<f64>,
    pub roa: Option<f64>,
    pub ivol: Option<f64>,
    pub ag: Option<f64>,
    pub illiq: Option<f64>,
    pub beta: Option<f64>,
    pub gp: Option<f64>,
    pub turn: Option<f64>,
    pub ad: Option<f64>,
    pub rd: Option<f64>,
    pub ccis: Option<f64>,
    pub ea: Option<f64>,
    pub es: Option<f64>,
    pub sur: Option<f64>,
    pub sue: Option<f64>,
    pub prof_shock_hvz: Option<f64>,
    pub prof_shock_vol: Option<f64>,
}

/// Everything that parameterizes the control build.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlsConfig {
    pub convention: WeekConvention,
    pub market: MarketPolicy,
    pub fundamentals: FundamentalsPolicy,
    /// Weeks by which low-frequency data (financials, ccis) lags the panel.
    pub publication_lag_weeks: i64,
}

impl Default for ControlsConfig {
    fn default() -> Self {
        ControlsConfig {
            convention: WeekConvention::default(),
            market: MarketPolicy::default(),
            fundamentals: FundamentalsPolicy::default(),
            publication_lag_weeks: 0,
        }
    }
}

/// Computes [`ControlRow`]s for the requested firm-weeks.
///
/// `keys` is the panel grid, normally the firm-weeks of the feature table.
/// Firms run in parallel; each firm-week is independent, so output is
/// invariant to firm processing order.
pub fn build_controls(
    market: &MarketData,
    factors: &FactorData,
    financials: &FinancialData,
    ccis: &StepSeries,
    keys: &[(String, WeekIndex)],
    config: &ControlsConfig,
) -> BTreeMap<(String, WeekIndex), ControlRow> {
    let mut by_firm: BTreeMap<&str, Vec<WeekIndex>> = BTreeMap::new();
    for (firm, week) in keys {
        by_firm.entry(firm).or_default().push(*week);
    }

    let shocks_hvz =
        fundamentals::profit_shock_series(financials, ProfitModel::Hvz, &config.fundamentals);
    let shocks_vol =
        fundamentals::profit_shock_series(financials, ProfitModel::Vol, &config.fundamentals);
    let shocks = (&shocks_hvz, &shocks_vol);

    by_firm
        .into_par_iter()
        .flat_map_iter(|(firm, weeks)| {
            let days = market.firm(firm);
            let history = financials.firm(firm);
            let annual = history.map(fundamentals::annualize);
            weeks.into_iter().map(move |week| {
                let row = control_row(
                    firm,
                    week,
                    days,
                    factors,
                    history,
                    annual.as_ref(),
                    ccis,
                    shocks,
                    config,
                );
                ((firm.to_owned(), week), row)
            })
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn control_row(
    firm: &str,
    week: WeekIndex,
    days: Option<&[market::MarketDay]>,
    factors: &FactorData,
    history: Option<&fundamentals::FirmQuarters>,
    annual: Option<&BTreeMap<i32, fundamentals::AnnualRow>>,
    ccis: &StepSeries,
    shocks: (
        &BTreeMap<(String, Quarter), f64>,
        &BTreeMap<(String, Quarter), f64>,
    ),
    config: &ControlsConfig,
) -> ControlRow {
    let mut row = ControlRow::default();

    if let Some(days) = days {
        let in_week = market::days_in_week(days, week, config.convention);
        row.ret = market::weekly_return(in_week);
        row.size = market::weekly_size(in_week);
        row.turn = market::weekly_turnover(in_week);
        row.illiq = market::weekly_illiquidity(in_week, config.market.illiq_scale);
        row.ivol = market::weekly_ivol(in_week, factors, config.market.ivol_min_obs);
        let (_, week_end) = week.span(config.convention);
        row.beta = market::trailing_beta(
            days,
            week_end,
            factors,
            config.market.beta_window,
            config.market.beta_min_obs,
        );
    }

    // Low-frequency lookups anchor on the week's Monday, pushed back by the
    // publication lag.
    let anchor = week.monday() - chrono::Duration::weeks(config.publication_lag_weeks);
    row.ccis = ccis.at(anchor);

    if let Some(history) = history {
        let quarter = Quarter::containing(anchor);
        let policy = &config.fundamentals;
        row.roa = fundamentals::roa(history, quarter);
        row.bm = fundamentals::book_to_market(history, quarter);
        row.gp = fundamentals::gross_profitability(history, quarter);
        row.ag = fundamentals::asset_growth(history, quarter);
        row.ad = fundamentals::ad_intensity(history, quarter);
        row.rd = fundamentals::rd_intensity(history, quarter);
        row.sur = fundamentals::sur(history, quarter, policy);
        row.sue = fundamentals::sue(history, quarter, policy);
        let key = (firm.to_owned(), quarter);
        row.prof_shock_hvz = shocks.0.get(&key).copied();
        row.prof_shock_vol = shocks.1.get(&key).copied();
    }

    if let Some(annual) = annual {
        let year = anchor.year();
        row.ea = fundamentals::earnings_aggressiveness(annual, year);
        row.es = fundamentals::earnings_smoothing(annual, year);
    }

    row
}

const CONTROL_COLUMNS: [&str; 22] = [
    "firm_id",
    "iso_year",
    "iso_week",
    "ret",
    "size",
    "bm",
    "roa",
    "ivol",
    "ag",
    "illiq",
    "beta",
    "gp",
    "turn",
    "ad",
    "rd",
    "ccis",
    "ea",
    "es",
    "sur",
    "sue",
    "prof_shock_hvz",
    "prof_shock_vol",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the controls table as CSV, one row per firm-week, missing values
/// as empty cells.
pub fn write_controls(
    path: &Path,
    controls: &BTreeMap<(String, WeekIndex), ControlRow>,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::file_format(path, format!("{other:?}")),
    })?;
    writer
        .write_record(CONTROL_COLUMNS)
        .map_err(|e| Error::file_format(path, e.to_string()))?;
    for ((firm, week), row) in controls {
        let record = [
            firm.clone(),
            week.year.to_string(),
            week.week.to_string(),
            opt(row.ret),
            opt(row.size),
            opt(row.bm),
            opt(row.roa),
            opt(row.ivol),
            opt(row.ag),
            opt(row.illiq),
            opt(row.beta),
            opt(row.gp),
            opt(row.turn),
            opt(row.ad),
            opt(row.rd),
            opt(row.ccis),
            opt(row.ea),
            opt(row.es),
            opt(row.sur),
            opt(row.sue),
            opt(row.prof_shock_hvz),
            opt(row.prof_shock_vol),
        ];
        writer
            .write_record(&record)
            .map_err(|e| Error::file_format(path, e.to_string()))?;
    }
    writer
        .flush()
        .map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a controls table written by [`write_controls`].
pub fn read_controls(path: &Path) -> Result<BTreeMap<(String, WeekIndex), ControlRow>> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| Error::file_format(path, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::file_format(path, e.to_string()))?;
    if headers.iter().ne(CONTROL_COLUMNS) {
        return Err(Error::file_format(
            path,
            format!("expected columns {}", CONTROL_COLUMNS.join(",")),
        ));
    }
    let mut out = BTreeMap::new();
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
        let week = WeekIndex {
            year: get(1)
                .parse()
                .map_err(|_| Error::file_format(path, format!("row {}: bad iso_year", i + 2)))?,
            week: get(2)
                .parse()
                .map_err(|_| Error::file_format(path, format!("row {}: bad iso_week", i + 2)))?,
        };
        week.validate()?;
        let row = ControlRow {
            ret: num(3)?,
            size: num(4)?,
            bm: num(5)?,
            roa: num(6)?,
            ivol: num(7)?,
            ag: num(8)?,
            illiq: num(9)?,
            beta: num(10)?,
            gp: num(11)?,
            turn: num(12)?,
            ad: num(13)?,
            rd: num(14)?,
            ccis: num(15)?,
            ea: num(16)?,
            es: num(17)?,
            sur: num(18)?,
            sue: num(19)?,
            prof_shock_hvz: num(20)?,
            prof_shock_vol: num(21)?,
        };
        out.insert((get(0).to_owned(), week), row);
    }
    Ok(out)
}
