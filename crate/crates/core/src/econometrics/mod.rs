//! Panel regressions: static two-way fixed effects and dynamic difference
//! GMM, with median-split subsamples and report tables.
//!
//! A [`PanelDataset`] is an immutable column store over firm-week rows,
//! sorted by (firm, week), with calendar-aware lag/lead operators so a gap
//! week is never mistaken for the previous observation. Estimators consume a
//! [`RegressionSpec`] and produce a [`FitResult`]; rows with any missing
//! required field are excluded (listwise deletion).

pub mod fe;
pub mod gmm;
pub mod tables;

pub use fe::within_fe_ols;
pub use gmm::diff_gmm;
pub use tables::{run_all_tables, run_table, TableConfig, TableId, TableReport};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::characteristics::ControlRow;
use crate::date::WeekIndex;
use crate::error::{Error, Result};
use crate::linalg::{median, sample_std};
use crate::panel::FirmWeekRow;

/// Column store over firm-week rows, sorted by (firm, week).
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    firms: Vec<String>,
    weeks: Vec<WeekIndex>,
    columns: BTreeMap<String, Vec<Option<f64>>>,
}

impl PanelDataset {
    /// Builds a dataset from parallel row vectors. Rows are sorted by
    /// (firm, week); duplicate (firm, week) pairs are rejected.
    pub fn from_columns(
        firms: Vec<String>,
        weeks: Vec<WeekIndex>,
        columns: BTreeMap<String, Vec<Option<f64>>>,
    ) -> Result<PanelDataset> {
        let n = firms.len();
        if weeks.len() != n {
            return Err(Error::Invalid(format!(
                "firms has {n} rows but weeks has {}",
                weeks.len()
            )));
        }
        for (name, col) in &columns {
            if col.len() != n {
                return Err(Error::Invalid(format!(
                    "column {name:?} has {} rows, expected {n}",
                    col.len()
                )));
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| (&firms[a], weeks[a]).cmp(&(&firms[b], weeks[b])));
        for pair in order.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if firms[a] == firms[b] && weeks[a] == weeks[b] {
                return Err(Error::Invalid(format!(
                    "duplicate panel row: {} {}",
                    firms[a], weeks[a]
                )));
            }
        }
        let permute_str = |v: &[String]| order.iter().map(|&i| v[i].clone()).collect();
        let permute_week = |v: &[WeekIndex]| order.iter().map(|&i| v[i]).collect();
        let columns = columns
            .into_iter()
            .map(|(name, col)| (name, order.iter().map(|&i| col[i]).collect()))
            .collect();
        Ok(PanelDataset {
            firms: permute_str(&firms),
            weeks: permute_week(&weeks),
            columns,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.firms.len()
    }

    pub fn firm_of_row(&self, row: usize) -> &str {
        &self.firms[row]
    }

    pub fn week_of_row(&self, row: usize) -> WeekIndex {
        self.weeks[row]
    }

    pub fn column(&self, name: &str) -> Result<&[Option<f64>]> {
        self.columns
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Invalid(format!("no such column: {name:?}")))
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    /// Adds a column aligned with existing rows; the name must be new.
    pub fn add_column(&mut self, name: &str, values: Vec<Option<f64>>) -> Result<()> {
        if values.len() != self.n_rows() {
            return Err(Error::Invalid(format!(
                "column {name:?} has {} rows, expected {}",
                values.len(),
                self.n_rows()
            )));
        }
        if self.columns.contains_key(name) {
            return Err(Error::Invalid(format!("column {name:?} already exists")));
        }
        self.columns.insert(name.to_owned(), values);
        Ok(())
    }

    /// Contiguous row ranges per firm, in firm order.
    pub fn firm_ranges(&self) -> Vec<(usize, usize)> {
        let mut ranges = Vec::new();
        let mut start = 0;
        for row in 1..=self.n_rows() {
            if row == self.n_rows() || self.firms[row] != self.firms[start] {
                ranges.push((start, row));
                start = row;
            }
        }
        ranges
    }

    /// `column` shifted by `k` calendar weeks within each firm: the value at
    /// the week exactly `k` weeks earlier, `None` across gaps. Negative `k`
    /// is a lead.
    pub fn lag(&self, name: &str, k: i64) -> Result<Vec<Option<f64>>> {
        let col = self.column(name)?;
        let mut out = vec![None; self.n_rows()];
        for (start, end) in self.firm_ranges() {
            let ordinals: Vec<i64> = (start..end).map(|r| self.weeks[r].ordinal()).collect();
            for row in start..end {
                let want = self.weeks[row].ordinal() - k;
                if let Ok(pos) = ordinals.binary_search(&want) {
                    out[row] = col[start + pos];
                }
            }
        }
        Ok(out)
    }

    /// Rows where every named column is present.
    pub fn estimable_rows(&self, required: &[&str]) -> Result<Vec<usize>> {
        let cols: Vec<&[Option<f64>]> = required
            .iter()
            .map(|name| self.column(name))
            .collect::<Result<_>>()?;
        Ok((0..self.n_rows())
            .filter(|&row| cols.iter().all(|c| c[row].is_some()))
            .collect())
    }

    /// A new dataset containing only `rows` (strictly increasing indices).
    pub fn subset(&self, rows: &[usize]) -> PanelDataset {
        PanelDataset {
            firms: rows.iter().map(|&r| self.firms[r].clone()).collect(),
            weeks: rows.iter().map(|&r| self.weeks[r]).collect(),
            columns: self
                .columns
                .iter()
                .map(|(name, col)| (name.clone(), rows.iter().map(|&r| col[r]).collect()))
                .collect(),
        }
    }
}

/// Joins the weekly feature table and the controls table into one dataset.
///
/// Feature columns keep their tendency names (`cnst`, `cpst`, `ost`, `fst`);
/// control columns keep their [`ControlRow`] field names; `ret_fwd` is the
/// next consecutive week's return.
pub fn assemble_panel(
    features: &[FirmWeekRow],
    controls: &BTreeMap<(String, WeekIndex), ControlRow>,
) -> Result<PanelDataset> {
    let mut firms = Vec::with_capacity(features.len());
    let mut weeks = Vec::with_capacity(features.len());
    let mut columns: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
    let names = [
        "cnst",
        "cpst",
        "ost",
        "fst",
        "n_reviews",
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
    for name in names {
        columns.insert(name.to_owned(), Vec::with_capacity(features.len()));
    }
    let push = |columns: &mut BTreeMap<String, Vec<Option<f64>>>, name: &str, v: Option<f64>| {
        columns.get_mut(name).unwrap().push(v);
    };
    for row in features {
        firms.push(row.firm_id.clone());
        weeks.push(row.week);
        let control = controls.get(&(row.firm_id.clone(), row.week));
        push(&mut columns, "cnst", row.diff_neg);
        push(&mut columns, "cpst", row.diff_pos);
        push(&mut columns, "ost", row.diff_star1);
        push(&mut columns, "fst", row.diff_star5);
        push(&mut columns, "n_reviews", Some(row.n_reviews as f64));
        let c = control.copied().unwrap_or_default();
        push(&mut columns, "ret", c.ret);
        push(&mut columns, "size", c.size);
        push(&mut columns, "bm", c.bm);
        push(&mut columns, "roa", c.roa);
        push(&mut columns, "ivol", c.ivol);
        push(&mut columns, "ag", c.ag);
        push(&mut columns, "illiq", c.illiq);
        push(&mut columns, "beta", c.beta);
        push(&mut columns, "gp", c.gp);
        push(&mut columns, "turn", c.turn);
        push(&mut columns, "ad", c.ad);
        push(&mut columns, "rd", c.rd);
        push(&mut columns, "ccis", c.ccis);
        push(&mut columns, "ea", c.ea);
        push(&mut columns, "es", c.es);
        push(&mut columns, "sur", c.sur);
        push(&mut columns, "sue", c.sue);
        push(&mut columns, "prof_shock_hvz", c.prof_shock_hvz);
        push(&mut columns, "prof_shock_vol", c.prof_shock_vol);
    }
    let mut data = PanelDataset::from_columns(firms, weeks, columns)?;
    let ret_fwd = data.lag("ret", -1)?;
    data.add_column("ret_fwd", ret_fwd)?;
    Ok(data)
}

/// Time fixed effects granularity for static models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeEffects {
    None,
    /// One dummy per calendar year (reference year dropped).
    Year,
    /// One dummy per calendar week (reference week dropped).
    Week,
}

/// Standard-error estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SePolicy {
    Classical,
    ClusteredByFirm,
}

/// Instrument construction for the dynamic estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmPolicy {
    /// Deepest level lag used as an instrument (lags 2..=max_lag).
    pub max_lag: usize,
    /// Collapse the instrument matrix to one column per lag.
    pub collapse: bool,
    /// Add per-period dummies to the differenced equation.
    pub week_dummies: bool,
}

impl Default for GmmPolicy {
    fn default() -> Self {
        GmmPolicy {
            max_lag: 4,
            collapse: false,
            week_dummies: false,
        }
    }
}

/// What to estimate: outcome, regressor of interest, controls, and the
/// estimator setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSpec {
    pub outcome: String,
    pub feature: String,
    pub controls: Vec<String>,
    pub firm_fe: bool,
    pub time_fe: TimeEffects,
    /// Dynamic model: first-differenced with the lagged outcome included.
    pub dynamic: bool,
    pub gmm: GmmPolicy,
    pub se_policy: SePolicy,
}

impl RegressionSpec {
    /// Static two-way fixed effects with firm-clustered errors.
    pub fn static_fe(outcome: &str, feature: &str, controls: &[&str]) -> RegressionSpec {
        RegressionSpec {
            outcome: outcome.to_owned(),
            feature: feature.to_owned(),
            controls: controls.iter().map(|c| (*c).to_owned()).collect(),
            firm_fe: true,
            time_fe: TimeEffects::Year,
            dynamic: false,
            gmm: GmmPolicy::default(),
            se_policy: SePolicy::ClusteredByFirm,
        }
    }

    /// Dynamic first-difference GMM; differencing removes firm effects, so
    /// the fixed-effect flags are off.
    pub fn dynamic_gmm(outcome: &str, feature: &str, controls: &[&str]) -> RegressionSpec {
        RegressionSpec {
            outcome: outcome.to_owned(),
            feature: feature.to_owned(),
            controls: controls.iter().map(|c| (*c).to_owned()).collect(),
            firm_fe: false,
            time_fe: TimeEffects::None,
            dynamic: true,
            gmm: GmmPolicy::default(),
            se_policy: SePolicy::ClusteredByFirm,
        }
    }

    /// Checks the dynamic/fixed-effect exclusivity rule.
    pub fn validate(&self) -> Result<()> {
        if self.dynamic && (self.firm_fe || self.time_fe != TimeEffects::None) {
            return Err(Error::Invalid(
                "dynamic specs difference out fixed effects; disable firm_fe/time_fe".to_owned(),
            ));
        }
        Ok(())
    }

    /// Outcome, feature, and controls: every column estimation requires.
    pub fn required_columns(&self) -> Vec<&str> {
        let mut cols = vec![self.outcome.as_str(), self.feature.as_str()];
        cols.extend(self.controls.iter().map(String::as_str));
        cols
    }

    /// Feature and controls, in reporting order.
    pub fn regressors(&self) -> Vec<&str> {
        let mut cols = vec![self.feature.as_str()];
        cols.extend(self.controls.iter().map(String::as_str));
        cols
    }
}

/// One estimated coefficient. `t_stat` is exactly estimate/std_error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_stat: f64,
}

impl Coefficient {
    pub fn new(name: &str, estimate: f64, std_error: f64) -> Coefficient {
        Coefficient {
            name: name.to_owned(),
            estimate,
            std_error,
            t_stat: estimate / std_error,
        }
    }
}

/// Everything an estimation reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub coefficients: Vec<Coefficient>,
    pub n_obs: usize,
    pub n_firms: usize,
    pub ar1_pvalue: Option<f64>,
    pub ar2_pvalue: Option<f64>,
    /// Columns dropped before estimation (no variation after transforms).
    pub dropped_columns: Vec<String>,
    /// Firms dropped for having too few usable observations.
    pub dropped_firms: usize,
    pub warnings: Vec<String>,
    /// Sample std of the feature over the estimation sample, for reading a
    /// coefficient as a one-standard-deviation effect.
    pub feature_sd: Option<f64>,
    pub spec: RegressionSpec,
}

impl FitResult {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

/// Estimates either model family per `spec.dynamic`.
pub fn estimate(data: &PanelDataset, spec: &RegressionSpec) -> Result<FitResult> {
    if spec.dynamic {
        gmm::diff_gmm(data, spec)
    } else {
        fe::within_fe_ols(data, spec)
    }
}

/// A median split of the estimable rows.
#[derive(Debug, Clone)]
pub struct SplitResult {
    pub cutoff: f64,
    /// Rows with split value > cutoff.
    pub high: PanelDataset,
    /// Rows with split value ≤ cutoff (ties go low).
    pub low: PanelDataset,
}

/// Splits the estimable rows (listwise-complete on `required` plus the
/// split variable) at the whole-sample median of `variable`.
pub fn median_split(
    data: &PanelDataset,
    variable: &str,
    required: &[&str],
) -> Result<SplitResult> {
    let mut needed: Vec<&str> = required.to_vec();
    if !needed.contains(&variable) {
        needed.push(variable);
    }
    let rows = data.estimable_rows(&needed)?;
    let col = data.column(variable)?;
    let values: Vec<f64> = rows.iter().map(|&r| col[r].unwrap()).collect();
    let cutoff = median(&values).ok_or_else(|| Error::BadSplit {
        variable: variable.to_owned(),
        reason: "no estimable rows".to_owned(),
    })?;
    if values.iter().all(|v| *v == values[0]) {
        return Err(Error::BadSplit {
            variable: variable.to_owned(),
            reason: "constant on the estimable sample".to_owned(),
        });
    }
    let (high_rows, low_rows): (Vec<usize>, Vec<usize>) =
        rows.iter().partition(|&&r| col[r].unwrap() > cutoff);
    Ok(SplitResult {
        cutoff,
        high: data.subset(&high_rows),
        low: data.subset(&low_rows),
    })
}

/// Sample std of a column over given rows.
pub(crate) fn column_sd(data: &PanelDataset, name: &str, rows: &[usize]) -> Option<f64> {
    let col = data.column(name).ok()?;
    let values: Vec<f64> = rows.iter().filter_map(|&r| col[r]).collect();
    sample_std(&values)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    fn wk(year: i32, week: u8) -> WeekIndex {
        WeekIndex { year, week }
    }

    fn small_panel() -> PanelDataset {
        // Two firms; B has a gap at week 3.
        let firms: Vec<String> = ["B", "B", "B", "A", "A", "A", "A"]
            .iter()
            .map(|s| (*s).to_owned())
            .collect();
        let weeks = vec![
            wk(2015, 2),
            wk(2015, 4),
            wk(2015, 1),
            wk(2015, 1),
            wk(2015, 2),
            wk(2015, 3),
            wk(2015, 4),
        ];
        let mut columns = BTreeMap::new();
        columns.insert(
            "y".to_owned(),
            vec![
                Some(2.0),
                Some(4.0),
                Some(1.0),
                Some(10.0),
                Some(20.0),
                None,
                Some(40.0),
            ],
        );
        columns.insert(
            "x".to_owned(),
            vec![
                Some(0.2),
                Some(0.4),
                Some(0.1),
                Some(1.0),
                Some(2.0),
                Some(3.0),
                Some(4.0),
            ],
        );
        PanelDataset::from_columns(firms, weeks, columns).unwrap()
    }

    #[test]
    fn rows_are_sorted_and_deduplicated() {
        let data = small_panel();
        assert_eq!(data.n_rows(), 7);
        assert_eq!(data.firm_of_row(0), "A");
        assert_eq!(data.week_of_row(0), wk(2015, 1));
        assert_eq!(data.firm_of_row(4), "B");
        assert_eq!(data.week_of_row(4), wk(2015, 1));
        // Column values moved with their rows.
        assert_eq!(data.column("y").unwrap()[0], Some(10.0));
        assert_eq!(data.column("y").unwrap()[4], Some(1.0));

        let dup = PanelDataset::from_columns(
            vec!["A".into(), "A".into()],
            vec![wk(2015, 1), wk(2015, 1)],
            BTreeMap::new(),
        );
        assert!(dup.is_err());
    }

    #[test]
    fn lag_respects_calendar_gaps() {
        let data = small_panel();
        let lagged = data.lag("y", 1).unwrap();
        // Firm A rows (1..4 in sorted order) are consecutive weeks.
        assert_eq!(lagged[0], None);
        assert_eq!(lagged[1], Some(10.0));
        assert_eq!(lagged[2], Some(20.0));
        assert_eq!(lagged[3], None); // previous week's y is missing
        // Firm B: week 4 has no week-3 row, so no lag.
        assert_eq!(lagged[4], None);
        assert_eq!(lagged[5], Some(1.0));
        assert_eq!(lagged[6], None);

        let lead = data.lag("y", -1).unwrap();
        assert_eq!(lead[0], Some(20.0));
        assert_eq!(lead[1], None);
        assert_eq!(lead[3], None);
        assert_eq!(lead[4], Some(2.0));
    }

    #[test]
    fn estimable_rows_apply_listwise_deletion() {
        let data = small_panel();
        let rows = data.estimable_rows(&["y", "x"]).unwrap();
        assert_eq!(rows, vec![0, 1, 3, 4, 5, 6]);
        assert!(data.estimable_rows(&["nope"]).is_err());
    }

    #[test]
    fn median_split_matches_documented_examples() {
        // values {1,2,3,4} → cutoff 2.5, high {3,4}, low {1,2}.
        let firms: Vec<String> = (0..4).map(|i| format!("F{i}")).collect();
        let weeks = vec![wk(2015, 1); 4];
        let mut columns = BTreeMap::new();
        columns.insert(
            "s".to_owned(),
            vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0)],
        );
        let data = PanelDataset::from_columns(firms.clone(), weeks.clone(), columns).unwrap();
        let split = median_split(&data, "s", &[]).unwrap();
        assert_eq!(split.cutoff, 2.5);
        assert_eq!(split.high.n_rows(), 2);
        assert_eq!(split.low.n_rows(), 2);

        // values {5,5,5,9} → cutoff 5, ties low.
        let mut columns = BTreeMap::new();
        columns.insert(
            "s".to_owned(),
            vec![Some(5.0), Some(5.0), Some(5.0), Some(9.0)],
        );
        let data = PanelDataset::from_columns(firms.clone(), weeks.clone(), columns).unwrap();
        let split = median_split(&data, "s", &[]).unwrap();
        assert_eq!(split.cutoff, 5.0);
        assert_eq!(split.high.n_rows(), 1);
        assert_eq!(split.low.n_rows(), 3);

        // Constant variable → error.
        let mut columns = BTreeMap::new();
        columns.insert("s".to_owned(), vec![Some(7.0); 4]);
        let data = PanelDataset::from_columns(firms, weeks, columns).unwrap();
        assert!(matches!(
            median_split(&data, "s", &[]),
            Err(Error::BadSplit { .. })
        ));
    }

    #[test]
    fn split_partitions_the_estimable_set() {
        let data = small_panel();
        let split = median_split(&data, "x", &["y"]).unwrap();
        let estimable = data.estimable_rows(&["y", "x"]).unwrap();
        assert_eq!(
            split.high.n_rows() + split.low.n_rows(),
            estimable.len()
        );
        // Each subset's (firm, week) pairs are disjoint.
        let keys = |d: &PanelDataset| -> BTreeSet<(String, WeekIndex)> {
            (0..d.n_rows())
                .map(|r| (d.firm_of_row(r).to_owned(), d.week_of_row(r)))
                .collect()
        };
        let high = keys(&split.high);
        let low = keys(&split.low);
        assert!(high.is_disjoint(&low));
        assert_eq!(high.len() + low.len(), estimable.len());
    }

    #[test]
    fn dynamic_spec_rejects_fixed_effects() {
        let mut spec = RegressionSpec::dynamic_gmm("ret_fwd", "cnst", &[]);
        assert!(spec.validate().is_ok());
        spec.firm_fe = true;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn assemble_panel_builds_ret_fwd_as_consecutive_lead() {
        use crate::panel::FirmWeekRow;
        let mk = |week: WeekIndex, diff_neg: Option<f64>| FirmWeekRow {
            firm_id: "F1".to_owned(),
            week,
            n_reviews: 5,
            n_neg: 2,
            n_pos: 1,
            star_counts: [1, 0, 0, 0, 4],
            diff_neg,
            diff_pos: None,
            diff_star1: None,
            diff_star5: None,
        };
        let features = vec![
            mk(wk(2015, 1), None),
            mk(wk(2015, 2), Some(1.0)),
            mk(wk(2015, 4), Some(-1.0)),
        ];
        let mut controls = BTreeMap::new();
        for (w, ret) in [(1u8, 0.01), (2, 0.02), (4, 0.04)] {
            controls.insert(
                ("F1".to_owned(), wk(2015, w)),
                ControlRow {
                    ret: Some(ret),
                    ..ControlRow::default()
                },
            );
        }
        let data = assemble_panel(&features, &controls).unwrap();
        let ret_fwd = data.column("ret_fwd").unwrap();
        let eps = 1e-12;
        assert!((ret_fwd[0].unwrap() - 0.02).abs() < eps);
        assert_eq!(ret_fwd[1], None); // week 3 missing
        assert_eq!(ret_fwd[2], None); // nothing after week 4
        assert_eq!(data.column("cnst").unwrap()[1], Some(1.0));
    }
}
