//! Static panel estimation: two-way fixed effects by the within
//! transformation, classical or firm-clustered standard errors.
//!
//! Firm effects are absorbed by demeaning; time effects enter as explicit
//! dummy columns (reference period dropped) and are demeaned along with
//! everything else, which reproduces joint dummy-variable least squares
//! exactly. After demeaning, each column gets its grand mean back and an
//! intercept column is appended, so slopes are untouched while the reported
//! constant is the usual mean-recovered intercept.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::{
    column_sd, Coefficient, FitResult, PanelDataset, RegressionSpec, SePolicy, TimeEffects,
};
use crate::error::{Error, Result};
use crate::linalg::ols;

/// Estimates a static fixed-effects model.
pub fn within_fe_ols(data: &PanelDataset, spec: &RegressionSpec) -> Result<FitResult> {
    spec.validate()?;
    if spec.dynamic {
        return Err(Error::Invalid(
            "within_fe_ols fits static specs; use diff_gmm for dynamic ones".to_owned(),
        ));
    }
    let required = spec.required_columns();
    let mut rows = data.estimable_rows(&required)?;

    // Count per-firm estimable rows; a firm with a single row contributes
    // nothing after demeaning and is dropped.
    let mut dropped_firms = 0;
    if spec.firm_fe {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for &r in &rows {
            *counts.entry(data.firm_of_row(r)).or_default() += 1;
        }
        dropped_firms = counts.values().filter(|&&c| c < 2).count();
        rows.retain(|&r| counts[data.firm_of_row(r)] >= 2);
    }
    let n = rows.len();

    // Firm index per retained row.
    let mut firm_ids: Vec<&str> = Vec::with_capacity(n);
    let mut firm_of: Vec<usize> = Vec::with_capacity(n);
    for &r in &rows {
        let firm = data.firm_of_row(r);
        match firm_ids.last() {
            Some(last) if *last == firm => {}
            _ => firm_ids.push(firm),
        }
        firm_of.push(firm_ids.len() - 1);
    }
    let n_firms = firm_ids.len();
    if n == 0 || (spec.firm_fe && n_firms == 0) {
        return Err(Error::Insufficient {
            what: "estimable observations",
            needed: 1,
            found: 0,
        });
    }

    // Assemble raw columns: outcome, regressors, time dummies.
    let take = |name: &str| -> Result<Vec<f64>> {
        let col = data.column(name)?;
        Ok(rows.iter().map(|&r| col[r].unwrap()).collect())
    };
    let mut y = take(&spec.outcome)?;
    let mut names: Vec<String> = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for name in spec.regressors() {
        names.push(name.to_owned());
        cols.push(take(name)?);
    }
    let n_regressors = cols.len();
    for (label, dummy) in time_dummies(data, &rows, spec.time_fe) {
        names.push(label);
        cols.push(dummy);
    }

    // Within transformation.
    if spec.firm_fe {
        demean_by_group(&mut y, &firm_of, n_firms);
        for col in &mut cols {
            demean_by_group(col, &firm_of, n_firms);
        }
    }

    // Drop columns the transformation flattened.
    let mut dropped_columns = Vec::new();
    let mut kept: Vec<usize> = Vec::new();
    for (j, col) in cols.iter().enumerate() {
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo <= 1e-10 * (1.0 + hi.abs().max(lo.abs())) {
            dropped_columns.push(names[j].clone());
        } else {
            kept.push(j);
        }
    }

    let k = kept.len() + 1;
    let mut x = DMatrix::zeros(n, k);
    let mut design_names: Vec<&str> = Vec::with_capacity(k);
    for (out_j, &j) in kept.iter().enumerate() {
        for i in 0..n {
            x[(i, out_j)] = cols[j][i];
        }
        design_names.push(&names[j]);
    }
    for i in 0..n {
        x[(i, k - 1)] = 1.0;
    }
    design_names.push("const");
    let y = DVector::from_vec(y);

    let fit = ols(&x, &y, &design_names)?;

    let absorbed = if spec.firm_fe { n_firms - 1 } else { 0 };
    let std_errors = match spec.se_policy {
        SePolicy::Classical => {
            let dof = n.checked_sub(k + absorbed).filter(|&d| d > 0).ok_or(
                Error::Insufficient {
                    what: "degrees of freedom",
                    needed: k + absorbed + 1,
                    found: n,
                },
            )?;
            let s2 = fit.rss() / dof as f64;
            DVector::from_iterator(k, (0..k).map(|j| (s2 * fit.xtx_inv[(j, j)]).sqrt()))
        }
        SePolicy::ClusteredByFirm => {
            clustered_se(&x, &fit.residuals, &fit.xtx_inv, &firm_of)?
        }
    };

    // Report regressors, then the constant, then time dummies.
    let mut order: Vec<usize> = Vec::with_capacity(k);
    order.extend((0..k - 1).filter(|&j| {
        kept[j] < n_regressors
    }));
    order.push(k - 1);
    order.extend((0..k - 1).filter(|&j| kept[j] >= n_regressors));
    let coefficients = order
        .into_iter()
        .map(|j| Coefficient::new(design_names[j], fit.coef[j], std_errors[j]))
        .collect();

    Ok(FitResult {
        coefficients,
        n_obs: n,
        n_firms,
        ar1_pvalue: None,
        ar2_pvalue: None,
        dropped_columns,
        dropped_firms,
        warnings: Vec::new(),
        feature_sd: column_sd(data, &spec.feature, &rows),
        spec: spec.clone(),
    })
}

/// Subtracts group means and restores the grand mean in place.
pub fn demean_by_group(values: &mut [f64], group_of: &[usize], n_groups: usize) {
    let mut sums = vec![0.0; n_groups];
    let mut counts = vec![0usize; n_groups];
    for (v, &g) in values.iter().zip(group_of) {
        sums[g] += *v;
        counts[g] += 1;
    }
    let grand = values.iter().sum::<f64>() / values.len() as f64;
    for (v, &g) in values.iter_mut().zip(group_of) {
        *v = *v - sums[g] / counts[g] as f64 + grand;
    }
}

/// Indicator columns for each time label but the first.
fn time_dummies(
    data: &PanelDataset,
    rows: &[usize],
    effects: TimeEffects,
) -> Vec<(String, Vec<f64>)> {
    let labels: Vec<String> = rows
        .iter()
        .map(|&r| {
            let week = data.week_of_row(r);
            match effects {
                TimeEffects::None => String::new(),
                TimeEffects::Year => format!("year_{}", week.year),
                TimeEffects::Week => format!("week_{week}"),
            }
        })
        .collect();
    if effects == TimeEffects::None {
        return Vec::new();
    }
    let mut distinct: Vec<&String> = labels.iter().collect();
    distinct.sort();
    distinct.dedup();
    distinct
        .into_iter()
        .skip(1)
        .map(|label| {
            let col = labels
                .iter()
                .map(|l| (l == label) as u8 as f64)
                .collect();
            (label.clone(), col)
        })
        .collect()
}

/// Cluster-robust standard errors: the sandwich estimator over firm score
/// sums with the finite-sample factor G/(G−1)·(n−1)/(n−k), k counting only
/// the explicit design columns.
pub fn clustered_se(
    x: &DMatrix<f64>,
    residuals: &DVector<f64>,
    xtx_inv: &DMatrix<f64>,
    cluster_of: &[usize],
) -> Result<DVector<f64>> {
    let n = x.nrows();
    let k = x.ncols();
    let n_clusters = cluster_of.iter().copied().max().map_or(0, |m| m + 1);
    if n_clusters < 2 {
        return Err(Error::Insufficient {
            what: "clusters for firm-clustered standard errors",
            needed: 2,
            found: n_clusters,
        });
    }
    let mut meat = DMatrix::zeros(k, k);
    let mut scores = vec![DVector::zeros(k); n_clusters];
    for i in 0..n {
        let xi = x.row(i).transpose();
        scores[cluster_of[i]] += xi * residuals[i];
    }
    for s in &scores {
        meat += s * s.transpose();
    }
    let g = n_clusters as f64;
    let correction = g / (g - 1.0) * (n as f64 - 1.0) / ((n - k) as f64);
    let cov = xtx_inv * meat * xtx_inv * correction;
    Ok(DVector::from_iterator(
        k,
        (0..k).map(|j| cov[(j, j)].sqrt()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::date::WeekIndex;
    use approx::assert_relative_eq;

    fn wk(week: u8) -> WeekIndex {
        WeekIndex { year: 2015, week }
    }

    /// Deterministic unbalanced panel with planted slopes, firm effects, and
    /// week effects.
    fn planted_panel(gaps: bool) -> (PanelDataset, [f64; 2]) {
        let beta = [-0.5, 1.25];
        let mut firms = Vec::new();
        let mut weeks = Vec::new();
        let mut y = Vec::new();
        let mut x1 = Vec::new();
        let mut x2 = Vec::new();
        for f in 0..5usize {
            let eta = 0.3 * (f as f64) - 0.6;
            for t in 1..=8u8 {
                if gaps && (f + t as usize) % 7 == 0 {
                    continue;
                }
                let lambda = 0.05 * f64::from(t);
                let idx = (f * 8 + t as usize) as f64;
                let a = (idx * 0.7).sin();
                let b = (idx * 1.3).cos();
                let noise = (idx * 2.9).sin() * 0.1;
                firms.push(format!("F{f}"));
                weeks.push(wk(t));
                x1.push(Some(a));
                x2.push(Some(b));
                y.push(Some(beta[0] * a + beta[1] * b + eta + lambda + noise));
            }
        }
        let mut columns = std::collections::BTreeMap::new();
        columns.insert("y".to_owned(), y);
        columns.insert("x1".to_owned(), x1);
        columns.insert("x2".to_owned(), x2);
        (
            PanelDataset::from_columns(firms, weeks, columns).unwrap(),
            beta,
        )
    }

    fn week_fe_spec() -> RegressionSpec {
        let mut spec = RegressionSpec::static_fe("y", "x1", &["x2"]);
        spec.time_fe = TimeEffects::Week;
        spec.se_policy = SePolicy::Classical;
        spec
    }

    /// Full dummy-variable least squares: regressors, all firm dummies, all
    /// week dummies but the first, no intercept. Returns the slope block and
    /// its classical standard errors.
    fn dummy_ols_oracle(data: &PanelDataset) -> (Vec<f64>, Vec<f64>) {
        let rows = data.estimable_rows(&["y", "x1", "x2"]).unwrap();
        let n = rows.len();
        let firm_labels: Vec<&str> = {
            let mut v: Vec<&str> = rows.iter().map(|&r| data.firm_of_row(r)).collect();
            v.sort();
            v.dedup();
            v
        };
        let week_labels: Vec<WeekIndex> = {
            let mut v: Vec<WeekIndex> = rows.iter().map(|&r| data.week_of_row(r)).collect();
            v.sort();
            v.dedup();
            v
        };
        let k = 2 + firm_labels.len() + week_labels.len() - 1;
        let mut x = DMatrix::zeros(n, k);
        let mut y = DVector::zeros(n);
        let x1 = data.column("x1").unwrap();
        let x2 = data.column("x2").unwrap();
        let yc = data.column("y").unwrap();
        for (i, &r) in rows.iter().enumerate() {
            x[(i, 0)] = x1[r].unwrap();
            x[(i, 1)] = x2[r].unwrap();
            let f = firm_labels
                .iter()
                .position(|l| *l == data.firm_of_row(r))
                .unwrap();
            x[(i, 2 + f)] = 1.0;
            let w = week_labels
                .iter()
                .position(|l| *l == data.week_of_row(r))
                .unwrap();
            if w > 0 {
                x[(i, 2 + firm_labels.len() + w - 1)] = 1.0;
            }
            y[i] = yc[r].unwrap();
        }
        let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
        let coef = &xtx_inv * x.transpose() * &y;
        let resid = &y - &x * &coef;
        let s2 = resid.norm_squared() / (n - k) as f64;
        (
            vec![coef[0], coef[1]],
            vec![
                (s2 * xtx_inv[(0, 0)]).sqrt(),
                (s2 * xtx_inv[(1, 1)]).sqrt(),
            ],
        )
    }

    #[test]
    fn matches_dummy_variable_ols_on_unbalanced_panel() {
        for gaps in [false, true] {
            let (data, _) = planted_panel(gaps);
            let fit = within_fe_ols(&data, &week_fe_spec()).unwrap();
            let (oracle_coef, oracle_se) = dummy_ols_oracle(&data);
            let b1 = fit.coefficient("x1").unwrap();
            let b2 = fit.coefficient("x2").unwrap();
            assert_relative_eq!(b1.estimate, oracle_coef[0], max_relative = 1e-8);
            assert_relative_eq!(b2.estimate, oracle_coef[1], max_relative = 1e-8);
            assert_relative_eq!(b1.std_error, oracle_se[0], max_relative = 1e-8);
            assert_relative_eq!(b2.std_error, oracle_se[1], max_relative = 1e-8);
        }
    }

    #[test]
    fn noiseless_dgp_recovers_slopes() {
        // Strip the pseudo-noise: y rebuilt exactly linear.
        let (data, beta) = planted_panel(false);
        let rows: Vec<usize> = (0..data.n_rows()).collect();
        let mut clean = data.subset(&rows);
        let x1 = clean.column("x1").unwrap().to_vec();
        let x2 = clean.column("x2").unwrap().to_vec();
        let exact: Vec<Option<f64>> = (0..clean.n_rows())
            .map(|i| Some(beta[0] * x1[i].unwrap() + beta[1] * x2[i].unwrap() + 0.2))
            .collect();
        clean.add_column("y_exact", exact).unwrap();
        let mut spec = week_fe_spec();
        spec.outcome = "y_exact".to_owned();
        let fit = within_fe_ols(&clean, &spec).unwrap();
        assert_relative_eq!(
            fit.coefficient("x1").unwrap().estimate,
            beta[0],
            max_relative = 1e-10
        );
        assert_relative_eq!(
            fit.coefficient("x2").unwrap().estimate,
            beta[1],
            max_relative = 1e-10
        );
    }

    #[test]
    fn firm_and_week_constant_shifts_are_absorbed() {
        let (data, _) = planted_panel(true);
        let base = within_fe_ols(&data, &week_fe_spec()).unwrap();

        let shift = |firm: Option<&str>, week: Option<WeekIndex>| -> PanelDataset {
            let rows: Vec<usize> = (0..data.n_rows()).collect();
            let shifted = data.subset(&rows);
            let y: Vec<Option<f64>> = (0..shifted.n_rows())
                .map(|r| {
                    let v = shifted.column("y").unwrap()[r].unwrap();
                    let hit = firm.map_or(true, |f| shifted.firm_of_row(r) == f)
                        && week.map_or(true, |w| shifted.week_of_row(r) == w);
                    Some(if hit { v + 7.5 } else { v })
                })
                .collect();
            let firms: Vec<String> = (0..shifted.n_rows())
                .map(|r| shifted.firm_of_row(r).to_owned())
                .collect();
            let weeks: Vec<WeekIndex> =
                (0..shifted.n_rows()).map(|r| shifted.week_of_row(r)).collect();
            let mut columns = std::collections::BTreeMap::new();
            columns.insert("y".to_owned(), y);
            columns.insert("x1".to_owned(), shifted.column("x1").unwrap().to_vec());
            columns.insert("x2".to_owned(), shifted.column("x2").unwrap().to_vec());
            PanelDataset::from_columns(firms, weeks, columns).unwrap()
        };

        for data2 in [shift(Some("F2"), None), shift(None, Some(wk(3)))] {
            let fit = within_fe_ols(&data2, &week_fe_spec()).unwrap();
            for name in ["x1", "x2"] {
                assert_relative_eq!(
                    fit.coefficient(name).unwrap().estimate,
                    base.coefficient(name).unwrap().estimate,
                    max_relative = 1e-10
                );
            }
        }
    }

    #[test]
    fn demeaning_is_idempotent() {
        let mut v = vec![3.0, 1.0, 4.0, 1.0, 5.0, 9.0];
        let groups = vec![0, 0, 1, 1, 2, 2];
        demean_by_group(&mut v, &groups, 3);
        let once = v.clone();
        demean_by_group(&mut v, &groups, 3);
        for (a, b) in v.iter().zip(&once) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn firm_constant_regressor_is_dropped_by_name() {
        let (data, _) = planted_panel(false);
        let rows: Vec<usize> = (0..data.n_rows()).collect();
        let mut with_level = data.subset(&rows);
        let firm_level: Vec<Option<f64>> = (0..with_level.n_rows())
            .map(|r| {
                Some(match with_level.firm_of_row(r) {
                    "F0" => 1.0,
                    "F1" => 2.0,
                    _ => 3.5,
                })
            })
            .collect();
        with_level.add_column("firm_level", firm_level).unwrap();
        let mut spec = week_fe_spec();
        spec.controls.push("firm_level".to_owned());
        let fit = within_fe_ols(&with_level, &spec).unwrap();
        assert_eq!(fit.dropped_columns, vec!["firm_level".to_owned()]);
        assert!(fit.coefficient("firm_level").is_none());
        assert!(fit.coefficient("x1").is_some());
    }

    #[test]
    fn singleton_firms_are_dropped_and_counted() {
        let (data, _) = planted_panel(false);
        // Append a firm with a single row.
        let mut firms: Vec<String> = (0..data.n_rows())
            .map(|r| data.firm_of_row(r).to_owned())
            .collect();
        let mut weeks: Vec<WeekIndex> = (0..data.n_rows()).map(|r| data.week_of_row(r)).collect();
        let mut y = data.column("y").unwrap().to_vec();
        let mut x1 = data.column("x1").unwrap().to_vec();
        let mut x2 = data.column("x2").unwrap().to_vec();
        firms.push("LONER".to_owned());
        weeks.push(wk(1));
        y.push(Some(123.0));
        x1.push(Some(0.5));
        x2.push(Some(0.5));
        let mut columns = std::collections::BTreeMap::new();
        columns.insert("y".to_owned(), y);
        columns.insert("x1".to_owned(), x1);
        columns.insert("x2".to_owned(), x2);
        let data2 = PanelDataset::from_columns(firms, weeks, columns).unwrap();

        let base = within_fe_ols(&data, &week_fe_spec()).unwrap();
        let fit = within_fe_ols(&data2, &week_fe_spec()).unwrap();
        assert_eq!(fit.dropped_firms, 1);
        assert_eq!(fit.n_firms, base.n_firms);
        assert_eq!(fit.n_obs, base.n_obs);
        assert_relative_eq!(
            fit.coefficient("x1").unwrap().estimate,
            base.coefficient("x1").unwrap().estimate,
            max_relative = 1e-12
        );
    }

    #[test]
    fn reported_t_stat_is_exactly_the_ratio() {
        let (data, _) = planted_panel(true);
        let mut spec = week_fe_spec();
        spec.se_policy = SePolicy::ClusteredByFirm;
        let fit = within_fe_ols(&data, &spec).unwrap();
        for c in &fit.coefficients {
            assert_eq!(c.t_stat, c.estimate / c.std_error);
        }
        // Intercept equals mean(y) − mean(x)'β over the estimation sample.
        let rows = data.estimable_rows(&["y", "x1", "x2"]).unwrap();
        let mean_of = |name: &str| -> f64 {
            let col = data.column(name).unwrap();
            rows.iter().map(|&r| col[r].unwrap()).sum::<f64>() / rows.len() as f64
        };
        let mut expected = mean_of("y");
        for c in &fit.coefficients {
            let x_mean = match c.name.as_str() {
                "x1" => mean_of("x1"),
                "x2" => mean_of("x2"),
                "const" => continue,
                name if name.starts_with("week_") => {
                    rows.iter()
                        .map(|&r| {
                            (format!("week_{}", data.week_of_row(r)) == name) as u8 as f64
                        })
                        .sum::<f64>()
                        / rows.len() as f64
                }
                _ => continue,
            };
            expected -= c.estimate * x_mean;
        }
        assert_relative_eq!(
            fit.coefficient("const").unwrap().estimate,
            expected,
            max_relative = 1e-8
        );
    }

    #[test]
    fn clustered_se_matches_hand_sandwich() {
        // Two clusters, three rows each; plain OLS on [x, 1].
        let xs = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0];
        let ys = [1.1, 1.9, 3.2, 3.8, 5.1, 5.9];
        let clusters = [0usize, 0, 0, 1, 1, 1];
        let n = 6;
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { xs[i] } else { 1.0 });
        let y = DVector::from_row_slice(&ys);
        let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
        let coef = &xtx_inv * x.transpose() * &y;
        let resid = &y - &x * &coef;

        let got = clustered_se(&x, &resid, &xtx_inv, &clusters).unwrap();

        // Written-out sandwich: s_g = Σ_{i∈g} x_i u_i.
        let mut meat = DMatrix::zeros(2, 2);
        for g in 0..2 {
            let mut s = DVector::zeros(2);
            for i in 0..n {
                if clusters[i] == g {
                    s += x.row(i).transpose() * resid[i];
                }
            }
            meat += &s * s.transpose();
        }
        let c = 2.0 / 1.0 * 5.0 / 4.0;
        let cov = &xtx_inv * meat * &xtx_inv * c;
        for j in 0..2 {
            assert_relative_eq!(got[j], cov[(j, j)].sqrt(), max_relative = 1e-10);
        }
    }

    #[test]
    fn single_cluster_is_rejected() {
        let x = DMatrix::from_element(3, 1, 1.0);
        let resid = DVector::from_row_slice(&[0.1, -0.2, 0.1]);
        let xtx_inv = DMatrix::from_element(1, 1, 1.0 / 3.0);
        assert!(matches!(
            clustered_se(&x, &resid, &xtx_inv, &[0, 0, 0]),
            Err(Error::Insufficient { .. })
        ));
    }
}
