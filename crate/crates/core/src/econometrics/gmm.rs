//! Dynamic panel estimation: one-step first-difference GMM.
//!
//! The model is differenced to remove firm effects; the differenced lagged
//! outcome is instrumented with outcome levels lagged 2..=L, while
//! differenced exogenous regressors (and the constant) instrument
//! themselves. Instrument columns are keyed by calendar week ordinal, so
//! estimates are invariant to uniform time shifts, and missing instruments
//! enter as zeros. The weighting matrix is the usual one for differenced
//! i.i.d. errors: per firm, 2 on the diagonal and −1 between equations at
//! adjacent ordinals (a calendar gap breaks adjacency).
//!
//! Reported alongside the fit: robust one-step standard errors, the
//! Arellano-Bond AR(1)/AR(2) serial-correlation tests on the differenced
//! residuals, a first-stage F diagnostic for the level instruments, and an
//! instrument-count warning when instruments rival the firm count.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{column_sd, Coefficient, FitResult, PanelDataset, RegressionSpec};
use crate::error::{Error, Result};
use crate::linalg::{dependent_columns, spd_inverse, COLLINEARITY_TOL};

/// One firm's stacked differenced equations.
struct FirmBlock {
    /// Calendar ordinal of each equation, strictly increasing.
    ordinals: Vec<i64>,
    /// Differenced outcome per equation.
    dy: Vec<f64>,
    /// Regressor rows per equation: lagged Δoutcome, Δregressors, const.
    w: Vec<Vec<f64>>,
    /// Outcome levels by ordinal, for instrument construction.
    levels: BTreeMap<i64, f64>,
}

/// Estimates a dynamic spec by one-step difference GMM.
pub fn diff_gmm(data: &PanelDataset, spec: &RegressionSpec) -> Result<FitResult> {
    spec.validate()?;
    if !spec.dynamic {
        return Err(Error::Invalid(
            "diff_gmm fits dynamic specs; use within_fe_ols for static ones".to_owned(),
        ));
    }
    let regressors = spec.regressors();
    let max_lag = spec.gmm.max_lag.max(2);

    let (blocks, dropped_firms) = build_blocks(data, spec, &regressors)?;
    let n_firms = blocks.len();
    let n: usize = blocks.iter().map(|b| b.ordinals.len()).sum();
    if n_firms < 2 {
        return Err(Error::Insufficient {
            what: "firms with usable differenced equations",
            needed: 2,
            found: n_firms,
        });
    }

    // Regressor names: lagged outcome, then the spec's regressors, optional
    // period dummies, then the constant.
    let mut w_names: Vec<String> = vec![format!("{}_lag", spec.outcome)];
    w_names.extend(regressors.iter().map(|r| (*r).to_owned()));
    let mut eq_ordinals: BTreeSet<i64> = BTreeSet::new();
    for block in &blocks {
        eq_ordinals.extend(block.ordinals.iter().copied());
    }
    let dummy_ordinals: Vec<i64> = if spec.gmm.week_dummies {
        eq_ordinals.iter().skip(1).copied().collect()
    } else {
        Vec::new()
    };
    for ordinal in &dummy_ordinals {
        w_names.push(format!("period_{ordinal}"));
    }
    w_names.push("const".to_owned());
    let k = w_names.len();

    // Instrument layout: level-lag columns first, then the exogenous block
    // (all W columns except the lagged outcome).
    let level_cols: Vec<(i64, usize)> = if spec.gmm.collapse {
        (2..=max_lag).map(|j| (0, j)).collect()
    } else {
        let mut cols = Vec::new();
        for &t in &eq_ordinals {
            for j in 2..=max_lag {
                cols.push((t, j));
            }
        }
        cols
    };
    let m_exog = k - 1;

    // Assemble stacked W, Δy and per-firm Z with the H-weighted products.
    let mut w_stack = DMatrix::zeros(n, k);
    let mut dy_stack = DVector::zeros(n);
    let mut z_blocks: Vec<DMatrix<f64>> = Vec::with_capacity(n_firms);
    let mut row0 = 0;
    for block in &blocks {
        let n_i = block.ordinals.len();
        let mut z_i = DMatrix::zeros(n_i, level_cols.len() + m_exog);
        for (e, &t) in block.ordinals.iter().enumerate() {
            let row = row0 + e;
            // W row: lag Δy, Δx..., dummies..., const.
            w_stack[(row, 0)] = block.w[e][0];
            for (j, v) in block.w[e][1..].iter().enumerate() {
                w_stack[(row, 1 + j)] = *v;
            }
            let dummy_base = 1 + regressors.len();
            for (d, ordinal) in dummy_ordinals.iter().enumerate() {
                w_stack[(row, dummy_base + d)] = (t == *ordinal) as u8 as f64;
            }
            w_stack[(row, k - 1)] = 1.0;
            dy_stack[row] = block.dy[e];

            for (c, &(col_t, j)) in level_cols.iter().enumerate() {
                if !spec.gmm.collapse && col_t != t {
                    continue;
                }
                if let Some(&level) = block.levels.get(&(t - j as i64)) {
                    z_i[(e, c)] = level;
                }
            }
            // Exogenous self-instruments: copy the W row minus its first
            // column.
            for j in 1..k {
                z_i[(e, level_cols.len() + j - 1)] = w_stack[(row, j)];
            }
        }
        z_blocks.push(z_i);
        row0 += n_i;
    }

    // Prune all-zero instrument columns.
    let m_all = level_cols.len() + m_exog;
    let nonzero: Vec<usize> = (0..m_all)
        .filter(|&c| z_blocks.iter().any(|z| z.column(c).iter().any(|v| *v != 0.0)))
        .collect();
    let n_level_cols = nonzero.iter().filter(|&&c| c < level_cols.len()).count();
    let m = nonzero.len();
    if m < k {
        return Err(Error::Insufficient {
            what: "instrument columns",
            needed: k,
            found: m,
        });
    }
    let z_blocks: Vec<DMatrix<f64>> = z_blocks
        .into_iter()
        .map(|z| z.select_columns(&nonzero))
        .collect();

    // S = Σ_i Z_i' H_i Z_i, and the cross-products the estimator needs.
    let mut s = DMatrix::zeros(m, m);
    let mut ztw = DMatrix::zeros(m, k);
    let mut ztdy = DVector::zeros(m);
    let mut row0 = 0;
    for (block, z_i) in blocks.iter().zip(&z_blocks) {
        let n_i = block.ordinals.len();
        let h_i = DMatrix::from_fn(n_i, n_i, |a, b| {
            if a == b {
                2.0
            } else if (block.ordinals[a] - block.ordinals[b]).abs() == 1 {
                -1.0
            } else {
                0.0
            }
        });
        s += z_i.transpose() * h_i * z_i;
        let w_i = w_stack.rows(row0, n_i);
        let dy_i = dy_stack.rows(row0, n_i);
        ztw += z_i.transpose() * w_i;
        ztdy += z_i.transpose() * dy_i;
        row0 += n_i;
    }

    let a = spd_inverse(&s).ok_or_else(|| Error::SingularInstruments {
        detail: format!("weighting matrix Z'HZ ({m}x{m}) is numerically singular"),
    })?;

    let wza = ztw.transpose() * &a; // k×m
    let g = &wza * &ztw; // k×k
    let m_inv = spd_inverse(&g).ok_or_else(|| {
        let name_refs: Vec<&str> = w_names.iter().map(String::as_str).collect();
        let bad = dependent_columns(&w_stack, COLLINEARITY_TOL);
        Error::Collinear {
            columns: if bad.is_empty() {
                name_refs.iter().map(|s| (*s).to_owned()).collect()
            } else {
                bad.iter().map(|&j| name_refs[j].to_owned()).collect()
            },
        }
    })?;
    let theta = &m_inv * &wza * &ztdy;

    // Residuals and the robust one-step covariance.
    let resid = &dy_stack - &w_stack * &theta;
    let mut b = DMatrix::zeros(m, m);
    let mut row0 = 0;
    for (block, z_i) in blocks.iter().zip(&z_blocks) {
        let n_i = block.ordinals.len();
        let zu = z_i.transpose() * resid.rows(row0, n_i);
        b += &zu * zu.transpose();
        row0 += n_i;
    }
    let cov = &m_inv * &wza * &b * wza.transpose() * &m_inv;

    let mut warnings = Vec::new();
    if m >= n_firms {
        warnings.push(format!(
            "instrument count {m} is not below the firm count {n_firms}"
        ));
    }
    if let Some(f_stat) = first_stage_f(&w_stack, &z_blocks, n_level_cols) {
        if f_stat < 10.0 {
            warnings.push(format!(
                "weak instruments: first-stage F for the lagged outcome is {f_stat:.2}"
            ));
        }
    }

    let coefficients: Vec<Coefficient> = w_names
        .iter()
        .enumerate()
        .map(|(j, name)| Coefficient::new(name, theta[j], cov[(j, j)].sqrt()))
        .collect();

    let ar = |order: i64| {
        ar_test(
            &blocks, &z_blocks, &w_stack, &resid, &wza, &m_inv, &cov, order,
        )
    };
    let ar1_pvalue = ar(1);
    let ar2_pvalue = ar(2);

    let estimable = data.estimable_rows(&spec.required_columns())?;
    Ok(FitResult {
        coefficients,
        n_obs: n,
        n_firms,
        ar1_pvalue,
        ar2_pvalue,
        dropped_columns: Vec::new(),
        dropped_firms,
        warnings,
        feature_sd: column_sd(data, &spec.feature, &estimable),
        spec: spec.clone(),
    })
}

/// Builds per-firm differenced equations. Returns the blocks and the count
/// of firms with estimable rows but no usable equation.
fn build_blocks(
    data: &PanelDataset,
    spec: &RegressionSpec,
    regressors: &[&str],
) -> Result<(Vec<FirmBlock>, usize)> {
    let outcome = data.column(&spec.outcome)?;
    let x_cols: Vec<&[Option<f64>]> = regressors
        .iter()
        .map(|r| data.column(r))
        .collect::<Result<_>>()?;

    let mut blocks = Vec::new();
    let mut dropped_firms = 0;
    for (start, end) in data.firm_ranges() {
        let mut levels: BTreeMap<i64, f64> = BTreeMap::new();
        let mut full_rows: BTreeMap<i64, usize> = BTreeMap::new();
        let mut any_estimable = false;
        for row in start..end {
            let ordinal = data.week_of_row(row).ordinal();
            if let Some(y) = outcome[row] {
                levels.insert(ordinal, y);
            }
            if outcome[row].is_some() && x_cols.iter().all(|c| c[row].is_some()) {
                full_rows.insert(ordinal, row);
                any_estimable = true;
            }
        }
        let mut block = FirmBlock {
            ordinals: Vec::new(),
            dy: Vec::new(),
            w: Vec::new(),
            levels: levels.clone(),
        };
        for (&t, &row) in &full_rows {
            let (Some(&y_t), Some(&y_t1), Some(&y_t2)) =
                (levels.get(&t), levels.get(&(t - 1)), levels.get(&(t - 2)))
            else {
                continue;
            };
            let Some(&prev_row) = full_rows.get(&(t - 1)) else {
                continue;
            };
            let mut w_row = Vec::with_capacity(1 + regressors.len());
            w_row.push(y_t1 - y_t2);
            for c in &x_cols {
                w_row.push(c[row].unwrap() - c[prev_row].unwrap());
            }
            block.ordinals.push(t);
            block.dy.push(y_t - y_t1);
            block.w.push(w_row);
        }
        if block.ordinals.is_empty() {
            if any_estimable {
                dropped_firms += 1;
            }
        } else {
            blocks.push(block);
        }
    }
    Ok((blocks, dropped_firms))
}

/// F statistic of the level instruments in a regression of the differenced
/// lagged outcome on all instruments. `None` when it cannot be computed.
fn first_stage_f(
    w_stack: &DMatrix<f64>,
    z_blocks: &[DMatrix<f64>],
    n_level_cols: usize,
) -> Option<f64> {
    if n_level_cols == 0 {
        return None;
    }
    let n: usize = z_blocks.iter().map(DMatrix::nrows).sum();
    let m = z_blocks[0].ncols();
    if n <= m {
        return None;
    }
    let mut z = DMatrix::zeros(n, m);
    let mut row0 = 0;
    for z_i in z_blocks {
        z.rows_mut(row0, z_i.nrows()).copy_from(z_i);
        row0 += z_i.nrows();
    }
    let e = w_stack.column(0).clone_owned();

    let rss = |cols: &[usize]| -> Option<f64> {
        let x = z.select_columns(cols);
        let inv = spd_inverse(&(x.transpose() * &x))?;
        let coef = inv * x.transpose() * &e;
        Some((&e - x * coef).norm_squared())
    };
    let all: Vec<usize> = (0..m).collect();
    let exog: Vec<usize> = (n_level_cols..m).collect();
    let rss_full = rss(&all)?;
    let rss_restricted = rss(&exog)?;
    let q = n_level_cols as f64;
    let dof = (n - m) as f64;
    if rss_full <= 0.0 {
        return Some(f64::INFINITY);
    }
    Some(((rss_restricted - rss_full) / q) / (rss_full / dof))
}

/// Arellano-Bond test for `order`-th serial correlation in the differenced
/// residuals; two-sided normal p-value, `None` when undefined.
#[allow(clippy::too_many_arguments)]
fn ar_test(
    blocks: &[FirmBlock],
    z_blocks: &[DMatrix<f64>],
    w_stack: &DMatrix<f64>,
    resid: &DVector<f64>,
    wza: &DMatrix<f64>,
    m_inv: &DMatrix<f64>,
    cov: &DMatrix<f64>,
    order: i64,
) -> Option<f64> {
    let k = w_stack.ncols();
    let m = wza.ncols();
    let mut num = 0.0;
    let mut term1 = 0.0;
    let mut wtw = DVector::zeros(k); // Σ_i W_i' w_i
    let mut zuc = DVector::zeros(m); // Σ_i Z_i'û_i (û_i'w_i)
    let mut overlaps = 0usize;

    let mut row0 = 0;
    for (block, z_i) in blocks.iter().zip(z_blocks) {
        let n_i = block.ordinals.len();
        let u_i = resid.rows(row0, n_i).clone_owned();
        // Lagged residual vector: the firm's own residual `order` weeks
        // earlier, zero when that equation does not exist.
        let mut w_i = DVector::zeros(n_i);
        for (e, &t) in block.ordinals.iter().enumerate() {
            if let Ok(pos) = block.ordinals.binary_search(&(t - order)) {
                w_i[e] = u_i[pos];
                overlaps += 1;
            }
        }
        let wu = w_i.dot(&u_i);
        num += wu;
        term1 += wu * wu;
        wtw += w_stack.rows(row0, n_i).transpose() * &w_i;
        zuc += z_i.transpose() * &u_i * wu;
        row0 += n_i;
    }
    if overlaps == 0 {
        return None;
    }

    let term2 = -2.0 * (wtw.transpose() * m_inv * wza * &zuc)[0];
    let term3 = (wtw.transpose() * cov * &wtw)[0];
    let tau = term1 + term2 + term3;
    if tau <= 0.0 || !tau.is_finite() {
        return None;
    }
    let z_stat = num / tau.sqrt();
    let normal = Normal::new(0.0, 1.0).unwrap();
    Some(2.0 * (1.0 - normal.cdf(z_stat.abs())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::date::WeekIndex;
    use approx::assert_relative_eq;
    use std::collections::BTreeMap as Map;

    fn wk(week: u8) -> WeekIndex {
        WeekIndex { year: 2015, week }
    }

    /// Noiseless AR(1) panel: y = ρ·y_prev + β·x, firm-specific starts.
    fn noiseless_panel(n_firms: usize, n_weeks: u8, rho: f64, beta: f64) -> PanelDataset {
        let mut firms = Vec::new();
        let mut weeks = Vec::new();
        let mut ys = Vec::new();
        let mut xs = Vec::new();
        for f in 0..n_firms {
            let mut y = 1.0 + 0.3 * f as f64;
            for t in 1..=n_weeks {
                let x = ((f * 31 + t as usize * 7) as f64 * 0.61).sin();
                y = rho * y + beta * x;
                firms.push(format!("F{f}"));
                weeks.push(wk(t));
                ys.push(Some(y));
                xs.push(Some(x));
            }
        }
        let mut columns = Map::new();
        columns.insert("y".to_owned(), ys);
        columns.insert("x".to_owned(), xs);
        PanelDataset::from_columns(firms, weeks, columns).unwrap()
    }

    #[test]
    fn noiseless_system_is_recovered_exactly() {
        let data = noiseless_panel(6, 12, 0.5, -0.4);
        let spec = RegressionSpec::dynamic_gmm("y", "x", &[]);
        let fit = diff_gmm(&data, &spec).unwrap();
        assert_relative_eq!(
            fit.coefficient("y_lag").unwrap().estimate,
            0.5,
            max_relative = 1e-8
        );
        assert_relative_eq!(
            fit.coefficient("x").unwrap().estimate,
            -0.4,
            max_relative = 1e-8
        );
        let c = fit.coefficient("const").unwrap();
        assert!(c.estimate.abs() < 1e-8);
    }

    #[test]
    fn relabeling_firms_and_shifting_time_preserve_estimates() {
        let data = noiseless_panel(5, 10, 0.3, 0.8);
        // Perturb y so the fit is not exact (residual-dependent paths too).
        let rows: Vec<usize> = (0..data.n_rows()).collect();
        let mut bumpy = data.subset(&rows);
        let y2: Vec<Option<f64>> = (0..bumpy.n_rows())
            .map(|r| bumpy.column("y").unwrap()[r].map(|v| v + 0.01 * ((r * r) as f64 * 0.37).sin()))
            .collect();
        let x2 = bumpy.column("x").unwrap().to_vec();
        let firms: Vec<String> = (0..bumpy.n_rows())
            .map(|r| bumpy.firm_of_row(r).to_owned())
            .collect();
        let weeks: Vec<WeekIndex> = (0..bumpy.n_rows()).map(|r| bumpy.week_of_row(r)).collect();
        let build = |firms: Vec<String>, weeks: Vec<WeekIndex>| {
            let mut columns = Map::new();
            columns.insert("y".to_owned(), y2.clone());
            columns.insert("x".to_owned(), x2.clone());
            PanelDataset::from_columns(firms, weeks, columns).unwrap()
        };
        bumpy = build(firms.clone(), weeks.clone());

        let spec = RegressionSpec::dynamic_gmm("y", "x", &[]);
        let base = diff_gmm(&bumpy, &spec).unwrap();

        // Rename firms so their sort order reverses; shift weeks by 5.
        let renamed: Vec<String> = firms
            .iter()
            .map(|f| {
                let idx: usize = f[1..].parse().unwrap();
                format!("R{}", 4 - idx)
            })
            .collect();
        let shifted: Vec<WeekIndex> = weeks
            .iter()
            .map(|w| WeekIndex::from_date(
                w.monday() + chrono::Days::new(35),
                crate::date::WeekConvention::Iso,
            ))
            .collect();
        for variant in [build(renamed, weeks.clone()), build(firms, shifted)] {
            let fit = diff_gmm(&variant, &spec).unwrap();
            for name in ["y_lag", "x", "const"] {
                assert_relative_eq!(
                    fit.coefficient(name).unwrap().estimate,
                    base.coefficient(name).unwrap().estimate,
                    max_relative = 1e-9
                );
                assert_relative_eq!(
                    fit.coefficient(name).unwrap().std_error,
                    base.coefficient(name).unwrap().std_error,
                    max_relative = 1e-9
                );
            }
            assert_eq!(fit.n_obs, base.n_obs);
        }
    }

    #[test]
    fn collapse_shrinks_the_instrument_count() {
        let data = noiseless_panel(4, 10, 0.4, 0.5);
        let mut spec = RegressionSpec::dynamic_gmm("y", "x", &[]);
        let full = diff_gmm(&data, &spec).unwrap();
        // 4 firms, many instruments: the count warning must fire.
        assert!(full
            .warnings
            .iter()
            .any(|w| w.contains("instrument count")));

        spec.gmm.collapse = true;
        let collapsed = diff_gmm(&data, &spec).unwrap();
        // Collapsed: 3 level columns + exogenous (x, const) = 5 < 4 firms is
        // false (5 ≥ 4), so the warning still fires; but estimates exist and
        // the lag coefficient stays exact on noiseless data.
        assert_relative_eq!(
            collapsed.coefficient("y_lag").unwrap().estimate,
            0.4,
            max_relative = 1e-8
        );
    }

    #[test]
    fn short_panels_yield_missing_ar2() {
        // Four weeks per firm: equations exist at t=3,4 only, so AR(2)
        // overlap (equations 2 apart) never materializes with usable pairs
        // beyond the trivial one; with noiseless residuals the statistic is
        // undefined either way and must come back missing rather than NaN.
        let data = noiseless_panel(5, 4, 0.5, -0.2);
        let spec = RegressionSpec::dynamic_gmm("y", "x", &[]);
        let fit = diff_gmm(&data, &spec).unwrap();
        assert_eq!(fit.ar2_pvalue, None);
    }

    #[test]
    fn gaps_break_equations_but_not_the_fit() {
        // Drop week 6 from every firm: equations at 6, 7, 8 lose inputs.
        let full = noiseless_panel(6, 12, 0.5, -0.4);
        let keep: Vec<usize> = (0..full.n_rows())
            .filter(|&r| full.week_of_row(r).week != 6)
            .collect();
        let data = full.subset(&keep);
        let spec = RegressionSpec::dynamic_gmm("y", "x", &[]);
        let fit = diff_gmm(&data, &spec).unwrap();
        // Still exact: remaining equations satisfy the same relation.
        assert_relative_eq!(
            fit.coefficient("y_lag").unwrap().estimate,
            0.5,
            max_relative = 1e-8
        );
        // 12 weeks give equations at t=3..12 (10 per firm). Dropping week 6
        // kills t=6 (no row), t=7 (no y_6 or row 6), and t=8 (no y_6),
        // leaving t ∈ {3,4,5,9,10,11,12}.
        assert_eq!(fit.n_obs, 6 * 7);
    }
}
