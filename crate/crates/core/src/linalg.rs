//! Least squares and small numeric helpers.
//!
//! All estimators in this crate reduce to ordinary least squares on some
//! transformed design, so rank checking and solving live here. Columns are
//! scaled to unit norm internally, which keeps the normal equations well
//! conditioned without changing the reported coefficients.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance below which a column is considered linearly dependent
/// on the columns before it.
pub const COLLINEARITY_TOL: f64 = 1e-8;

/// A solved least-squares problem.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coef: DVector<f64>,
    pub fitted: DVector<f64>,
    pub residuals: DVector<f64>,
    /// (X'X)⁻¹, as needed by sandwich covariance estimators.
    pub xtx_inv: DMatrix<f64>,
}

impl OlsFit {
    pub fn rss(&self) -> f64 {
        self.residuals.norm_squared()
    }
}

/// Indices of columns that are (numerically) linear combinations of earlier
/// columns, detected by modified Gram-Schmidt with re-orthogonalization.
/// A zero column counts as dependent.
pub fn dependent_columns(x: &DMatrix<f64>, tol: f64) -> Vec<usize> {
    let n = x.nrows();
    let k = x.ncols();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(k);
    let mut dependent = Vec::new();
    for j in 0..k {
        let col = x.column(j).clone_owned();
        let scale = col.norm();
        if scale == 0.0 || k > n && basis.len() >= n {
            dependent.push(j);
            continue;
        }
        let mut v = col / scale;
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&v);
                v.axpy(-proj, q, 1.0);
            }
        }
        let residual = v.norm();
        if residual <= tol {
            dependent.push(j);
        } else {
            basis.push(v / residual);
        }
    }
    dependent
}

/// Ordinary least squares of `y` on the columns of `x`.
///
/// `names` label the columns for the rank-deficiency error message and must
/// match `x.ncols()`.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>, names: &[&str]) -> Result<OlsFit> {
    assert_eq!(x.ncols(), names.len(), "one name per column");
    assert_eq!(x.nrows(), y.len(), "x and y row counts differ");
    let k = x.ncols();
    if x.nrows() < k {
        return Err(Error::Insufficient {
            what: "observations for regression",
            needed: k,
            found: x.nrows(),
        });
    }

    let bad = dependent_columns(x, COLLINEARITY_TOL);
    if !bad.is_empty() {
        return Err(Error::Collinear {
            columns: bad.iter().map(|&j| names[j].to_owned()).collect(),
        });
    }

    // Scale columns to unit norm: X = Xs·D, so (X'X)⁻¹ = D⁻¹(Xs'Xs)⁻¹D⁻¹.
    let scales: Vec<f64> = (0..k).map(|j| x.column(j).norm()).collect();
    let mut xs = x.clone();
    for (j, &s) in scales.iter().enumerate() {
        xs.column_mut(j).scale_mut(1.0 / s);
    }

    let xtx = xs.transpose() * &xs;
    let chol = Cholesky::new(xtx).ok_or_else(|| Error::Collinear {
        columns: names.iter().map(|s| (*s).to_owned()).collect(),
    })?;
    let xty = xs.transpose() * y;
    let coef_scaled = chol.solve(&xty);
    let mut xtx_inv = chol.inverse();
    for i in 0..k {
        for j in 0..k {
            xtx_inv[(i, j)] /= scales[i] * scales[j];
        }
    }
    let coef = DVector::from_iterator(k, coef_scaled.iter().zip(&scales).map(|(b, s)| b / s));
    let fitted = x * &coef;
    let residuals = y - &fitted;
    Ok(OlsFit {
        coef,
        fitted,
        residuals,
        xtx_inv,
    })
}

/// Inverse of a symmetric positive-definite matrix via Cholesky after
/// symmetric unit scaling; `None` when numerically singular.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let k = m.nrows();
    let mut scales = Vec::with_capacity(k);
    for j in 0..k {
        let d = m[(j, j)];
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        scales.push(d.sqrt());
    }
    let mut scaled = m.clone();
    for i in 0..k {
        for j in 0..k {
            scaled[(i, j)] /= scales[i] * scales[j];
        }
    }
    let mut inv = Cholesky::new(scaled)?.inverse();
    for i in 0..k {
        for j in 0..k {
            inv[(i, j)] /= scales[i] * scales[j];
        }
    }
    Some(inv)
}

/// Arithmetic mean; `None` on an empty slice.
pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Sample standard deviation (n−1 denominator); `None` with fewer than two
/// values.
pub fn sample_std(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Some((ss / (xs.len() as f64 - 1.0)).sqrt())
}

/// Median; the mean of the two middle values for even counts. `None` on an
/// empty slice.
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in median input"));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn recovers_exact_linear_relationship() {
        #[rustfmt::skip]
        let x = mat(4, 2, &[
            1.0, 2.0,
            1.0, 3.0,
            1.0, 5.0,
            1.0, 7.0,
        ]);
        let y = DVector::from_column_slice(&[5.0, 7.0, 11.0, 15.0]); // 1 + 2x
        let fit = ols(&x, &y, &["const", "x"]).unwrap();
        assert_relative_eq!(fit.coef[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(fit.coef[1], 2.0, max_relative = 1e-12);
        assert!(fit.rss() < 1e-20);
    }

    #[test]
    fn matches_covariance_over_variance_slope() {
        let xs = [0.3, 1.1, 2.4, 3.0, 4.7, 5.1];
        let ys = [1.2, 0.8, 2.9, 2.1, 4.4, 5.3];
        let n = xs.len();
        let mx = mean(&xs).unwrap();
        let my = mean(&ys).unwrap();
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let slope = cov / var;
        let intercept = my - slope * mx;

        let mut data = Vec::new();
        for &x in &xs {
            data.push(1.0);
            data.push(x);
        }
        let x = mat(n, 2, &data);
        let y = DVector::from_column_slice(&ys);
        let fit = ols(&x, &y, &["const", "x"]).unwrap();
        assert_relative_eq!(fit.coef[0], intercept, max_relative = 1e-12);
        assert_relative_eq!(fit.coef[1], slope, max_relative = 1e-12);
    }

    #[test]
    fn xtx_inv_matches_direct_inverse() {
        #[rustfmt::skip]
        let x = mat(5, 2, &[
            1.0, 0.5,
            1.0, 1.5,
            1.0, 2.0,
            1.0, 4.0,
            1.0, 8.0,
        ]);
        let y = DVector::from_column_slice(&[1.0, 2.0, 2.0, 3.0, 5.0]);
        let fit = ols(&x, &y, &["const", "x"]).unwrap();
        let direct = (x.transpose() * &x).try_inverse().unwrap();
        assert_relative_eq!(fit.xtx_inv[(0, 0)], direct[(0, 0)], max_relative = 1e-10);
        assert_relative_eq!(fit.xtx_inv[(0, 1)], direct[(0, 1)], max_relative = 1e-10);
        assert_relative_eq!(fit.xtx_inv[(1, 1)], direct[(1, 1)], max_relative = 1e-10);
    }

    #[test]
    fn flags_dependent_and_zero_columns() {
        #[rustfmt::skip]
        let x = mat(4, 4, &[
            1.0, 2.0, 3.0, 0.0,
            1.0, 3.0, 4.0, 0.0,
            1.0, 5.0, 6.0, 0.0,
            1.0, 7.0, 8.0, 0.0,
        ]);
        // Column 2 = column 0 + column 1; column 3 is zero.
        assert_eq!(dependent_columns(&x, COLLINEARITY_TOL), vec![2, 3]);
        let y = DVector::from_column_slice(&[1.0, 2.0, 3.0, 4.0]);
        let err = ols(&x, &y, &["const", "a", "a_plus_1", "zero"]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("a_plus_1") && msg.contains("zero"), "{msg}");
    }

    #[test]
    fn column_scaling_does_not_change_fit() {
        #[rustfmt::skip]
        let x1 = mat(4, 2, &[
            1.0, 2e-8,
            1.0, 3e-8,
            1.0, 5e-8,
            1.0, 7e-8,
        ]);
        let y = DVector::from_column_slice(&[5.0, 7.0, 11.0, 15.0]);
        let fit = ols(&x1, &y, &["const", "tiny"]).unwrap();
        assert_relative_eq!(fit.coef[1] * 1e-8, 2.0, max_relative = 1e-8);
    }

    #[test]
    fn scalar_stats() {
        assert_eq!(mean(&[]), None);
        assert_eq!(mean(&[1.0, 2.0, 3.0]), Some(2.0));
        assert_eq!(sample_std(&[1.0]), None);
        // Hand value: data 2,4,4,4,5,5,7,9 has sample variance 32/7.
        let sd = sample_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
        assert_relative_eq!(sd, (32.0f64 / 7.0).sqrt(), max_relative = 1e-12);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
