//! Synthetic data with known parameters.
//!
//! Two layers. [`gen_panel_dgp`] simulates the dynamic panel
//! `y = ρ·y_lag + β·f + γ·x + η_i + λ_t + ε` directly into a
//! [`PanelDataset`], and [`run_monte_carlo`] replays an estimator over many
//! replications of it to measure bias, RMSE, and test rejection rates.
//! [`bundle`] goes further out: it writes review dumps and market/financial
//! CSV files that the real pipeline ingests, with effects planted so the
//! true coefficients are known.
//!
//! Everything is driven by ChaCha8 streams derived from one seed, so a
//! fixed spec regenerates bit-identical data on any platform.

pub mod bundle;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::date::WeekIndex;
use crate::econometrics::{estimate, PanelDataset, RegressionSpec, TimeEffects};
use crate::error::{Error, Result};

pub use bundle::{
    gen_bundle, gen_reviews, golden_features, synth_lexicon, write_manifest, BundleFiles,
    BundleManifest, BundleSpec, Intensity, ReviewManifest, ReviewSpec, WeekTally,
    PLANTED_DESIGN_CONTROLS,
};

/// Parameters of the simulated dynamic panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub n_firms: usize,
    pub n_weeks: usize,
    /// Coefficient on the lagged outcome.
    pub rho: f64,
    /// Coefficient on the feature process `f`.
    pub beta: f64,
    /// Coefficients on the iid standard-normal controls `x1..xk`.
    pub gamma: Vec<f64>,
    pub firm_sd: f64,
    pub time_sd: f64,
    pub noise_sd: f64,
    /// AR(1) persistence of the mean-zero feature process.
    pub feature_rho: f64,
    /// Innovation sd of the feature process.
    pub feature_sd: f64,
    /// Periods simulated and discarded before the first recorded week.
    pub burn_in: usize,
    pub start: WeekIndex,
    pub seed: u64,
}

impl Default for DgpSpec {
    fn default() -> Self {
        DgpSpec {
            n_firms: 200,
            n_weeks: 10,
            rho: 0.5,
            beta: -0.5,
            gamma: Vec::new(),
            firm_sd: 1.0,
            time_sd: 0.0,
            noise_sd: 1.0,
            feature_rho: 0.5,
            feature_sd: 1.0,
            burn_in: 50,
            start: WeekIndex {
                year: 2015,
                week: 1,
            },
            seed: 7,
        }
    }
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("firm_sd", self.firm_sd),
            ("time_sd", self.time_sd),
            ("noise_sd", self.noise_sd),
            ("feature_sd", self.feature_sd),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.rho.abs() >= 1.0 || self.feature_rho.abs() >= 1.0 {
            return Err(Error::Invalid(
                "autoregressive parameters must lie in (-1, 1)".to_owned(),
            ));
        }
        if self.n_firms < 2 || self.n_weeks < 3 {
            return Err(Error::Invalid(
                "need at least 2 firms and 3 weeks".to_owned(),
            ));
        }
        self.start.validate()?;
        Ok(())
    }

    fn control_names(&self) -> Vec<String> {
        (1..=self.gamma.len()).map(|j| format!("x{j}")).collect()
    }
}

/// Simulates the panel in the given ChaCha8 stream. Stream 0 is the
/// canonical dataset for the spec; Monte Carlo replication `r` uses stream
/// `r`.
fn gen_in_stream(spec: &DgpSpec, stream: u64) -> Result<PanelDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let total = spec.burn_in + spec.n_weeks;
    let k = spec.gamma.len();

    let lambda: Vec<f64> = (0..total)
        .map(|_| spec.time_sd * std_normal.sample(&mut rng))
        .collect();

    let mut week_labels = Vec::with_capacity(spec.n_weeks);
    let mut w = spec.start;
    for _ in 0..spec.n_weeks {
        week_labels.push(w);
        w = w.next();
    }

    let n = spec.n_firms * spec.n_weeks;
    let mut firms = Vec::with_capacity(n);
    let mut weeks = Vec::with_capacity(n);
    let mut y_col = Vec::with_capacity(n);
    let mut f_col = Vec::with_capacity(n);
    let mut x_cols: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(n); k];

    for i in 0..spec.n_firms {
        let firm = format!("F{i:04}");
        let eta = spec.firm_sd * std_normal.sample(&mut rng);
        let mut y = 0.0;
        let mut f = 0.0;
        for t in 0..total {
            f = spec.feature_rho * f + spec.feature_sd * std_normal.sample(&mut rng);
            let mut xg = 0.0;
            let mut xs = Vec::with_capacity(k);
            for g in &spec.gamma {
                let x: f64 = std_normal.sample(&mut rng);
                xg += g * x;
                xs.push(x);
            }
            let eps = spec.noise_sd * std_normal.sample(&mut rng);
            y = spec.rho * y + spec.beta * f + xg + eta + lambda[t] + eps;
            if t >= spec.burn_in {
                let rec = t - spec.burn_in;
                firms.push(firm.clone());
                weeks.push(week_labels[rec]);
                y_col.push(Some(y));
                f_col.push(Some(f));
                for (j, x) in xs.into_iter().enumerate() {
                    x_cols[j].push(Some(x));
                }
            }
        }
    }

    let mut columns = BTreeMap::new();
    columns.insert("y".to_owned(), y_col);
    columns.insert("f".to_owned(), f_col);
    for (j, col) in x_cols.into_iter().enumerate() {
        columns.insert(format!("x{}", j + 1), col);
    }
    PanelDataset::from_columns(firms, weeks, columns)
}

/// Simulates the panel for the spec (stream 0).
pub fn gen_panel_dgp(spec: &DgpSpec) -> Result<PanelDataset> {
    gen_in_stream(spec, 0)
}

/// Estimators the Monte Carlo harness can exercise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorId {
    /// Within fixed-effects OLS with the lagged outcome as a regressor
    /// (exhibits Nickell bias in short panels).
    WithinFe,
    /// First-difference GMM with lagged-level instruments.
    DiffGmm,
}

impl EstimatorId {
    pub fn parse(s: &str) -> Result<EstimatorId> {
        match s {
            "within_fe" => Ok(EstimatorId::WithinFe),
            "diff_gmm" => Ok(EstimatorId::DiffGmm),
            other => Err(Error::Invalid(format!(
                "unknown estimator {other:?}; expected \"within_fe\" or \"diff_gmm\""
            ))),
        }
    }
}

impl std::fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EstimatorId::WithinFe => write!(f, "within_fe"),
            EstimatorId::DiffGmm => write!(f, "diff_gmm"),
        }
    }
}

/// One replication's point estimates and test p-values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub rep: usize,
    pub rho_hat: f64,
    pub beta_hat: f64,
    pub ar1_pvalue: Option<f64>,
    pub ar2_pvalue: Option<f64>,
}

/// Aggregates over completed replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub estimator: EstimatorId,
    pub replications: usize,
    pub completed: usize,
    /// (replication, error message) for failures; they do not abort the run.
    pub failures: Vec<(usize, String)>,
    pub outcomes: Vec<RepOutcome>,
    pub rho_mean: f64,
    pub rho_bias: f64,
    pub rho_rmse: f64,
    pub beta_mean: f64,
    pub beta_bias: f64,
    pub beta_rmse: f64,
    /// Share of completed replications rejecting at the 5% level, when the
    /// estimator produces the test.
    pub ar1_rejection_rate: Option<f64>,
    pub ar2_rejection_rate: Option<f64>,
}

fn estimate_one(data: &PanelDataset, estimator: EstimatorId, spec: &DgpSpec) -> Result<(f64, f64, Option<f64>, Option<f64>)> {
    let controls = spec.control_names();
    let time_fe = if spec.time_sd > 0.0 {
        TimeEffects::Week
    } else {
        TimeEffects::None
    };
    match estimator {
        EstimatorId::WithinFe => {
            let mut with_lag = data.clone();
            let lag = with_lag.lag("y", 1)?;
            with_lag.add_column("y_lag", lag)?;
            let mut names: Vec<&str> = vec!["f"];
            names.extend(controls.iter().map(String::as_str));
            let mut rspec = RegressionSpec::static_fe("y", "y_lag", &names);
            rspec.time_fe = time_fe;
            let fit = estimate(&with_lag, &rspec)?;
            let rho = fit
                .coefficient("y_lag")
                .ok_or_else(|| Error::Invalid("y_lag coefficient missing".to_owned()))?;
            let beta = fit
                .coefficient("f")
                .ok_or_else(|| Error::Invalid("f coefficient missing".to_owned()))?;
            Ok((rho.estimate, beta.estimate, None, None))
        }
        EstimatorId::DiffGmm => {
            let names: Vec<&str> = controls.iter().map(String::as_str).collect();
            let mut rspec = RegressionSpec::dynamic_gmm("y", "f", &names);
            rspec.gmm.week_dummies = spec.time_sd > 0.0;
            let fit = estimate(data, &rspec)?;
            let rho = fit
                .coefficient("y_lag")
                .ok_or_else(|| Error::Invalid("y_lag coefficient missing".to_owned()))?;
            let beta = fit
                .coefficient("f")
                .ok_or_else(|| Error::Invalid("f coefficient missing".to_owned()))?;
            Ok((rho.estimate, beta.estimate, fit.ar1_pvalue, fit.ar2_pvalue))
        }
    }
}

/// Runs `replications` independent draws of the DGP through the estimator.
/// Replication `r` uses ChaCha8 stream `r`, so results do not depend on
/// scheduling, and a failed replication is recorded rather than fatal.
pub fn run_monte_carlo(
    estimator: EstimatorId,
    spec: &DgpSpec,
    replications: usize,
) -> Result<McSummary> {
    if replications == 0 {
        return Err(Error::Insufficient { what: "replications", needed: 1, found: 0 });
    }
    spec.validate()?;

    let results: Vec<(usize, Result<(f64, f64, Option<f64>, Option<f64>)>)> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let out = gen_in_stream(spec, rep as u64)
                .and_then(|data| estimate_one(&data, estimator, spec));
            (rep, out)
        })
        .collect();

    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (rep, result) in results {
        match result {
            Ok((rho_hat, beta_hat, ar1, ar2)) => outcomes.push(RepOutcome {
                rep,
                rho_hat,
                beta_hat,
                ar1_pvalue: ar1,
                ar2_pvalue: ar2,
            }),
            Err(e) => failures.push((rep, e.to_string())),
        }
    }
    outcomes.sort_by_key(|o| o.rep);
    failures.sort_by_key(|f| f.0);

    let completed = outcomes.len();
    let moments = |pick: &dyn Fn(&RepOutcome) -> f64, truth: f64| -> (f64, f64, f64) {
        if completed == 0 {
            return (f64::NAN, f64::NAN, f64::NAN);
        }
        let mean = outcomes.iter().map(|o| pick(o)).sum::<f64>() / completed as f64;
        let mse = outcomes
            .iter()
            .map(|o| (pick(o) - truth).powi(2))
            .sum::<f64>()
            / completed as f64;
        (mean, mean - truth, mse.sqrt())
    };
    let (rho_mean, rho_bias, rho_rmse) = moments(&|o| o.rho_hat, spec.rho);
    let (beta_mean, beta_bias, beta_rmse) = moments(&|o| o.beta_hat, spec.beta);
    let rejection = |pick: &dyn Fn(&RepOutcome) -> Option<f64>| -> Option<f64> {
        let ps: Vec<f64> = outcomes.iter().filter_map(|o| pick(o)).collect();
        if ps.is_empty() {
            None
        } else {
            Some(ps.iter().filter(|p| **p < 0.05).count() as f64 / ps.len() as f64)
        }
    };
    let ar1_rejection_rate = rejection(&|o| o.ar1_pvalue);
    let ar2_rejection_rate = rejection(&|o| o.ar2_pvalue);

    Ok(McSummary {
        estimator,
        replications,
        completed,
        failures,
        outcomes,
        rho_mean,
        rho_bias,
        rho_rmse,
        beta_mean,
        beta_bias,
        beta_rmse,
        ar1_rejection_rate,
        ar2_rejection_rate,
    })
}
