//! Flat key=value run configuration.
//!
//! One file drives every subcommand. Lines are `key = value`, `#` starts a
//! comment, blank lines are skipped, and unknown keys are errors so typos
//! fail loudly instead of silently running defaults. Every key can also be
//! set from the command line with `--set key=value`; an empty value clears
//! an optional key.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use chrono::NaiveDate;
use revpanel::characteristics::{FundamentalsPolicy, MarketPolicy};
use revpanel::date::{WeekConvention, WeekIndex};
use revpanel::econometrics::{
    GmmPolicy, RegressionSpec, SePolicy, TableConfig, TableId, TimeEffects,
};
use revpanel::ingest::{DumpFormat, SampleWindow};
use revpanel::panel::EligibilityPolicy;
use revpanel::synth::{BundleSpec, DgpSpec, EstimatorId, Intensity, ReviewSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // Inputs and outputs.
    pub dumps: Vec<PathBuf>,
    pub dump_format: DumpFormat,
    pub lexicon_positive: Option<PathBuf>,
    pub lexicon_negative: Option<PathBuf>,
    pub market: Option<PathBuf>,
    pub factors: Option<PathBuf>,
    pub financials: Option<PathBuf>,
    pub ccis: Option<PathBuf>,
    /// Optional firm_id,sector map for the summary rollup.
    pub sectors: Option<PathBuf>,
    pub out_dir: PathBuf,

    // Ingest window.
    pub sample_start: NaiveDate,
    pub sample_end: NaiveDate,

    // Firm eligibility.
    pub screen_firms: bool,
    pub min_reviews: u64,
    pub min_span_days: i64,

    // Review features.
    pub week_convention: WeekConvention,
    pub accumulation_weeks: u32,

    // Weekly controls.
    pub beta_window: usize,
    pub beta_min_obs: usize,
    pub ivol_min_obs: usize,
    pub illiq_scale: f64,
    pub surprise_window: usize,
    pub surprise_min_obs: usize,
    pub vol_window: usize,
    pub vol_min_obs: usize,
    /// Symmetric clamp on sur/sue, or None for off.
    pub surprise_clamp: Option<f64>,
    pub publication_lag_weeks: i64,

    // Estimation.
    pub se_policy: SePolicy,
    pub time_fe: TimeEffects,
    pub gmm_max_lag: usize,
    pub gmm_collapse: bool,
    pub gmm_week_dummies: bool,
    pub controls: Vec<String>,
    pub outcome: String,
    pub feature: String,
    pub dynamic: bool,
    pub tables: Vec<TableId>,

    // Synthetic bundle generation.
    pub synth_firms: usize,
    pub synth_products: usize,
    pub synth_weeks: usize,
    pub synth_start: WeekIndex,
    pub synth_intensity: Intensity,
    pub synth_neg_share: f64,
    pub synth_pos_share: f64,
    pub synth_star_weights: [f64; 5],
    pub synth_duplicates: usize,
    pub synth_invalid: usize,
    pub synth_lead_weeks: usize,
    pub synth_history_quarters: usize,
    pub synth_cnst_beta: f64,
    pub synth_noise_sd: f64,

    // Monte Carlo harness.
    pub mc_estimator: EstimatorId,
    pub mc_replications: usize,
    pub mc_firms: usize,
    pub mc_weeks: usize,
    pub mc_rho: f64,
    pub mc_beta: f64,
    pub mc_gamma: Vec<f64>,
    pub mc_firm_sd: f64,
    pub mc_time_sd: f64,
    pub mc_noise_sd: f64,
    pub mc_feature_rho: f64,
    pub mc_feature_sd: f64,
    pub mc_burn_in: usize,

    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let window = SampleWindow::default();
        let market = MarketPolicy::default();
        let fundamentals = FundamentalsPolicy::default();
        let reviews = ReviewSpec::default();
        let bundle = BundleSpec::default();
        let dgp = DgpSpec::default();
        RunConfig {
            dumps: Vec::new(),
            dump_format: DumpFormat::Csv,
            lexicon_positive: None,
            lexicon_negative: None,
            market: None,
            factors: None,
            financials: None,
            ccis: None,
            sectors: None,
            out_dir: PathBuf::from("out"),
            sample_start: window.start,
            sample_end: window.end,
            screen_firms: true,
            min_reviews: EligibilityPolicy::default().min_reviews,
            min_span_days: EligibilityPolicy::default().min_span_days,
            week_convention: WeekConvention::default(),
            accumulation_weeks: 1,
            beta_window: market.beta_window,
            beta_min_obs: market.beta_min_obs,
            ivol_min_obs: market.ivol_min_obs,
            illiq_scale: market.illiq_scale,
            surprise_window: fundamentals.surprise_window,
            surprise_min_obs: fundamentals.surprise_min_obs,
            vol_window: fundamentals.vol_window,
            vol_min_obs: fundamentals.vol_min_obs,
            surprise_clamp: None,
            publication_lag_weeks: 0,
            se_policy: SePolicy::ClusteredByFirm,
            time_fe: TimeEffects::Year,
            gmm_max_lag: 4,
            // Weekly panels have hundreds of periods; uncollapsed columns
            // would dwarf the firm count.
            gmm_collapse: true,
            gmm_week_dummies: false,
            controls: TableConfig::default().controls,
            outcome: "ret_fwd".to_owned(),
            feature: "cnst".to_owned(),
            dynamic: false,
            tables: TableId::all().to_vec(),
            synth_firms: reviews.n_firms,
            synth_products: reviews.products_per_firm,
            synth_weeks: reviews.n_weeks,
            synth_start: reviews.start,
            synth_intensity: reviews.intensity,
            synth_neg_share: reviews.neg_share,
            synth_pos_share: reviews.pos_share,
            synth_star_weights: reviews.star_weights,
            synth_duplicates: reviews.planted_duplicates,
            synth_invalid: reviews.planted_invalid,
            synth_lead_weeks: bundle.lead_weeks,
            synth_history_quarters: bundle.history_quarters,
            synth_cnst_beta: bundle.cnst_beta,
            synth_noise_sd: bundle.noise_sd,
            mc_estimator: EstimatorId::DiffGmm,
            mc_replications: 200,
            mc_firms: dgp.n_firms,
            mc_weeks: dgp.n_weeks,
            mc_rho: dgp.rho,
            mc_beta: dgp.beta,
            mc_gamma: dgp.gamma,
            mc_firm_sd: dgp.firm_sd,
            mc_time_sd: dgp.time_sd,
            mc_noise_sd: dgp.noise_sd,
            mc_feature_rho: dgp.feature_rho,
            mc_feature_sd: dgp.feature_sd,
            mc_burn_in: dgp.burn_in,
            seed: 1,
        }
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => bail!("{key}: expected true or false, got {other:?}"),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("{key}: cannot parse {value:?}: {e}"))
}

fn parse_date(key: &str, value: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(value, "%Y-%m-%d")
        .map_err(|_| anyhow!("{key}: expected yyyy-mm-dd, got {value:?}"))
}

fn parse_week(key: &str, value: &str) -> Result<WeekIndex> {
    let (year, week) = value
        .split_once("-W")
        .ok_or_else(|| anyhow!("{key}: expected e.g. 2014-W02, got {value:?}"))?;
    let index = WeekIndex {
        year: parse_num(key, year)?,
        week: parse_num(key, week)?,
    };
    index.validate()?;
    Ok(index)
}

fn parse_intensity(key: &str, value: &str) -> Result<Intensity> {
    let (kind, amount) = value
        .split_once(':')
        .ok_or_else(|| anyhow!("{key}: expected fixed:<n> or poisson:<rate>, got {value:?}"))?;
    match kind {
        "fixed" => Ok(Intensity::Fixed(parse_num(key, amount)?)),
        "poisson" => Ok(Intensity::Poisson(parse_num(key, amount)?)),
        other => bail!("{key}: unknown intensity kind {other:?}"),
    }
}

fn parse_list<T>(key: &str, value: &str, parse: impl Fn(&str, &str) -> Result<T>) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn opt_path(value: &str) -> Option<PathBuf> {
    if value.is_empty() {
        None
    } else {
        Some(PathBuf::from(value))
    }
}

fn intensity_string(intensity: Intensity) -> String {
    match intensity {
        Intensity::Fixed(n) => format!("fixed:{n}"),
        Intensity::Poisson(rate) => format!("poisson:{rate}"),
    }
}

fn join<T: ToString>(values: &[T]) -> String {
    values
        .iter()
        .map(T::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dumps" => self.dumps = value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect(),
            "dump_format" => self.dump_format = DumpFormat::parse(value)?,
            "lexicon_positive" => self.lexicon_positive = opt_path(value),
            "lexicon_negative" => self.lexicon_negative = opt_path(value),
            "market" => self.market = opt_path(value),
            "factors" => self.factors = opt_path(value),
            "financials" => self.financials = opt_path(value),
            "ccis" => self.ccis = opt_path(value),
            "sectors" => self.sectors = opt_path(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "sample_start" => self.sample_start = parse_date(key, value)?,
            "sample_end" => self.sample_end = parse_date(key, value)?,
            "screen_firms" => self.screen_firms = parse_bool(key, value)?,
            "min_reviews" => self.min_reviews = parse_num(key, value)?,
            "min_span_days" => self.min_span_days = parse_num(key, value)?,
            "week_convention" => self.week_convention = WeekConvention::parse(value)?,
            "accumulation_weeks" => self.accumulation_weeks = parse_num(key, value)?,
            "beta_window" => self.beta_window = parse_num(key, value)?,
            "beta_min_obs" => self.beta_min_obs = parse_num(key, value)?,
            "ivol_min_obs" => self.ivol_min_obs = parse_num(key, value)?,
            "illiq_scale" => self.illiq_scale = parse_num(key, value)?,
            "surprise_window" => self.surprise_window = parse_num(key, value)?,
            "surprise_min_obs" => self.surprise_min_obs = parse_num(key, value)?,
            "vol_window" => self.vol_window = parse_num(key, value)?,
            "vol_min_obs" => self.vol_min_obs = parse_num(key, value)?,
            "surprise_clamp" => {
                self.surprise_clamp = if value == "off" {
                    None
                } else {
                    Some(parse_num(key, value)?)
                }
            }
            "publication_lag_weeks" => self.publication_lag_weeks = parse_num(key, value)?,
            "se_policy" => {
                self.se_policy = match value {
                    "clustered" => SePolicy::ClusteredByFirm,
                    "classical" => SePolicy::Classical,
                    other => bail!("se_policy: expected clustered or classical, got {other:?}"),
                }
            }
            "time_fe" => {
                self.time_fe = match value {
                    "none" => TimeEffects::None,
                    "year" => TimeEffects::Year,
                    "week" => TimeEffects::Week,
                    other => bail!("time_fe: expected none, year, or week, got {other:?}"),
                }
            }
            "gmm_max_lag" => self.gmm_max_lag = parse_num(key, value)?,
            "gmm_collapse" => self.gmm_collapse = parse_bool(key, value)?,
            "gmm_week_dummies" => self.gmm_week_dummies = parse_bool(key, value)?,
            "controls" => {
                self.controls = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_owned)
                    .collect()
            }
            "outcome" => self.outcome = value.to_owned(),
            "feature" => self.feature = value.to_owned(),
            "dynamic" => self.dynamic = parse_bool(key, value)?,
            "tables" => {
                self.tables = if value == "all" {
                    TableId::all().to_vec()
                } else {
                    parse_list(key, value, |_, s| Ok(TableId::parse(s)?))?
                }
            }
            "synth_firms" => self.synth_firms = parse_num(key, value)?,
            "synth_products" => self.synth_products = parse_num(key, value)?,
            "synth_weeks" => self.synth_weeks = parse_num(key, value)?,
            "synth_start" => self.synth_start = parse_week(key, value)?,
            "synth_intensity" => self.synth_intensity = parse_intensity(key, value)?,
            "synth_neg_share" => self.synth_neg_share = parse_num(key, value)?,
            "synth_pos_share" => self.synth_pos_share = parse_num(key, value)?,
            "synth_star_weights" => {
                let weights: Vec<f64> = parse_list(key, value, parse_num)?;
                self.synth_star_weights = weights
                    .try_into()
                    .map_err(|v: Vec<f64>| anyhow!("{key}: expected 5 weights, got {}", v.len()))?;
            }
            "synth_duplicates" => self.synth_duplicates = parse_num(key, value)?,
            "synth_invalid" => self.synth_invalid = parse_num(key, value)?,
            "synth_lead_weeks" => self.synth_lead_weeks = parse_num(key, value)?,
            "synth_history_quarters" => self.synth_history_quarters = parse_num(key, value)?,
            "synth_cnst_beta" => self.synth_cnst_beta = parse_num(key, value)?,
            "synth_noise_sd" => self.synth_noise_sd = parse_num(key, value)?,
            "mc_estimator" => self.mc_estimator = EstimatorId::parse(value)?,
            "mc_replications" => self.mc_replications = parse_num(key, value)?,
            "mc_firms" => self.mc_firms = parse_num(key, value)?,
            "mc_weeks" => self.mc_weeks = parse_num(key, value)?,
            "mc_rho" => self.mc_rho = parse_num(key, value)?,
            "mc_beta" => self.mc_beta = parse_num(key, value)?,
            "mc_gamma" => self.mc_gamma = parse_list(key, value, parse_num)?,
            "mc_firm_sd" => self.mc_firm_sd = parse_num(key, value)?,
            "mc_time_sd" => self.mc_time_sd = parse_num(key, value)?,
            "mc_noise_sd" => self.mc_noise_sd = parse_num(key, value)?,
            "mc_feature_rho" => self.mc_feature_rho = parse_num(key, value)?,
            "mc_feature_sd" => self.mc_feature_sd = parse_num(key, value)?,
            "mc_burn_in" => self.mc_burn_in = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    /// Parses a config file over the defaults.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut config = RunConfig::default();
        for (number, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}:{}: expected key = value", path.display(), number + 1))?;
            config
                .set(key.trim(), value.trim())
                .with_context(|| format!("{}:{}", path.display(), number + 1))?;
        }
        Ok(config)
    }

    /// The full effective configuration as canonical strings. Reparsing the
    /// echo reproduces the config, and the manifest embeds it.
    pub fn entries(&self) -> BTreeMap<String, String> {
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let convention = match self.week_convention {
            WeekConvention::Iso => "iso",
            WeekConvention::FridayAnchored => "friday_anchored",
        };
        let mut map = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            map.insert(k.to_owned(), v);
        };
        put("dumps", join(&self.dumps.iter().map(|p| p.display().to_string()).collect::<Vec<_>>()));
        put("dump_format", match self.dump_format {
            DumpFormat::Csv => "csv".to_owned(),
            DumpFormat::Jsonl => "jsonl".to_owned(),
        });
        put("lexicon_positive", path(&self.lexicon_positive));
        put("lexicon_negative", path(&self.lexicon_negative));
        put("market", path(&self.market));
        put("factors", path(&self.factors));
        put("financials", path(&self.financials));
        put("ccis", path(&self.ccis));
        put("sectors", path(&self.sectors));
        put("out_dir", self.out_dir.display().to_string());
        put("sample_start", self.sample_start.to_string());
        put("sample_end", self.sample_end.to_string());
        put("screen_firms", self.screen_firms.to_string());
        put("min_reviews", self.min_reviews.to_string());
        put("min_span_days", self.min_span_days.to_string());
        put("week_convention", convention.to_owned());
        put("accumulation_weeks", self.accumulation_weeks.to_string());
        put("beta_window", self.beta_window.to_string());
        put("beta_min_obs", self.beta_min_obs.to_string());
        put("ivol_min_obs", self.ivol_min_obs.to_string());
        put("illiq_scale", self.illiq_scale.to_string());
        put("surprise_window", self.surprise_window.to_string());
        put("surprise_min_obs", self.surprise_min_obs.to_string());
        put("vol_window", self.vol_window.to_string());
        put("vol_min_obs", self.vol_min_obs.to_string());
        put(
            "surprise_clamp",
            self.surprise_clamp
                .map(|c| c.to_string())
                .unwrap_or_else(|| "off".to_owned()),
        );
        put("publication_lag_weeks", self.publication_lag_weeks.to_string());
        put("se_policy", match self.se_policy {
            SePolicy::ClusteredByFirm => "clustered".to_owned(),
            SePolicy::Classical => "classical".to_owned(),
        });
        put("time_fe", match self.time_fe {
            TimeEffects::None => "none".to_owned(),
            TimeEffects::Year => "year".to_owned(),
            TimeEffects::Week => "week".to_owned(),
        });
        put("gmm_max_lag", self.gmm_max_lag.to_string());
        put("gmm_collapse", self.gmm_collapse.to_string());
        put("gmm_week_dummies", self.gmm_week_dummies.to_string());
        put("controls", self.controls.join(","));
        put("outcome", self.outcome.clone());
        put("feature", self.feature.clone());
        put("dynamic", self.dynamic.to_string());
        put("tables", join(&self.tables));
        put("synth_firms", self.synth_firms.to_string());
        put("synth_products", self.synth_products.to_string());
        put("synth_weeks", self.synth_weeks.to_string());
        put("synth_start", self.synth_start.to_string());
        put("synth_intensity", intensity_string(self.synth_intensity));
        put("synth_neg_share", self.synth_neg_share.to_string());
        put("synth_pos_share", self.synth_pos_share.to_string());
        put("synth_star_weights", join(&self.synth_star_weights));
        put("synth_duplicates", self.synth_duplicates.to_string());
        put("synth_invalid", self.synth_invalid.to_string());
        put("synth_lead_weeks", self.synth_lead_weeks.to_string());
        put("synth_history_quarters", self.synth_history_quarters.to_string());
        put("synth_cnst_beta", self.synth_cnst_beta.to_string());
        put("synth_noise_sd", self.synth_noise_sd.to_string());
        put("mc_estimator", self.mc_estimator.to_string());
        put("mc_replications", self.mc_replications.to_string());
        put("mc_firms", self.mc_firms.to_string());
        put("mc_weeks", self.mc_weeks.to_string());
        put("mc_rho", self.mc_rho.to_string());
        put("mc_beta", self.mc_beta.to_string());
        put("mc_gamma", join(&self.mc_gamma));
        put("mc_firm_sd", self.mc_firm_sd.to_string());
        put("mc_time_sd", self.mc_time_sd.to_string());
        put("mc_noise_sd", self.mc_noise_sd.to_string());
        put("mc_feature_rho", self.mc_feature_rho.to_string());
        put("mc_feature_sd", self.mc_feature_sd.to_string());
        put("mc_burn_in", self.mc_burn_in.to_string());
        put("seed", self.seed.to_string());
        map
    }

    /// A required input path, by config key.
    pub fn require(&self, key: &str) -> Result<&Path> {
        let value = match key {
            "lexicon_positive" => &self.lexicon_positive,
            "lexicon_negative" => &self.lexicon_negative,
            "market" => &self.market,
            "factors" => &self.factors,
            "financials" => &self.financials,
            "ccis" => &self.ccis,
            other => bail!("not a path key: {other:?}"),
        };
        value
            .as_deref()
            .ok_or_else(|| anyhow!("config key `{key}` is required by this command"))
    }

    pub fn sample_window(&self) -> SampleWindow {
        SampleWindow {
            start: self.sample_start,
            end: self.sample_end,
        }
    }

    pub fn eligibility(&self) -> EligibilityPolicy {
        EligibilityPolicy {
            min_reviews: self.min_reviews,
            min_span_days: self.min_span_days,
        }
    }

    pub fn controls_config(&self) -> revpanel::characteristics::ControlsConfig {
        revpanel::characteristics::ControlsConfig {
            convention: self.week_convention,
            market: MarketPolicy {
                ivol_min_obs: self.ivol_min_obs,
                beta_window: self.beta_window,
                beta_min_obs: self.beta_min_obs,
                illiq_scale: self.illiq_scale,
            },
            fundamentals: FundamentalsPolicy {
                surprise_window: self.surprise_window,
                surprise_min_obs: self.surprise_min_obs,
                vol_window: self.vol_window,
                vol_min_obs: self.vol_min_obs,
                surprise_clamp: self.surprise_clamp,
            },
            publication_lag_weeks: self.publication_lag_weeks,
        }
    }

    pub fn gmm_policy(&self) -> GmmPolicy {
        GmmPolicy {
            max_lag: self.gmm_max_lag,
            collapse: self.gmm_collapse,
            week_dummies: self.gmm_week_dummies,
        }
    }

    pub fn table_config(&self) -> TableConfig {
        TableConfig {
            controls: self.controls.clone(),
            se_policy: self.se_policy,
            time_fe: self.time_fe,
            gmm: self.gmm_policy(),
        }
    }

    pub fn regression_spec(&self) -> RegressionSpec {
        let controls: Vec<&str> = self.controls.iter().map(String::as_str).collect();
        if self.dynamic {
            let mut spec = RegressionSpec::dynamic_gmm(&self.outcome, &self.feature, &controls);
            spec.gmm = self.gmm_policy();
            spec.se_policy = self.se_policy;
            spec
        } else {
            let mut spec = RegressionSpec::static_fe(&self.outcome, &self.feature, &controls);
            spec.time_fe = self.time_fe;
            spec.se_policy = self.se_policy;
            spec
        }
    }

    pub fn bundle_spec(&self) -> BundleSpec {
        BundleSpec {
            reviews: ReviewSpec {
                n_firms: self.synth_firms,
                products_per_firm: self.synth_products,
                start: self.synth_start,
                n_weeks: self.synth_weeks,
                intensity: self.synth_intensity,
                neg_share: self.synth_neg_share,
                pos_share: self.synth_pos_share,
                star_weights: self.synth_star_weights,
                planted_duplicates: self.synth_duplicates,
                planted_invalid: self.synth_invalid,
                seed: self.seed,
            },
            lead_weeks: self.synth_lead_weeks,
            history_quarters: self.synth_history_quarters,
            cnst_beta: self.synth_cnst_beta,
            noise_sd: self.synth_noise_sd,
        }
    }

    pub fn dgp_spec(&self) -> DgpSpec {
        DgpSpec {
            n_firms: self.mc_firms,
            n_weeks: self.mc_weeks,
            rho: self.mc_rho,
            beta: self.mc_beta,
            gamma: self.mc_gamma.clone(),
            firm_sd: self.mc_firm_sd,
            time_sd: self.mc_time_sd,
            noise_sd: self.mc_noise_sd,
            feature_rho: self.mc_feature_rho,
            feature_sd: self.mc_feature_sd,
            burn_in: self.mc_burn_in,
            start: DgpSpec::default().start,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let mut config = RunConfig::default();
        let err = config.set("mc_reps", "10").unwrap_err();
        assert!(err.to_string().contains("mc_reps"), "{err}");
    }

    #[test]
    fn echo_round_trips() {
        let mut config = RunConfig::default();
        config.set("dumps", "a.csv, b.csv").unwrap();
        config.set("market", "m.csv").unwrap();
        config.set("surprise_clamp", "3.5").unwrap();
        config.set("week_convention", "friday_anchored").unwrap();
        config.set("synth_intensity", "fixed:8").unwrap();
        config.set("tables", "cnst_cpst,ost_fst").unwrap();
        config.set("mc_gamma", "0.5,-1").unwrap();
        config.set("seed", "42").unwrap();

        let mut reparsed = RunConfig::default();
        for (key, value) in config.entries() {
            reparsed.set(&key, &value).unwrap();
        }
        assert_eq!(reparsed, config);
    }

    #[test]
    fn file_parse_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "seed = 5\nnot_a_key = 1\n").unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        let text = format!("{err:#}");
        assert!(text.contains(":2"), "{text}");
        assert!(text.contains("not_a_key"), "{text}");
    }

    #[test]
    fn empty_value_clears_an_optional_path() {
        let mut config = RunConfig::default();
        config.set("ccis", "x.csv").unwrap();
        config.set("ccis", "").unwrap();
        assert!(config.ccis.is_none());
        assert!(config.require("ccis").is_err());
    }
}
