//! Synthetic input bundles written as real pipeline files.
//!
//! [`gen_reviews`] writes a review dump whose per-week polarity and star
//! tallies are known by construction: texts are assembled from a small
//! embedded lexicon so the dominant side always wins the occurrence count.
//! [`golden_features`] turns those tallies into the firm-week feature rows
//! the pipeline should produce, by direct arithmetic that never touches the
//! classification or aggregation code.
//!
//! [`gen_bundle`] adds market, factor, financial, and consumer-confidence
//! files around the corpus and plants a return effect: next week's return
//! is `alpha_i + cnst_beta * CNST_{i,t} + eps`. The noise is drawn once and
//! then run through an affine projection that makes it invisible to the
//! estimators: orthogonal to every regressor, firm and year dummy, and GMM
//! moment column the planted design spans, and carrying exact offsetting
//! components for the two placebo cells, whose estimates would otherwise
//! pick up the planted effect through the in-sample correlation between
//! CNST and CPST. The static estimates then recover `cnst_beta` and the
//! zero placebo coefficient exactly, and the dynamic GMM estimates recover
//! them up to terms of order `noise_sd` squared. Controls that are
//! functions of returns (ivol, illiq, beta) cannot be made noise-free and
//! are not part of the planted design.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Datelike, Days, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::characteristics::frequency::StepSeries;
use crate::characteristics::market::{FactorDay, MarketDay};
use crate::characteristics::{
    build_controls, ControlsConfig, FactorData, FinancialData, MarketData, QuarterRow,
};
use crate::date::{month_period, Quarter, WeekConvention, WeekIndex};
use crate::econometrics::{assemble_panel, PanelDataset};
use crate::error::{Error, Result};
use crate::panel::FirmWeekRow;
use crate::sentiment::Lexicon;

/// Positive terms of the embedded corpus lexicon.
pub const SYNTH_POSITIVE: [&str; 5] = ["great", "excellent", "love", "perfect", "awesome"];
/// Negative terms of the embedded corpus lexicon.
pub const SYNTH_NEGATIVE: [&str; 5] = ["terrible", "awful", "broken", "refund", "worst"];
/// Neutral words mixed into every text. None contains a lexicon term.
const FILLERS: [&str; 5] = ["item", "arrived", "box", "today", "order"];

/// The lexicon matching the generated texts.
pub fn synth_lexicon() -> Lexicon {
    Lexicon::from_terms(SYNTH_POSITIVE, SYNTH_NEGATIVE).expect("embedded lexicon is valid")
}

/// Reviews per firm-week.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intensity {
    Fixed(u32),
    Poisson(f64),
}

/// Parameters of a synthetic review corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewSpec {
    pub n_firms: usize,
    pub products_per_firm: usize,
    pub start: WeekIndex,
    pub n_weeks: usize,
    pub intensity: Intensity,
    /// Share of reviews built negative-dominant.
    pub neg_share: f64,
    /// Share built positive-dominant; the rest are balanced.
    pub pos_share: f64,
    pub star_weights: [f64; 5],
    /// Rows appended with a key copying an earlier row.
    pub planted_duplicates: usize,
    /// Rows appended that fail validation.
    pub planted_invalid: usize,
    pub seed: u64,
}

impl Default for ReviewSpec {
    fn default() -> Self {
        ReviewSpec {
            n_firms: 30,
            products_per_firm: 5,
            start: WeekIndex {
                year: 2014,
                week: 2,
            },
            n_weeks: 110,
            intensity: Intensity::Poisson(20.0),
            neg_share: 0.35,
            pos_share: 0.45,
            star_weights: [0.08, 0.07, 0.10, 0.15, 0.60],
            planted_duplicates: 25,
            planted_invalid: 15,
            seed: 1,
        }
    }
}

impl ReviewSpec {
    /// The checked-in toy corpus: 3 firms, about 2,000 reviews.
    pub fn toy(seed: u64) -> ReviewSpec {
        ReviewSpec {
            n_firms: 3,
            products_per_firm: 4,
            start: WeekIndex {
                year: 2015,
                week: 2,
            },
            n_weeks: 26,
            intensity: Intensity::Poisson(25.5),
            planted_duplicates: 12,
            planted_invalid: 8,
            seed,
            ..ReviewSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_firms == 0 || self.products_per_firm == 0 || self.n_weeks == 0 {
            return Err(Error::Invalid(
                "firms, products, and weeks must be positive".to_owned(),
            ));
        }
        if let Intensity::Poisson(m) = self.intensity {
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::Invalid(format!("bad Poisson intensity {m}")));
            }
        }
        if !(0.0..=1.0).contains(&self.neg_share)
            || !(0.0..=1.0).contains(&self.pos_share)
            || self.neg_share + self.pos_share > 1.0
        {
            return Err(Error::Invalid("polarity shares must sum to <= 1".to_owned()));
        }
        if self.star_weights.iter().any(|w| *w < 0.0) || self.star_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::Invalid("star weights must be nonnegative".to_owned()));
        }
        self.start.validate()?;
        Ok(())
    }

    fn firm_id(&self, i: usize) -> String {
        format!("F{i:03}")
    }

    fn weeks(&self) -> Vec<WeekIndex> {
        let mut out = Vec::with_capacity(self.n_weeks);
        let mut w = self.start;
        for _ in 0..self.n_weeks {
            out.push(w);
            w = w.next();
        }
        out
    }
}

/// Known tallies for one firm-week, in pipeline terms: `n_neg` counts
/// reviews whose negative occurrences exceed positive ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeekTally {
    pub week: WeekIndex,
    pub n_reviews: u32,
    pub n_neg: u32,
    pub n_pos: u32,
    pub star_counts: [u32; 5],
}

/// Ground truth for a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewManifest {
    pub spec: ReviewSpec,
    /// Per firm, one tally per week of the span (zero-review weeks included).
    pub tallies: BTreeMap<String, Vec<WeekTally>>,
    pub duplicates: u64,
    pub invalid: u64,
    pub rows_written: u64,
}

#[derive(Clone, Copy)]
enum Class {
    Neg,
    Pos,
    Balanced,
}

fn review_text(rng: &mut ChaCha8Rng, class: Class) -> String {
    let (nw, pw) = match class {
        Class::Neg => {
            let nw = rng.random_range(2..=3u32);
            (nw, rng.random_range(0..nw))
        }
        Class::Pos => {
            let pw = rng.random_range(2..=3u32);
            (rng.random_range(0..pw), pw)
        }
        Class::Balanced => {
            let k = rng.random_range(0..=1u32);
            (k, k)
        }
    };
    let mut words = Vec::new();
    for _ in 0..nw {
        words.push(SYNTH_NEGATIVE[rng.random_range(0..SYNTH_NEGATIVE.len())]);
    }
    for _ in 0..pw {
        words.push(SYNTH_POSITIVE[rng.random_range(0..SYNTH_POSITIVE.len())]);
    }
    for _ in 0..rng.random_range(2..=4u32) {
        words.push(FILLERS[rng.random_range(0..FILLERS.len())]);
    }
    // Words are space-separated and no term spans a space, so the scanner
    // sees exactly the planted occurrence counts whatever the order.
    words.shuffle(rng);
    words.join(" ")
}

/// Writes a review dump CSV with known tallies. Originals come first, then
/// duplicate-keyed rows, then invalid rows, so first-occurrence dedup keeps
/// exactly the originals.
pub fn gen_reviews(spec: &ReviewSpec, path: &Path) -> Result<ReviewManifest> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(0);
    let stars_dist = WeightedIndex::new(spec.star_weights)
        .map_err(|e| Error::Invalid(format!("bad star weights: {e}")))?;
    let poisson = match spec.intensity {
        Intensity::Poisson(m) => Some(Poisson::new(m).expect("validated intensity")),
        Intensity::Fixed(_) => None,
    };

    let weeks = spec.weeks();
    let mut tallies: BTreeMap<String, Vec<WeekTally>> = BTreeMap::new();
    let mut originals: Vec<(String, String, String, NaiveDate, u8, String)> = Vec::new();
    let mut reviewer = 0u64;

    for i in 0..spec.n_firms {
        let firm = spec.firm_id(i);
        let mut firm_tallies = Vec::with_capacity(weeks.len());
        for week in &weeks {
            let n = match spec.intensity {
                Intensity::Fixed(n) => n,
                Intensity::Poisson(_) => {
                    poisson.as_ref().expect("poisson dist").sample(&mut rng) as u32
                }
            };
            let mut tally = WeekTally {
                week: *week,
                n_reviews: n,
                n_neg: 0,
                n_pos: 0,
                star_counts: [0; 5],
            };
            let monday = week.monday();
            for _ in 0..n {
                let u: f64 = rng.random();
                let class = if u < spec.neg_share {
                    Class::Neg
                } else if u < spec.neg_share + spec.pos_share {
                    Class::Pos
                } else {
                    Class::Balanced
                };
                match class {
                    Class::Neg => tally.n_neg += 1,
                    Class::Pos => tally.n_pos += 1,
                    Class::Balanced => {}
                }
                let stars = stars_dist.sample(&mut rng) as u8 + 1;
                tally.star_counts[stars as usize - 1] += 1;
                let date = monday + Days::new(rng.random_range(0..7u64));
                let product = format!("P{i:03}_{:02}", rng.random_range(0..spec.products_per_firm));
                reviewer += 1;
                originals.push((
                    firm.clone(),
                    product,
                    format!("u{reviewer:07}"),
                    date,
                    stars,
                    review_text(&mut rng, class),
                ));
            }
            firm_tallies.push(tally);
        }
        tallies.insert(firm, firm_tallies);
    }

    let mut writer =
        csv::Writer::from_path(path).map_err(|e| Error::file_format(path, e.to_string()))?;
    writer
        .write_record(["firm_id", "product_id", "reviewer_id", "date", "stars", "text"])
        .map_err(|e| Error::file_format(path, e.to_string()))?;
    let mut rows_written = 0u64;
    let mut write = |fields: [&str; 6]| -> Result<()> {
        writer
            .write_record(fields)
            .map_err(|e| Error::file_format(path, e.to_string()))
    };
    for (firm, product, reviewer, date, stars, text) in &originals {
        write([
            firm,
            product,
            reviewer,
            &date.to_string(),
            &stars.to_string(),
            text,
        ])?;
        rows_written += 1;
    }
    let mut duplicates_written = 0u64;
    for _ in 0..spec.planted_duplicates {
        if originals.is_empty() {
            break;
        }
        let (firm, product, reviewer, date, stars, _) =
            &originals[rng.random_range(0..originals.len())];
        write([
            firm,
            product,
            reviewer,
            &date.to_string(),
            &stars.to_string(),
            "item arrived box today order",
        ])?;
        duplicates_written += 1;
        rows_written += 1;
    }
    for k in 0..spec.planted_invalid {
        let monday = weeks[k % weeks.len()].monday();
        if k % 2 == 0 {
            // Star rating outside 1..=5.
            write([
                &spec.firm_id(k % spec.n_firms),
                "P_bad",
                "u_bad",
                &monday.to_string(),
                "0",
                "broken box",
            ])?;
        } else {
            write([
                &spec.firm_id(k % spec.n_firms),
                "P_bad",
                "u_bad",
                "2015-13-45",
                "3",
                "item today",
            ])?;
        }
        rows_written += 1;
    }
    writer
        .flush()
        .map_err(|e| Error::file_format(path, e.to_string()))?;

    Ok(ReviewManifest {
        spec: spec.clone(),
        tallies,
        duplicates: duplicates_written,
        invalid: spec.planted_invalid as u64,
        rows_written,
    })
}

/// Feature rows implied by the manifest tallies, by direct arithmetic:
/// weeks with reviews become rows, and a difference is defined when the
/// previous week is ordinal-consecutive and both weeks have reviews.
/// Matches a pipeline run with accumulation window 1.
pub fn golden_features(manifest: &ReviewManifest) -> Vec<FirmWeekRow> {
    let mut rows = Vec::new();
    for (firm, tallies) in &manifest.tallies {
        let observed: Vec<&WeekTally> = tallies.iter().filter(|t| t.n_reviews > 0).collect();
        for (k, t) in observed.iter().enumerate() {
            let mut row = FirmWeekRow {
                firm_id: firm.clone(),
                week: t.week,
                n_reviews: t.n_reviews,
                n_neg: t.n_neg,
                n_pos: t.n_pos,
                star_counts: t.star_counts,
                diff_neg: None,
                diff_pos: None,
                diff_star1: None,
                diff_star5: None,
            };
            if k > 0 {
                let prev = observed[k - 1];
                if prev.week.ordinal() + 1 == t.week.ordinal() {
                    let ratio =
                        |w: &WeekTally, s: usize| w.star_counts[s] as f64 / w.n_reviews as f64;
                    row.diff_neg = Some(t.n_neg as f64 - prev.n_neg as f64);
                    row.diff_pos = Some(t.n_pos as f64 - prev.n_pos as f64);
                    row.diff_star1 = Some(ratio(t, 0) - ratio(prev, 0));
                    row.diff_star5 = Some(ratio(t, 4) - ratio(prev, 4));
                }
            }
            rows.push(row);
        }
    }
    rows.sort_by(|a, b| (&a.firm_id, a.week).cmp(&(&b.firm_id, b.week)));
    rows
}

/// Controls the planted design uses: deterministic functions of the
/// non-return inputs, so noise can be drawn orthogonal to them.
pub const PLANTED_DESIGN_CONTROLS: [&str; 8] =
    ["ad", "bm", "rd", "roa", "size", "gp", "turn", "ag"];

/// Parameters of a full input bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleSpec {
    pub reviews: ReviewSpec,
    /// Market/factor weeks generated before the review span.
    pub lead_weeks: usize,
    /// Financial quarters generated before the first market week.
    pub history_quarters: usize,
    /// Planted coefficient on realized CNST in the next week's return.
    pub cnst_beta: f64,
    /// Weekly return noise scale.
    pub noise_sd: f64,
}

impl Default for BundleSpec {
    fn default() -> Self {
        BundleSpec {
            reviews: ReviewSpec::default(),
            lead_weeks: 12,
            history_quarters: 24,
            cnst_beta: -0.001,
            noise_sd: 0.0005,
        }
    }
}

impl BundleSpec {
    pub fn validate(&self) -> Result<()> {
        self.reviews.validate()?;
        if !self.cnst_beta.is_finite() {
            return Err(Error::Invalid("cnst_beta must be finite".to_owned()));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd > 0.0) {
            return Err(Error::Invalid(
                "noise_sd must be positive; zero noise makes dynamic standard errors degenerate"
                    .to_owned(),
            ));
        }
        if self.history_quarters < 2 {
            return Err(Error::Invalid("need at least 2 history quarters".to_owned()));
        }
        Ok(())
    }
}

/// File paths of a written bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleFiles {
    pub reviews: PathBuf,
    pub market: PathBuf,
    pub factors: PathBuf,
    pub financials: PathBuf,
    pub ccis: PathBuf,
}

/// Ground truth for a written bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub review: ReviewManifest,
    pub cnst_beta: f64,
    pub noise_sd: f64,
    pub design_controls: Vec<String>,
    pub positive_terms: Vec<String>,
    pub negative_terms: Vec<String>,
    pub files: BundleFiles,
}

/// Serializes a manifest as pretty JSON.
pub fn write_manifest(path: &Path, manifest: &BundleManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Invalid(format!("manifest serialization: {e}")))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

struct MarketShape {
    /// Per (firm, market-week position): volume, tradable cap, turnover.
    terms: Vec<Vec<(f64, f64, f64)>>,
    alpha: Vec<f64>,
}

fn market_shape(spec: &BundleSpec, n_market_weeks: usize) -> MarketShape {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.reviews.seed);
    rng.set_stream(1);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n = spec.reviews.n_firms;
    let mut terms = Vec::with_capacity(n);
    let mut alpha = Vec::with_capacity(n);
    for i in 0..n {
        alpha.push(0.0008 * normal.sample(&mut rng));
        let z: f64 = normal.sample(&mut rng);
        let trend = 0.0005 + 0.0015 * rng.random::<f64>();
        let fi = i as f64;
        let mut weekly = Vec::with_capacity(n_market_weeks);
        for w in 0..n_market_weeks {
            let wf = w as f64;
            let volume = (15.0 + 0.3 * z + 0.10 * (0.30 * wf + fi).sin()).exp();
            let cap = (20.0 + 0.5 * z + trend * wf + 0.08 * (0.21 * wf + 0.5 * fi).sin()).exp();
            let turnover = 0.01 * (1.5 + 0.5 * (0.17 * wf + fi).sin());
            weekly.push((volume, cap, turnover));
        }
        terms.push(weekly);
    }
    MarketShape { terms, alpha }
}

fn market_rows(
    spec: &BundleSpec,
    shape: &MarketShape,
    market_weeks: &[WeekIndex],
    returns: &dyn Fn(usize, usize) -> f64,
) -> Vec<(String, MarketDay)> {
    let mut rows = Vec::new();
    for i in 0..spec.reviews.n_firms {
        let firm = spec.reviews.firm_id(i);
        for (w, week) in market_weeks.iter().enumerate() {
            let weekly = returns(i, w);
            let daily = (1.0 + weekly).powf(0.2) - 1.0;
            let (volume, cap, turnover) = shape.terms[i][w];
            let monday = week.monday();
            for d in 0..5 {
                rows.push((
                    firm.clone(),
                    MarketDay {
                        date: monday + Days::new(d),
                        ret: daily,
                        volume,
                        tradable_cap: cap,
                        turnover,
                    },
                ));
            }
        }
    }
    rows
}

fn write_market_csv(path: &Path, rows: &[(String, MarketDay)]) -> Result<()> {
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| Error::file_format(path, e.to_string()))?;
    writer
        .write_record(["date", "firm_id", "return", "volume", "tradable_cap", "turnover"])
        .map_err(|e| Error::file_format(path, e.to_string()))?;
    for (firm, day) in rows {
        writer
            .write_record([
                day.date.to_string(),
                firm.clone(),
                day.ret.to_string(),
                day.volume.to_string(),
                day.tradable_cap.to_string(),
                day.turnover.to_string(),
            ])
            .map_err(|e| Error::file_format(path, e.to_string()))?;
    }
    writer
        .flush()
        .map_err(|e| Error::file_format(path, e.to_string()))?;
    Ok(())
}

fn gen_factors(
    spec: &BundleSpec,
    market_weeks: &[WeekIndex],
    path: &Path,
) -> Result<Vec<(NaiveDate, FactorDay)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.reviews.seed);
    rng.set_stream(2);
    let normal = Normal::new(0.0, 0.01).expect("factor scale");
    let mut rows = Vec::new();
    for week in market_weeks {
        let monday = week.monday();
        for d in 0..5 {
            rows.push((
                monday + Days::new(d),
                FactorDay {
                    mkt: normal.sample(&mut rng),
                    smb: normal.sample(&mut rng),
                    hml: normal.sample(&mut rng),
                    umd: normal.sample(&mut rng),
                },
            ));
        }
    }
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| Error::file_format(path, e.to_string()))?;
    writer
        .write_record(["date", "mkt", "smb", "hml", "umd"])
        .map_err(|e| Error::file_format(path, e.to_string()))?;
    for (date, day) in &rows {
        writer
            .write_record([
                date.to_string(),
                day.mkt.to_string(),
                day.smb.to_string(),
                day.hml.to_string(),
                day.umd.to_string(),
            ])
            .map_err(|e| Error::file_format(path, e.to_string()))?;
    }
    writer
        .flush()
        .map_err(|e| Error::file_format(path, e.to_string()))?;
    Ok(rows)
}

fn gen_financials(
    spec: &BundleSpec,
    first_quarter: Quarter,
    last_quarter: Quarter,
    path: &Path,
) -> Result<Vec<QuarterRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.reviews.seed);
    rng.set_stream(3);
    let normal: Normal<f64> = Normal::new(0.0, 1.0).expect("unit normal");
    let n_quarters = (last_quarter.index() - first_quarter.index() + 1) as usize;
    let mut rows = Vec::new();
    for i in 0..spec.reviews.n_firms {
        let firm = spec.reviews.firm_id(i);
        let fi = i as f64;
        let ta0 = (21.0 + 0.8 * normal.sample(&mut rng)).exp();
        let pays = i % 3 != 0;
        let mut ta = ta0;
        for qi in 0..n_quarters {
            let quarter = Quarter::from_index(first_quarter.index() + qi as i64);
            let qf = qi as f64;
            let growth = 0.010 + 0.008 * (0.40 * qf + fi).sin();
            let prev_ta = ta;
            ta = prev_ta * (1.0 + growth);
            let roa = 0.020 + 0.010 * (0.60 * qf + 0.9 * fi).sin();
            let np = roa * ta;
            let op = ta * (0.026 + 0.012 * (0.70 * qf + 1.3 * fi).sin());
            let cfo = np * (1.1 + 0.4 * (0.80 * qf + fi).sin());
            let op_rev = ta * (0.28 + 0.04 * (0.35 * qf + fi).cos());
            let dividends = if pays {
                np.abs() * (0.20 + 0.03 * ((i % 5) as f64) + 0.02 * (0.5 * qf).sin())
            } else {
                0.0
            };
            let book_equity = ta * (0.45 + 0.05 * (0.25 * qf + fi).sin());
            rows.push(QuarterRow {
                firm_id: firm.clone(),
                quarter,
                total_assets: Some(ta),
                net_profit: Some(np),
                operating_profit: Some(op),
                revenue_per_share: Some(4.0 + 0.02 * qf + 0.3 * (0.50 * qf + fi).sin()),
                cfo: Some(cfo),
                accruals: Some(np - cfo),
                book_equity: Some(book_equity),
                sales_expense: Some(op_rev * (0.040 + 0.020 * (0.45 * qf + fi).sin())),
                operating_revenue: Some(op_rev),
                rd_expense: Some(op_rev * (0.015 + 0.005 * (0.55 * qf + fi).cos())),
                dividends: Some(dividends),
                book_value: Some(book_equity),
                market_value: Some(ta * (0.90 + 0.15 * (0.30 * qf + fi).cos())),
                pays_dividend: Some(pays),
                accruals_from_fallback: false,
            });
        }
    }

    let mut writer =
        csv::Writer::from_path(path).map_err(|e| Error::file_format(path, e.to_string()))?;
    writer
        .write_record([
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
        ])
        .map_err(|e| Error::file_format(path, e.to_string()))?;
    let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &rows {
        writer
            .write_record([
                r.firm_id.clone(),
                r.quarter.to_string(),
                num(r.total_assets),
                num(r.net_profit),
                num(r.operating_profit),
                num(r.revenue_per_share),
                num(r.cfo),
                num(r.accruals),
                num(r.book_equity),
                num(r.sales_expense),
                num(r.operating_revenue),
                num(r.rd_expense),
                num(r.dividends),
                num(r.book_value),
                num(r.market_value),
                if r.pays_dividend == Some(true) { "1" } else { "0" }.to_owned(),
            ])
            .map_err(|e| Error::file_format(path, e.to_string()))?;
    }
    writer
        .flush()
        .map_err(|e| Error::file_format(path, e.to_string()))?;
    Ok(rows)
}

fn gen_ccis(
    spec: &BundleSpec,
    first_date: NaiveDate,
    last_date: NaiveDate,
    path: &Path,
) -> Result<StepSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.reviews.seed);
    rng.set_stream(4);
    let normal = Normal::new(0.0, 0.5).expect("ccis scale");
    let mut segments = Vec::new();
    let mut lines = vec!["month,ccis".to_owned()];
    let (mut year, mut month) = (first_date.year(), first_date.month());
    let mut k = 0f64;
    loop {
        let value = 100.0 + 4.0 * (0.35 * k).sin() + normal.sample(&mut rng);
        segments.push((month_period(year, month)?, value));
        lines.push(format!("{year}-{month:02},{value}"));
        if (year, month) >= (last_date.year(), last_date.month()) {
            break;
        }
        month += 1;
        if month > 12 {
            month = 1;
            year += 1;
        }
        k += 1.0;
    }
    fs::write(path, lines.join("\n") + "\n").map_err(|e| Error::io(path, e))?;
    StepSeries::new(segments)
}

fn pinv_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    svd.solve(rhs, smax * 1e-12)
        .map_err(|e| Error::Invalid(format!("singular system in noise construction: {e}")))
}

fn pinv_solve_mat(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    svd.solve(rhs, smax * 1e-12)
        .map_err(|e| Error::Invalid(format!("singular system in noise construction: {e}")))
}

/// Draws weekly return noise and projects it orthogonal to the planted
/// design, the firm and year dummies, and the first-order GMM moment
/// directions implied by the panel's missingness pattern.
fn orthogonal_noise(
    spec: &BundleSpec,
    panel: &PanelDataset,
    shape: &MarketShape,
    cnst_of: &dyn Fn(usize, usize) -> Option<f64>,
    review_weeks: &[WeekIndex],
) -> Result<Vec<Vec<f64>>> {
    let n_firms = spec.reviews.n_firms;
    let t_weeks = review_weeks.len();
    let n_vars = n_firms * t_weeks;
    let var = |i: usize, u: usize| i * t_weeks + u;
    let start_ord = review_weeks[0].ordinal();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.reviews.seed);
    rng.set_stream(5);
    let normal = Normal::new(0.0, spec.noise_sd).expect("validated noise");
    let mut eps = DVector::from_iterator(n_vars, (0..n_vars).map(|_| normal.sample(&mut rng)));

    // The deterministic part of the return for week position u.
    let y0 = |i: usize, u: usize| -> f64 {
        let feature = if u >= 1 {
            cnst_of(i, u - 1).unwrap_or(0.0)
        } else {
            0.0
        };
        shape.alpha[i] + spec.cnst_beta * feature
    };

    // cpst is deliberately absent here: forcing the noise orthogonal to it
    // would contradict the placebo rows below, which need the noise to hold
    // an exact nonzero cpst component. The estimation sample still requires
    // it so both cells see the same rows.
    let mut zero_cols: Vec<&str> = vec!["cnst"];
    zero_cols.extend(PLANTED_DESIGN_CONTROLS);
    let required: Vec<&str> = {
        let mut cols = vec!["ret_fwd", "cnst", "cpst"];
        cols.extend(PLANTED_DESIGN_CONTROLS);
        cols
    };
    let s_rows = panel.estimable_rows(&required)?;

    let firm_index: BTreeMap<String, usize> = (0..n_firms)
        .map(|i| (spec.reviews.firm_id(i), i))
        .collect();
    let row_pos = |r: usize| -> (usize, usize) {
        let i = firm_index[panel.firm_of_row(r)];
        let u = (panel.week_of_row(r).ordinal() - start_ord) as usize;
        (i, u)
    };

    let years: BTreeSet<i32> = s_rows
        .iter()
        .map(|&r| panel.week_of_row(r).year)
        .collect();
    let year_of: BTreeMap<i32, usize> = years.iter().enumerate().map(|(k, y)| (*y, k)).collect();

    // GMM equation set: outcome levels at t, t-1, t-2 and full rows at t,
    // t-1 (calendar ordinals).
    let ret_fwd = panel.column("ret_fwd")?;
    let mut levels: Vec<BTreeSet<i64>> = vec![BTreeSet::new(); n_firms];
    let mut full: Vec<BTreeSet<i64>> = vec![BTreeSet::new(); n_firms];
    for r in 0..panel.n_rows() {
        if ret_fwd[r].is_some() {
            let i = firm_index[panel.firm_of_row(r)];
            levels[i].insert(panel.week_of_row(r).ordinal());
        }
    }
    for &r in &s_rows {
        let i = firm_index[panel.firm_of_row(r)];
        full[i].insert(panel.week_of_row(r).ordinal());
    }
    let mut equations: Vec<(usize, i64)> = Vec::new();
    for i in 0..n_firms {
        for &t in &full[i] {
            if levels[i].contains(&t)
                && levels[i].contains(&(t - 1))
                && levels[i].contains(&(t - 2))
                && full[i].contains(&(t - 1))
            {
                equations.push((i, t));
            }
        }
    }

    let row_at: BTreeMap<(usize, i64), usize> = (0..panel.n_rows())
        .map(|r| {
            (
                (
                    firm_index[panel.firm_of_row(r)],
                    panel.week_of_row(r).ordinal(),
                ),
                r,
            )
        })
        .collect();

    let max_lag = 4i64;
    let n_constraints = zero_cols.len() + n_firms + years.len()
        + (max_lag as usize - 1)
        + zero_cols.len()
        + 2
        + 2;
    let mut c = DMatrix::<f64>::zeros(n_constraints, n_vars);
    let mut b = DVector::<f64>::zeros(n_constraints);
    let mut row = 0usize;

    // Static: regressor columns against the outcome noise over the
    // listwise sample.
    for name in &zero_cols {
        let col = panel.column(name)?;
        for &r in &s_rows {
            let (i, u) = row_pos(r);
            c[(row, var(i, u + 1))] += col[r].expect("listwise-complete row");
        }
        row += 1;
    }
    // Firm and year dummies.
    for &r in &s_rows {
        let (i, u) = row_pos(r);
        c[(row + i, var(i, u + 1))] += 1.0;
    }
    row += n_firms;
    for &r in &s_rows {
        let (i, u) = row_pos(r);
        let y = year_of[&panel.week_of_row(r).year];
        c[(row + y, var(i, u + 1))] += 1.0;
    }
    row += years.len();

    // Dynamic: each equation contributes eps_{u+1} - eps_u, weighted by the
    // instrument or differenced-regressor value.
    let add_eq = |c: &mut DMatrix<f64>, row: usize, i: usize, t: i64, weight: f64| {
        let u = (t - start_ord) as usize;
        c[(row, var(i, u + 1))] += weight;
        c[(row, var(i, u))] -= weight;
    };
    for j in 2..=max_lag {
        for &(i, t) in &equations {
            if levels[i].contains(&(t - j)) {
                let u_level = (t - j - start_ord) as usize;
                add_eq(&mut c, row, i, t, y0(i, u_level + 1));
            }
        }
        row += 1;
    }
    for name in &zero_cols {
        let col = panel.column(name)?;
        for &(i, t) in &equations {
            let cur = col[row_at[&(i, t)]].expect("full row");
            let prev = col[row_at[&(i, t - 1)]].expect("full row");
            add_eq(&mut c, row, i, t, cur - prev);
        }
        row += 1;
    }
    for &(i, t) in &equations {
        let u = (t - start_ord) as usize;
        let dy0_lag = y0(i, u) - y0(i, u - 1);
        add_eq(&mut c, row, i, t, dy0_lag);
    }
    row += 1;
    for &(i, t) in &equations {
        add_eq(&mut c, row, i, t, 1.0);
    }
    row += 1;

    // The constraints so far make the noise invisible to the regressions,
    // but the outcome's planted part is still correlated with the placebo
    // feature in sample: cnst and cpst are not orthogonal draws. The last
    // two rows make the noise carry an exact offsetting component, one per
    // placebo cell.
    //
    // Static cell: by Frisch-Waugh the cpst coefficient is v'y / v'v with
    // v the residual of cpst on everything else in that design, so force
    // v'eps = -beta * v'cnst.
    let cnst_col = panel.column("cnst")?;
    let cpst_col = panel.column("cpst")?;
    let n_s = s_rows.len();
    {
        let k_b = PLANTED_DESIGN_CONTROLS.len() + years.len() + n_firms;
        let mut bmat = DMatrix::<f64>::zeros(n_s, k_b);
        let mut cpst_s = DVector::<f64>::zeros(n_s);
        let mut cnst_s = DVector::<f64>::zeros(n_s);
        for (idx, &r) in s_rows.iter().enumerate() {
            for (j, name) in PLANTED_DESIGN_CONTROLS.iter().enumerate() {
                bmat[(idx, j)] = panel.column(name)?[r].expect("listwise-complete row");
            }
            let yj = year_of[&panel.week_of_row(r).year];
            bmat[(idx, PLANTED_DESIGN_CONTROLS.len() + yj)] = 1.0;
            let (i, _) = row_pos(r);
            bmat[(idx, PLANTED_DESIGN_CONTROLS.len() + years.len() + i)] = 1.0;
            cpst_s[idx] = cpst_col[r].expect("listwise-complete row");
            cnst_s[idx] = cnst_col[r].expect("listwise-complete row");
        }
        let w = pinv_solve(&(bmat.transpose() * &bmat), &(bmat.transpose() * &cpst_s))?;
        let v = &cpst_s - bmat * w;
        for (idx, &r) in s_rows.iter().enumerate() {
            let (i, u) = row_pos(r);
            c[(row, var(i, u + 1))] += v[idx];
        }
        b[row] = -spec.cnst_beta * v.dot(&cnst_s);
        row += 1;
    }

    // Dynamic cell: the cpst coefficient is a fixed linear functional of
    // the moment vector Z'dy, up to terms of the noise scale. Evaluate that
    // functional on the noise-free system and force the noise's moments to
    // cancel the planted part's contribution.
    {
        let n_e = equations.len();
        let k_w = 2 + PLANTED_DESIGN_CONTROLS.len();
        let m_z = (max_lag as usize - 1) + 1 + PLANTED_DESIGN_CONTROLS.len() + 1;
        let mut w0 = DMatrix::<f64>::zeros(n_e, k_w);
        let mut z0 = DMatrix::<f64>::zeros(n_e, m_z);
        let mut dcnst = DVector::<f64>::zeros(n_e);
        for (e, &(i, t)) in equations.iter().enumerate() {
            let u = (t - start_ord) as usize;
            w0[(e, 0)] = y0(i, u) - y0(i, u - 1);
            let cur = row_at[&(i, t)];
            let prev = row_at[&(i, t - 1)];
            let dx = |col: &[Option<f64>]| col[cur].expect("full row") - col[prev].expect("full row");
            w0[(e, 1)] = dx(cpst_col);
            for (j, name) in PLANTED_DESIGN_CONTROLS.iter().enumerate() {
                w0[(e, 2 + j)] = dx(panel.column(name)?);
            }
            dcnst[e] = dx(cnst_col);
            for j in 2..=max_lag {
                if levels[i].contains(&(t - j)) {
                    let u_level = (t - j - start_ord) as usize;
                    z0[(e, (j - 2) as usize)] = y0(i, u_level + 1);
                }
            }
            for j in 1..k_w {
                z0[(e, (max_lag as usize - 1) + j - 1)] = w0[(e, j)];
            }
            z0[(e, m_z - 1)] = 1.0;
        }
        // W gets its constant column only here; Z already carries it.
        let w0 = {
            let mut full = DMatrix::<f64>::zeros(n_e, k_w + 1);
            full.view_mut((0, 0), (n_e, k_w)).copy_from(&w0);
            for e in 0..n_e {
                full[(e, k_w)] = 1.0;
            }
            full
        };
        let mut h = DMatrix::<f64>::zeros(n_e, n_e);
        for a in 0..n_e {
            for bb in 0..n_e {
                if a == bb {
                    h[(a, bb)] = 2.0;
                } else if equations[a].0 == equations[bb].0
                    && (equations[a].1 - equations[bb].1).abs() == 1
                {
                    h[(a, bb)] = -1.0;
                }
            }
        }
        let s0 = z0.transpose() * &h * &z0;
        let zw = z0.transpose() * &w0;
        let a0_zw = pinv_solve_mat(&s0, &zw)?; // S0^-1 Z'W
        let g0 = zw.transpose() * &a0_zw;
        let mut e_cpst = DVector::<f64>::zeros(k_w + 1);
        e_cpst[1] = 1.0;
        let q = pinv_solve(&g0, &e_cpst)?;
        let g_vec = &a0_zw * q; // A0 Z'W G0^-1 e_cpst
        let omega = &z0 * g_vec;
        for (e, &(i, t)) in equations.iter().enumerate() {
            add_eq(&mut c, row, i, t, omega[e]);
        }
        b[row] = -spec.cnst_beta * omega.dot(&dcnst);
        row += 1;
    }
    debug_assert_eq!(row, n_constraints);

    // Affine projection: eps <- eps - C' (C C')^+ (C eps - b).
    let d = &c * &eps - &b;
    let m = &c * c.transpose();
    let svd = m.svd(true, true);
    let lambda = svd
        .solve(&d, 1e-12)
        .map_err(|e| Error::Invalid(format!("noise projection failed: {e}")))?;
    eps -= c.transpose() * lambda;
    let residual = (&c * &eps - &b).amax();
    if residual > 1e-8 * (1.0 + spec.noise_sd) {
        return Err(Error::Invalid(format!(
            "noise projection did not converge: residual {residual}"
        )));
    }

    let mut out = vec![vec![0.0; t_weeks]; n_firms];
    for i in 0..n_firms {
        for u in 0..t_weeks {
            out[i][u] = eps[var(i, u)];
        }
    }
    Ok(out)
}

/// Writes a complete bundle into `dir` and returns its ground truth.
pub fn gen_bundle(spec: &BundleSpec, dir: &Path) -> Result<BundleManifest> {
    spec.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = BundleFiles {
        reviews: dir.join("reviews.csv"),
        market: dir.join("market.csv"),
        factors: dir.join("factors.csv"),
        financials: dir.join("financials.csv"),
        ccis: dir.join("ccis.csv"),
    };

    let review = gen_reviews(&spec.reviews, &files.reviews)?;
    let golden = golden_features(&review);

    let review_weeks = spec.reviews.weeks();
    let mut market_weeks = Vec::with_capacity(spec.lead_weeks + review_weeks.len());
    {
        let first_monday =
            spec.reviews.start.monday() - Days::new(7 * spec.lead_weeks as u64);
        let mut w = WeekIndex::from_date(first_monday, WeekConvention::Iso);
        for _ in 0..spec.lead_weeks + review_weeks.len() {
            market_weeks.push(w);
            w = w.next();
        }
    }

    let shape = market_shape(spec, market_weeks.len());
    let factors_rows = gen_factors(spec, &market_weeks, &files.factors)?;
    let factors = FactorData::from_rows(factors_rows)?;
    let first_quarter =
        Quarter::containing(market_weeks[0].monday()).minus(spec.history_quarters as i64);
    let last_week = *market_weeks.last().expect("nonempty span");
    let last_quarter = Quarter::containing(last_week.monday());
    let financial_rows = gen_financials(spec, first_quarter, last_quarter, &files.financials)?;
    let financials = FinancialData::from_rows(financial_rows)?;
    let ccis = gen_ccis(
        spec,
        market_weeks[0].monday(),
        last_week.monday() + Days::new(6),
        &files.ccis,
    )?;

    // Pass 1: placeholder returns, to learn the control values and the
    // missingness pattern the estimators will see.
    let zero_returns = |_: usize, _: usize| 0.0;
    let rows1 = market_rows(spec, &shape, &market_weeks, &zero_returns);
    let market1 = MarketData::from_rows(rows1)?;
    let keys: Vec<(String, WeekIndex)> = (0..spec.reviews.n_firms)
        .flat_map(|i| {
            let firm = spec.reviews.firm_id(i);
            review_weeks.iter().map(move |w| (firm.clone(), *w))
        })
        .collect();
    let config = ControlsConfig::default();
    let controls = build_controls(&market1, &factors, &financials, &ccis, &keys, &config);
    let panel1 = assemble_panel(&golden, &controls)?;

    // Realized feature values by firm index and week position.
    let firm_of: BTreeMap<String, usize> = (0..spec.reviews.n_firms)
        .map(|i| (spec.reviews.firm_id(i), i))
        .collect();
    let start_ord = spec.reviews.start.ordinal();
    let mut cnst_map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for row in &golden {
        if let Some(v) = row.diff_neg {
            cnst_map.insert(
                (firm_of[&row.firm_id], (row.week.ordinal() - start_ord) as usize),
                v,
            );
        }
    }
    let cnst_of = |i: usize, u: usize| cnst_map.get(&(i, u)).copied();

    let eps = orthogonal_noise(spec, &panel1, &shape, &cnst_of, &review_weeks)?;

    // Pass 2: final returns. Lead weeks carry a small deterministic drift;
    // review-span weeks carry the planted model.
    let lead = spec.lead_weeks;
    let final_returns = |i: usize, w: usize| -> f64 {
        if w < lead {
            0.0002 * (0.37 * (w as f64 + 1.0) + 0.9 * i as f64).sin()
        } else {
            let u = w - lead;
            let feature = if u >= 1 { cnst_of(i, u - 1).unwrap_or(0.0) } else { 0.0 };
            shape.alpha[i] + spec.cnst_beta * feature + eps[i][u]
        }
    };
    let rows2 = market_rows(spec, &shape, &market_weeks, &final_returns);
    write_market_csv(&files.market, &rows2)?;

    Ok(BundleManifest {
        review,
        cnst_beta: spec.cnst_beta,
        noise_sd: spec.noise_sd,
        design_controls: PLANTED_DESIGN_CONTROLS.iter().map(|c| (*c).to_owned()).collect(),
        positive_terms: SYNTH_POSITIVE.iter().map(|t| (*t).to_owned()).collect(),
        negative_terms: SYNTH_NEGATIVE.iter().map(|t| (*t).to_owned()).collect(),
        files,
    })
}
