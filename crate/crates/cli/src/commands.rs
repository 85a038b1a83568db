//! Subcommand implementations.
//!
//! Stages communicate through files under the output directory: `ingest`
//! writes the review store, `features` turns it into the weekly feature
//! table, `panel` joins the controls, and `regress`/`tables` estimate on the
//! assembled panel. Each stage finishes by writing a run manifest with the
//! effective config and the digests of everything it read.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use revpanel::characteristics::{
    build_controls, load_ccis, write_controls, FactorData, FinancialData, MarketData,
};
use revpanel::econometrics::{assemble_panel, estimate, tables, FitResult};
use revpanel::panel::{build_features, read_features, screen_firms, write_features};
use revpanel::sentiment::Lexicon;
use revpanel::synth::{self, gen_bundle, golden_features, run_monte_carlo};

use crate::config::RunConfig;
use crate::io::{read_panel, write_panel};
use crate::manifest::RunManifest;

fn prepare_out_dir(config: &RunConfig) -> Result<()> {
    fs::create_dir_all(&config.out_dir)
        .with_context(|| format!("cannot create {}", config.out_dir.display()))
}

fn existing<'a>(path: &'a Path) -> Result<&'a Path> {
    if path.is_file() {
        Ok(path)
    } else {
        bail!("input not found: {}", path.display())
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn ingest(config: &RunConfig) -> Result<()> {
    prepare_out_dir(config)?;
    if config.dumps.is_empty() {
        bail!("config key `dumps` is required by this command");
    }
    for dump in &config.dumps {
        existing(dump)?;
    }

    let (records, report) =
        revpanel::ingest::ingest(&config.dumps, config.dump_format, &config.sample_window())?;
    revpanel::ingest::write_store(&config.out_dir.join("store"), &records)?;
    write_json(&config.out_dir.join("ingest_report.json"), &report)?;
    info!(
        "kept {} of {} records ({} duplicates, {} invalid)",
        report.records_kept, report.records_read, report.duplicates_dropped, report.invalid_dropped
    );

    let mut manifest = RunManifest::new("ingest", config.entries());
    for dump in &config.dumps {
        manifest.digest(dump)?;
    }
    manifest.write(&config.out_dir)
}

fn require_store(config: &RunConfig) -> Result<PathBuf> {
    let dir = config.out_dir.join("store");
    if !dir.join("index.json").is_file() {
        bail!(
            "review store not found: {} (run the ingest command first)",
            dir.display()
        );
    }
    Ok(dir)
}

/// Per-group review, product, and firm counts for the summary report.
#[derive(Debug, Default)]
struct SummaryRow {
    reviews: u64,
    products: BTreeSet<(String, String)>,
    firms: BTreeSet<String>,
}

pub fn summary(config: &RunConfig) -> Result<()> {
    prepare_out_dir(config)?;
    let store = require_store(config)?;
    let records = revpanel::ingest::read_store(&store)?;

    let sectors: BTreeMap<String, String> = match &config.sectors {
        Some(path) => read_sectors(existing(path)?)?,
        None => BTreeMap::new(),
    };

    let mut all = SummaryRow::default();
    let mut by_sector: BTreeMap<String, SummaryRow> = BTreeMap::new();
    for record in &records {
        let review = &record.review;
        let key = (review.firm_id.clone(), review.product_id.clone());
        all.reviews += 1;
        all.products.insert(key.clone());
        all.firms.insert(review.firm_id.clone());
        if config.sectors.is_some() {
            let sector = sectors
                .get(&review.firm_id)
                .cloned()
                .unwrap_or_else(|| "unassigned".to_owned());
            let row = by_sector.entry(sector).or_default();
            row.reviews += 1;
            row.products.insert(key);
            row.firms.insert(review.firm_id.clone());
        }
    }

    let mut csv = String::from("sector,reviews,products,firms\n");
    let mut md = String::from("# Review store summary\n\n");
    md.push_str("| sector | reviews | products | firms |\n");
    md.push_str("|---|---:|---:|---:|\n");
    let mut emit = |label: &str, row: &SummaryRow| {
        csv.push_str(&format!(
            "{label},{},{},{}\n",
            row.reviews,
            row.products.len(),
            row.firms.len()
        ));
        md.push_str(&format!(
            "| {label} | {} | {} | {} |\n",
            row.reviews,
            row.products.len(),
            row.firms.len()
        ));
    };
    emit("ALL", &all);
    for (sector, row) in &by_sector {
        emit(sector, row);
    }

    fs::write(config.out_dir.join("summary.csv"), csv)?;
    fs::write(config.out_dir.join("summary.md"), md)?;
    info!(
        "{} reviews, {} products, {} firms",
        all.reviews,
        all.products.len(),
        all.firms.len()
    );

    let mut manifest = RunManifest::new("summary", config.entries());
    manifest.digest_dir(&store)?;
    if let Some(path) = &config.sectors {
        manifest.digest(path)?;
    }
    manifest.write(&config.out_dir)
}

fn read_sectors(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let header = reader.headers()?;
    if header.iter().ne(["firm_id", "sector"]) {
        bail!("{}: expected header firm_id,sector", path.display());
    }
    let mut map = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        map.insert(record[0].to_owned(), record[1].to_owned());
    }
    Ok(map)
}

pub fn features(config: &RunConfig) -> Result<()> {
    prepare_out_dir(config)?;
    let store = require_store(config)?;
    let positive = existing(config.require("lexicon_positive")?)?;
    let negative = existing(config.require("lexicon_negative")?)?;

    let records = revpanel::ingest::read_store(&store)?;
    let lexicon = Lexicon::load(positive, negative)?;
    let eligibility = screen_firms(&records, &config.eligibility());
    write_json(&config.out_dir.join("eligibility.json"), &eligibility)?;

    let mut rows = build_features(
        &records,
        &lexicon,
        config.week_convention,
        config.accumulation_weeks,
    );
    if config.screen_firms {
        rows.retain(|row| eligibility.eligible.contains(&row.firm_id));
    }
    write_features(&config.out_dir.join("features.csv"), &rows)?;
    info!(
        "{} firm-weeks from {} eligible firms ({} excluded)",
        rows.len(),
        eligibility.eligible.len(),
        eligibility.excluded.len()
    );

    let mut manifest = RunManifest::new("features", config.entries());
    manifest.digest_dir(&store)?;
    manifest.digest(positive)?;
    manifest.digest(negative)?;
    manifest.write(&config.out_dir)
}

pub fn panel(config: &RunConfig) -> Result<()> {
    prepare_out_dir(config)?;
    let features_path = config.out_dir.join("features.csv");
    if !features_path.is_file() {
        bail!(
            "features file not found: {} (run the features command first)",
            features_path.display()
        );
    }
    let market_path = existing(config.require("market")?)?;
    let factors_path = existing(config.require("factors")?)?;
    let financials_path = existing(config.require("financials")?)?;
    let ccis_path = existing(config.require("ccis")?)?;

    let rows = read_features(&features_path)?;
    let market = MarketData::load(market_path)?;
    let factors = FactorData::load(factors_path)?;
    let financials = FinancialData::load(financials_path)?;
    let ccis = load_ccis(ccis_path)?;

    let keys: Vec<(String, revpanel::date::WeekIndex)> = rows
        .iter()
        .map(|row| (row.firm_id.clone(), row.week))
        .collect();
    let controls = build_controls(
        &market,
        &factors,
        &financials,
        &ccis,
        &keys,
        &config.controls_config(),
    );
    write_controls(&config.out_dir.join("controls.csv"), &controls)?;

    let data = assemble_panel(&rows, &controls)?;
    write_panel(&config.out_dir.join("panel.csv"), &data)?;
    info!(
        "panel: {} rows, {} columns",
        data.n_rows(),
        data.column_names().count()
    );

    let mut manifest = RunManifest::new("panel", config.entries());
    manifest.digest(&features_path)?;
    manifest.digest(market_path)?;
    manifest.digest(factors_path)?;
    manifest.digest(financials_path)?;
    manifest.digest(ccis_path)?;
    manifest.write(&config.out_dir)
}

fn require_panel(config: &RunConfig) -> Result<PathBuf> {
    let path = config.out_dir.join("panel.csv");
    if !path.is_file() {
        bail!(
            "panel file not found: {} (run the panel command first)",
            path.display()
        );
    }
    Ok(path)
}

fn regression_markdown(result: &FitResult) -> String {
    let mut md = format!(
        "# {} on {} ({})\n\n",
        result.spec.outcome,
        result.spec.feature,
        if result.spec.dynamic {
            "difference GMM"
        } else {
            "within fixed effects"
        }
    );
    md.push_str("| term | estimate | std. error | t |\n");
    md.push_str("|---|---:|---:|---:|\n");
    for c in &result.coefficients {
        md.push_str(&format!(
            "| {} | {:.6e} | {:.6e} | {:.3} |\n",
            c.name, c.estimate, c.std_error, c.t_stat
        ));
    }
    md.push('\n');
    md.push_str(&format!("- observations: {}\n", result.n_obs));
    md.push_str(&format!("- firms: {}\n", result.n_firms));
    if let Some(p) = result.ar1_pvalue {
        md.push_str(&format!("- AR(1) test p-value: {p:.4}\n"));
    }
    if let Some(p) = result.ar2_pvalue {
        md.push_str(&format!("- AR(2) test p-value: {p:.4}\n"));
    }
    if let Some(sd) = result.feature_sd {
        md.push_str(&format!("- feature std. dev.: {sd:.6e}\n"));
    }
    if !result.dropped_columns.is_empty() {
        md.push_str(&format!(
            "- dropped columns: {}\n",
            result.dropped_columns.join(", ")
        ));
    }
    if result.dropped_firms > 0 {
        md.push_str(&format!("- dropped firms: {}\n", result.dropped_firms));
    }
    for warning in &result.warnings {
        md.push_str(&format!("- warning: {warning}\n"));
    }
    md
}

pub fn regress(config: &RunConfig) -> Result<()> {
    prepare_out_dir(config)?;
    let panel_path = require_panel(config)?;
    let data = read_panel(&panel_path)?;

    let spec = config.regression_spec();
    let result = estimate(&data, &spec)?;
    write_json(&config.out_dir.join("regress.json"), &result)?;
    fs::write(config.out_dir.join("regress.md"), regression_markdown(&result))?;
    if let Some(c) = result.coefficient(&spec.feature) {
        info!(
            "{}: estimate {:.6e}, t {:.3}, n {}",
            c.name, c.estimate, c.t_stat, result.n_obs
        );
    }

    let mut manifest = RunManifest::new("regress", config.entries());
    manifest.digest(&panel_path)?;
    manifest.write(&config.out_dir)
}

pub fn run_tables(config: &RunConfig) -> Result<()> {
    prepare_out_dir(config)?;
    let panel_path = require_panel(config)?;
    let data = read_panel(&panel_path)?;

    let table_config = config.table_config();
    let dir = config.out_dir.join("tables");
    fs::create_dir_all(&dir)?;
    let mut failed_cells = 0usize;
    for id in &config.tables {
        let report = tables::run_table(&data, *id, &table_config);
        failed_cells += report
            .cells
            .iter()
            .filter(|cell| cell.result.is_err())
            .count();
        fs::write(dir.join(format!("{id}.csv")), tables::render_csv(&report))?;
        fs::write(dir.join(format!("{id}.md")), tables::render_markdown(&report))?;
    }
    if failed_cells > 0 {
        info!("{failed_cells} table cells failed; see the per-cell markers");
    }

    let mut manifest = RunManifest::new("tables", config.entries());
    manifest.digest(&panel_path)?;
    manifest.write(&config.out_dir)
}

pub fn synth(config: &RunConfig) -> Result<()> {
    prepare_out_dir(config)?;
    let dir = config.out_dir.join("synth");
    fs::create_dir_all(&dir)?;

    let spec = config.bundle_spec();
    let bundle = gen_bundle(&spec, &dir)?;
    synth::write_manifest(&dir.join("manifest.json"), &bundle)?;
    write_features(&dir.join("golden_features.csv"), &golden_features(&bundle.review))?;
    info!(
        "bundle: {} review rows across {} firms",
        bundle.review.rows_written, config.synth_firms
    );

    RunManifest::new("synth", config.entries()).write(&config.out_dir)
}

pub fn mc(config: &RunConfig) -> Result<()> {
    prepare_out_dir(config)?;
    let summary = run_monte_carlo(config.mc_estimator, &config.dgp_spec(), config.mc_replications)?;
    write_json(&config.out_dir.join("mc.json"), &summary)?;

    let mut md = format!("# Monte Carlo: {}\n\n", summary.estimator);
    md.push_str(&format!(
        "- replications: {} ({} completed, {} failed)\n",
        summary.replications,
        summary.completed,
        summary.failures.len()
    ));
    md.push_str(&format!(
        "- rho: mean {:.4}, bias {:+.4}, rmse {:.4}\n",
        summary.rho_mean, summary.rho_bias, summary.rho_rmse
    ));
    md.push_str(&format!(
        "- beta: mean {:.4}, bias {:+.4}, rmse {:.4}\n",
        summary.beta_mean, summary.beta_bias, summary.beta_rmse
    ));
    if let Some(rate) = summary.ar1_rejection_rate {
        md.push_str(&format!("- AR(1) rejection rate at 5%: {rate:.3}\n"));
    }
    if let Some(rate) = summary.ar2_rejection_rate {
        md.push_str(&format!("- AR(2) rejection rate at 5%: {rate:.3}\n"));
    }
    fs::write(config.out_dir.join("mc.md"), md)?;
    info!(
        "rho mean {:.4} (bias {:+.4}) over {} reps",
        summary.rho_mean, summary.rho_bias, summary.completed
    );

    RunManifest::new("mc", config.entries()).write(&config.out_dir)
}
