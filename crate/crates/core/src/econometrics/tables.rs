//! Report tables: named bundles of regressions with Markdown and CSV
//! rendering.
//!
//! Each table analogue runs a fixed set of specs over one assembled panel:
//! static and dynamic models for the sentiment and star tendencies,
//! fixed-effects models on median-split subsamples, and dynamic models for
//! the surprise and profitability-shock outcomes (week-t feature, week-t−1
//! controls). A failed cell carries its error message; it never aborts the
//! rest of the table.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{
    estimate, median_split, FitResult, GmmPolicy, PanelDataset, RegressionSpec, SePolicy,
    TimeEffects,
};
use crate::error::{Error, Result};

/// Controls in reporting order.
pub const DEFAULT_CONTROLS: [&str; 11] = [
    "ad", "bm", "rd", "roa", "size", "ivol", "gp", "turn", "beta", "illiq", "ag",
];

/// The report tables the pipeline can produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableId {
    /// Negative/positive sentiment tendencies vs next-week returns,
    /// static and dynamic.
    CnstCpst,
    /// One-star/five-star tendencies vs next-week returns.
    OstFst,
    /// Sentiment tendencies on consumer-confidence subsamples.
    SentimentSplit,
    /// Sentiment tendency on valuation/profitability/growth subsamples.
    GrowthValueSplit,
    /// Sentiment tendency on accounting-transparency subsamples.
    TransparencySplit,
    /// Revenue and earnings surprises as dynamic outcomes.
    CashFlowSurprises,
    /// Profitability shocks as dynamic outcomes.
    ProfitabilityShocks,
}

impl TableId {
    pub fn all() -> [TableId; 7] {
        [
            TableId::CnstCpst,
            TableId::OstFst,
            TableId::SentimentSplit,
            TableId::GrowthValueSplit,
            TableId::TransparencySplit,
            TableId::CashFlowSurprises,
            TableId::ProfitabilityShocks,
        ]
    }

    pub fn parse(s: &str) -> Result<TableId> {
        TableId::all()
            .into_iter()
            .find(|id| id.to_string() == s)
            .ok_or_else(|| {
                let names: Vec<String> = TableId::all().iter().map(|i| i.to_string()).collect();
                Error::Invalid(format!(
                    "unknown table {s:?}; expected one of {}",
                    names.join(", ")
                ))
            })
    }

    pub fn title(&self) -> &'static str {
        match self {
            TableId::CnstCpst => "Sentiment tendencies and next-week returns",
            TableId::OstFst => "Star-rating tendencies and next-week returns",
            TableId::SentimentSplit => "Returns by consumer-confidence subsample",
            TableId::GrowthValueSplit => "Returns by valuation, profitability, and growth",
            TableId::TransparencySplit => "Returns by accounting transparency",
            TableId::CashFlowSurprises => "Sentiment and revenue/earnings surprises",
            TableId::ProfitabilityShocks => "Sentiment and profitability shocks",
        }
    }
}

impl fmt::Display for TableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TableId::CnstCpst => "cnst_cpst",
            TableId::OstFst => "ost_fst",
            TableId::SentimentSplit => "sentiment_split",
            TableId::GrowthValueSplit => "growth_value_split",
            TableId::TransparencySplit => "transparency_split",
            TableId::CashFlowSurprises => "cash_flow_surprises",
            TableId::ProfitabilityShocks => "profitability_shocks",
        };
        write!(f, "{s}")
    }
}

/// Shared knobs for every spec a table runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableConfig {
    pub controls: Vec<String>,
    pub se_policy: SePolicy,
    pub time_fe: TimeEffects,
    pub gmm: GmmPolicy,
}

impl Default for TableConfig {
    fn default() -> Self {
        TableConfig {
            controls: DEFAULT_CONTROLS.iter().map(|c| (*c).to_owned()).collect(),
            se_policy: SePolicy::ClusteredByFirm,
            time_fe: TimeEffects::Year,
            // Collapsed instruments by default: weekly panels have hundreds
            // of periods, and per-period instrument columns would dwarf the
            // firm count.
            gmm: GmmPolicy {
                collapse: true,
                ..GmmPolicy::default()
            },
        }
    }
}

/// One table column: a label and either a fit or the error that prevented
/// it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableCell {
    pub label: String,
    pub result: std::result::Result<FitResult, String>,
}

/// A rendered-ready table: cells plus split-cutoff footnotes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableReport {
    pub id: TableId,
    pub cells: Vec<TableCell>,
    /// (variable, cutoff) pairs for median-split tables.
    pub cutoffs: Vec<(String, f64)>,
}

fn static_spec(outcome: &str, feature: &str, config: &TableConfig) -> RegressionSpec {
    let controls: Vec<&str> = config.controls.iter().map(String::as_str).collect();
    let mut spec = RegressionSpec::static_fe(outcome, feature, &controls);
    spec.se_policy = config.se_policy;
    spec.time_fe = config.time_fe;
    spec
}

fn dynamic_spec(outcome: &str, feature: &str, controls: &[String], config: &TableConfig) -> RegressionSpec {
    let controls: Vec<&str> = controls.iter().map(String::as_str).collect();
    let mut spec = RegressionSpec::dynamic_gmm(outcome, feature, &controls);
    spec.gmm = config.gmm;
    spec.se_policy = config.se_policy;
    spec
}

fn cell(label: &str, result: Result<FitResult>) -> TableCell {
    TableCell {
        label: label.to_owned(),
        result: result.map_err(|e| e.to_string()),
    }
}

/// Runs one table analogue over the assembled panel.
pub fn run_table(data: &PanelDataset, id: TableId, config: &TableConfig) -> TableReport {
    match id {
        TableId::CnstCpst => tendency_table(data, id, ["cnst", "cpst"], config),
        TableId::OstFst => tendency_table(data, id, ["ost", "fst"], config),
        TableId::SentimentSplit => {
            split_table(data, id, &["cnst", "cpst"], &["ccis"], config)
        }
        TableId::GrowthValueSplit => {
            split_table(data, id, &["cnst"], &["bm", "roa", "ag"], config)
        }
        TableId::TransparencySplit => split_table(data, id, &["cnst"], &["ea", "es"], config),
        TableId::CashFlowSurprises => {
            lagged_control_table(data, id, &["sur", "sue"], config)
        }
        TableId::ProfitabilityShocks => {
            lagged_control_table(data, id, &["prof_shock_hvz", "prof_shock_vol"], config)
        }
    }
}

/// Static and dynamic columns for two tendency features.
fn tendency_table(
    data: &PanelDataset,
    id: TableId,
    features: [&str; 2],
    config: &TableConfig,
) -> TableReport {
    let mut cells = Vec::new();
    for feature in features {
        let upper = display_name(feature);
        let spec = static_spec("ret_fwd", feature, config);
        cells.push(cell(
            &format!("{upper} static"),
            estimate(data, &spec),
        ));
        let spec = dynamic_spec("ret_fwd", feature, &config.controls, config);
        cells.push(cell(
            &format!("{upper} dynamic"),
            estimate(data, &spec),
        ));
    }
    TableReport {
        id,
        cells,
        cutoffs: Vec::new(),
    }
}

/// Static fixed-effects columns on high/low median subsamples.
fn split_table(
    data: &PanelDataset,
    id: TableId,
    features: &[&str],
    split_vars: &[&str],
    config: &TableConfig,
) -> TableReport {
    let mut cells = Vec::new();
    let mut cutoffs = Vec::new();
    for &variable in split_vars {
        for &feature in features {
            let spec = static_spec("ret_fwd", feature, config);
            let required = spec.required_columns();
            match median_split(data, variable, &required) {
                Ok(split) => {
                    if cutoffs.iter().all(|(v, _)| v != variable) {
                        cutoffs.push((variable.to_owned(), split.cutoff));
                    }
                    let var_name = display_name(variable);
                    let feat_name = display_name(feature);
                    cells.push(cell(
                        &format!("{feat_name}, {var_name} high"),
                        estimate(&split.high, &spec),
                    ));
                    cells.push(cell(
                        &format!("{feat_name}, {var_name} low"),
                        estimate(&split.low, &spec),
                    ));
                }
                Err(e) => {
                    let var_name = display_name(variable);
                    let feat_name = display_name(feature);
                    for side in ["high", "low"] {
                        cells.push(TableCell {
                            label: format!("{feat_name}, {var_name} {side}"),
                            result: Err(e.to_string()),
                        });
                    }
                }
            }
        }
    }
    TableReport { id, cells, cutoffs }
}

/// Dynamic columns where the outcome is a fundamentals series, the feature
/// is the week-t sentiment tendency, and controls enter lagged one week.
fn lagged_control_table(
    data: &PanelDataset,
    id: TableId,
    outcomes: &[&str],
    config: &TableConfig,
) -> TableReport {
    let mut cells = Vec::new();
    // Materialize lagged controls once.
    let mut lagged_names = Vec::new();
    let mut augmented = data.clone();
    let mut lag_error = None;
    for control in &config.controls {
        let name = format!("{control}_lag1");
        match augmented.lag(control, 1) {
            Ok(col) => {
                if augmented.add_column(&name, col).is_ok() {
                    lagged_names.push(name);
                }
            }
            Err(e) => {
                lag_error = Some(e.to_string());
                break;
            }
        }
    }
    for &outcome in outcomes {
        let label = format!("{} dynamic", display_name(outcome));
        if let Some(e) = &lag_error {
            cells.push(TableCell {
                label,
                result: Err(e.clone()),
            });
            continue;
        }
        let spec = dynamic_spec(outcome, "cnst", &lagged_names, config);
        cells.push(cell(&label, estimate(&augmented, &spec)));
    }
    TableReport {
        id,
        cells,
        cutoffs: Vec::new(),
    }
}

/// Runs every table.
pub fn run_all_tables(data: &PanelDataset, config: &TableConfig) -> Vec<TableReport> {
    TableId::all()
        .into_iter()
        .map(|id| run_table(data, id, config))
        .collect()
}

/// Human label for a column/term name.
pub fn display_name(term: &str) -> String {
    match term {
        "cnst" => "CNST".to_owned(),
        "cpst" => "CPST".to_owned(),
        "ost" => "OST".to_owned(),
        "fst" => "FST".to_owned(),
        "ad" => "Ad".to_owned(),
        "bm" => "B/M".to_owned(),
        "rd" => "R&D".to_owned(),
        "roa" => "ROA".to_owned(),
        "size" => "Size".to_owned(),
        "ivol" => "Ivol".to_owned(),
        "gp" => "GP".to_owned(),
        "turn" => "Turn".to_owned(),
        "beta" => "Beta".to_owned(),
        "illiq" => "Illiq".to_owned(),
        "ag" => "AG".to_owned(),
        "ccis" => "CCIs".to_owned(),
        "ea" => "EA".to_owned(),
        "es" => "ES".to_owned(),
        "sur" => "SUR".to_owned(),
        "sue" => "SUE".to_owned(),
        "prof_shock_hvz" => "Prof shock (HVZ)".to_owned(),
        "prof_shock_vol" => "Prof shock (VOL)".to_owned(),
        "const" => "Constant".to_owned(),
        "ret_fwd" => "Next-week return".to_owned(),
        name if name.ends_with("_lag") => "Lagged outcome".to_owned(),
        name if name.ends_with("_lag1") => {
            format!("{} (lagged)", display_name(name.trim_end_matches("_lag1")))
        }
        other => other.to_owned(),
    }
}

fn stars(t: f64) -> &'static str {
    let a = t.abs();
    if a >= 2.576 {
        "***"
    } else if a >= 1.96 {
        "**"
    } else if a >= 1.645 {
        "*"
    } else {
        ""
    }
}

fn fmt_est(v: f64) -> String {
    if v == 0.0 {
        "0.0000".to_owned()
    } else if v.abs() >= 1e-3 && v.abs() < 1e5 {
        format!("{v:.4}")
    } else {
        format!("{v:.3e}")
    }
}

/// Term names each cell reports, in display order: features, lagged
/// outcome, controls, constant. Time dummies are summarized by the FE rows
/// instead of being listed.
fn term_order(report: &TableReport) -> Vec<String> {
    let mut terms: Vec<String> = Vec::new();
    let mut push = |t: &str| {
        if !terms.iter().any(|x| x == t) {
            terms.push(t.to_owned());
        }
    };
    for want_lag in [false, true] {
        for cell in &report.cells {
            if let Ok(fit) = &cell.result {
                if want_lag {
                    let lag_name = format!("{}_lag", fit.spec.outcome);
                    if fit.coefficient(&lag_name).is_some() {
                        push(&lag_name);
                    }
                } else {
                    push(&fit.spec.feature);
                }
            }
        }
    }
    for cell in &report.cells {
        if let Ok(fit) = &cell.result {
            for c in &fit.spec.controls {
                if fit.coefficient(c).is_some() {
                    push(c);
                }
            }
        }
    }
    push("const");
    terms
}

/// Renders the report as a Markdown table with significance stars at the
/// 10/5/1% levels and t-statistics in parentheses.
pub fn render_markdown(report: &TableReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("## {}\n\n", report.id.title()));

    let terms = term_order(report);
    let labels: Vec<&str> = report.cells.iter().map(|c| c.label.as_str()).collect();
    out.push_str(&format!("| | {} |\n", labels.join(" | ")));
    out.push_str(&format!("|---|{}\n", "---|".repeat(labels.len())));

    let lag_row_names: Vec<String> = terms
        .iter()
        .filter(|t| t.ends_with("_lag"))
        .cloned()
        .collect();
    for term in &terms {
        let mut est_row = Vec::new();
        let mut t_row = Vec::new();
        for cell in &report.cells {
            match &cell.result {
                Ok(fit) => match fit.coefficient(term) {
                    Some(c) => {
                        est_row.push(format!("{}{}", fmt_est(c.estimate), stars(c.t_stat)));
                        t_row.push(format!("({:.2})", c.t_stat));
                    }
                    None => {
                        est_row.push("—".to_owned());
                        t_row.push(String::new());
                    }
                },
                Err(_) => {
                    est_row.push("—".to_owned());
                    t_row.push(String::new());
                }
            }
        }
        // A lagged-outcome row only renders once even if cells disagree on
        // the outcome name.
        let display = if lag_row_names.contains(term) {
            "Lagged outcome".to_owned()
        } else {
            display_name(term)
        };
        out.push_str(&format!("| {display} | {} |\n", est_row.join(" | ")));
        out.push_str(&format!("| | {} |\n", t_row.join(" | ")));
    }

    // Diagnostics rows.
    let diag = |f: &dyn Fn(&FitResult) -> String| -> Vec<String> {
        report
            .cells
            .iter()
            .map(|cell| match &cell.result {
                Ok(fit) => f(fit),
                Err(_) => "—".to_owned(),
            })
            .collect()
    };
    let rows: Vec<(&str, Vec<String>)> = vec![
        ("Observations", diag(&|f| f.n_obs.to_string())),
        ("Firms", diag(&|f| f.n_firms.to_string())),
        (
            "Firm FE",
            diag(&|f| if f.spec.firm_fe { "YES" } else { "NO" }.to_owned()),
        ),
        (
            "Year FE",
            diag(&|f| {
                match f.spec.time_fe {
                    TimeEffects::None => "NO",
                    TimeEffects::Year => "YES",
                    TimeEffects::Week => "WEEK",
                }
                .to_owned()
            }),
        ),
        (
            "AR(1) test p-value",
            diag(&|f| f.ar1_pvalue.map_or("—".to_owned(), |p| format!("{p:.3}"))),
        ),
        (
            "AR(2) test p-value",
            diag(&|f| f.ar2_pvalue.map_or("—".to_owned(), |p| format!("{p:.3}"))),
        ),
    ];
    for (name, values) in rows {
        out.push_str(&format!("| {name} | {} |\n", values.join(" | ")));
    }
    out.push('\n');

    // Footnotes: cutoffs, errors, raw vs one-σ feature effects.
    for (variable, cutoff) in &report.cutoffs {
        out.push_str(&format!(
            "- {} median cutoff: {}\n",
            display_name(variable),
            fmt_est(*cutoff)
        ));
    }
    for cell in &report.cells {
        if let Err(e) = &cell.result {
            out.push_str(&format!("- {}: {e}\n", cell.label));
        }
    }
    for cell in &report.cells {
        if let Ok(fit) = &cell.result {
            if let (Some(c), Some(sd)) = (fit.coefficient(&fit.spec.feature), fit.feature_sd) {
                out.push_str(&format!(
                    "- {}: {} coefficient {} (raw); a one-standard-deviation move (sd {}) shifts the outcome by {}\n",
                    cell.label,
                    display_name(&fit.spec.feature),
                    fmt_est(c.estimate),
                    fmt_est(sd),
                    fmt_est(c.estimate * sd),
                ));
            }
        }
    }
    for warning in report
        .cells
        .iter()
        .filter_map(|c| c.result.as_ref().ok())
        .flat_map(|f| f.warnings.iter())
    {
        out.push_str(&format!("- warning: {warning}\n"));
    }
    out.push_str("\nSignificance: * p<0.10, ** p<0.05, *** p<0.01 (two-sided normal).\n");
    out
}

/// Long-format CSV: one row per (column, term) with diagnostics appended.
pub fn render_csv(report: &TableReport) -> String {
    let mut out = String::from("table,column,term,estimate,std_error,t_stat,note\n");
    let esc = |s: &str| -> String {
        if s.contains(',') || s.contains('"') {
            format!("\"{}\"", s.replace('"', "\"\""))
        } else {
            s.to_owned()
        }
    };
    for cell in &report.cells {
        let col = esc(&cell.label);
        match &cell.result {
            Ok(fit) => {
                for c in &fit.coefficients {
                    out.push_str(&format!(
                        "{},{},{},{},{},{},\n",
                        report.id,
                        col,
                        esc(&c.name),
                        c.estimate,
                        c.std_error,
                        c.t_stat
                    ));
                }
                let mut diag = |term: &str, value: String| {
                    out.push_str(&format!("{},{},{term},{value},,,\n", report.id, col));
                };
                diag("n_obs", fit.n_obs.to_string());
                diag("n_firms", fit.n_firms.to_string());
                if let Some(p) = fit.ar1_pvalue {
                    diag("ar1_pvalue", p.to_string());
                }
                if let Some(p) = fit.ar2_pvalue {
                    diag("ar2_pvalue", p.to_string());
                }
                if let Some(sd) = fit.feature_sd {
                    diag("feature_sd", sd.to_string());
                }
                for w in &fit.warnings {
                    out.push_str(&format!(
                        "{},{},warning,,,,{}\n",
                        report.id,
                        col,
                        esc(w)
                    ));
                }
            }
            Err(e) => {
                out.push_str(&format!("{},{},error,,,,{}\n", report.id, col, esc(e)));
            }
        }
    }
    for (variable, cutoff) in &report.cutoffs {
        out.push_str(&format!(
            "{},,cutoff_{variable},{cutoff},,,\n",
            report.id
        ));
    }
    out
}
