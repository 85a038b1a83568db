//! Panel CSV round-trip.
//!
//! The assembled firm-week panel travels between the `panel`, `regress`, and
//! `tables` subcommands as one CSV: firm_id, iso_year, iso_week, then every
//! data column in name order. Missing values are empty fields. Values are
//! written with the shortest representation that parses back to the same
//! f64, so a read followed by a write reproduces the file.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use revpanel::date::WeekIndex;
use revpanel::econometrics::PanelDataset;

pub fn write_panel(path: &Path, data: &PanelDataset) -> Result<()> {
    let names: Vec<String> = data.column_names().map(str::to_owned).collect();
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("cannot write {}", path.display()))?;

    let mut header = vec!["firm_id".to_owned(), "iso_year".to_owned(), "iso_week".to_owned()];
    header.extend(names.iter().cloned());
    writer.write_record(&header)?;

    let columns: Vec<&[Option<f64>]> = names
        .iter()
        .map(|name| data.column(name))
        .collect::<Result<_, _>>()?;
    for row in 0..data.n_rows() {
        let week = data.week_of_row(row);
        let mut record = vec![
            data.firm_of_row(row).to_owned(),
            week.year.to_string(),
            week.week.to_string(),
        ];
        for column in &columns {
            record.push(column[row].map(|v| v.to_string()).unwrap_or_default());
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_panel(path: &Path) -> Result<PanelDataset> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let header = reader.headers()?.clone();
    if header.len() < 3 || &header[0] != "firm_id" || &header[1] != "iso_year" || &header[2] != "iso_week" {
        bail!(
            "{}: expected a panel header starting firm_id,iso_year,iso_week",
            path.display()
        );
    }
    let names: Vec<String> = header.iter().skip(3).map(str::to_owned).collect();

    let mut firms = Vec::new();
    let mut weeks = Vec::new();
    let mut columns: BTreeMap<String, Vec<Option<f64>>> =
        names.iter().map(|n| (n.clone(), Vec::new())).collect();
    for (number, record) in reader.records().enumerate() {
        let record = record?;
        let context = || format!("{}: record {}", path.display(), number + 1);
        if record.len() != header.len() {
            bail!("{}: expected {} fields, got {}", context(), header.len(), record.len());
        }
        firms.push(record[0].to_owned());
        let week = WeekIndex {
            year: record[1].parse().with_context(context)?,
            week: record[2].parse().with_context(context)?,
        };
        week.validate().with_context(context)?;
        weeks.push(week);
        for (name, field) in names.iter().zip(record.iter().skip(3)) {
            let value = if field.is_empty() {
                None
            } else {
                Some(field.parse::<f64>().map_err(|e| {
                    anyhow!("{}: column {name}: cannot parse {field:?}: {e}", context())
                })?)
            };
            columns.get_mut(name).unwrap().push(value);
        }
    }
    Ok(PanelDataset::from_columns(firms, weeks, columns)?)
}
