//! CSV ingestion and emission.
//!
//! Panel file: `date,stock_id,market_cap,price,f000..f359`, one row per
//! (date, stock). Concept file: `concept_id,stock_id[,date]`; without the
//! date column the graph applies to every date.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;

use super::panel::{build_panel, ConceptGraph, ConceptRow, FeaturePanel, PanelRecord};
use super::FEATURE_WIDTH;
use crate::error::{MtmdError, Result};

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> MtmdError {
    MtmdError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path)?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn line_of(record: &csv::StringRecord) -> usize {
    record.position().map_or(0, |p| p.line() as usize)
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| parse_err(path, 1, format!("missing column `{name}`")))
}

fn parse_date(raw: &str, path: &Path, line: usize) -> Result<NaiveDate> {
    raw.parse()
        .map_err(|_| parse_err(path, line, format!("bad ISO-8601 date `{raw}`")))
}

fn parse_num(raw: &str, col: &str, path: &Path, line: usize) -> Result<f64> {
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(parse_err(
            path,
            line,
            format!("column `{col}`: non-numeric value `{raw}`"),
        )),
    }
}

fn feature_name(k: usize) -> String {
    format!("f{k:03}")
}

/// Reads the raw rows of a panel file.
pub fn read_panel_records(path: &Path) -> Result<Vec<PanelRecord>> {
    let mut rdr = reader(path)?;
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let date_col = column(&headers, "date", path)?;
    let id_col = column(&headers, "stock_id", path)?;
    let cap_col = column(&headers, "market_cap", path)?;
    let price_col = column(&headers, "price", path)?;
    let feat_cols = (0..FEATURE_WIDTH)
        .map(|k| column(&headers, &feature_name(k), path))
        .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = line_of(&row);
        let field = |c: usize| row.get(c).unwrap_or("");
        let date = parse_date(field(date_col), path, line)?;
        let stock_id = field(id_col).to_string();
        if stock_id.is_empty() {
            return Err(parse_err(path, line, "empty stock_id"));
        }
        if !seen.insert((date, stock_id.clone())) {
            return Err(parse_err(
                path,
                line,
                format!("duplicate row for date {date} stock {stock_id}"),
            ));
        }
        let market_cap = parse_num(field(cap_col), "market_cap", path, line)?;
        if market_cap <= 0.0 {
            return Err(parse_err(path, line, "market_cap must be positive"));
        }
        let price = parse_num(field(price_col), "price", path, line)?;
        if price <= 0.0 {
            return Err(parse_err(path, line, "price must be positive"));
        }
        let features = feat_cols
            .iter()
            .enumerate()
            .map(|(k, &c)| parse_num(field(c), &feature_name(k), path, line))
            .collect::<Result<Vec<_>>>()?;
        out.push(PanelRecord {
            date,
            stock_id,
            market_cap,
            price,
            features,
        });
    }
    Ok(out)
}

/// Reads concept links. An empty file (or header only) yields no rows.
/// Every stock id must appear in `known_stocks`.
pub fn load_concepts(
    path: &Path,
    known_stocks: &std::collections::HashSet<String>,
) -> Result<Vec<ConceptRow>> {
    if std::fs::metadata(path)?.len() == 0 {
        return Ok(Vec::new());
    }
    let mut rdr = reader(path)?;
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let concept_col = column(&headers, "concept_id", path)?;
    let stock_col = column(&headers, "stock_id", path)?;
    let date_col = headers.iter().position(|h| h == "date");

    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = line_of(&row);
        let concept = row.get(concept_col).unwrap_or("").to_string();
        let stock = row.get(stock_col).unwrap_or("").to_string();
        if concept.is_empty() {
            return Err(parse_err(path, line, "empty concept_id"));
        }
        if !known_stocks.contains(&stock) {
            return Err(parse_err(path, line, format!("unknown stock id `{stock}`")));
        }
        let date = match date_col.and_then(|c| row.get(c)) {
            Some(raw) if !raw.is_empty() => Some(parse_date(raw, path, line)?),
            _ => None,
        };
        out.push((concept, stock, date));
    }
    Ok(out)
}

/// Loads a panel and its concept graph, sorted by date with stocks ordered
/// by id and labels normalized per date.
pub fn load_panel(panel_path: &Path, concept_path: &Path) -> Result<(FeaturePanel, ConceptGraph)> {
    let records = read_panel_records(panel_path)?;
    let known = records.iter().map(|r| r.stock_id.clone()).collect();
    let concepts = load_concepts(concept_path, &known)?;
    build_panel(&records, &concepts)
}

pub fn write_panel_records(path: &Path, records: &[PanelRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "date,stock_id,market_cap,price")?;
    for k in 0..FEATURE_WIDTH {
        write!(w, ",{}", feature_name(k))?;
    }
    writeln!(w)?;
    for r in records {
        write!(w, "{},{},{},{}", r.date, r.stock_id, r.market_cap, r.price)?;
        for v in &r.features {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `concept_id,stock_id` rows (static graph).
pub fn write_concepts(path: &Path, rows: &[(String, String)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "concept_id,stock_id")?;
    for (c, s) in rows {
        writeln!(w, "{c},{s}")?;
    }
    w.flush()?;
    Ok(())
}
