//! Long-format CSV ingestion into a balanced panel.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{Context, Result};
use panelmix::PanelDataset;
use serde::{Deserialize, Serialize};

use crate::DataError;

/// Column roles of a long-format panel file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub id_col: String,
    pub time_col: String,
    pub y_col: String,
    /// Covariate columns in model order.
    pub x_cols: Vec<String>,
    /// Covariates (among `x_cols`) to one-hot encode, dropping the first level.
    pub categorical: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            id_col: "id".into(),
            time_col: "time".into(),
            y_col: "y".into(),
            x_cols: Vec::new(),
            categorical: Vec::new(),
        }
    }
}

/// A balanced panel read from a file, with what was dropped on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub data: PanelDataset,
    /// Units dropped because some period was missing.
    pub dropped_units: usize,
    /// Names of the covariate columns after encoding.
    pub x_names: Vec<String>,
    /// Period labels in panel order.
    pub periods: Vec<String>,
}

fn data_err(msg: String) -> anyhow::Error {
    DataError(msg).into()
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| data_err(format!("column {name:?} not found in header")))
}

fn parse_number(raw: &str, what: &str, line: u64) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| data_err(format!("line {line}: {what} {raw:?} is not numeric")))?;
    if !v.is_finite() {
        return Err(data_err(format!("line {line}: {what} is not finite")));
    }
    Ok(v)
}

/// Sort period labels numerically when they all parse as numbers, else lexically.
fn order_periods(labels: BTreeSet<String>) -> Vec<String> {
    let mut v: Vec<String> = labels.into_iter().collect();
    if v.iter().all(|s| s.parse::<f64>().is_ok()) {
        v.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    }
    v
}

struct Row {
    y: f64,
    x: Vec<String>,
    line: u64,
}

/// Read a long-format panel from `reader`.
pub fn ingest_reader<R: Read>(reader: R, schema: &CsvSchema) -> Result<Ingested> {
    for c in &schema.categorical {
        if !schema.x_cols.contains(c) {
            return Err(data_err(format!("categorical column {c:?} is not among the covariates")));
        }
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().context("reading the header row")?.clone();
    let id_i = column(&headers, &schema.id_col)?;
    let t_i = column(&headers, &schema.time_col)?;
    let y_i = column(&headers, &schema.y_col)?;
    let x_i: Vec<usize> = schema.x_cols.iter().map(|c| column(&headers, c)).collect::<Result<_>>()?;

    let mut unit_order: Vec<String> = Vec::new();
    let mut units: HashMap<String, HashMap<String, Row>> = HashMap::new();
    let mut periods = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.context("reading a data row")?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).ok_or_else(|| data_err(format!("line {line}: missing field")));
        let id = field(id_i)?.to_string();
        let time = field(t_i)?.to_string();
        let y = parse_number(field(y_i)?, "outcome", line)?;
        let x = x_i.iter().map(|&i| field(i).map(str::to_string)).collect::<Result<Vec<_>>>()?;
        let entry = units.entry(id.clone()).or_insert_with(|| {
            unit_order.push(id.clone());
            HashMap::new()
        });
        if entry.insert(time.clone(), Row { y, x, line }).is_some() {
            return Err(data_err(format!("line {line}: duplicate row for unit {id:?} at time {time:?}")));
        }
        periods.insert(time);
    }
    let periods = order_periods(periods);
    let t = periods.len();
    if t < 2 {
        return Err(data_err(format!("{t} distinct periods; at least 2 are required")));
    }
    let kept: Vec<&String> = unit_order.iter().filter(|id| units[*id].len() == t).collect();
    let dropped_units = unit_order.len() - kept.len();
    if kept.is_empty() {
        return Err(data_err("no unit is observed in every period".into()));
    }

    // Levels of categorical covariates among kept rows, sorted; the first is the base.
    let mut levels: Vec<Option<Vec<String>>> = vec![None; schema.x_cols.len()];
    for (c, name) in schema.x_cols.iter().enumerate() {
        if schema.categorical.contains(name) {
            let mut set = BTreeSet::new();
            for id in &kept {
                for row in units[*id].values() {
                    set.insert(row.x[c].clone());
                }
            }
            levels[c] = Some(set.into_iter().collect());
        }
    }
    let mut x_names = Vec::new();
    for (c, name) in schema.x_cols.iter().enumerate() {
        match &levels[c] {
            Some(lv) => x_names.extend(lv.iter().skip(1).map(|l| format!("{name}={l}"))),
            None => x_names.push(name.clone()),
        }
    }
    let q = x_names.len();
    let n = kept.len();
    let mut y = Vec::with_capacity(n * t);
    let mut x = Vec::with_capacity(n * t * q);
    for id in &kept {
        let rows = &units[*id];
        for p in &periods {
            let row = &rows[p];
            y.push(row.y);
            for (c, name) in schema.x_cols.iter().enumerate() {
                match &levels[c] {
                    Some(lv) => x.extend(lv.iter().skip(1).map(|l| if *l == row.x[c] { 1.0 } else { 0.0 })),
                    None => x.push(parse_number(&row.x[c], name, row.line)?),
                }
            }
        }
    }
    let ids = kept.iter().map(|s| s.to_string()).collect();
    let cov = (q > 0).then_some((q, x));
    let data = PanelDataset::with_ids(n, t, y, cov, ids).map_err(|e| data_err(e.to_string()))?;
    Ok(Ingested { data, dropped_units, x_names, periods })
}

/// Read a long-format panel file.
pub fn ingest_csv(path: &Path, schema: &CsvSchema) -> Result<Ingested> {
    let file = std::fs::File::open(path).map_err(|e| data_err(format!("cannot open {}: {e}", path.display())))?;
    ingest_reader(file, schema).with_context(|| format!("reading {}", path.display()))
}

/// Write `data` in long format with header `id,time,y[,x...]`; periods are numbered from 1.
pub fn write_long_csv<W: Write>(data: &PanelDataset, x_names: &[String], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "time".into(), "y".into()];
    header.extend(x_names.iter().cloned());
    w.write_record(&header)?;
    let q = data.q_x();
    for i in 0..data.n() {
        let u = data.unit(i);
        for s in 0..data.t() {
            let mut rec = vec![data.unit_ids()[i].clone(), (s + 1).to_string(), format!("{:?}", u.y[s])];
            rec.extend(u.x_at(s).iter().take(q).map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}
