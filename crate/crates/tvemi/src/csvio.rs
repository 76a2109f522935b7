//! CSV reading and writing of survival datasets and long-format imputations.
//!
//! A dataset file has a header with mandatory `time` and `event` columns, an
//! optional `id` column, and one column per covariate. Missing covariate cells are
//! empty or `NA`. Imputations are written in long format: an `imp` column first,
//! with `imp = 0` holding the original data and `1..=M` the completed copies.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use tvemi_core::impute::{ImputationDiagnostics, ImputedDatasets};
use tvemi_core::surv::{CovariateKind, CovariateMeta, SurvivalDataset};
use tvemi_core::DMatrix;

use crate::error::{CliError, CliResult};

/// Column kinds forced by the user instead of inferred.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestOptions {
    pub kinds: Vec<(String, CovariateKind)>,
}

const RESERVED: [&str; 4] = ["imp", "id", "time", "event"];

struct Layout {
    imp: Option<usize>,
    id: Option<usize>,
    time: usize,
    event: usize,
    covariates: Vec<(usize, String)>,
}

impl Layout {
    fn from_header(header: &csv::StringRecord, source: &str) -> CliResult<Self> {
        let find = |name: &str| header.iter().position(|h| h.trim() == name);
        let require = |name: &str| {
            find(name).ok_or_else(|| CliError::Data(format!("{source}: missing mandatory column {name:?}")))
        };
        let mut names: Vec<&str> = Vec::new();
        for h in header.iter() {
            let h = h.trim();
            if h.is_empty() {
                return Err(CliError::Data(format!("{source}: empty column name in header")));
            }
            if names.contains(&h) {
                return Err(CliError::Data(format!("{source}: duplicate column {h:?}")));
            }
            names.push(h);
        }
        let covariates: Vec<(usize, String)> = names
            .iter()
            .enumerate()
            .filter(|(_, h)| !RESERVED.contains(h))
            .map(|(i, h)| (i, h.to_string()))
            .collect();
        Ok(Layout {
            imp: find("imp"),
            id: find("id"),
            time: require("time")?,
            event: require("event")?,
            covariates,
        })
    }
}

/// Raw rows before kinds are settled.
struct Table {
    imps: Vec<usize>,
    ids: Vec<String>,
    times: Vec<f64>,
    events: Vec<bool>,
    /// Row-major covariate cells, `None` where missing.
    cells: Vec<Vec<Option<f64>>>,
    names: Vec<String>,
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell == "NA"
}

fn read_table<R: Read>(reader: R, source: &str) -> CliResult<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| CliError::Data(format!("{source}: cannot read header: {e}")))?
        .clone();
    if header.is_empty() {
        return Err(CliError::Data(format!("{source}: header row required")));
    }
    let layout = Layout::from_header(&header, source)?;
    let mut table = Table {
        imps: Vec::new(),
        ids: Vec::new(),
        times: Vec::new(),
        events: Vec::new(),
        cells: Vec::new(),
        names: layout.covariates.iter().map(|(_, n)| n.clone()).collect(),
    };
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| CliError::Data(format!("{source}: row {row}: {e}")))?;
        let err = |col: &str, msg: String| CliError::Data(format!("{source}: row {row}, column {col}: {msg}"));
        let number = |col: &str, cell: &str| -> CliResult<f64> {
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(col, format!("non-numeric value {cell:?}")))
        };
        if let Some(c) = layout.imp {
            let cell = &record[c];
            let imp = cell
                .parse::<usize>()
                .map_err(|_| err("imp", format!("imputation number must be a non-negative integer, got {cell:?}")))?;
            table.imps.push(imp);
        }
        table.ids.push(match layout.id {
            Some(c) => record[c].to_string(),
            None => row.to_string(),
        });
        let time_cell = &record[layout.time];
        if is_missing(time_cell) {
            return Err(err("time", "missing value".into()));
        }
        let time = number("time", time_cell)?;
        if time < 0.0 {
            return Err(err("time", format!("negative time {time}")));
        }
        table.times.push(time);
        let event = match &record[layout.event] {
            "0" => false,
            "1" => true,
            other => {
                let parsed = other.parse::<f64>().ok();
                match parsed {
                    Some(v) if v == 0.0 => false,
                    Some(v) if v == 1.0 => true,
                    _ => return Err(err("event", format!("event must be 0 or 1, got {other:?}"))),
                }
            }
        };
        table.events.push(event);
        let mut cells = Vec::with_capacity(layout.covariates.len());
        for (c, name) in &layout.covariates {
            let cell = &record[*c];
            cells.push(if is_missing(cell) { None } else { Some(number(name, cell)?) });
        }
        table.cells.push(cells);
    }
    if table.times.is_empty() {
        return Err(CliError::Data(format!("{source}: no data rows")));
    }
    Ok(table)
}

fn resolve_kinds(table: &Table, rows: &[usize], options: &IngestOptions, source: &str) -> CliResult<Vec<CovariateMeta>> {
    for (name, _) in &options.kinds {
        if !table.names.contains(name) {
            return Err(CliError::Usage(format!("kind override for unknown column {name:?}")));
        }
    }
    table
        .names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            if let Some((_, kind)) = options.kinds.iter().find(|(n, _)| n == name) {
                return Ok(CovariateMeta::new(name.clone(), *kind));
            }
            let observed: Vec<f64> = rows.iter().filter_map(|&i| table.cells[i][k]).collect();
            if observed.is_empty() {
                return Err(CliError::Data(format!("{source}: column {name:?} has no observed values")));
            }
            let binary = observed.iter().all(|&v| v == 0.0 || v == 1.0);
            let kind = if binary { CovariateKind::Binary } else { CovariateKind::Continuous };
            Ok(CovariateMeta::new(name.clone(), kind))
        })
        .collect()
}

fn build_dataset(table: &Table, rows: &[usize], meta: Vec<CovariateMeta>) -> CliResult<SurvivalDataset> {
    let p = table.names.len();
    let x = DMatrix::from_fn(rows.len(), p, |r, k| table.cells[rows[r]][k].unwrap_or(0.0));
    let mask = DMatrix::from_fn(rows.len(), p, |r, k| table.cells[rows[r]][k].is_none());
    Ok(SurvivalDataset::with_ids(
        rows.iter().map(|&i| table.ids[i].clone()).collect(),
        rows.iter().map(|&i| table.times[i]).collect(),
        rows.iter().map(|&i| table.events[i]).collect(),
        x,
        mask,
        meta,
    )?)
}

/// Parse a dataset from CSV text.
pub fn parse_dataset<R: Read>(reader: R, options: &IngestOptions, source: &str) -> CliResult<SurvivalDataset> {
    let table = read_table(reader, source)?;
    if !table.imps.is_empty() {
        return Err(CliError::Data(format!(
            "{source}: has an imp column; read it as long-format imputations"
        )));
    }
    let rows: Vec<usize> = (0..table.times.len()).collect();
    let meta = resolve_kinds(&table, &rows, options, source)?;
    build_dataset(&table, &rows, meta).map_err(|e| e.context(source))
}

/// Read a dataset file.
pub fn ingest_csv(path: &Path, options: &IngestOptions) -> CliResult<SurvivalDataset> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_dataset(file, options, &path.display().to_string())
}

/// True when the file's header has an `imp` column.
pub fn is_long_format(path: &Path) -> CliResult<bool> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = rdr.headers().map_err(|e| CliError::io(path, e))?;
    Ok(header.iter().any(|h| h == "imp"))
}

fn format_value(v: f64) -> String {
    format!("{v}")
}

fn dataset_record(dataset: &SurvivalDataset, i: usize, x: Option<&DMatrix<f64>>) -> Vec<String> {
    let mut rec = vec![
        dataset.ids()[i].clone(),
        format_value(dataset.times()[i]),
        if dataset.events()[i] { "1".into() } else { "0".into() },
    ];
    for k in 0..dataset.n_covariates() {
        rec.push(match x {
            Some(x) => format_value(x[(i, k)]),
            None if dataset.is_missing(i, k) => "NA".into(),
            None => format_value(dataset.covariates()[(i, k)]),
        });
    }
    rec
}

fn dataset_header(dataset: &SurvivalDataset) -> Vec<String> {
    let mut h = vec!["id".to_string(), "time".into(), "event".into()];
    h.extend(dataset.meta().iter().map(|m| m.name.clone()));
    h
}

/// Write a dataset as CSV, with missing cells as `NA`.
pub fn write_dataset_to<W: Write>(writer: W, dataset: &SurvivalDataset) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    let fail = |e: csv::Error| CliError::Data(format!("writing dataset: {e}"));
    w.write_record(dataset_header(dataset)).map_err(fail)?;
    for i in 0..dataset.n_subjects() {
        w.write_record(dataset_record(dataset, i, None)).map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::Data(format!("writing dataset: {e}")))
}

pub fn write_dataset(path: &Path, dataset: &SurvivalDataset) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_dataset_to(file, dataset).map_err(|e| e.context(path.display()))
}

/// Write the original data (`imp = 0`) followed by every completed copy.
pub fn write_imputations_to<W: Write>(writer: W, imputed: &ImputedDatasets) -> CliResult<()> {
    let dataset = imputed.dataset();
    let mut w = csv::Writer::from_writer(writer);
    let fail = |e: csv::Error| CliError::Data(format!("writing imputations: {e}"));
    let mut header = vec!["imp".to_string()];
    header.extend(dataset_header(dataset));
    w.write_record(&header).map_err(fail)?;
    for m in 0..=imputed.m() {
        for i in 0..dataset.n_subjects() {
            let x = if m == 0 { None } else { Some(&imputed.completed()[m - 1]) };
            let mut rec = vec![m.to_string()];
            rec.extend(dataset_record(dataset, i, x));
            w.write_record(&rec).map_err(fail)?;
        }
    }
    w.flush().map_err(|e| CliError::Data(format!("writing imputations: {e}")))
}

pub fn write_imputations(path: &Path, imputed: &ImputedDatasets) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_imputations_to(file, imputed).map_err(|e| e.context(path.display()))
}

/// Parse long-format imputations.
pub fn parse_imputations<R: Read>(reader: R, options: &IngestOptions, source: &str) -> CliResult<ImputedDatasets> {
    let table = read_table(reader, source)?;
    if table.imps.is_empty() {
        return Err(CliError::Data(format!("{source}: long-format imputations need an imp column")));
    }
    let max = *table.imps.iter().max().unwrap();
    let blocks: Vec<Vec<usize>> = (0..=max)
        .map(|m| (0..table.imps.len()).filter(|&i| table.imps[i] == m).collect())
        .collect();
    if blocks[0].is_empty() {
        return Err(CliError::Data(format!("{source}: no original rows (imp = 0)")));
    }
    if max == 0 {
        return Err(CliError::Data(format!("{source}: no completed copies (imp >= 1)")));
    }
    let meta = resolve_kinds(&table, &blocks[0], options, source)?;
    let dataset = build_dataset(&table, &blocks[0], meta.clone()).map_err(|e| e.context(source))?;
    let mut completed = Vec::with_capacity(max);
    for (m, rows) in blocks.iter().enumerate().skip(1) {
        let mismatch = || CliError::Data(format!("{source}: imputation {m} does not repeat the original rows"));
        if rows.len() != blocks[0].len() {
            return Err(mismatch());
        }
        for (r, &i) in rows.iter().enumerate() {
            let o = blocks[0][r];
            if table.ids[i] != table.ids[o] || table.times[i] != table.times[o] || table.events[i] != table.events[o] {
                return Err(mismatch());
            }
            if let Some(k) = table.cells[i].iter().position(|c| c.is_none()) {
                return Err(CliError::Data(format!(
                    "{source}: imputation {m}, row {}: column {} is still missing",
                    r + 1,
                    table.names[k]
                )));
            }
        }
        let x = DMatrix::from_fn(rows.len(), table.names.len(), |r, k| table.cells[rows[r]][k].unwrap());
        completed.push(x);
    }
    let seeds = vec![0; completed.len()];
    let diagnostics = vec![ImputationDiagnostics::default(); completed.len()];
    ImputedDatasets::new(dataset, completed, seeds, diagnostics).map_err(|e| CliError::from(e).context(source))
}

pub fn read_imputations(path: &Path, options: &IngestOptions) -> CliResult<ImputedDatasets> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_imputations(file, options, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> CliResult<SurvivalDataset> {
        parse_dataset(text.as_bytes(), &IngestOptions::default(), "test")
    }

    #[test]
    fn one_na_cell_is_masked() {
        let d = parse("time,event,x1,x2\n1.5,1,0,0.3\n2,0,NA,1.2\n3,1,1,\n").unwrap();
        assert_eq!(d.n_subjects(), 3);
        assert_eq!(d.n_missing(), 2);
        assert!(d.is_missing(1, 0) && d.is_missing(2, 1));
        assert_eq!(d.meta()[0].kind, CovariateKind::Binary);
        assert_eq!(d.meta()[1].kind, CovariateKind::Continuous);
    }

    #[test]
    fn bad_event_names_the_row() {
        let e = parse("time,event,x\n1,1,0\n2,2,1\n").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("row 2") && msg.contains("event"), "{msg}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn other_ingest_errors() {
        assert!(parse("time,x\n1,0\n").unwrap_err().to_string().contains("\"event\""));
        assert!(parse("time,event,x\n1,1,abc\n").unwrap_err().to_string().contains("column x"));
        assert!(parse("time,event,x\n-1,1,0\n").unwrap_err().to_string().contains("negative"));
        assert!(parse("time,event,x\n").is_err());
    }

    #[test]
    fn kind_override() {
        let opts = IngestOptions {
            kinds: vec![("x".into(), CovariateKind::Continuous)],
        };
        let d = parse_dataset("time,event,x\n1,1,0\n2,0,1\n".as_bytes(), &opts, "t").unwrap();
        assert_eq!(d.meta()[0].kind, CovariateKind::Continuous);
        let opts = IngestOptions {
            kinds: vec![("y".into(), CovariateKind::Continuous)],
        };
        assert_eq!(
            parse_dataset("time,event,x\n1,1,0\n".as_bytes(), &opts, "t").unwrap_err().exit_code(),
            1
        );
    }

    #[test]
    fn export_then_ingest_is_identity() {
        let d = parse("id,time,event,x1,x2\na,1.5,1,0,0.1\nb,2.25,0,NA,-1e-7\nc,3,1,1,NA\n").unwrap();
        let mut buf = Vec::new();
        write_dataset_to(&mut buf, &d).unwrap();
        let back = parse(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, d);
    }
}
