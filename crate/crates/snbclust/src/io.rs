//! File formats.
//!
//! Count matrices are delimited text with a header of sample ids and one row
//! per gene (id first). `.csv` files are comma separated, everything else is
//! tab separated. Every other artifact is a headed CSV; run metadata is a
//! `key=value` text file.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use snbclust_core::metrics::Enrichment;
use snbclust_core::selection::PathEntry;
use snbclust_core::{CountMatrix, Matrix};

use crate::error::{CliError, Result};

fn delimiter_for(path: &Path) -> u8 {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("csv") => b',',
        _ => b'\t',
    }
}

fn reader(path: &Path, delimiter: u8) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn writer(path: &Path, delimiter: u8) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::WriterBuilder::new().delimiter(delimiter).from_writer(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::parse(path, e.to_string())
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

pub fn read_counts(path: &Path) -> Result<CountMatrix> {
    let mut rdr = reader(path, delimiter_for(path))?;
    let header = rdr.headers().map_err(csv_err(path))?.clone();
    if header.len() < 2 {
        return Err(CliError::parse(path, "header needs a gene column and at least one sample"));
    }
    let sample_ids: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let mut gene_ids = Vec::new();
    let mut counts = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        if rec.len() != header.len() {
            return Err(snbclust_core::Error::Parse {
                row: r + 1,
                column: rec.len().min(header.len()),
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            }
            .into());
        }
        gene_ids.push(rec[0].to_owned());
        for (c, cell) in rec.iter().enumerate().skip(1) {
            let v = cell.parse::<u64>().map_err(|_| snbclust_core::Error::Parse {
                row: r + 1,
                column: c,
                message: format!("{cell:?} is not a non-negative integer count"),
            })?;
            counts.push(v);
        }
    }
    Ok(CountMatrix::new(gene_ids, sample_ids, counts)?)
}

pub fn write_counts(path: &Path, m: &CountMatrix) -> Result<()> {
    let mut w = writer(path, delimiter_for(path))?;
    let mut header = vec!["gene_id".to_owned()];
    header.extend(m.sample_ids().iter().cloned());
    w.write_record(&header)?;
    for j in 0..m.n_genes() {
        let mut rec = vec![m.gene_ids()[j].clone()];
        rec.extend(m.row(j).iter().map(u64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Two-column `id,value` file.
pub fn read_named_values(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut rdr = reader(path, b',')?;
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        if rec.len() < 2 {
            return Err(CliError::parse(path, format!("row {} needs an id and a value", r + 1)));
        }
        let v = rec[1]
            .parse::<f64>()
            .map_err(|_| CliError::parse(path, format!("row {}: {:?} is not a number", r + 1, &rec[1])))?;
        out.push((rec[0].to_owned(), v));
    }
    Ok(out)
}

/// Values from an `id,value` file reordered to `ids`.
pub fn read_aligned(path: &Path, ids: &[String]) -> Result<Vec<f64>> {
    let values = read_named_values(path)?;
    let map: std::collections::HashMap<&str, f64> = values.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    ids.iter()
        .map(|id| map.get(id.as_str()).copied().ok_or_else(|| CliError::parse(path, format!("no entry for {id}"))))
        .collect()
}

pub fn write_named_values(path: &Path, header: [&str; 2], ids: &[String], values: &[f64]) -> Result<()> {
    let mut w = writer(path, b',')?;
    w.write_record(header)?;
    for (id, v) in ids.iter().zip(values) {
        w.write_record([id.as_str(), &fmt(*v)])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// `sample_id,label,max_posterior` with 1-based labels.
pub fn write_labels(path: &Path, sample_ids: &[String], labels: &[usize], max_posterior: Option<&[f64]>) -> Result<()> {
    let mut w = writer(path, b',')?;
    w.write_record(["sample_id", "label", "max_posterior"])?;
    for (i, id) in sample_ids.iter().enumerate() {
        let p = max_posterior.map_or(String::new(), |p| fmt(p[i]));
        w.write_record([id.as_str(), &(labels[i] + 1).to_string(), &p])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Labels keyed by sample id; any integer coding is accepted.
pub fn read_labels(path: &Path) -> Result<Vec<(String, i64)>> {
    let mut rdr = reader(path, b',')?;
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        if rec.len() < 2 {
            return Err(CliError::parse(path, format!("row {} needs a sample id and a label", r + 1)));
        }
        let l = rec[1]
            .parse::<i64>()
            .map_err(|_| CliError::parse(path, format!("row {}: {:?} is not an integer label", r + 1, &rec[1])))?;
        out.push((rec[0].to_owned(), l));
    }
    Ok(out)
}

/// Gene table: `gene_id` followed by named numeric columns.
pub fn write_gene_table(path: &Path, gene_ids: &[String], columns: &[(&str, Vec<f64>)]) -> Result<()> {
    let mut w = writer(path, b',')?;
    let mut header = vec!["gene_id".to_owned()];
    header.extend(columns.iter().map(|(n, _)| (*n).to_owned()));
    w.write_record(&header)?;
    for (j, id) in gene_ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(columns.iter().map(|(_, v)| fmt(v[j])));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// `gene_id, beta_star, beta_1..beta_K`
pub fn write_beta(path: &Path, gene_ids: &[String], beta_star: &[f64], beta: &Matrix) -> Result<()> {
    let names: Vec<String> = (1..=beta.cols()).map(|k| format!("beta_{k}")).collect();
    let mut cols = vec![("beta_star", beta_star.to_vec())];
    for (k, n) in names.iter().enumerate() {
        cols.push((n.as_str(), beta.column(k)));
    }
    write_gene_table(path, gene_ids, &cols)
}

/// `gene_id, group_1..group_K` with 1-based group labels.
pub fn write_groups(path: &Path, gene_ids: &[String], groups: &[Vec<usize>]) -> Result<()> {
    let mut w = writer(path, b',')?;
    let k = groups.first().map_or(0, Vec::len);
    let mut header = vec!["gene_id".to_owned()];
    header.extend((1..=k).map(|c| format!("group_{c}")));
    w.write_record(&header)?;
    for (id, g) in gene_ids.iter().zip(groups) {
        let mut rec = vec![id.clone()];
        rec.extend(g.iter().map(|v| (v + 1).to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Line-oriented `key=value` record.
pub fn write_metadata(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut f = File::create(path).map_err(|e| CliError::io(path, e))?;
    for (k, v) in entries {
        writeln!(f, "{k}={v}").map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

/// Reads `key=value` lines; blank lines and `#` comments are skipped.
pub fn read_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::parse(path, format!("line {}: expected key=value", n + 1)))?;
        out.push((k.trim().to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

pub fn write_path(path: &Path, entries: &[Option<PathEntry>], lambdas: &[f64], chosen: usize) -> Result<()> {
    let mut w = writer(path, b',')?;
    w.write_record(["lambda", "loglik", "penalized_loglik", "q", "n_selected", "bic", "chosen"])?;
    for (i, (e, l)) in entries.iter().zip(lambdas).enumerate() {
        let chosen = if i == chosen { "1" } else { "0" };
        match e {
            Some(e) => w.write_record([
                fmt(*l),
                fmt(e.loglik),
                fmt(e.penalized_loglik),
                e.q.to_string(),
                e.n_selected.to_string(),
                fmt(e.bic),
                chosen.to_owned(),
            ])?,
            None => w.write_record([fmt(*l), "NA".into(), "NA".into(), "NA".into(), "NA".into(), "NA".into(), chosen.to_owned()])?,
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_enrichment(path: &Path, rows: &[Enrichment]) -> Result<()> {
    let mut w = writer(path, b',')?;
    w.write_record(["set", "a", "b", "c", "d", "p", "fdr"])?;
    for r in rows {
        let t = &r.table;
        w.write_record([
            r.name.clone(),
            t.a.to_string(),
            t.b.to_string(),
            t.c.to_string(),
            t.d.to_string(),
            fmt(r.p_value),
            fmt(r.fdr),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// One set per line: name, a tab, then comma-separated gene ids.
pub fn read_gene_sets(path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, genes) = line
            .split_once('\t')
            .ok_or_else(|| CliError::parse(path, format!("line {}: expected name<TAB>genes", n + 1)))?;
        let genes = genes.split(',').map(str::trim).filter(|g| !g.is_empty()).map(str::to_owned).collect();
        out.push((name.trim().to_owned(), genes));
    }
    Ok(out)
}

/// Boolean per gene from a `gene_id,flag` file (`1/0`, `true/false`).
pub fn read_gene_mask(path: &Path, gene_ids: Option<&[String]>) -> Result<(Vec<String>, Vec<bool>)> {
    let mut rdr = reader(path, b',')?;
    let mut ids = Vec::new();
    let mut mask = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        if rec.len() < 2 {
            return Err(CliError::parse(path, format!("row {} needs a gene id and a flag", r + 1)));
        }
        let flag = match rec[1].to_ascii_lowercase().as_str() {
            "1" | "true" | "t" | "yes" => true,
            "0" | "false" | "f" | "no" => false,
            other => return Err(CliError::parse(path, format!("row {}: {other:?} is not a boolean", r + 1))),
        };
        ids.push(rec[0].to_owned());
        mask.push(flag);
    }
    if let Some(order) = gene_ids {
        let map: std::collections::HashMap<&str, bool> = ids.iter().map(String::as_str).zip(mask.iter().copied()).collect();
        let aligned = order
            .iter()
            .map(|g| map.get(g.as_str()).copied().ok_or_else(|| CliError::parse(path, format!("no entry for {g}"))))
            .collect::<Result<Vec<_>>>()?;
        return Ok((order.to_vec(), aligned));
    }
    Ok((ids, mask))
}
