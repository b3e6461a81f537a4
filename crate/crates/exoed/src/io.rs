//! Flat-file formats. Floats are written in Rust's shortest round-trip form,
//! so values read back are bit-identical to the ones written.

use std::fs;
use std::path::Path;

use exoed_core::estimation::{Dataset, Noise};
use serde::Serialize;

use crate::error::{ExoedError, Result};

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| ExoedError::io(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| ExoedError::parse(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| ExoedError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| ExoedError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| ExoedError::parse(path, e))
}

/// Float cell; empty for `None`.
pub fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn parse_cell(path: &Path, s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| ExoedError::parse(path, format!("`{s}` is not a number")))
}

/// CSV with a header row and string cells.
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| ExoedError::parse(path, e))?;
    w.write_record(header).map_err(|e| ExoedError::parse(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| ExoedError::parse(path, e))?;
    }
    w.flush().map_err(|e| ExoedError::io(path, e))
}

/// Header and records of a CSV file.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| ExoedError::parse(path, e))?;
    let header = r
        .headers()
        .map_err(|e| ExoedError::parse(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| ExoedError::parse(path, e))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

fn dataset_header(n_u: usize, n_y: usize) -> Vec<String> {
    let mut h = vec!["tau_index".to_string()];
    h.extend((1..=n_u).map(|i| format!("u_{i}")));
    h.extend((1..=n_y).map(|i| format!("y_{i}")));
    h
}

/// `tau_index, u_1..u_nu, y_1..y_ny`, one row per sample.
pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let rows: Vec<Vec<String>> = (0..ds.len())
        .map(|t| {
            let mut r = vec![t.to_string()];
            r.extend(ds.input(t).iter().map(f64::to_string));
            r.extend(ds.output(t).iter().map(f64::to_string));
            r
        })
        .collect();
    write_csv(path, &dataset_header(ds.num_inputs(), ds.num_outputs()), &rows)
}

/// Reads a dataset written by [`write_dataset`]; rows are ordered by
/// `tau_index`, which must run `0..N` without gaps.
pub fn read_dataset(path: &Path, n_u: usize, n_y: usize, noise: Noise) -> Result<Dataset> {
    let (header, rows) = read_csv(path)?;
    if header != dataset_header(n_u, n_y) {
        return Err(ExoedError::parse(
            path,
            format!("expected columns {}", dataset_header(n_u, n_y).join(",")),
        ));
    }
    let mut samples: Vec<(usize, Vec<f64>, Vec<f64>)> = Vec::with_capacity(rows.len());
    for r in &rows {
        let tau: usize = r[0]
            .parse()
            .map_err(|_| ExoedError::parse(path, format!("bad tau_index `{}`", r[0])))?;
        let mut vals = Vec::with_capacity(n_u + n_y);
        for s in &r[1..] {
            vals.push(parse_cell(path, s)?.ok_or_else(|| ExoedError::parse(path, "empty cell"))?);
        }
        let y = vals.split_off(n_u);
        samples.push((tau, vals, y));
    }
    samples.sort_by_key(|s| s.0);
    if samples.iter().enumerate().any(|(i, s)| s.0 != i) {
        return Err(ExoedError::parse(path, "tau_index must run 0..N without gaps"));
    }
    let inputs: Vec<Vec<f64>> = samples.iter().map(|s| s.1.clone()).collect();
    let outputs: Vec<Vec<f64>> = samples.into_iter().map(|s| s.2).collect();
    Ok(Dataset::new(&inputs, &outputs, noise)?)
}

/// `id, x, y` rows of planar polylines.
pub fn write_polylines(path: &Path, lines: &[(usize, Vec<[f64; 2]>)]) -> Result<()> {
    let header = ["id", "x", "y"].map(String::from);
    let rows: Vec<Vec<String>> = lines
        .iter()
        .flat_map(|(id, pts)| {
            pts.iter()
                .map(move |p| vec![id.to_string(), p[0].to_string(), p[1].to_string()])
        })
        .collect();
    write_csv(path, &header, &rows)
}
