//! CSV ingestion. Rows are numbered from 1, not counting the header.

use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;

use crate::config::ColumnRoles;
use crate::data::Dataset;
use crate::error::{AuditError, Result};

fn position(header: &[String], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| AuditError::config(format!("column '{name}' not found in the data header")))
}

fn cell<'a>(record: &'a csv::StringRecord, col: usize, name: &str, row: usize) -> Result<&'a str> {
    let v = record.get(col).unwrap_or("").trim();
    if v.is_empty() {
        return Err(AuditError::data(format!("column '{name}' row {row}: missing value")));
    }
    Ok(v)
}

fn binary(v: &str, name: &str, row: usize) -> Result<u8> {
    match v {
        "0" => Ok(0),
        "1" => Ok(1),
        _ => Err(AuditError::data(format!("column '{name}' row {row}: value '{v}' is not 0 or 1"))),
    }
}

fn number(v: &str, name: &str, row: usize) -> Result<f64> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(AuditError::data(format!("column '{name}' row {row}: '{v}' is not a finite number"))),
    }
}

/// Reads CSV text with a header row and assigns column roles.
pub fn read_csv<R: Read>(reader: R, roles: &ColumnRoles) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| AuditError::data(format!("cannot read header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let outcome_col = position(&header, &roles.outcome)?;
    let treatment_col = roles.treatment.as_deref().map(|t| position(&header, t)).transpose()?;
    let score_col = roles.score.as_deref().map(|s| position(&header, s)).transpose()?;
    let protected_cols = roles
        .protected
        .iter()
        .map(|p| position(&header, p))
        .collect::<Result<Vec<_>>>()?;
    let feature_names: Vec<String> = match &roles.features {
        Some(f) => f.clone(),
        None => {
            let mut taken: Vec<&str> = vec![roles.outcome.as_str()];
            taken.extend(roles.protected.iter().map(String::as_str));
            taken.extend(roles.treatment.as_deref());
            taken.extend(roles.score.as_deref());
            header.iter().filter(|h| !taken.contains(&h.as_str())).cloned().collect()
        }
    };
    let feature_cols = feature_names
        .iter()
        .map(|f| position(&header, f))
        .collect::<Result<Vec<_>>>()?;

    let mut outcome = Vec::new();
    let mut treatment = Vec::new();
    let mut score = Vec::new();
    let mut protected: Vec<Vec<String>> = vec![Vec::new(); protected_cols.len()];
    let mut values: Vec<f64> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| AuditError::data(format!("row {row}: {e}")))?;
        outcome.push(binary(cell(&record, outcome_col, &roles.outcome, row)?, &roles.outcome, row)?);
        if let (Some(c), Some(name)) = (treatment_col, &roles.treatment) {
            treatment.push(binary(cell(&record, c, name, row)?, name, row)?);
        }
        if let (Some(c), Some(name)) = (score_col, &roles.score) {
            let s = number(cell(&record, c, name, row)?, name, row)?;
            if !(0.0..=1.0).contains(&s) {
                return Err(AuditError::data(format!("column '{name}' row {row}: score {s} outside [0, 1]")));
            }
            score.push(s);
        }
        for ((&c, name), out) in protected_cols.iter().zip(&roles.protected).zip(protected.iter_mut()) {
            out.push(cell(&record, c, name, row)?.to_string());
        }
        for (&c, name) in feature_cols.iter().zip(&feature_names) {
            values.push(number(cell(&record, c, name, row)?, name, row)?);
        }
    }
    if outcome.is_empty() {
        return Err(AuditError::data("the data has a header but no rows"));
    }

    let features = DMatrix::from_row_slice(outcome.len(), feature_names.len(), &values);
    let mut ds = Dataset::new(features, feature_names, outcome)?;
    if treatment_col.is_some() {
        ds = ds.with_treatment(treatment)?;
    }
    if score_col.is_some() {
        ds = ds.with_score(score)?;
    }
    for (name, vals) in roles.protected.iter().zip(protected) {
        ds = ds.with_protected(name.clone(), vals)?;
    }
    Ok(ds)
}

pub fn load_csv(path: &Path, roles: &ColumnRoles) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| AuditError::io(path, e))?;
    read_csv(std::io::BufReader::new(file), roles)
}
