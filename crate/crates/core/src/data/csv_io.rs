//! Flat CSV interchange format.
//!
//! The header names the reserved columns `t` and `y_factual` (required) and
//! optionally `y_cfactual`, `mu0`, `mu1` and `split`; every other column is a
//! covariate, kept in file order. Rows whose `split` cell is `unlabeled` carry
//! covariates only and form the unlabeled pool. Floats are written with 17
//! significant digits so a save/load cycle is exact.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Dataset, Split};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const UNLABELED: &str = "unlabeled";

/// Names of the reserved columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub treatment: String,
    pub factual: String,
    pub counterfactual: String,
    pub mu0: String,
    pub mu1: String,
    pub split: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            treatment: "t".into(),
            factual: "y_factual".into(),
            counterfactual: "y_cfactual".into(),
            mu0: "mu0".into(),
            mu1: "mu1".into(),
            split: "split".into(),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub(crate) fn read_csv(reader: impl std::io::Read, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(1, "<header>", e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let find = |name: &str| header.iter().position(|h| h == name);
    let t_col = find(&schema.treatment)
        .ok_or_else(|| parse_err(1, &schema.treatment, "missing mandatory column".into()))?;
    let y_col = find(&schema.factual)
        .ok_or_else(|| parse_err(1, &schema.factual, "missing mandatory column".into()))?;
    let cf_col = find(&schema.counterfactual);
    let mu0_col = find(&schema.mu0);
    let mu1_col = find(&schema.mu1);
    if mu0_col.is_some() != mu1_col.is_some() {
        let missing = if mu0_col.is_none() { &schema.mu0 } else { &schema.mu1 };
        return Err(parse_err(1, missing, "mu0 and mu1 must appear together".into()));
    }
    let split_col = find(&schema.split);
    let reserved = [Some(t_col), Some(y_col), cf_col, mu0_col, mu1_col, split_col];
    let cov_cols: Vec<usize> = (0..header.len())
        .filter(|c| !reserved.contains(&Some(*c)))
        .collect();
    if cov_cols.is_empty() {
        return Err(parse_err(1, "<header>", "no covariate columns".into()));
    }

    let (mut x, mut t, mut y) = (Vec::new(), Vec::new(), Vec::new());
    let (mut cf, mut m0, mut m1, mut splits) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut unlabeled = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| parse_err(line, "<row>", e.to_string()))?;
        if record.len() != header.len() {
            return Err(parse_err(
                line,
                "<row>",
                format!("{} fields, header has {}", record.len(), header.len()),
            ));
        }
        let num = |c: usize| -> Result<f64> {
            let cell = &record[c];
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line, &header[c], format!("`{cell}` is not a finite number")))
        };
        let covs = cov_cols.iter().map(|&c| num(c)).collect::<Result<Vec<_>>>()?;

        let split_cell = split_col.map(|c| &record[c]);
        if split_cell == Some(UNLABELED) {
            unlabeled.extend(covs);
            continue;
        }
        x.extend(covs);
        let tv = num(t_col)?;
        if tv != 0.0 && tv != 1.0 {
            return Err(parse_err(line, &header[t_col], format!("treatment `{tv}` is not 0 or 1")));
        }
        t.push(tv as u8);
        y.push(num(y_col)?);
        if let Some(c) = cf_col {
            cf.push(num(c)?);
        }
        if let (Some(a), Some(b)) = (mu0_col, mu1_col) {
            m0.push(num(a)?);
            m1.push(num(b)?);
        }
        if let (Some(c), Some(cell)) = (split_col, split_cell) {
            let s: Split = cell
                .parse()
                .map_err(|_| parse_err(line, &header[c], format!("unknown split `{cell}`")))?;
            splits.push(s);
        }
    }

    let d = cov_cols.len();
    let n = t.len();
    let ds = Dataset {
        covariate_names: cov_cols.iter().map(|&c| header[c].clone()).collect(),
        x: Tensor::new(n, d, x)?,
        t,
        y,
        y_cf: cf_col.map(|_| cf),
        mu0: mu0_col.map(|_| m0),
        mu1: mu1_col.map(|_| m1),
        unlabeled_x: Tensor::new(unlabeled.len() / d, d, unlabeled)?,
        splits: split_col.map(|_| splits),
    };
    ds.validate()?;
    Ok(ds)
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_csv(ds, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn write_csv(ds: &Dataset, out: &mut impl Write) -> std::io::Result<()> {
    let schema = CsvSchema::default();
    let has_split = ds.splits.is_some() || ds.unlabeled_x.rows() > 0;
    let mut header = vec![schema.treatment.clone(), schema.factual.clone()];
    if ds.y_cf.is_some() {
        header.push(schema.counterfactual.clone());
    }
    if ds.has_ground_truth() {
        header.push(schema.mu0.clone());
        header.push(schema.mu1.clone());
    }
    if has_split {
        header.push(schema.split.clone());
    }
    header.extend(ds.covariate_names.iter().cloned());
    writeln!(out, "{}", header.join(","))?;

    for i in 0..ds.n() {
        let mut cells = vec![ds.t[i].to_string(), fmt_f64(ds.y[i])];
        if let Some(cf) = &ds.y_cf {
            cells.push(fmt_f64(cf[i]));
        }
        if let (Some(a), Some(b)) = (&ds.mu0, &ds.mu1) {
            cells.push(fmt_f64(a[i]));
            cells.push(fmt_f64(b[i]));
        }
        if has_split {
            let s = ds.splits.as_ref().map_or(Split::Train, |s| s[i]);
            cells.push(s.to_string());
        }
        cells.extend(ds.x.row(i).iter().map(|&v| fmt_f64(v)));
        writeln!(out, "{}", cells.join(","))?;
    }
    let outcome_cells = 2 + usize::from(ds.y_cf.is_some()) + 2 * usize::from(ds.has_ground_truth());
    for i in 0..ds.unlabeled_x.rows() {
        let mut cells = vec![String::new(); outcome_cells];
        cells.push(UNLABELED.to_string());
        cells.extend(ds.unlabeled_x.row(i).iter().map(|&v| fmt_f64(v)));
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_err(row: usize, column: &str, message: String) -> Error {
    Error::Parse {
        row,
        column: column.to_string(),
        message,
    }
}
