//! Trial datasets, CSV ingestion, nearest-neighbour matching and weight
//! diagnostics.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Dense row-major covariate matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Covariates {
    values: Vec<f64>,
    nrows: usize,
    ncols: usize,
}

impl Covariates {
    pub fn new(values: Vec<f64>, ncols: usize) -> Result<Self> {
        if ncols == 0 {
            if !values.is_empty() {
                return Err(Error::InvalidDataset(
                    "values given for zero columns".into(),
                ));
            }
            return Ok(Self::intercept_only(0));
        }
        if !values.len().is_multiple_of(ncols) {
            return Err(Error::InvalidDataset(format!(
                "{} values do not fill rows of {} columns",
                values.len(),
                ncols
            )));
        }
        Ok(Self {
            nrows: values.len() / ncols,
            values,
            ncols,
        })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * ncols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != ncols {
                return Err(Error::InvalidDataset("ragged covariate rows".into()));
            }
            values.extend_from_slice(r);
        }
        Ok(Self {
            values,
            nrows: rows.len(),
            ncols,
        })
    }

    /// `nrows` rows and no columns.
    pub fn intercept_only(nrows: usize) -> Self {
        Self {
            values: Vec::new(),
            nrows,
            ncols: 0,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.nrows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows().map(move |r| r[j])
    }

    pub fn select_rows(&self, ids: &[usize]) -> Self {
        let mut values = Vec::with_capacity(ids.len() * self.ncols);
        for &i in ids {
            values.extend_from_slice(self.row(i));
        }
        Self {
            values,
            nrows: ids.len(),
            ncols: self.ncols,
        }
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &Self) -> Result<Self> {
        if self.ncols != other.ncols {
            return Err(Error::InvalidDataset("column count mismatch".into()));
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Ok(Self {
            values,
            nrows: self.nrows + other.nrows,
            ncols: self.ncols,
        })
    }

    /// Column means and standard deviations (population, divisor n).
    pub fn column_moments(&self) -> Vec<(f64, f64)> {
        let n = self.nrows() as f64;
        (0..self.ncols)
            .map(|j| {
                let mean = self.column(j).sum::<f64>() / n;
                let var = self.column(j).map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                (mean, var.sqrt())
            })
            .collect()
    }

    /// Centres every column and scales it to unit variance. Constant
    /// columns are only centred.
    pub fn standardized(&self) -> Self {
        let moments = self.column_moments();
        let mut values = self.values.clone();
        for row in values.chunks_exact_mut(self.ncols.max(1)) {
            for (v, &(mean, sd)) in row.iter_mut().zip(&moments) {
                *v = if sd > 0.0 {
                    (*v - mean) / sd
                } else {
                    *v - mean
                };
            }
        }
        Self {
            values,
            nrows: self.nrows,
            ncols: self.ncols,
        }
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Columns of a trial table before the dataset-level invariants are checked.
#[derive(Clone, Debug, PartialEq)]
pub struct Records {
    pub y: Vec<u8>,
    pub a: Vec<u8>,
    pub s: Vec<u8>,
    pub x: Covariates,
    pub covariate_names: Vec<String>,
}

impl Records {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn select(&self, ids: &[usize]) -> Self {
        Self {
            y: ids.iter().map(|&i| self.y[i]).collect(),
            a: ids.iter().map(|&i| self.a[i]).collect(),
            s: ids.iter().map(|&i| self.s[i]).collect(),
            x: self.x.select_rows(ids),
            covariate_names: self.covariate_names.clone(),
        }
    }

    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.covariate_names != other.covariate_names {
            return Err(Error::InvalidDataset(
                "covariate columns differ between tables".into(),
            ));
        }
        let cat = |a: &[u8], b: &[u8]| a.iter().chain(b).copied().collect::<Vec<_>>();
        Ok(Self {
            y: cat(&self.y, &other.y),
            a: cat(&self.a, &other.a),
            s: cat(&self.s, &other.s),
            x: self.x.vstack(&other.x)?,
            covariate_names: self.covariate_names.clone(),
        })
    }
}

/// Outcomes, treatment, source indicator and covariates for the RCT and
/// external-control units of a hybrid trial. Unit ids are row positions.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialDataset {
    y: Vec<u8>,
    a: Vec<u8>,
    s: Vec<u8>,
    x: Covariates,
    covariate_names: Vec<String>,
}

fn check_binary(values: &[u8], column: &str) -> Result<()> {
    match values.iter().position(|&v| v > 1) {
        Some(row) => Err(Error::NonBinary {
            row,
            column: column.to_string(),
            value: values[row].to_string(),
        }),
        None => Ok(()),
    }
}

impl TrialDataset {
    pub fn new(y: Vec<u8>, a: Vec<u8>, s: Vec<u8>, x: Covariates) -> Result<Self> {
        let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Self::from_records(Records {
            y,
            a,
            s,
            x,
            covariate_names: names,
        })
    }

    pub fn from_records(records: Records) -> Result<Self> {
        let Records {
            y,
            a,
            s,
            x,
            covariate_names,
        } = records;
        let n = y.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if a.len() != n || s.len() != n || x.nrows() != n {
            return Err(Error::InvalidDataset("column lengths differ".into()));
        }
        if covariate_names.len() != x.ncols() {
            return Err(Error::InvalidDataset(
                "covariate name count mismatch".into(),
            ));
        }
        check_binary(&y, "y")?;
        check_binary(&a, "a")?;
        check_binary(&s, "s")?;
        if let Some(row) = (0..n).find(|&i| s[i] == 0 && a[i] == 1) {
            return Err(Error::TreatedExternalControl(row));
        }
        if x.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite covariate value".into()));
        }
        let ds = Self {
            y,
            a,
            s,
            x,
            covariate_names,
        };
        if ds.n_rct() < 2 {
            return Err(Error::InvalidDataset("need at least two RCT units".into()));
        }
        if ds.n_treated() == 0 {
            return Err(Error::EmptyArm(1));
        }
        if ds.n_rct_control() == 0 {
            return Err(Error::EmptyArm(0));
        }
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn p(&self) -> usize {
        self.x.ncols()
    }
    pub fn y(&self) -> &[u8] {
        &self.y
    }
    pub fn a(&self) -> &[u8] {
        &self.a
    }
    pub fn s(&self) -> &[u8] {
        &self.s
    }
    pub fn x(&self) -> &Covariates {
        &self.x
    }
    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn is_rct(&self, i: usize) -> bool {
        self.s[i] == 1
    }

    pub fn n_rct(&self) -> usize {
        self.s.iter().filter(|&&s| s == 1).count()
    }
    pub fn n_ec(&self) -> usize {
        self.n() - self.n_rct()
    }
    pub fn n_treated(&self) -> usize {
        (0..self.n())
            .filter(|&i| self.s[i] == 1 && self.a[i] == 1)
            .count()
    }
    pub fn n_rct_control(&self) -> usize {
        (0..self.n())
            .filter(|&i| self.s[i] == 1 && self.a[i] == 0)
            .count()
    }

    pub fn rct_ids(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.s[i] == 1).collect()
    }
    pub fn ec_ids(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.s[i] == 0).collect()
    }
    pub fn treated_ids(&self) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.s[i] == 1 && self.a[i] == 1)
            .collect()
    }
    pub fn rct_control_ids(&self) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.s[i] == 1 && self.a[i] == 0)
            .collect()
    }

    pub fn y_f64(&self, ids: &[usize]) -> Vec<f64> {
        ids.iter().map(|&i| f64::from(self.y[i])).collect()
    }

    /// Same units with a new treatment vector (used by randomization tests).
    pub fn with_assignment(&self, a: Vec<u8>) -> Result<Self> {
        if a.len() != self.n() {
            return Err(Error::InvalidDataset("assignment length mismatch".into()));
        }
        Self::from_records(Records {
            y: self.y.clone(),
            a,
            s: self.s.clone(),
            x: self.x.clone(),
            covariate_names: self.covariate_names.clone(),
        })
    }

    /// Dataset made of the given units (repeats allowed), renumbered 0..k.
    pub fn subset(&self, ids: &[usize]) -> Result<Self> {
        Self::from_records(self.records().select(ids))
    }

    pub fn records(&self) -> Records {
        Records {
            y: self.y.clone(),
            a: self.a.clone(),
            s: self.s.clone(),
            x: self.x.clone(),
            covariate_names: self.covariate_names.clone(),
        }
    }
}

/// Bootstrap resample stratified by the (S, A) cells, so every cell keeps
/// its size. Returned ids are sorted.
pub fn stratified_bootstrap_ids<R: rand::Rng + ?Sized>(
    ds: &TrialDataset,
    rng: &mut R,
) -> Vec<usize> {
    let mut out = Vec::with_capacity(ds.n());
    for (s, a) in [(1u8, 1u8), (1, 0), (0, 0)] {
        let cell: Vec<usize> = (0..ds.n())
            .filter(|&i| ds.s[i] == s && ds.a[i] == a)
            .collect();
        for _ in 0..cell.len() {
            out.push(cell[rng.random_range(0..cell.len())]);
        }
    }
    out.sort_unstable();
    out
}

/// Column names used when reading a trial CSV.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnSchema {
    pub y: String,
    pub a: String,
    pub s: String,
    /// Covariate columns in order; `None` takes every other column.
    pub covariates: Option<Vec<String>>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            y: "y".into(),
            a: "a".into(),
            s: "s".into(),
            covariates: None,
        }
    }
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c == "NA"
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len().is_multiple_of(2) {
        0.5 * (values[m - 1] + values[m])
    } else {
        values[m]
    })
}

fn parse_binary(cell: &str, row: usize, column: &str) -> Result<u8> {
    match cell.trim() {
        "0" | "0.0" => Ok(0),
        "1" | "1.0" => Ok(1),
        other => Err(Error::NonBinary {
            row,
            column: column.to_string(),
            value: other.to_string(),
        }),
    }
}

/// Parses a trial table. Binary columns are checked; missing covariate
/// cells are imputed by the column median of the observed cells.
pub fn read_records<R: Read>(reader: R, schema: &ColumnSchema) -> Result<Records> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (iy, ia, is) = (find(&schema.y)?, find(&schema.a)?, find(&schema.s)?);
    let cov_names: Vec<String> = match &schema.covariates {
        Some(names) => names.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(j, _)| ![iy, ia, is].contains(j))
            .map(|(_, h)| h.to_string())
            .collect(),
    };
    let cov_idx = cov_names
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;

    let (mut y, mut a, mut s) = (Vec::new(), Vec::new(), Vec::new());
    let mut cells: Vec<Option<f64>> = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |j: usize| rec.get(j).unwrap_or("");
        y.push(parse_binary(get(iy), row, &schema.y)?);
        a.push(parse_binary(get(ia), row, &schema.a)?);
        s.push(parse_binary(get(is), row, &schema.s)?);
        for (&j, name) in cov_idx.iter().zip(&cov_names) {
            let cell = get(j);
            if is_missing(cell) {
                cells.push(None);
            } else {
                let v: f64 = cell.trim().parse().map_err(|_| Error::NotNumeric {
                    row,
                    column: name.clone(),
                    value: cell.to_string(),
                })?;
                if !v.is_finite() {
                    return Err(Error::NotNumeric {
                        row,
                        column: name.clone(),
                        value: cell.to_string(),
                    });
                }
                cells.push(Some(v));
            }
        }
    }
    if y.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let p = cov_names.len();
    let n_rows = y.len();
    let mut values = vec![0.0; cells.len()];
    for (j, name) in cov_names.iter().enumerate() {
        let mut observed: Vec<f64> = cells.iter().skip(j).step_by(p).flatten().copied().collect();
        let fill = if observed.len() * p < cells.len() {
            median(&mut observed).ok_or_else(|| Error::NothingToImpute(name.clone()))?
        } else {
            0.0
        };
        for (i, cell) in cells.iter().skip(j).step_by(p).enumerate() {
            values[i * p + j] = cell.unwrap_or(fill);
        }
    }
    Ok(Records {
        y,
        a,
        s,
        x: if p == 0 {
            Covariates::intercept_only(n_rows)
        } else {
            Covariates::new(values, p)?
        },
        covariate_names: cov_names,
    })
}

pub fn read_csv<R: Read>(reader: R, schema: &ColumnSchema) -> Result<TrialDataset> {
    TrialDataset::from_records(read_records(reader, schema)?)
}

pub fn load_csv(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<TrialDataset> {
    read_csv(std::fs::File::open(path)?, schema)
}

pub fn load_records(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<Records> {
    read_records(std::fs::File::open(path)?, schema)
}

/// Writes `y,a,s,<covariates>` with shortest round-trip float formatting.
pub fn write_records<W: Write>(records: &Records, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["y".to_string(), "a".to_string(), "s".to_string()];
    header.extend(records.covariate_names.iter().cloned());
    w.write_record(&header)?;
    for i in 0..records.len() {
        let mut row = vec![
            records.y[i].to_string(),
            records.a[i].to_string(),
            records.s[i].to_string(),
        ];
        if records.x.ncols() > 0 {
            row.extend(records.x.row(i).iter().map(|v| v.to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv<W: Write>(ds: &TrialDataset, writer: W) -> Result<()> {
    write_records(&ds.records(), writer)
}

/// Greedy nearest-neighbour matching without replacement.
///
/// RCT units are processed in row order; each takes its `ratio` closest
/// unmatched pool units by Euclidean distance on covariates standardized
/// over the pooled RCT and pool rows. Ties go to the lower pool index.
/// Returns pool row indices in the order they were matched.
pub fn nn_match(rct: &Covariates, pool: &Covariates, ratio: usize) -> Result<Vec<usize>> {
    if ratio < 1 {
        return Err(Error::InvalidRatio);
    }
    let needed = ratio * rct.nrows();
    if pool.nrows() < needed {
        return Err(Error::PoolExhausted {
            needed,
            available: pool.nrows(),
        });
    }
    let pooled = rct.vstack(pool)?.standardized();
    let n_r = rct.nrows();
    let mut taken = vec![false; pool.nrows()];
    let mut selected = Vec::with_capacity(needed);
    for i in 0..n_r {
        let xi = pooled.row(i);
        let mut cand: Vec<(f64, usize)> = (0..pool.nrows())
            .filter(|&j| !taken[j])
            .map(|j| (euclidean(xi, pooled.row(n_r + j)), j))
            .collect();
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in cand.iter().take(ratio) {
            taken[j] = true;
            selected.push(j);
        }
    }
    debug_assert_eq!(
        selected.iter().collect::<HashSet<_>>().len(),
        selected.len()
    );
    Ok(selected)
}

/// Standardized mean difference of one covariate between two groups.
pub fn standardized_mean_difference(a: &[f64], b: &[f64]) -> f64 {
    let moments = |v: &[f64]| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        (m, var)
    };
    let (ma, va) = moments(a);
    let (mb, vb) = moments(b);
    let pooled = ((va + vb) / 2.0).sqrt();
    if pooled > 0.0 {
        (ma - mb) / pooled
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CovariateBalance {
    pub covariate: String,
    pub smd_before: f64,
    pub smd_after: f64,
}

/// Per-covariate standardized mean differences between the RCT and the
/// full pool (before) and between the RCT and the matched units (after).
pub fn balance_summary(
    rct: &Covariates,
    pool: &Covariates,
    matched: &[usize],
    names: &[String],
) -> Vec<CovariateBalance> {
    let after = pool.select_rows(matched);
    names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let r: Vec<f64> = rct.column(j).collect();
            let p: Vec<f64> = pool.column(j).collect();
            let m: Vec<f64> = after.column(j).collect();
            CovariateBalance {
                covariate: name.clone(),
                smd_before: standardized_mean_difference(&r, &p),
                smd_after: standardized_mean_difference(&r, &m),
            }
        })
        .collect()
}

/// Kish effective sample size, (Σw)² / Σw².
pub fn ess(weights: &[f64]) -> Result<f64> {
    if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(Error::InvalidDataset(
            "weights must be finite and nonnegative".into(),
        ));
    }
    let sum: f64 = weights.iter().sum();
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    if sum_sq == 0.0 {
        return Err(Error::ZeroWeights);
    }
    Ok(sum * sum / sum_sq)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightDiagnostics {
    pub weights: Vec<f64>,
    pub ess: f64,
    pub n_borrowed: usize,
}

impl WeightDiagnostics {
    /// Diagnostics for the given EC weights; all-zero weights give ESS 0.
    pub fn from_weights(weights: Vec<f64>) -> Self {
        let n_borrowed = weights.iter().filter(|&&w| w > 0.0).count();
        let ess = ess(&weights).unwrap_or(0.0);
        Self {
            weights,
            ess,
            n_borrowed,
        }
    }

    pub fn none() -> Self {
        Self {
            weights: Vec::new(),
            ess: 0.0,
            n_borrowed: 0,
        }
    }
}
