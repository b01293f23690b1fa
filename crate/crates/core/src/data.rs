//! Observed data, model configuration, CSV ingestion and centering.

use std::fs::File;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outcome, exposures, mediators and optional covariates, row-aligned by
/// observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    a: DMatrix<f64>,
    m: DMatrix<f64>,
    c: Option<DMatrix<f64>>,
}

impl Dataset {
    pub fn new(
        y: DVector<f64>,
        a: DMatrix<f64>,
        m: DMatrix<f64>,
        c: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(Error::Dimension(format!("need at least 2 observations, got {n}")));
        }
        if a.ncols() == 0 {
            return Err(Error::Dimension("exposure matrix has no columns".into()));
        }
        if m.ncols() == 0 {
            return Err(Error::Dimension("mediator matrix has no columns".into()));
        }
        let mut blocks: Vec<(&str, &DMatrix<f64>)> = vec![("a", &a), ("m", &m)];
        if let Some(c) = &c {
            blocks.push(("c", c));
        }
        for (name, block) in blocks {
            if block.nrows() != n {
                return Err(Error::Dimension(format!(
                    "block {name} has {} rows, outcome has {n}",
                    block.nrows()
                )));
            }
            if block.iter().any(|v| !v.is_finite()) {
                return Err(Error::Dimension(format!("block {name} contains non-finite values")));
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dimension("outcome contains non-finite values".into()));
        }
        Ok(Self { y, a, m, c })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn q(&self) -> usize {
        self.a.ncols()
    }
    pub fn p(&self) -> usize {
        self.m.ncols()
    }
    pub fn r(&self) -> usize {
        self.c.as_ref().map_or(0, |c| c.ncols())
    }
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }
    pub fn c(&self) -> Option<&DMatrix<f64>> {
        self.c.as_ref()
    }
}

/// Per-column means removed by [`center_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnMeans {
    pub y: f64,
    pub a: DVector<f64>,
    pub m: DVector<f64>,
    pub c: Option<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CenteredDataset {
    pub y: DVector<f64>,
    pub a: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub c: Option<DMatrix<f64>>,
    pub means: ColumnMeans,
}

impl CenteredDataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn q(&self) -> usize {
        self.a.ncols()
    }
    pub fn p(&self) -> usize {
        self.m.ncols()
    }
    pub fn r(&self) -> usize {
        self.c.as_ref().map_or(0, |c| c.ncols())
    }

    /// H = (A, C): exposures followed by covariates.
    pub fn exposures_and_covariates(&self) -> DMatrix<f64> {
        match &self.c {
            Some(c) => hstack(&[&self.a, c]),
            None => self.a.clone(),
        }
    }

    /// X = (A, C, M).
    pub fn design(&self) -> DMatrix<f64> {
        match &self.c {
            Some(c) => hstack(&[&self.a, c, &self.m]),
            None => hstack(&[&self.a, &self.m]),
        }
    }

    /// Adds the stored means back.
    pub fn uncenter(&self) -> Dataset {
        let add = |x: &DMatrix<f64>, mu: &DVector<f64>| {
            let mut out = x.clone();
            for (j, mut col) in out.column_iter_mut().enumerate() {
                col.add_scalar_mut(mu[j]);
            }
            out
        };
        Dataset {
            y: self.y.add_scalar(self.means.y),
            a: add(&self.a, &self.means.a),
            m: add(&self.m, &self.means.m),
            c: match (&self.c, &self.means.c) {
                (Some(c), Some(mu)) => Some(add(c, mu)),
                _ => None,
            },
        }
    }
}

pub(crate) fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks[0].nrows();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, cols);
    let mut at = 0;
    for b in blocks {
        out.columns_mut(at, b.ncols()).copy_from(*b);
        at += b.ncols();
    }
    out
}

/// Mean of a column, or exactly zero when the column is already centered up
/// to rounding. The snap keeps centering idempotent bit-for-bit.
fn column_mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut n = 0usize;
    let mut sum = 0.0;
    let mut comp = 0.0;
    let mut max_abs: f64 = 0.0;
    for v in values {
        n += 1;
        max_abs = max_abs.max(v.abs());
        // Kahan summation
        let t = v - comp;
        let s = sum + t;
        comp = (s - sum) - t;
        sum = s;
    }
    let mean = sum / n as f64;
    if mean.abs() <= 16.0 * f64::EPSILON * max_abs {
        0.0
    } else {
        mean
    }
}

fn center_matrix(x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let mut out = x.clone();
    let mut means = DVector::zeros(x.ncols());
    for (j, mut col) in out.column_iter_mut().enumerate() {
        // refine until the centered column's own mean snaps to zero
        for _ in 0..4 {
            let mu = column_mean(col.iter().copied());
            if mu == 0.0 {
                break;
            }
            means[j] += mu;
            col.add_scalar_mut(-mu);
        }
    }
    (out, means)
}

pub fn center_dataset(d: &Dataset) -> CenteredDataset {
    let y_mean = column_mean(d.y.iter().copied());
    let y = if y_mean != 0.0 { d.y.add_scalar(-y_mean) } else { d.y.clone() };
    let (a, a_means) = center_matrix(&d.a);
    let (m, m_means) = center_matrix(&d.m);
    let (c, c_means) = match &d.c {
        Some(c) => {
            let (cc, mu) = center_matrix(c);
            (Some(cc), Some(mu))
        }
        None => (None, None),
    };
    CenteredDataset {
        y,
        a,
        m,
        c,
        means: ColumnMeans {
            y: y_mean,
            a: a_means,
            m: m_means,
            c: c_means,
        },
    }
}

/// Re-wraps an already centered dataset.
impl From<&CenteredDataset> for Dataset {
    fn from(c: &CenteredDataset) -> Self {
        Dataset {
            y: c.y.clone(),
            a: c.a.clone(),
            m: c.m.clone(),
            c: c.c.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Bonferroni,
    ChiSquare,
}

impl TestMethod {
    pub fn label(self) -> &'static str {
        match self {
            TestMethod::Bonferroni => "bonf",
            TestMethod::ChiSquare => "chisq",
        }
    }
}

impl std::str::FromStr for TestMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bonf" | "bonferroni" => Ok(TestMethod::Bonferroni),
            "chisq" | "chi2" | "chi_square" | "chi-square" => Ok(TestMethod::ChiSquare),
            other => Err(Error::Config(format!("unknown test method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    SupportRestricted,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Variant::Full),
            "restricted" | "support_restricted" => Ok(Variant::SupportRestricted),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

/// How the projection-direction `lambda` is chosen from its base value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSearch {
    /// Escalate only when the base value is infeasible.
    Escalate,
    /// Escalate as needed; a base value feasible at once is then shrunk
    /// while the direction's standard error stays bounded.
    Refine,
}

impl std::str::FromStr for LambdaSearch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "escalate" => Ok(LambdaSearch::Escalate),
            "refine" => Ok(LambdaSearch::Refine),
            other => Err(Error::Config(format!("unknown lambda search {other:?}"))),
        }
    }
}

/// Tuning and decision settings for a single test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub alpha: f64,
    /// Ridge constant added as `tau / n` to the variance diagonal.
    pub tau: f64,
    pub method: TestMethod,
    pub variant: Variant,
    /// Multiplies the projection-direction base rate `sqrt(log d / n)`.
    pub lambda_scale: f64,
    pub lambda_search: LambdaSearch,
    /// Multiplies the projection-direction bound `log n`.
    pub mu_scale: f64,
    /// Multiplies the scaled-Lasso base penalty `sqrt(2 log d / n)`.
    pub lasso_scale: f64,
    /// Reserved for solver-internal randomization; no solver uses it today.
    pub seed: Option<u64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            tau: 1.0,
            method: TestMethod::Bonferroni,
            variant: Variant::Full,
            lambda_scale: 1.0,
            lambda_search: LambdaSearch::Refine,
            mu_scale: 1.0,
            lasso_scale: 1.0,
            seed: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("alpha must be in (0,1)".into()));
        }
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return Err(Error::Config("tau must be >= 0".into()));
        }
        for (name, v) in [
            ("lambda_scale", self.lambda_scale),
            ("mu_scale", self.mu_scale),
            ("lasso_scale", self.lasso_scale),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Locations of the per-block CSV files.
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub y: PathBuf,
    pub a: PathBuf,
    pub m: PathBuf,
    pub c: Option<PathBuf>,
}

/// Reads a numeric CSV into a matrix. A first row containing any non-numeric
/// field is taken as a header.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: Vec<Option<f64>> = record.iter().map(|f| f.parse::<f64>().ok()).collect();
        if idx == 0 && parsed.iter().any(Option::is_none) {
            // header row
            continue;
        }
        let mut row = Vec::with_capacity(parsed.len());
        for (col, (value, raw)) in parsed.iter().zip(record.iter()).enumerate() {
            match value {
                Some(v) if v.is_finite() => row.push(*v),
                Some(_) => {
                    return Err(Error::NonFinite {
                        path: path.to_path_buf(),
                        row: line,
                        col: col + 1,
                    })
                }
                None => {
                    return Err(Error::NonNumeric {
                        path: path.to_path_buf(),
                        row: line,
                        col: col + 1,
                        value: raw.to_string(),
                    })
                }
            }
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Ragged {
                    path: path.to_path_buf(),
                    row: line,
                    expected: w,
                    found: row.len(),
                })
            }
            _ => {}
        }
        rows.push(row);
    }
    let Some(width) = width else {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    };
    Ok(DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]))
}

pub fn load_dataset(paths: &DatasetPaths) -> Result<Dataset> {
    let y = read_matrix_csv(&paths.y)?;
    if y.ncols() != 1 {
        return Err(Error::Dimension(format!(
            "{} must have exactly one column, found {}",
            paths.y.display(),
            y.ncols()
        )));
    }
    let n = y.nrows();
    let check = |path: &Path, x: &DMatrix<f64>| -> Result<()> {
        if x.nrows() != n {
            return Err(Error::RowCountMismatch {
                path: path.to_path_buf(),
                expected: n,
                found: x.nrows(),
            });
        }
        Ok(())
    };
    let a = read_matrix_csv(&paths.a)?;
    check(&paths.a, &a)?;
    let m = read_matrix_csv(&paths.m)?;
    check(&paths.m, &m)?;
    let c = match &paths.c {
        Some(p) => {
            let c = read_matrix_csv(p)?;
            check(p, &c)?;
            Some(c)
        }
        None => None,
    };
    Dataset::new(y.column(0).into_owned(), a, m, c)
}

/// Number of coordinates whose `estimate ± 2·se` interval excludes zero.
pub fn sparsity_surrogate(beta_hat: &[f64], se: &[f64]) -> Result<usize> {
    if beta_hat.len() != se.len() {
        return Err(Error::Dimension(format!(
            "{} estimates but {} standard errors",
            beta_hat.len(),
            se.len()
        )));
    }
    let mut count = 0;
    for (j, (&b, &s)) in beta_hat.iter().zip(se).enumerate() {
        if !(s > 0.0) {
            return Err(Error::DegenerateRegression { index: j });
        }
        if b - 2.0 * s >= 0.0 {
            count += 1;
        }
        if b + 2.0 * s <= 0.0 {
            count += 1;
        }
    }
    Ok(count)
}
