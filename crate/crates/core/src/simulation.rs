//! Synthetic scenarios and seeded Monte Carlo size/power experiments.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ModelConfig, TestMethod, Variant};
use crate::error::{Error, Result};
use crate::mediation::fit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exposure {
    /// Bernoulli(0.5) entries.
    #[serde(alias = "bernoulli")]
    BernoulliHalf,
    /// N(0, 0.5^2) entries.
    #[serde(alias = "gaussian")]
    GaussianHalfSd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovKind {
    Ar1,
    #[serde(alias = "cs")]
    CompoundSymmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaMKind {
    Zero,
    Hard,
    CappedL1,
    Decaying,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaAKind {
    Zero,
    Sparse,
    Dense,
    Power,
}

/// Which coefficient formulas apply: the size study or the power study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Size,
    Power,
}

impl Exposure {
    pub fn label(self) -> &'static str {
        match self {
            Exposure::BernoulliHalf => "bernoulli",
            Exposure::GaussianHalfSd => "gaussian",
        }
    }
}

impl CovKind {
    pub fn label(self) -> &'static str {
        match self {
            CovKind::Ar1 => "ar1",
            CovKind::CompoundSymmetric => "cs",
        }
    }
}

impl ThetaMKind {
    pub fn label(self) -> &'static str {
        match self {
            ThetaMKind::Zero => "zero",
            ThetaMKind::Hard => "hard",
            ThetaMKind::CappedL1 => "capped_l1",
            ThetaMKind::Decaying => "decaying",
        }
    }
}

impl BetaAKind {
    pub fn label(self) -> &'static str {
        match self {
            BetaAKind::Zero => "zero",
            BetaAKind::Sparse => "sparse",
            BetaAKind::Dense => "dense",
            BetaAKind::Power => "power",
        }
    }
}

impl Regime {
    pub fn label(self) -> &'static str {
        match self {
            Regime::Size => "size",
            Regime::Power => "power",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub exposure: Exposure,
    pub cov_kind: CovKind,
    pub theta_m_kind: ThetaMKind,
    pub beta_a_kind: BetaAKind,
    pub regime: Regime,
    /// `theta_A = c0 * 1_q`
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub s: usize,
}

/// 0.5 for a single exposure, 0.3 otherwise.
pub fn default_c0(q: usize) -> f64 {
    if q == 1 {
        0.5
    } else {
        0.3
    }
}

impl Scenario {
    /// Size-study scenario with `p = n`, Bernoulli exposures and `s = 5`.
    pub fn size(n: usize, q: usize, cov_kind: CovKind, theta_m_kind: ThetaMKind, beta_a_kind: BetaAKind) -> Self {
        Self {
            n,
            p: n,
            q,
            exposure: Exposure::BernoulliHalf,
            cov_kind,
            theta_m_kind,
            beta_a_kind,
            regime: Regime::Size,
            c0: default_c0(q),
            c1: 1.0,
            c2: 1.0,
            s: 5,
        }
    }

    /// Power-study scenario: power-form exposure coefficients, AR(1)
    /// errors, `q = 1`.
    pub fn power(n: usize, theta_m_kind: ThetaMKind, c1: f64, c2: f64) -> Self {
        Self {
            n,
            p: n,
            q: 1,
            exposure: Exposure::BernoulliHalf,
            cov_kind: CovKind::Ar1,
            theta_m_kind,
            beta_a_kind: BetaAKind::Power,
            regime: Regime::Power,
            c0: default_c0(1),
            c1,
            c2,
            s: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p < 1 || self.q < 1 {
            return Err(Error::Config(format!(
                "scenario sizes must satisfy n >= 2, p >= 1, q >= 1 (got n={}, p={}, q={})",
                self.n, self.p, self.q
            )));
        }
        if self.n <= self.q {
            return Err(Error::Config("scenario needs n > q".into()));
        }
        if 2 * self.s > self.p {
            return Err(Error::Config(format!("s={} exceeds p/2 (p={})", self.s, self.p)));
        }
        for (name, v) in [("c0", self.c0), ("c1", self.c1), ("c2", self.c2)] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        if self.c1 < 0.0 || self.c2 < 0.0 {
            return Err(Error::Config("c1 and c2 must be >= 0".into()));
        }
        Ok(())
    }
}

pub fn make_covariance(kind: CovKind, p: usize) -> DMatrix<f64> {
    match kind {
        CovKind::Ar1 => DMatrix::from_fn(p, p, |i, j| 0.5f64.powi(i.abs_diff(j) as i32)),
        CovKind::CompoundSymmetric => DMatrix::from_fn(p, p, |i, j| if i == j { 8.0 } else { 6.4 }),
    }
}

/// Mediator-outcome coefficients, with `k` one-based in the formulas.
pub fn make_theta_m(kind: ThetaMKind, regime: Regime, p: usize, s: usize, c2: f64, n: usize) -> DVector<f64> {
    let lambda0 = (2.0 * (p as f64).ln() / n as f64).sqrt();
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    DVector::from_fn(p, |i, _| {
        let k = i + 1;
        let kf = k as f64;
        match (kind, regime) {
            (ThetaMKind::Zero, _) => 0.0,
            (ThetaMKind::Hard, Regime::Size) => 0.2 * kf * ind(k <= s),
            (ThetaMKind::Hard, Regime::Power) => c2 * 0.3 * kf * ind(k <= s),
            (ThetaMKind::CappedL1, Regime::Size) => {
                0.2 * kf * ind(k <= s) + 0.1 * lambda0 * ind(2 * s < k && k <= p / 5 + s)
            }
            (ThetaMKind::CappedL1, Regime::Power) => {
                c2 * (0.3 * kf * ind(k <= s) + 0.1 * lambda0 * ind(s < k && k <= p / 5))
            }
            (ThetaMKind::Decaying, Regime::Size) => {
                0.2 * kf * ind(k <= s) + if k > 2 * s { ((k - s) as f64).powf(-1.5) } else { 0.0 }
            }
            (ThetaMKind::Decaying, Regime::Power) => {
                c2 * (0.3 * kf * ind(k <= s) + if k > s { kf.powf(-1.5) } else { 0.0 })
            }
        }
    })
}

/// `p x q` exposure-mediator coefficients.
pub fn make_beta_a(kind: BetaAKind, p: usize, q: usize, s: usize, c1: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut beta = DMatrix::zeros(p, q);
    match kind {
        BetaAKind::Zero => {}
        BetaAKind::Sparse => {
            for j in 0..q {
                let mut kappa: Vec<usize> = (1..=s).collect();
                kappa.shuffle(rng);
                for (offset, &kv) in kappa.iter().enumerate() {
                    if s + offset < p {
                        beta[(s + offset, j)] = 0.2 * kv as f64;
                    }
                }
            }
        }
        BetaAKind::Dense => {
            for k in (s + 1)..=(p / 2) {
                for j in 0..q {
                    beta[(k - 1, j)] = 0.2;
                }
            }
        }
        BetaAKind::Power => {
            let w_dist = Normal::new(0.0, 0.1).expect("valid normal");
            for k in 1..=p {
                let v = if k <= s { 0.3 * k as f64 } else { w_dist.sample(rng) };
                for j in 0..q {
                    beta[(k - 1, j)] = c1 * v;
                }
            }
        }
    }
    beta
}

/// Generating quantities kept for oracle checks.
#[derive(Debug, Clone)]
pub struct Truth {
    pub theta_m: DVector<f64>,
    /// `p x q`
    pub beta_a: DMatrix<f64>,
    pub theta_a: DVector<f64>,
    /// `n x p` mediator errors.
    pub e: DMatrix<f64>,
    pub z: DVector<f64>,
    /// `beta_a' theta_m`
    pub gamma: DVector<f64>,
}

/// Builds `M = A beta_a' + E` and `Y = A theta_a + M theta_m + Z`.
pub fn assemble(
    a: DMatrix<f64>,
    beta_a: DMatrix<f64>,
    theta_a: DVector<f64>,
    theta_m: DVector<f64>,
    e: DMatrix<f64>,
    z: DVector<f64>,
) -> Result<(Dataset, Truth)> {
    let m = &a * beta_a.transpose() + &e;
    let y = &a * &theta_a + &m * &theta_m + &z;
    let dataset = Dataset::new(y, a, m, None)?;
    let gamma = beta_a.tr_mul(&theta_m);
    Ok((
        dataset,
        Truth {
            theta_m,
            beta_a,
            theta_a,
            e,
            z,
            gamma,
        },
    ))
}

/// Per-scenario state reused across replications.
#[derive(Debug, Clone)]
pub struct Generator {
    pub scenario: Scenario,
    /// Lower factor of the mediator error covariance.
    factor: DMatrix<f64>,
    theta_m: DVector<f64>,
}

impl Generator {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let sigma = make_covariance(scenario.cov_kind, scenario.p);
        let factor = sigma.cholesky().ok_or(Error::NotPositiveDefinite)?.l();
        let theta_m = make_theta_m(
            scenario.theta_m_kind,
            scenario.regime,
            scenario.p,
            scenario.s,
            scenario.c2,
            scenario.n,
        );
        Ok(Self {
            scenario: scenario.clone(),
            factor,
            theta_m,
        })
    }

    pub fn generate(&self, seed: u64) -> Result<(Dataset, Truth)> {
        let sc = &self.scenario;
        let (n, p, q) = (sc.n, sc.p, sc.q);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let beta_a = make_beta_a(sc.beta_a_kind, p, q, sc.s, sc.c1, &mut rng);
        let a = match sc.exposure {
            Exposure::BernoulliHalf => {
                let b = Bernoulli::new(0.5).expect("valid probability");
                DMatrix::from_fn(n, q, |_, _| if b.sample(&mut rng) { 1.0 } else { 0.0 })
            }
            Exposure::GaussianHalfSd => DMatrix::from_fn(n, q, |_, _| {
                let v: f64 = StandardNormal.sample(&mut rng);
                0.5 * v
            }),
        };
        let raw = DMatrix::<f64>::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let e = raw * self.factor.transpose();
        let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let theta_a = DVector::from_element(q, sc.c0);
        assemble(a, beta_a, theta_a, self.theta_m.clone(), e, z)
    }
}

pub fn generate_dataset(scenario: &Scenario, seed: u64) -> Result<(Dataset, Truth)> {
    Generator::new(scenario)?.generate(seed)
}

/// A decision rule paired with a ridge constant, e.g. `bonf-1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodSpec {
    pub method: TestMethod,
    pub tau: f64,
}

impl MethodSpec {
    pub fn label(&self) -> String {
        format!("{}-{}", self.method.label(), self.tau)
    }
}

impl std::str::FromStr for MethodSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (m, t) = s
            .rsplit_once('-')
            .ok_or_else(|| Error::Config(format!("method {s:?} should look like bonf-1 or chisq-0")))?;
        let tau: f64 = t
            .parse()
            .map_err(|_| Error::Config(format!("bad ridge constant in method {s:?}")))?;
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::Config(format!("ridge constant in {s:?} must be >= 0")));
        }
        Ok(Self { method: m.parse()?, tau })
    }
}

#[derive(Debug, Clone)]
pub struct MonteCarloResult {
    pub scenario: Scenario,
    pub method: MethodSpec,
    pub reps: usize,
    pub rejections: usize,
    /// Replications where the fit or the test failed; they count as
    /// non-rejections.
    pub failures: usize,
    pub rate: f64,
    pub seed: u64,
    pub wall_time: Duration,
}

/// Largest tolerated share of failed replications.
pub const MAX_FAILURE_SHARE: f64 = 0.02;

/// Runs every method on the same replications. Replication `r` (1-based)
/// uses seed `base_seed + r`; results do not depend on scheduling.
pub fn run_monte_carlo_methods(
    scenario: &Scenario,
    methods: &[MethodSpec],
    reps: usize,
    base_seed: u64,
    config: &ModelConfig,
) -> Result<Vec<MonteCarloResult>> {
    if reps == 0 {
        return Err(Error::Config("reps must be at least 1".into()));
    }
    if methods.is_empty() {
        return Err(Error::Config("no methods requested".into()));
    }
    config.validate()?;
    let generator = Generator::new(scenario)?;
    let start = Instant::now();
    let outcomes: Vec<Vec<std::result::Result<bool, String>>> = (1..=reps as u64)
        .into_par_iter()
        .map(|r| replicate(&generator, methods, base_seed.wrapping_add(r), config))
        .collect();
    let wall_time = start.elapsed();

    let mut results = Vec::with_capacity(methods.len());
    for (k, spec) in methods.iter().enumerate() {
        let mut rejections = 0;
        let mut failures = 0;
        let mut first = None;
        for rep in &outcomes {
            match &rep[k] {
                Ok(true) => rejections += 1,
                Ok(false) => {}
                Err(msg) => {
                    failures += 1;
                    first.get_or_insert_with(|| msg.clone());
                }
            }
        }
        if failures as f64 > MAX_FAILURE_SHARE * reps as f64 {
            return Err(Error::TooManyFailures {
                failures,
                reps,
                first: first.unwrap_or_default(),
            });
        }
        results.push(MonteCarloResult {
            scenario: scenario.clone(),
            method: *spec,
            reps,
            rejections,
            failures,
            rate: rejections as f64 / reps as f64,
            seed: base_seed,
            wall_time,
        });
    }
    Ok(results)
}

fn replicate(
    generator: &Generator,
    methods: &[MethodSpec],
    seed: u64,
    config: &ModelConfig,
) -> Vec<std::result::Result<bool, String>> {
    let fitted = generator
        .generate(seed)
        .and_then(|(data, _)| fit(&data, config));
    match fitted {
        Err(e) => vec![Err(format!("seed {seed}: {e}")); methods.len()],
        Ok(model) => methods
            .iter()
            .map(|m| {
                model
                    .test(m.tau, m.method, config.alpha)
                    .map(|(o, _)| o.reject)
                    .map_err(|e| format!("seed {seed}: {e}"))
            })
            .collect(),
    }
}

pub fn run_monte_carlo(
    scenario: &Scenario,
    method: MethodSpec,
    reps: usize,
    base_seed: u64,
    config: &ModelConfig,
) -> Result<MonteCarloResult> {
    Ok(run_monte_carlo_methods(scenario, &[method], reps, base_seed, config)?.remove(0))
}

// ---------------------------------------------------------------------------
// Tables

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Text,
}

impl std::str::FromStr for TableFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "text" => Ok(TableFormat::Text),
            other => Err(Error::Config(format!("unknown table format {other:?}"))),
        }
    }
}

/// Scenario key columns, in table order.
pub const KEY_COLUMNS: [&str; 11] = [
    "sparsity", "case", "cov", "exposure", "regime", "q", "n", "p", "c1", "c2", "reps",
];

/// One table row: scenario keys plus a rate per method column.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub keys: Vec<String>,
    pub seed: String,
    pub failures: usize,
    pub rates: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub methods: Vec<String>,
    pub rows: Vec<TableRow>,
}

fn scenario_keys(r: &MonteCarloResult) -> Vec<String> {
    let s = &r.scenario;
    vec![
        s.theta_m_kind.label().into(),
        s.beta_a_kind.label().into(),
        s.cov_kind.label().into(),
        s.exposure.label().into(),
        s.regime.label().into(),
        s.q.to_string(),
        s.n.to_string(),
        s.p.to_string(),
        s.c1.to_string(),
        s.c2.to_string(),
        r.reps.to_string(),
    ]
}

impl Table {
    pub fn from_results(results: &[MonteCarloResult]) -> Self {
        let mut table = Table::default();
        for r in results {
            let label = r.method.label();
            if !table.methods.contains(&label) {
                table.methods.push(label.clone());
            }
            let keys = scenario_keys(r);
            let seed = r.seed.to_string();
            let row = match table.rows.iter_mut().position(|row| row.keys == keys && row.seed == seed) {
                Some(i) => &mut table.rows[i],
                None => {
                    table.rows.push(TableRow {
                        keys,
                        seed,
                        failures: 0,
                        rates: BTreeMap::new(),
                    });
                    table.rows.last_mut().expect("just pushed")
                }
            };
            row.failures = row.failures.max(r.failures);
            row.rates.insert(label, r.rate);
        }
        table
    }

    fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = KEY_COLUMNS.iter().map(|s| s.to_string()).collect();
        h.push("seed".into());
        h.push("failures".into());
        h.extend(self.methods.iter().cloned());
        h
    }

    fn cells(&self, row: &TableRow, rate: impl Fn(f64) -> String) -> Vec<String> {
        let mut cells = row.keys.clone();
        cells.push(row.seed.clone());
        cells.push(row.failures.to_string());
        for m in &self.methods {
            cells.push(row.rates.get(m).map(|v| rate(*v)).unwrap_or_default());
        }
        cells
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header()).expect("in-memory write");
        for row in &self.rows {
            w.write_record(self.cells(row, |v| v.to_string())).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
    }

    /// Columns padded to equal width, rates to three decimals.
    pub fn to_text(&self) -> String {
        let header = self.header();
        let body: Vec<Vec<String>> = self.rows.iter().map(|r| self.cells(r, |v| format!("{v:.3}"))).collect();
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for row in &body {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |cells: &[String], out: &mut String| {
            let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&header, &mut out);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        let _ = writeln!(out, "{}", rule.join("  "));
        for row in &body {
            line(row, &mut out);
        }
        out
    }

    /// Orders rows by regime, then the remaining keys; numeric keys compare
    /// as numbers.
    pub fn sort(&mut self) {
        let regime = KEY_COLUMNS.iter().position(|k| *k == "regime").expect("regime column");
        let key = |row: &TableRow| {
            let mut order: Vec<usize> = vec![regime];
            order.extend((0..KEY_COLUMNS.len()).filter(|&i| i != regime));
            order
                .into_iter()
                .map(|i| &row.keys[i])
                .chain(std::iter::once(&row.seed))
                .map(|s| match s.parse::<f64>() {
                    Ok(v) => (0u8, v, String::new()),
                    Err(_) => (1u8, 0.0, s.clone()),
                })
                .collect::<Vec<_>>()
        };
        self.rows
            .sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap_or(std::cmp::Ordering::Equal));
    }

    pub fn render(&self, format: TableFormat) -> String {
        match format {
            TableFormat::Csv => self.to_csv(),
            TableFormat::Text => self.to_text(),
        }
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| Error::Config(format!("bad table header: {e}")))?
            .iter()
            .map(String::from)
            .collect();
        let fixed = KEY_COLUMNS.len() + 2;
        if header.len() < fixed
            || header[..KEY_COLUMNS.len()].iter().zip(KEY_COLUMNS).any(|(a, b)| a != b)
            || header[KEY_COLUMNS.len()] != "seed"
            || header[KEY_COLUMNS.len() + 1] != "failures"
        {
            return Err(Error::Config("not a result table: unexpected header".into()));
        }
        let methods = header[fixed..].to_vec();
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Config(format!("bad table row {}: {e}", i + 2)))?;
            if rec.len() != header.len() {
                return Err(Error::Config(format!("table row {} has {} cells", i + 2, rec.len())));
            }
            let failures = rec[KEY_COLUMNS.len() + 1]
                .parse()
                .map_err(|_| Error::Config(format!("bad failures count in row {}", i + 2)))?;
            let mut rates = BTreeMap::new();
            for (m, cell) in methods.iter().zip(rec.iter().skip(fixed)) {
                if cell.is_empty() {
                    continue;
                }
                let v: f64 = cell
                    .parse()
                    .map_err(|_| Error::Config(format!("bad rate {cell:?} in row {}", i + 2)))?;
                rates.insert(m.clone(), v);
            }
            rows.push(TableRow {
                keys: rec.iter().take(KEY_COLUMNS.len()).map(String::from).collect(),
                seed: rec[KEY_COLUMNS.len()].to_string(),
                failures,
                rates,
            });
        }
        Ok(Table { methods, rows })
    }

    /// Merges `other` into `self`. A cell present in both is overwritten
    /// by `other`; each such collision is returned as a warning.
    pub fn merge(&mut self, other: &Table) -> Vec<String> {
        let mut warnings = Vec::new();
        for m in &other.methods {
            if !self.methods.contains(m) {
                self.methods.push(m.clone());
            }
        }
        let index: HashMap<(Vec<String>, String), usize> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| ((r.keys.clone(), r.seed.clone()), i))
            .collect();
        for row in &other.rows {
            match index.get(&(row.keys.clone(), row.seed.clone())) {
                Some(&i) => {
                    let target = &mut self.rows[i];
                    for (m, v) in &row.rates {
                        if let Some(old) = target.rates.insert(m.clone(), *v) {
                            warnings.push(format!(
                                "duplicate result for {} [{}]: {old} replaced by {v}",
                                row.keys.join("/"),
                                m
                            ));
                        }
                    }
                    target.failures = target.failures.max(row.failures);
                }
                None => self.rows.push(row.clone()),
            }
        }
        warnings
    }
}

pub fn emit_table(results: &[MonteCarloResult], format: TableFormat) -> String {
    Table::from_results(results).render(format)
}

// ---------------------------------------------------------------------------
// Scenario files

/// Parsed scenario file: scenarios, methods and optional run settings.
#[derive(Debug, Clone)]
pub struct SimulationPlan {
    pub scenarios: Vec<Scenario>,
    pub methods: Vec<MethodSpec>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub config: ModelConfig,
}

#[derive(Debug, Deserialize)]
struct PlanFile {
    reps: Option<i64>,
    seed: Option<u64>,
    methods: Option<Vec<String>>,
    alpha: Option<f64>,
    lambda_scale: Option<f64>,
    lambda_search: Option<String>,
    mu_scale: Option<f64>,
    lasso_scale: Option<f64>,
    variant: Option<String>,
    #[serde(default)]
    scenario: Vec<ScenarioFile>,
}

#[derive(Debug, Deserialize)]
struct ScenarioFile {
    n: usize,
    p: Option<usize>,
    q: Option<usize>,
    exposure: Option<Exposure>,
    covariance: Option<CovKind>,
    theta_m: Option<ThetaMKind>,
    beta_a: Option<BetaAKind>,
    regime: Option<Regime>,
    c0: Option<f64>,
    c1: Option<f64>,
    c2: Option<f64>,
    s: Option<usize>,
}

const PLAN_KEYS: [&str; 10] = [
    "reps",
    "seed",
    "methods",
    "alpha",
    "lambda_scale",
    "lambda_search",
    "mu_scale",
    "lasso_scale",
    "variant",
    "scenario",
];
const SCENARIO_KEYS: [&str; 12] = [
    "n", "p", "q", "exposure", "covariance", "theta_m", "beta_a", "regime", "c0", "c1", "c2", "s",
];

fn unknown_keys(doc: &toml::Table) -> Vec<String> {
    let mut unknown = Vec::new();
    for (k, v) in doc {
        if !PLAN_KEYS.contains(&k.as_str()) {
            unknown.push(k.clone());
        } else if k == "scenario" {
            if let Some(list) = v.as_array() {
                for (i, item) in list.iter().enumerate() {
                    if let Some(t) = item.as_table() {
                        for key in t.keys() {
                            if !SCENARIO_KEYS.contains(&key.as_str()) {
                                unknown.push(format!("scenario[{}].{key}", i + 1));
                            }
                        }
                    }
                }
            }
        }
    }
    unknown
}

impl SimulationPlan {
    pub fn from_toml(text: &str) -> Result<Self> {
        let doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("scenario file: {}", e.message())))?;
        let unknown = unknown_keys(&doc);
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown keys in scenario file: {}", unknown.join(", "))));
        }
        let file: PlanFile = toml::from_str(text).map_err(|e| Error::Config(format!("scenario file: {}", e.message())))?;
        if file.scenario.is_empty() {
            return Err(Error::Config("scenario file defines no [[scenario]] entries".into()));
        }
        let reps = match file.reps {
            Some(r) if r < 1 => return Err(Error::Config("reps must be at least 1".into())),
            Some(r) => Some(r as usize),
            None => None,
        };
        let methods = match file.methods {
            Some(list) => list.iter().map(|m| m.parse()).collect::<Result<Vec<MethodSpec>>>()?,
            None => vec![MethodSpec {
                method: TestMethod::Bonferroni,
                tau: 1.0,
            }],
        };
        let mut config = ModelConfig::default();
        if let Some(a) = file.alpha {
            config.alpha = a;
        }
        if let Some(v) = file.lambda_scale {
            config.lambda_scale = v;
        }
        if let Some(v) = file.lambda_search {
            config.lambda_search = v.parse()?;
        }
        if let Some(v) = file.mu_scale {
            config.mu_scale = v;
        }
        if let Some(v) = file.lasso_scale {
            config.lasso_scale = v;
        }
        if let Some(v) = file.variant {
            config.variant = v.parse::<Variant>()?;
        }
        config.validate()?;
        let scenarios = file
            .scenario
            .into_iter()
            .map(|s| {
                let q = s.q.unwrap_or(1);
                let beta_a = s.beta_a.unwrap_or(BetaAKind::Zero);
                let sc = Scenario {
                    n: s.n,
                    p: s.p.unwrap_or(s.n),
                    q,
                    exposure: s.exposure.unwrap_or(Exposure::BernoulliHalf),
                    cov_kind: s.covariance.unwrap_or(CovKind::Ar1),
                    theta_m_kind: s.theta_m.unwrap_or(ThetaMKind::Zero),
                    beta_a_kind: beta_a,
                    regime: s.regime.unwrap_or(if beta_a == BetaAKind::Power {
                        Regime::Power
                    } else {
                        Regime::Size
                    }),
                    c0: s.c0.unwrap_or(default_c0(q)),
                    c1: s.c1.unwrap_or(1.0),
                    c2: s.c2.unwrap_or(1.0),
                    s: s.s.unwrap_or(5),
                };
                sc.validate()?;
                Ok(sc)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scenarios,
            methods,
            reps,
            seed: file.seed,
            config,
        })
    }
}
