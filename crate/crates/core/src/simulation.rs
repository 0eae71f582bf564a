//! Synthetic data-generating processes and the Monte Carlo harness that
//! estimates FDR and power per scenario cell and method.
//!
//! Every replication draws its own RNG stream from
//! `(cell seed, cell fingerprint, rep index)`, so a cell's metrics do not
//! depend on its position in the grid, on the other cells, or on the number
//! of worker threads.

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::baselines::{adadetect_generic, cqr_report, global_report, CqrConfig};
use crate::conformal::{card_analyze, CardConfig, PValueReport};
use crate::dataset::Dataset;
use crate::error::{CardError, Result};
use crate::exec::{derive_seed, fingerprint, rng_from_seed, Exec, KahanSum};
use crate::propensity::PropensityMode;
use crate::responder::ResponderForestParams;
use crate::trees::ForestParams;

pub const METRICS_SCHEMA: &str = "card-metrics/1";

pub const METRICS_COLUMNS: [&str; 17] = [
    "scenario",
    "n",
    "p",
    "rho",
    "sigma",
    "signal",
    "alpha",
    "seed",
    "method",
    "reps",
    "errors",
    "fdr_mean",
    "fdr_se",
    "power_mean",
    "power_se",
    "cond_null_rej_mean",
    "cond_null_rej_se",
];

/// Treatment-effect modifier `1(x > 0.5) * 2 / (1 + exp(-12 (x - 0.5)))`.
pub fn signal_f(x: f64) -> f64 {
    if x > 0.5 {
        2.0 / (1.0 + (-12.0 * (x - 0.5)).exp())
    } else {
        0.0
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Propensity of the observational design.
pub fn observational_propensity(x1: f64) -> f64 {
    1.0 / (1.0 + (1.75 * x1 - 0.825).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Rct,
    Observational,
    AppendixA,
    AppendixC,
    GlobalNull,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Rct => "rct",
            Scenario::Observational => "observational",
            Scenario::AppendixA => "appendix_a",
            Scenario::AppendixC => "appendix_c",
            Scenario::GlobalNull => "global_null",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [
            Scenario::Rct,
            Scenario::Observational,
            Scenario::AppendixA,
            Scenario::AppendixC,
            Scenario::GlobalNull,
        ]
        .into_iter()
        .find(|v| v.name() == s)
        .ok_or_else(|| CardError::Config(format!("unknown scenario `{s}`")))
    }

    /// Single-covariate designs.
    fn univariate(self) -> bool {
        matches!(self, Scenario::AppendixA | Scenario::AppendixC)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    Homoscedastic,
    /// Noise SD `-2 ln(x1)`.
    Heteroscedastic,
}

impl SigmaMode {
    pub fn name(self) -> &'static str {
        match self {
            SigmaMode::Homoscedastic => "homoscedastic",
            SigmaMode::Heteroscedastic => "heteroscedastic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "homoscedastic" => Ok(SigmaMode::Homoscedastic),
            "heteroscedastic" => Ok(SigmaMode::Heteroscedastic),
            other => Err(CardError::Config(format!("unknown sigma mode `{other}`"))),
        }
    }

    #[inline]
    fn sd(self, x1: f64) -> f64 {
        match self {
            SigmaMode::Homoscedastic => 1.0,
            SigmaMode::Heteroscedastic => -2.0 * x1.ln(),
        }
    }
}

/// One simulation grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub p: usize,
    pub rho: f64,
    pub sigma: SigmaMode,
    /// Sign of the treatment effect, +1 or -1.
    pub signal: i8,
    pub reps: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn rct(n: usize, p: usize, rho: f64, sigma: SigmaMode, signal: i8) -> Self {
        ScenarioConfig {
            scenario: Scenario::Rct,
            n,
            p,
            rho,
            sigma,
            signal,
            reps: 100,
            alpha: 0.1,
            seed: 0,
        }
    }

    pub fn univariate(scenario: Scenario, n: usize) -> Self {
        ScenarioConfig {
            scenario,
            p: 1,
            rho: 0.0,
            sigma: SigmaMode::Homoscedastic,
            signal: 1,
            ..Self::rct(n, 1, 0.0, SigmaMode::Homoscedastic, 1)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CardError::Parameter(msg));
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if self.n < 50 {
            return bad(format!("n must be at least 50, got {}", self.n));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0, 1), got {}", self.rho));
        }
        if self.signal != 1 && self.signal != -1 {
            return bad(format!("signal must be +1 or -1, got {}", self.signal));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.scenario.univariate() {
            if self.p != 1 {
                return bad(format!("{} has a single covariate, got p = {}", self.scenario.name(), self.p));
            }
            let min_n = if self.scenario == Scenario::AppendixA { 1000 } else { 100 };
            if self.n < min_n {
                return bad(format!("{} needs n >= {min_n}", self.scenario.name()));
            }
        } else if self.p < 2 {
            return bad(format!("p must be at least 2, got {}", self.p));
        }
        Ok(())
    }

    /// Identity of the cell for seeding; excludes `reps` and `seed`.
    pub fn fingerprint(&self) -> u64 {
        fingerprint(&format!(
            "{}|{}|{}|{}|{}|{}|{}",
            self.scenario.name(),
            self.n,
            self.p,
            self.rho,
            self.sigma.name(),
            self.signal,
            self.alpha
        ))
    }

    /// Seed of replication `rep`.
    pub fn rep_seed(&self, rep: usize) -> u64 {
        derive_seed(derive_seed(self.seed, self.fingerprint()), rep as u64)
    }
}

/// Which hypotheses are false, per dataset row (always false for untreated
/// rows).
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub nonnull: Vec<bool>,
    /// Treated rows whose conditional null holds although the marginal
    /// null is false (`Scenario::AppendixA` only).
    pub conditional_null: Option<Vec<bool>>,
}

/// AR(1) Gaussian covariates (`corr = rho^|i-j|`) mapped to uniform
/// margins by the normal CDF.
fn covariates<R: Rng + ?Sized>(n: usize, p: usize, rho: f64, rng: &mut R) -> Array2<f64> {
    let innov = (1.0 - rho * rho).sqrt();
    let mut x = Array2::zeros((n, p));
    for i in 0..n {
        let mut prev: f64 = StandardNormal.sample(rng);
        x[[i, 0]] = normal_cdf(prev);
        for j in 1..p {
            let z: f64 = StandardNormal.sample(rng);
            prev = rho * prev + innov * z;
            x[[i, j]] = normal_cdf(prev);
        }
    }
    x
}

fn two_arm<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R, signal: bool) -> (Dataset, GroundTruth) {
    let x = covariates(cfg.n, cfg.p, cfg.rho, rng);
    let observational = cfg.scenario == Scenario::Observational;
    let e: Vec<f64> = (0..cfg.n)
        .map(|i| if observational { observational_propensity(x[[i, 0]]) } else { 0.5 })
        .collect();
    let mut t = Vec::with_capacity(cfg.n);
    let mut y = Array1::zeros(cfg.n);
    let mut nonnull = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let (x1, x2) = (x[[i, 0]], x[[i, 1]]);
        let ti = rng.random::<f64>() < e[i];
        let sd = cfg.sigma.sd(x1);
        let eps0: f64 = StandardNormal.sample(rng);
        let eps1: f64 = StandardNormal.sample(rng);
        let base = 4.0 * (x1 + x2);
        let effect = if signal { f64::from(cfg.signal) * signal_f(x1) * signal_f(x2) } else { 0.0 };
        y[i] = if ti { base + effect + sd * eps1 } else { base + sd * eps0 };
        t.push(ti);
        nonnull.push(ti && signal && x1 > 0.5 && x2 > 0.5);
    }
    let oracle = observational.then(|| Array1::from(e));
    let d = Dataset::new(x, y, t, oracle).expect("generated data is valid");
    (
        d,
        GroundTruth {
            nonnull,
            conditional_null: None,
        },
    )
}

/// Randomized trial: `Y(0) = 4(X1 + X2) + e0`,
/// `Y(1) = 4(X1 + X2) + r f(X1) f(X2) + e1`, `T ~ Bernoulli(0.5)`.
pub fn generate_rct<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> (Dataset, GroundTruth) {
    two_arm(cfg, rng, true)
}

/// As [`generate_rct`] with `T ~ Bernoulli(e(X1))` and the true propensity
/// stored in the dataset.
pub fn generate_observational<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> (Dataset, GroundTruth) {
    two_arm(cfg, rng, true)
}

/// Trial without any treatment effect.
pub fn generate_global_null<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> (Dataset, GroundTruth) {
    two_arm(cfg, rng, false)
}

/// Bimodal design where treatment moves the mass at `0.25 < x < 0.5` from
/// -5 to 0, leaving the marginal range of `y` unchanged.
pub fn generate_appendix_c<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (Dataset, GroundTruth) {
    let level = |x: f64, cut: f64| {
        if x < cut {
            -5.0
        } else if x > 0.5 {
            5.0
        } else {
            0.0
        }
    };
    let mut xs = Vec::with_capacity(n);
    let mut y = Array1::zeros(n);
    let mut t = Vec::with_capacity(n);
    let mut nonnull = Vec::with_capacity(n);
    for i in 0..n {
        let x: f64 = rng.random();
        let ti = rng.random::<bool>();
        let eps: f64 = StandardNormal.sample(rng);
        y[i] = if ti { level(x, 0.25) } else { level(x, 0.5) } + eps;
        xs.push(x);
        t.push(ti);
        nonnull.push(ti && x > 0.25 && x < 0.5);
    }
    let d = Dataset::new(Array2::from_shape_vec((n, 1), xs).expect("shape"), y, t, None)
        .expect("generated data is valid");
    (
        d,
        GroundTruth {
            nonnull,
            conditional_null: None,
        },
    )
}

/// Near-noiseless design where every treated unit with `x > 0.01` is shifted
/// by 1 and those with `x <= 0.01` are conditionally null.
pub fn generate_appendix_a<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (Dataset, GroundTruth) {
    let noise = Normal::new(0.0, 1e-7f64.sqrt()).expect("valid sd");
    let mut xs = Vec::with_capacity(n);
    let mut y = Array1::zeros(n);
    let mut t = Vec::with_capacity(n);
    let mut nonnull = Vec::with_capacity(n);
    let mut cond = Vec::with_capacity(n);
    for i in 0..n {
        let x: f64 = rng.random();
        let ti = rng.random::<bool>();
        let eps = noise.sample(rng);
        let shift = if ti && x > 0.01 { 1.0 } else { 0.0 };
        y[i] = shift + eps;
        xs.push(x);
        t.push(ti);
        nonnull.push(ti && x > 0.01);
        cond.push(ti && x <= 0.01);
    }
    let d = Dataset::new(Array2::from_shape_vec((n, 1), xs).expect("shape"), y, t, None)
        .expect("generated data is valid");
    (
        d,
        GroundTruth {
            nonnull,
            conditional_null: Some(cond),
        },
    )
}

/// Draws one dataset for `cfg`.
pub fn generate<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<(Dataset, GroundTruth)> {
    cfg.validate()?;
    Ok(match cfg.scenario {
        Scenario::Rct => generate_rct(cfg, rng),
        Scenario::Observational => generate_observational(cfg, rng),
        Scenario::GlobalNull => generate_global_null(cfg, rng),
        Scenario::AppendixA => generate_appendix_a(cfg.n, rng),
        Scenario::AppendixC => generate_appendix_c(cfg.n, rng),
    })
}

/// False discovery proportion and power of one rejection set.
pub fn evaluate_run(rejected: &[bool], nonnull: &[bool]) -> Result<(f64, f64)> {
    if rejected.len() != nonnull.len() {
        return Err(CardError::Contract(format!(
            "{} rejection flags for {} hypotheses",
            rejected.len(),
            nonnull.len()
        )));
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    for (&r, &h) in rejected.iter().zip(nonnull) {
        if r {
            if h {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    let positives = nonnull.iter().filter(|&&h| h).count();
    Ok((fp as f64 / (tp + fp).max(1) as f64, tp as f64 / positives.max(1) as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Card,
    CardOracle,
    CardLogistic,
    CardForest,
    Global,
    Cqr,
    AdadetectRf,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Card,
        Method::CardOracle,
        Method::CardLogistic,
        Method::CardForest,
        Method::Global,
        Method::Cqr,
        Method::AdadetectRf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Card => "card",
            Method::CardOracle => "card_oracle",
            Method::CardLogistic => "card_logistic",
            Method::CardForest => "card_forest",
            Method::Global => "global",
            Method::Cqr => "cqr",
            Method::AdadetectRf => "adadetect_rf",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| CardError::Config(format!("unknown method `{s}`")))
    }
}

/// Tuning shared by every cell of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodSettings {
    pub knockoff_fraction: f64,
    pub folds: usize,
    pub scorer: ResponderForestParams,
    pub cqr: CqrConfig,
    pub adadetect: ForestParams,
}

impl Default for MethodSettings {
    fn default() -> Self {
        MethodSettings {
            knockoff_fraction: 0.2,
            folds: 10,
            scorer: ResponderForestParams::default(),
            cqr: CqrConfig::default(),
            adadetect: ForestParams::adadetect(),
        }
    }
}

/// Runs one method on one dataset.
pub fn run_method(
    method: Method,
    d: &Dataset,
    alpha: f64,
    settings: &MethodSettings,
    seed: u64,
    exec: Exec,
) -> Result<PValueReport> {
    let card = |propensity| {
        card_analyze(
            d,
            &CardConfig {
                alpha,
                knockoff_fraction: settings.knockoff_fraction,
                propensity,
                folds: settings.folds,
                scorer: settings.scorer,
                seed,
            },
            exec,
        )
    };
    match method {
        Method::Card => card(PropensityMode::None),
        Method::CardOracle => card(PropensityMode::Oracle),
        Method::CardLogistic => card(PropensityMode::Logistic),
        Method::CardForest => card(PropensityMode::Forest),
        Method::Global => global_report(d, alpha),
        Method::Cqr => cqr_report(d, &settings.cqr, alpha, seed),
        Method::AdadetectRf => adadetect_generic(d, settings.knockoff_fraction, &settings.adadetect, alpha, seed, exec),
    }
}

/// Outcome of one method on one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepOutcome {
    pub fdp: f64,
    pub power: f64,
    /// Rejection rate among conditional nulls, when the design has them.
    pub cond_null_rej: Option<f64>,
}

fn score_report(report: &PValueReport, truth: &GroundTruth) -> Result<RepOutcome> {
    let rejected: Vec<bool> = report.entries.iter().map(|e| e.rejected).collect();
    let nonnull: Vec<bool> = report.entries.iter().map(|e| truth.nonnull[e.index]).collect();
    let (fdp, power) = evaluate_run(&rejected, &nonnull)?;
    let cond_null_rej = match &truth.conditional_null {
        Some(cond) => {
            let (mut hit, mut total) = (0usize, 0usize);
            for e in &report.entries {
                if cond[e.index] {
                    total += 1;
                    hit += usize::from(e.rejected);
                }
            }
            (total > 0).then(|| hit as f64 / total as f64)
        }
        None => None,
    };
    Ok(RepOutcome {
        fdp,
        power,
        cond_null_rej,
    })
}

/// Runs every method on replication `rep` of `cfg`.
pub fn run_rep(
    cfg: &ScenarioConfig,
    rep: usize,
    methods: &[Method],
    settings: &MethodSettings,
    exec: Exec,
) -> Result<Vec<Result<RepOutcome>>> {
    let seed = cfg.rep_seed(rep);
    let (d, truth) = generate(cfg, &mut rng_from_seed(seed))?;
    Ok(methods
        .iter()
        .map(|&m| {
            let report = run_method(m, &d, cfg.alpha, settings, derive_seed(seed, fingerprint(m.name())), exec)?;
            score_report(&report, &truth)
        })
        .collect())
}

/// Mean and standard error (sample SD over `sqrt(count)`); the SE is
/// undefined below two observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    pub se: Option<f64>,
}

pub fn summarize(values: &[f64]) -> Summary {
    let k = values.len();
    if k == 0 {
        return Summary { mean: None, se: None };
    }
    let mean = values.iter().copied().collect::<KahanSum>().total() / k as f64;
    let se = (k >= 2).then(|| {
        let ss = values.iter().map(|v| (v - mean) * (v - mean)).collect::<KahanSum>().total();
        (ss / (k - 1) as f64).sqrt() / (k as f64).sqrt()
    });
    Summary { mean: Some(mean), se }
}

/// Aggregated results of one method in one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub cell: ScenarioConfig,
    pub method: Method,
    /// Replications that completed.
    pub reps: usize,
    /// Replications that failed; the cell is partial when nonzero.
    pub errors: usize,
    pub fdr: Summary,
    pub power: Summary,
    pub cond_null_rej: Summary,
}

impl RunMetrics {
    pub fn is_partial(&self) -> bool {
        self.errors > 0
    }

    /// `mean + k * se`, treating an undefined SE as 0.
    pub fn fdr_upper(&self, k: f64) -> Option<f64> {
        self.fdr.mean.map(|m| m + k * self.fdr.se.unwrap_or(0.0))
    }
}

/// Runs every cell for every method. Replications are distributed by
/// `exec`; each method inside a replication runs sequentially.
pub fn run_experiment(
    grid: &[ScenarioConfig],
    methods: &[Method],
    settings: &MethodSettings,
    exec: Exec,
) -> Result<Vec<RunMetrics>> {
    if methods.is_empty() {
        return Err(CardError::Parameter("no methods selected".into()));
    }
    for cfg in grid {
        cfg.validate()?;
    }
    let units: Vec<(usize, usize)> = grid
        .iter()
        .enumerate()
        .flat_map(|(c, cfg)| (0..cfg.reps).map(move |r| (c, r)))
        .collect();
    let outcomes = exec.map(units.len(), |u| {
        let (c, r) = units[u];
        match run_rep(&grid[c], r, methods, settings, Exec::Sequential) {
            Ok(per_method) => per_method,
            Err(e) => methods.iter().map(|_| Err(CardError::Data(e.to_string()))).collect(),
        }
    });
    let mut out = Vec::with_capacity(grid.len() * methods.len());
    let mut offset = 0;
    for cfg in grid {
        let cell = &outcomes[offset..offset + cfg.reps];
        offset += cfg.reps;
        for (mi, &method) in methods.iter().enumerate() {
            let ok: Vec<RepOutcome> = cell.iter().filter_map(|o| o[mi].as_ref().ok().copied()).collect();
            let errors = cfg.reps - ok.len();
            let fdp: Vec<f64> = ok.iter().map(|o| o.fdp).collect();
            let power: Vec<f64> = ok.iter().map(|o| o.power).collect();
            let cond: Vec<f64> = ok.iter().filter_map(|o| o.cond_null_rej).collect();
            out.push(RunMetrics {
                cell: *cfg,
                method,
                reps: ok.len(),
                errors,
                fdr: summarize(&fdp),
                power: summarize(&power),
                cond_null_rej: summarize(&cond),
            });
        }
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// Header echoed into metrics files so a run can be reproduced from its
/// output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub seed: u64,
    pub grid: Vec<ScenarioConfig>,
    pub methods: Vec<Method>,
    pub settings: MethodSettings,
}

/// Writes `# schema`, `# seed` and `# config` comment lines followed by the
/// metrics table.
pub fn write_metrics_csv<W: Write>(mut writer: W, header: &RunHeader, metrics: &[RunMetrics]) -> Result<()> {
    writeln!(writer, "# schema: {METRICS_SCHEMA}")?;
    writeln!(writer, "# seed: {}", header.seed)?;
    writeln!(writer, "# config: {}", serde_json::to_string(header)?)?;
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(METRICS_COLUMNS)?;
    for m in metrics {
        let c = &m.cell;
        w.write_record([
            c.scenario.name().to_string(),
            c.n.to_string(),
            c.p.to_string(),
            c.rho.to_string(),
            c.sigma.name().to_string(),
            c.signal.to_string(),
            c.alpha.to_string(),
            c.seed.to_string(),
            m.method.name().to_string(),
            m.reps.to_string(),
            m.errors.to_string(),
            fmt_opt(m.fdr.mean),
            fmt_opt(m.fdr.se),
            fmt_opt(m.power.mean),
            fmt_opt(m.power.se),
            fmt_opt(m.cond_null_rej.mean),
            fmt_opt(m.cond_null_rej.se),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct MetricsJson<'a> {
    schema: &'a str,
    header: &'a RunHeader,
    metrics: &'a [RunMetrics],
}

pub fn metrics_json(header: &RunHeader, metrics: &[RunMetrics]) -> Result<String> {
    Ok(serde_json::to_string_pretty(&MetricsJson {
        schema: METRICS_SCHEMA,
        header,
        metrics,
    })?)
}

fn parse_opt(s: &str, row: usize, column: &str) -> Result<Option<f64>> {
    if s == "NA" {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|_| CardError::Parse {
        row,
        column: column.to_string(),
        message: format!("`{s}` is not a number"),
    })
}

fn parse_field<T: std::str::FromStr>(s: &str, row: usize, column: &str) -> Result<T> {
    s.parse::<T>().map_err(|_| CardError::Parse {
        row,
        column: column.to_string(),
        message: format!("cannot parse `{s}`"),
    })
}

/// Reads a metrics CSV written by [`write_metrics_csv`]; rejects files with
/// a different schema line or columns.
pub fn read_metrics_csv<R: BufRead>(reader: R) -> Result<Vec<RunMetrics>> {
    let mut body = String::new();
    let mut schema = None;
    for line in reader.lines() {
        let line = line?;
        if let Some(rest) = line.strip_prefix("# schema: ") {
            schema = Some(rest.trim().to_string());
        } else if !line.starts_with('#') {
            body.push_str(&line);
            body.push('\n');
        }
    }
    match schema.as_deref() {
        Some(METRICS_SCHEMA) => {}
        Some(other) => {
            return Err(CardError::Schema(format!(
                "metrics schema `{other}` is not supported (expected {METRICS_SCHEMA})"
            )))
        }
        None => return Err(CardError::Schema("metrics file has no schema line".into())),
    }
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let headers = r.headers()?.clone();
    if headers.iter().ne(METRICS_COLUMNS.iter().copied()) {
        return Err(CardError::Schema("metrics columns do not match the schema".into()));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let f = |j: usize| &rec[j];
        let cell = ScenarioConfig {
            scenario: Scenario::parse(f(0)).map_err(|e| CardError::Schema(e.to_string()))?,
            n: parse_field(f(1), row, "n")?,
            p: parse_field(f(2), row, "p")?,
            rho: parse_field(f(3), row, "rho")?,
            sigma: SigmaMode::parse(f(4)).map_err(|e| CardError::Schema(e.to_string()))?,
            signal: parse_field(f(5), row, "signal")?,
            alpha: parse_field(f(6), row, "alpha")?,
            seed: parse_field(f(7), row, "seed")?,
            reps: 0,
        };
        let reps: usize = parse_field(f(9), row, "reps")?;
        let errors: usize = parse_field(f(10), row, "errors")?;
        out.push(RunMetrics {
            cell: ScenarioConfig { reps: reps + errors, ..cell },
            method: Method::parse(f(8)).map_err(|e| CardError::Schema(e.to_string()))?,
            reps,
            errors,
            fdr: Summary {
                mean: parse_opt(f(11), row, "fdr_mean")?,
                se: parse_opt(f(12), row, "fdr_se")?,
            },
            power: Summary {
                mean: parse_opt(f(13), row, "power_mean")?,
                se: parse_opt(f(14), row, "power_se")?,
            },
            cond_null_rej: Summary {
                mean: parse_opt(f(15), row, "cond_null_rej_mean")?,
                se: parse_opt(f(16), row, "cond_null_rej_se")?,
            },
        });
    }
    if out.is_empty() {
        return Err(CardError::Schema("metrics file has no rows".into()));
    }
    Ok(out)
}

/// Named grid plus its default methods.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: String,
    pub grid: Vec<ScenarioConfig>,
    pub methods: Vec<Method>,
}

pub const PRESETS: [&str; 7] = ["rct-p10", "obs", "appendix-a", "appendix-c", "global-null", "rct-p100", "full"];
pub const N_GRID: [usize; 4] = [250, 500, 1000, 2000];

fn rct_cells(scenario: Scenario, p: usize, rho: f64, signals: &[i8]) -> Vec<ScenarioConfig> {
    let mut cells = Vec::new();
    for &n in &N_GRID {
        for sigma in [SigmaMode::Homoscedastic, SigmaMode::Heteroscedastic] {
            for &r in signals {
                cells.push(ScenarioConfig {
                    scenario,
                    ..ScenarioConfig::rct(n, p, rho, sigma, r)
                });
            }
        }
    }
    cells
}

/// Expands a named preset. `rct-p100` and `full` are the large grids and
/// need `full_scale`.
pub fn preset(name: &str, full_scale: bool) -> Result<Preset> {
    let baselines = vec![Method::Card, Method::Global, Method::Cqr, Method::AdadetectRf];
    let (grid, methods) = match name {
        "rct-p10" => (rct_cells(Scenario::Rct, 10, 0.0, &[1, -1]), baselines),
        "obs" => (
            rct_cells(Scenario::Observational, 10, 0.0, &[1]),
            vec![Method::Card, Method::CardOracle, Method::CardLogistic, Method::CardForest],
        ),
        "appendix-a" => (vec![ScenarioConfig::univariate(Scenario::AppendixA, 20_000)], vec![Method::Card]),
        "appendix-c" => (
            vec![ScenarioConfig::univariate(Scenario::AppendixC, 2000)],
            vec![Method::Card, Method::Global],
        ),
        "global-null" => (
            vec![ScenarioConfig {
                scenario: Scenario::GlobalNull,
                ..ScenarioConfig::rct(1000, 10, 0.0, SigmaMode::Homoscedastic, 1)
            }],
            baselines,
        ),
        "rct-p100" | "full" if !full_scale => {
            return Err(CardError::Config(format!(
                "preset `{name}` is a full-scale grid; pass the full-scale flag to run it"
            )))
        }
        "rct-p100" => (rct_cells(Scenario::Rct, 100, 0.0, &[1, -1]), baselines),
        "full" => {
            let mut grid = Vec::new();
            for p in [10, 100] {
                for rho in [0.0, 0.9] {
                    grid.extend(rct_cells(Scenario::Rct, p, rho, &[1, -1]));
                }
            }
            (grid, baselines)
        }
        other => {
            return Err(CardError::Config(format!(
                "unknown preset `{other}` (expected one of {})",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(Preset {
        name: name.to_string(),
        grid,
        methods,
    })
}
