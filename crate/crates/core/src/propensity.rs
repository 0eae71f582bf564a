//! Propensity scores `e(x) = P(T = 1 | X = x)`: logistic and forest
//! learners, m-fold cross-fitting, oracle passthrough, clipping and odds
//! weights.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{CardError, Result};
use crate::exec::{derive_seed, Exec};
use crate::trees::{fit_forest_classifier, ForestParams};

pub const CLIP_LO: f64 = 0.01;
pub const CLIP_HI: f64 = 0.99;

/// Coefficient magnitude treated as divergence under separation.
pub const SEPARATION_LIMIT: f64 = 30.0;

const FOLD_RETRIES: usize = 20;

#[inline]
pub fn clip_propensity(e: f64) -> f64 {
    e.clamp(CLIP_LO, CLIP_HI)
}

/// How the treatment-assignment probabilities are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityMode {
    /// Randomized trial: no weighting.
    #[default]
    None,
    /// Use the dataset's known propensity column.
    Oracle,
    Logistic,
    Forest,
}

impl PropensityMode {
    pub fn name(self) -> &'static str {
        match self {
            PropensityMode::None => "none",
            PropensityMode::Oracle => "oracle",
            PropensityMode::Logistic => "logistic",
            PropensityMode::Forest => "forest",
        }
    }
}

impl std::str::FromStr for PropensityMode {
    type Err = CardError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PropensityMode::None),
            "oracle" => Ok(PropensityMode::Oracle),
            "logistic" => Ok(PropensityMode::Logistic),
            "forest" => Ok(PropensityMode::Forest),
            other => Err(CardError::Config(format!(
                "unknown propensity mode `{other}` (expected none, oracle, logistic or forest)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Learner {
    Logistic,
    Forest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityEstimates {
    /// Clipped to `[CLIP_LO, CLIP_HI]`.
    pub e: Vec<f64>,
    pub mode: PropensityMode,
    /// Fold of each row when the estimates were cross-fitted.
    pub folds: Option<Vec<usize>>,
}

impl PropensityEstimates {
    pub fn oracle(d: &Dataset) -> Result<Self> {
        let e = d.oracle_propensity().ok_or_else(|| {
            CardError::Config("propensity mode `oracle` needs a propensity column".into())
        })?;
        Ok(PropensityEstimates {
            e: e.iter().map(|&v| clip_propensity(v)).collect(),
            mode: PropensityMode::Oracle,
            folds: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    /// Stop when the max-norm of the mean-log-likelihood gradient falls below.
    pub tol: f64,
    pub max_iter: usize,
    /// Added to the Hessian diagonal for conditioning.
    pub ridge: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            tol: 1e-8,
            max_iter: 100,
            ridge: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub hit_max_iter: bool,
    /// Mean log-likelihood at the start and after every accepted step.
    pub log_likelihood: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub convergence: Convergence,
}

impl LogisticModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.coefficients.len() {
            return Err(CardError::Contract(format!(
                "logistic model has {} coefficients, got {} covariates",
                self.coefficients.len(),
                x.len()
            )));
        }
        let eta = self.intercept + x.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>();
        Ok(sigmoid(eta))
    }

    pub fn predict_rows(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        x.rows()
            .into_iter()
            .map(|row| self.predict(&row.to_vec()))
            .collect()
    }
}

#[inline]
fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let z = eta.exp();
        z / (1.0 + z)
    }
}

/// `log(1 + exp(eta))` without overflow.
#[inline]
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

fn design(x: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols() + 1, |i, j| if j == 0 { 1.0 } else { x[[i, j - 1]] })
}

fn mean_log_likelihood(xd: &DMatrix<f64>, t: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    let eta = xd * beta;
    let n = t.len() as f64;
    eta.iter()
        .zip(t.iter())
        .map(|(&e, &ti)| ti * e - softplus(e))
        .sum::<f64>()
        / n
}

/// Maximum-likelihood logistic regression by Newton–Raphson (IRLS) with
/// step-halving, so the log-likelihood never decreases.
pub fn fit_logistic(x: ArrayView2<'_, f64>, t: &[bool], config: &LogisticConfig) -> Result<LogisticModel> {
    let n = x.nrows();
    if t.len() != n {
        return Err(CardError::Contract(format!("{n} rows but {} labels", t.len())));
    }
    let n1 = t.iter().filter(|&&v| v).count();
    if n1 == 0 || n1 == n {
        return Err(CardError::Data(
            "logistic regression needs both treated and untreated rows".into(),
        ));
    }
    if !(config.tol > 0.0) || config.max_iter == 0 || !(config.ridge >= 0.0) {
        return Err(CardError::Parameter("invalid logistic regression settings".into()));
    }
    let xd = design(x);
    let tv = DVector::from_iterator(n, t.iter().map(|&v| f64::from(u8::from(v))));
    let q = xd.ncols();
    let nf = n as f64;
    let mut beta = DVector::zeros(q);
    let mut ll = mean_log_likelihood(&xd, &tv, &beta);
    let mut trace = vec![ll];
    let mut iterations = 0;
    loop {
        let mu = (&xd * &beta).map(sigmoid);
        let grad = xd.tr_mul(&(&tv - &mu)) / nf;
        let gnorm = grad.amax();
        if gnorm <= config.tol || iterations >= config.max_iter {
            return Ok(LogisticModel {
                intercept: beta[0],
                coefficients: beta.iter().skip(1).copied().collect(),
                convergence: Convergence {
                    iterations,
                    gradient_norm: gnorm,
                    hit_max_iter: gnorm > config.tol,
                    log_likelihood: trace,
                },
            });
        }
        let w = mu.map(|m| m * (1.0 - m));
        let mut weighted = xd.clone();
        for (mut row, &wi) in weighted.row_iter_mut().zip(w.iter()) {
            row *= wi;
        }
        let mut hessian = xd.tr_mul(&weighted) / nf;
        for j in 0..q {
            hessian[(j, j)] += config.ridge;
        }
        let step = hessian
            .cholesky()
            .ok_or_else(|| CardError::Invariant("logistic Hessian is not positive definite".into()))?
            .solve(&grad);
        let mut scale = 1.0;
        let mut candidate = &beta + &step;
        let mut cand_ll = mean_log_likelihood(&xd, &tv, &candidate);
        while cand_ll < ll && scale > 1e-10 {
            scale *= 0.5;
            candidate = &beta + &step * scale;
            cand_ll = mean_log_likelihood(&xd, &tv, &candidate);
        }
        iterations += 1;
        if cand_ll >= ll {
            beta = candidate;
            ll = cand_ll;
            trace.push(ll);
        }
        let magnitude = beta.amax();
        if magnitude > SEPARATION_LIMIT {
            return Err(CardError::Separation {
                magnitude,
                iterations,
            });
        }
        if scale <= 1e-10 {
            // No ascent direction left at working precision.
            let mu = (&xd * &beta).map(sigmoid);
            let gnorm = (xd.tr_mul(&(&tv - &mu)) / nf).amax();
            return Ok(LogisticModel {
                intercept: beta[0],
                coefficients: beta.iter().skip(1).copied().collect(),
                convergence: Convergence {
                    iterations,
                    gradient_norm: gnorm,
                    hit_max_iter: gnorm > config.tol,
                    log_likelihood: trace,
                },
            });
        }
    }
}

/// Balanced random fold labels: fold of a row is its position in a random
/// permutation modulo `m`.
fn assign_folds<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut folds = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        folds[i] = pos % m;
    }
    folds
}

fn training_sets_have_both_classes(folds: &[usize], t: &[bool], m: usize) -> bool {
    let mut treated = vec![0usize; m];
    let mut size = vec![0usize; m];
    for (&f, &ti) in folds.iter().zip(t) {
        size[f] += 1;
        treated[f] += usize::from(ti);
    }
    let n1: usize = treated.iter().sum();
    let n = folds.len();
    (0..m).all(|f| {
        let train1 = n1 - treated[f];
        let train = n - size[f];
        train1 > 0 && train1 < train
    })
}

/// Out-of-fold propensity estimates: row `i` is predicted by a model fit on
/// every fold except its own, then clipped.
pub fn cross_fit_propensity<R: Rng + ?Sized>(
    d: &Dataset,
    learner: Learner,
    m: usize,
    rng: &mut R,
    exec: Exec,
) -> Result<PropensityEstimates> {
    let n = d.n();
    if m < 2 || m > n {
        return Err(CardError::Parameter(format!(
            "cross-fitting needs 2 <= m <= n, got m = {m} with n = {n}"
        )));
    }
    let t = d.treated();
    let mut folds = None;
    for _ in 0..FOLD_RETRIES {
        let candidate = assign_folds(n, m, rng);
        if training_sets_have_both_classes(&candidate, t, m) {
            folds = Some(candidate);
            break;
        }
    }
    let folds = folds.ok_or_else(|| {
        CardError::Stratification(format!(
            "could not find a {m}-fold assignment with both classes in every training set after {FOLD_RETRIES} attempts"
        ))
    })?;
    let seed: u64 = rng.random();
    let x = d.x();
    let per_fold: Vec<Result<Vec<(usize, f64)>>> = exec.map(m, |f| {
        let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
        let xt = x.select(ndarray::Axis(0), &train);
        let tt: Vec<bool> = train.iter().map(|&i| t[i]).collect();
        let xs: Array2<f64> = x.select(ndarray::Axis(0), &test);
        let preds = match learner {
            Learner::Logistic => {
                fit_logistic(xt.view(), &tt, &LogisticConfig::default())?.predict_rows(xs.view())?
            }
            Learner::Forest => {
                let forest = fit_forest_classifier(
                    xt.view(),
                    &tt,
                    &ForestParams::propensity(),
                    derive_seed(seed, f as u64),
                    exec,
                )?;
                xs.rows()
                    .into_iter()
                    .map(|row| forest.predict_proba(&row.to_vec()))
                    .collect::<Result<Vec<f64>>>()?
            }
        };
        Ok(test.into_iter().zip(preds).collect())
    });
    let mut e = vec![f64::NAN; n];
    for fold in per_fold {
        for (i, v) in fold? {
            e[i] = clip_propensity(v);
        }
    }
    Ok(PropensityEstimates {
        e,
        mode: match learner {
            Learner::Logistic => PropensityMode::Logistic,
            Learner::Forest => PropensityMode::Forest,
        },
        folds: Some(folds),
    })
}

/// Odds `e / (1 - e)` of already-clipped propensities.
pub fn propensity_weights(e: &[f64]) -> Result<Vec<f64>> {
    e.iter()
        .map(|&v| {
            if v > 0.0 && v < 1.0 {
                Ok(v / (1.0 - v))
            } else {
                Err(CardError::Contract(format!(
                    "propensity {v} must lie strictly inside (0, 1)"
                )))
            }
        })
        .collect()
}
