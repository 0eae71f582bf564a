//! Comparison methods: a two-sided global eCDF test, conformalized quantile
//! regression (CQR) p-values built on quantile gradient boosting, and
//! AdaDetect with a generic random-forest classifier on `(x, y)`.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conformal::{conformal_report, PValueReport};
use crate::dataset::{split_knockoffs, Dataset};
use crate::error::{CardError, Result};
use crate::exec::{rng_from_seed, Exec};
use crate::trees::{candidate_cuts, fit_forest_classifier, split_threshold, ForestParams};

/// Two-sided eCDF p-values of treated responses against the untreated ones:
/// `2 * min((1 + #{y_j >= y_i}), (1 + #{y_j <= y_i})) / (n0 + 1)`, capped at 1.
pub fn global_test_pvalues(y_untreated: &[f64], y_treated: &[f64]) -> Result<Vec<f64>> {
    if y_untreated.is_empty() {
        return Err(CardError::Parameter("the global test needs untreated responses".into()));
    }
    let mut null = y_untreated.to_vec();
    null.sort_by(f64::total_cmp);
    let n0 = null.len();
    let denom = (n0 + 1) as f64;
    Ok(y_treated
        .iter()
        .map(|&y| {
            let at_or_above = n0 - null.partition_point(|&v| v < y);
            let at_or_below = null.partition_point(|&v| v <= y);
            let upper = (1 + at_or_above) as f64 / denom;
            let lower = (1 + at_or_below) as f64 / denom;
            (2.0 * upper.min(lower)).min(1.0)
        })
        .collect())
}

/// Global test as a report; the score column holds the treated response.
pub fn global_report(d: &Dataset, alpha: f64) -> Result<PValueReport> {
    let y = d.y();
    let untreated: Vec<f64> = d.untreated_indices().iter().map(|&i| y[i]).collect();
    let treated_idx = d.treated_indices();
    let treated: Vec<f64> = treated_idx.iter().map(|&i| y[i]).collect();
    let pvalues = global_test_pvalues(&untreated, &treated)?;
    let rejected = crate::conformal::bh_adjust(&pvalues, alpha)?;
    Ok(PValueReport {
        method: "global".into(),
        alpha,
        k: untreated.len(),
        entries: (0..treated.len())
            .map(|i| crate::conformal::PValueEntry {
                index: treated_idx[i],
                score: treated[i],
                weight: 1.0,
                pvalue: pvalues[i],
                rejected: rejected[i],
            })
            .collect(),
    })
}

/// Lower empirical `tau`-quantile, `sorted[ceil(tau * n) - 1]`. Reorders
/// `values`.
fn quantile_in_place(values: &mut [f64], tau: f64) -> f64 {
    let n = values.len();
    let idx = ((tau * n as f64).ceil() as usize).clamp(1, n) - 1;
    *values.select_nth_unstable_by(idx, f64::total_cmp).1
}

#[inline]
fn pinball(residual: f64, tau: f64) -> f64 {
    if residual >= 0.0 {
        tau * residual
    } else {
        (tau - 1.0) * residual
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Regression tree whose structure minimizes squared error and whose leaf
/// values are supplied by the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<RegNode>,
}

impl RegressionTree {
    pub fn nodes(&self) -> &[RegNode] {
        &self.nodes
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                RegNode::Leaf { value } => return value,
                RegNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

/// Grows a least-squares tree on `target` and fills each leaf with
/// `leaf_value(rows in leaf)`.
fn fit_regression_tree(
    x: ArrayView2<'_, f64>,
    target: &[f64],
    max_depth: usize,
    min_leaf: usize,
    leaf_value: &mut dyn FnMut(&[usize]) -> f64,
) -> RegressionTree {
    fn sse(sum: f64, sum2: f64, n: usize) -> f64 {
        if n == 0 {
            0.0
        } else {
            (sum2 - sum * sum / n as f64).max(0.0)
        }
    }
    fn grow(
        x: ArrayView2<'_, f64>,
        target: &[f64],
        rows: Vec<usize>,
        depth_left: usize,
        min_leaf: usize,
        nodes: &mut Vec<RegNode>,
        leaf_value: &mut dyn FnMut(&[usize]) -> f64,
    ) -> usize {
        let at = nodes.len();
        nodes.push(RegNode::Leaf { value: 0.0 });
        let m = rows.len();
        let sum: f64 = rows.iter().map(|&r| target[r]).sum();
        let sum2: f64 = rows.iter().map(|&r| target[r] * target[r]).sum();
        let parent = sse(sum, sum2, m);
        let mut best: Option<(f64, usize, f64)> = None;
        if depth_left > 0 && parent > 0.0 {
            let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(m);
            let mut values = Vec::with_capacity(m);
            for f in 0..x.ncols() {
                pairs.clear();
                pairs.extend(rows.iter().map(|&r| (x[[r, f]], target[r])));
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                values.clear();
                values.extend(pairs.iter().map(|p| p.0));
                let cuts = candidate_cuts(&values, min_leaf);
                let (mut ls, mut ls2, mut pos) = (0.0, 0.0, 0);
                for cut in cuts {
                    while pos < cut {
                        ls += pairs[pos].1;
                        ls2 += pairs[pos].1 * pairs[pos].1;
                        pos += 1;
                    }
                    let total = sse(ls, ls2, cut) + sse(sum - ls, sum2 - ls2, m - cut);
                    if best.is_none_or(|(b, _, _)| total < b - 1e-12 * m as f64) {
                        best = Some((total, f, split_threshold(values[cut - 1], values[cut])));
                    }
                }
            }
        }
        match best {
            Some((total, feature, threshold)) if total < parent - 1e-12 * m as f64 => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.into_iter().partition(|&i| x[[i, feature]] <= threshold);
                let left = grow(x, target, l, depth_left - 1, min_leaf, nodes, leaf_value);
                let right = grow(x, target, r, depth_left - 1, min_leaf, nodes, leaf_value);
                nodes[at] = RegNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
            }
            _ => nodes[at] = RegNode::Leaf { value: leaf_value(&rows) },
        }
        at
    }
    let mut nodes = Vec::new();
    grow(x, target, (0..x.nrows()).collect(), max_depth, min_leaf, &mut nodes, leaf_value);
    RegressionTree { nodes }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            rounds: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_leaf: 10,
        }
    }
}

/// Gradient-boosted conditional `tau`-quantile under the pinball loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileBoostModel {
    pub base: f64,
    pub stages: Vec<RegressionTree>,
    pub learning_rate: f64,
    pub tau: f64,
    /// Mean training pinball loss before the first stage and after each.
    pub train_loss: Vec<f64>,
}

impl QuantileBoostModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.base + self.learning_rate * self.stages.iter().map(|s| s.predict(x)).sum::<f64>()
    }

    pub fn predict_rows(&self, x: ArrayView2<'_, f64>) -> Vec<f64> {
        x.rows().into_iter().map(|r| self.predict(&r.to_vec())).collect()
    }
}

/// Each stage fits a depth-limited regression tree to the pinball-loss
/// negative gradient `tau - 1{y < f(x)}`, then sets every leaf to the
/// `tau`-quantile of the residuals falling in it.
pub fn fit_quantile_boost(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    tau: f64,
    config: &BoostConfig,
) -> Result<QuantileBoostModel> {
    let n = y.len();
    if x.nrows() != n {
        return Err(CardError::Contract(format!("{} rows but {n} responses", x.nrows())));
    }
    if n < 20 {
        return Err(CardError::Data(format!("quantile boosting needs at least 20 rows, found {n}")));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(CardError::Parameter(format!("tau must lie in (0, 1), got {tau}")));
    }
    if !(config.learning_rate > 0.0 && config.learning_rate <= 1.0) || config.min_leaf == 0 {
        return Err(CardError::Parameter("invalid boosting settings".into()));
    }
    let base = quantile_in_place(&mut y.to_vec(), tau);
    let mut f = vec![base; n];
    let loss = |f: &[f64]| y.iter().zip(f).map(|(&yi, &fi)| pinball(yi - fi, tau)).sum::<f64>() / n as f64;
    let mut train_loss = vec![loss(&f)];
    let mut stages = Vec::with_capacity(config.rounds);
    let mut buf = Vec::new();
    for _ in 0..config.rounds {
        let gradient: Vec<f64> = y
            .iter()
            .zip(&f)
            .map(|(&yi, &fi)| if yi < fi { tau - 1.0 } else { tau })
            .collect();
        let tree = fit_regression_tree(x, &gradient, config.max_depth, config.min_leaf, &mut |rows| {
            buf.clear();
            buf.extend(rows.iter().map(|&r| y[r] - f[r]));
            quantile_in_place(&mut buf, tau)
        });
        for (i, fi) in f.iter_mut().enumerate() {
            *fi += config.learning_rate * tree.predict(&x.row(i).to_vec());
        }
        train_loss.push(loss(&f));
        stages.push(tree);
    }
    Ok(QuantileBoostModel {
        base,
        stages,
        learning_rate: config.learning_rate,
        tau,
        train_loss,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CqrConfig {
    /// Lower quantile level.
    pub alpha_lo: f64,
    /// Upper quantile level.
    pub alpha_hi: f64,
    pub train_fraction: f64,
    pub boost: BoostConfig,
}

impl Default for CqrConfig {
    fn default() -> Self {
        CqrConfig {
            alpha_lo: 0.05,
            alpha_hi: 0.95,
            train_fraction: 0.8,
            boost: BoostConfig::default(),
        }
    }
}

impl CqrConfig {
    fn validate(&self) -> Result<()> {
        if !(0.0 < self.alpha_lo && self.alpha_lo < self.alpha_hi && self.alpha_hi < 1.0) {
            return Err(CardError::Parameter(format!(
                "CQR needs 0 < alpha_lo < alpha_hi < 1, got {} and {}",
                self.alpha_lo, self.alpha_hi
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(CardError::Parameter("CQR train fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Non-conformity score `max(q_lo(x) - y, y - q_hi(x))`.
#[inline]
pub fn cqr_score(q_lo: f64, q_hi: f64, y: f64) -> f64 {
    (q_lo - y).max(y - q_hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CqrResult {
    pub treated: Vec<usize>,
    pub treated_scores: Vec<f64>,
    pub calibration_scores: Vec<f64>,
    pub pvalues: Vec<f64>,
    /// Points (calibration and treated) whose quantile estimates crossed
    /// and were swapped.
    pub swaps: usize,
}

/// CQR p-values for the treated subjects: quantile models fit on a random
/// training share of the untreated, scores calibrated on the rest.
pub fn cqr_pvalues<R: Rng + ?Sized>(d: &Dataset, config: &CqrConfig, rng: &mut R) -> Result<CqrResult> {
    config.validate()?;
    let mut untreated = d.untreated_indices();
    let n0 = untreated.len();
    let n_train = (config.train_fraction * n0 as f64).floor() as usize;
    if n0 - n_train < 1 {
        return Err(CardError::Parameter(format!(
            "CQR calibration split is empty ({n0} untreated, train fraction {})",
            config.train_fraction
        )));
    }
    rand::seq::SliceRandom::shuffle(untreated.as_mut_slice(), rng);
    let (train, cal) = untreated.split_at(n_train);
    let x = d.x();
    let y = d.y();
    let xt = x.select(Axis(0), train);
    let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let lo = fit_quantile_boost(xt.view(), &yt, config.alpha_lo, &config.boost)?;
    let hi = fit_quantile_boost(xt.view(), &yt, config.alpha_hi, &config.boost)?;
    let mut swaps = 0;
    let mut score = |i: usize| {
        let row = x.row(i).to_vec();
        let (mut a, mut b) = (lo.predict(&row), hi.predict(&row));
        if a > b {
            std::mem::swap(&mut a, &mut b);
            swaps += 1;
        }
        cqr_score(a, b, y[i])
    };
    let calibration_scores: Vec<f64> = cal.iter().map(|&i| score(i)).collect();
    let treated = d.treated_indices();
    let treated_scores: Vec<f64> = treated.iter().map(|&i| score(i)).collect();
    let pvalues = treated_scores
        .iter()
        .map(|&s| crate::conformal::adadetect_pvalue(&calibration_scores, s))
        .collect::<Result<Vec<f64>>>()?;
    Ok(CqrResult {
        treated,
        treated_scores,
        calibration_scores,
        pvalues,
        swaps,
    })
}

pub fn cqr_report(d: &Dataset, config: &CqrConfig, alpha: f64, seed: u64) -> Result<PValueReport> {
    let r = cqr_pvalues(d, config, &mut rng_from_seed(seed))?;
    conformal_report("cqr", &r.treated, &r.treated_scores, &r.calibration_scores, None, alpha)
}

/// AdaDetect with a generic forest: same knockoff split and calibration as
/// unweighted CARD, but the scorer is a random forest on `(x, y)`.
pub fn adadetect_generic(
    d: &Dataset,
    knockoff_fraction: f64,
    params: &ForestParams,
    alpha: f64,
    seed: u64,
    exec: Exec,
) -> Result<PValueReport> {
    d.require_arms(1, 2)?;
    let mut rng = rng_from_seed(seed);
    let split = split_knockoffs(d, knockoff_fraction, &mut rng)?;
    let p = d.p();
    let features = |rows: &[usize]| {
        Array2::from_shape_fn((rows.len(), p + 1), |(r, j)| {
            if j < p {
                d.x()[[rows[r], j]]
            } else {
                d.y()[rows[r]]
            }
        })
    };
    let train_rows: Vec<usize> = split
        .untreated_train
        .iter()
        .chain(&split.treated)
        .chain(&split.knockoffs)
        .copied()
        .collect();
    let labels: Vec<bool> = (0..train_rows.len()).map(|r| r >= split.untreated_train.len()).collect();
    let forest = fit_forest_classifier(features(&train_rows).view(), &labels, params, rng.random(), exec)?;
    let score = |rows: &[usize]| {
        let f = features(rows);
        exec.map(rows.len(), |r| forest.route(|j| f[[r, j]]))
    };
    conformal_report(
        "adadetect_rf",
        &split.treated,
        &score(&split.treated),
        &score(&split.knockoffs),
        None,
        alpha,
    )
}
