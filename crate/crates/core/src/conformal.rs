//! Knockoff-calibrated conformal p-values, Benjamini–Hochberg selection and
//! the end-to-end CARD analysis.
//!
//! A fraction of the untreated subjects is held out as *knockoffs*. They are
//! pooled with the treated subjects when the scorer is trained, so under the
//! null a treated subject's score is exchangeable with the knockoff scores.
//! Its p-value is its rank among them:
//!
//! ```text
//! pv_i = (1 + #{j : s_j >= s_i}) / (k + 1)
//! ```
//!
//! With estimated or known propensities each point carries the odds weight
//! `w = e / (1 - e)` and the count becomes a normalized weighted sum.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{split_knockoffs, Dataset, KnockoffSplit};
use crate::error::{CardError, Result};
use crate::exec::{rng_from_seed, Exec};
pub use crate::propensity::PropensityMode;
use crate::propensity::{clip_propensity, cross_fit_propensity, propensity_weights, Learner, PropensityEstimates};
use crate::responder::{fit_responder_forest, ResponderForest, ResponderForestParams, ResponderSample};

/// Unweighted conformal p-value of `test_score` against the knockoff scores.
/// Ties count as exceeding.
pub fn adadetect_pvalue(knockoff_scores: &[f64], test_score: f64) -> Result<f64> {
    if knockoff_scores.is_empty() {
        return Err(CardError::Parameter("p-values need at least one knockoff".into()));
    }
    let above = knockoff_scores.iter().filter(|&&s| s >= test_score).count();
    Ok(count_pvalue(above, knockoff_scores.len()))
}

#[inline]
fn count_pvalue(above: usize, k: usize) -> f64 {
    (1 + above) as f64 / (k + 1) as f64
}

/// Propensity-weighted conformal p-value
/// `w*_i + sum_j w*_j 1(s_j >= s_i)`, with `w* = w / (w_i + sum_j w_j)`
/// and `w = e / (1 - e)` after clipping.
pub fn weighted_pvalue(
    knockoff_scores: &[f64],
    knockoff_e: &[f64],
    test_score: f64,
    test_e: f64,
) -> Result<f64> {
    if knockoff_scores.is_empty() {
        return Err(CardError::Parameter("p-values need at least one knockoff".into()));
    }
    if knockoff_scores.len() != knockoff_e.len() {
        return Err(CardError::Contract(format!(
            "{} knockoff scores but {} propensities",
            knockoff_scores.len(),
            knockoff_e.len()
        )));
    }
    let clipped: Vec<f64> = knockoff_e.iter().map(|&e| clip_propensity(e)).collect();
    let w = propensity_weights(&clipped)?;
    let wi = propensity_weights(&[clip_propensity(test_e)])?[0];
    let cal = Calibration::new(knockoff_scores, Some(&w))?;
    cal.pvalue(test_score, wi)
}

/// Knockoff scores sorted ascending with suffix sums of their weights, so a
/// p-value costs one binary search.
struct Calibration {
    scores: Vec<f64>,
    /// `suffix[j]` is the total weight of `scores[j..]`.
    suffix: Vec<f64>,
    weighted: bool,
}

impl Calibration {
    fn new(scores: &[f64], weights: Option<&[f64]>) -> Result<Self> {
        if scores.is_empty() {
            return Err(CardError::Parameter("p-values need at least one knockoff".into()));
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
        let sorted: Vec<f64> = order.iter().map(|&j| scores[j]).collect();
        let mut suffix = vec![0.0; scores.len() + 1];
        if let Some(w) = weights {
            if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(CardError::Invariant("nonpositive propensity weight".into()));
            }
            for pos in (0..order.len()).rev() {
                suffix[pos] = suffix[pos + 1] + w[order[pos]];
            }
        }
        Ok(Calibration {
            scores: sorted,
            suffix,
            weighted: weights.is_some(),
        })
    }

    fn first_at_or_above(&self, s: f64) -> usize {
        self.scores.partition_point(|&v| v < s)
    }

    fn unweighted(&self, test_score: f64) -> f64 {
        let k = self.scores.len();
        count_pvalue(k - self.first_at_or_above(test_score), k)
    }

    fn pvalue(&self, test_score: f64, test_weight: f64) -> Result<f64> {
        if !self.weighted {
            return Ok(self.unweighted(test_score));
        }
        if !(test_weight > 0.0 && test_weight.is_finite()) {
            return Err(CardError::Invariant("nonpositive propensity weight".into()));
        }
        let above = self.suffix[self.first_at_or_above(test_score)];
        Ok((test_weight + above) / (test_weight + self.suffix[0]))
    }
}

/// Benjamini–Hochberg step-up selection: rejects every p-value at or below
/// the largest `p_(r)` with `p_(r) <= r * alpha / m`.
pub fn bh_adjust(pvalues: &[f64], alpha: f64) -> Result<Vec<bool>> {
    check_alpha(alpha)?;
    if pvalues.is_empty() {
        return Err(CardError::Parameter("BH needs at least one p-value".into()));
    }
    if pvalues.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(CardError::Parameter("p-values must lie in [0, 1]".into()));
    }
    let m = pvalues.len();
    let mut sorted = pvalues.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cutoff = (1..=m)
        .rev()
        .find(|&r| sorted[r - 1] <= r as f64 * alpha / m as f64)
        .map(|r| sorted[r - 1]);
    Ok(match cutoff {
        Some(c) => pvalues.iter().map(|&p| p <= c).collect(),
        None => vec![false; m],
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(CardError::Parameter(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// One treated subject's result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueEntry {
    /// Row of the subject in the input data (0-based).
    pub index: usize,
    pub score: f64,
    /// Odds weight of the subject; 1 when unweighted.
    pub weight: f64,
    pub pvalue: f64,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueReport {
    pub method: String,
    pub alpha: f64,
    /// Number of knockoffs (or calibration points) behind each p-value.
    pub k: usize,
    pub entries: Vec<PValueEntry>,
}

impl PValueReport {
    pub const CSV_COLUMNS: [&'static str; 5] = ["index", "score", "weight", "pvalue", "rejected"];

    pub fn pvalues(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.pvalue).collect()
    }

    pub fn rejected(&self) -> Vec<usize> {
        self.entries.iter().filter(|e| e.rejected).map(|e| e.index).collect()
    }

    pub fn n_rejected(&self) -> usize {
        self.entries.iter().filter(|e| e.rejected).count()
    }

    /// Writes one row per treated subject with columns
    /// `index,score,weight,pvalue,rejected` (`rejected` is 0 or 1).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::CSV_COLUMNS)?;
        for e in &self.entries {
            w.write_record([
                e.index.to_string(),
                e.score.to_string(),
                e.weight.to_string(),
                e.pvalue.to_string(),
                u8::from(e.rejected).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Turns scores into a report: conformal p-values of the test points against
/// the calibration points, then BH at `alpha`. `weights`, when given, holds
/// the odds weights of the calibration points followed by those of the test
/// points.
pub fn conformal_report(
    method: &str,
    test_index: &[usize],
    test_scores: &[f64],
    calibration_scores: &[f64],
    weights: Option<(&[f64], &[f64])>,
    alpha: f64,
) -> Result<PValueReport> {
    check_alpha(alpha)?;
    if test_index.len() != test_scores.len() {
        return Err(CardError::Contract("one score per test point is required".into()));
    }
    if test_index.is_empty() {
        return Err(CardError::Data("no treated subjects to test".into()));
    }
    let cal = Calibration::new(calibration_scores, weights.map(|(c, _)| c))?;
    let test_w: Vec<f64> = match weights {
        Some((_, t)) if t.len() == test_scores.len() => t.to_vec(),
        Some(_) => return Err(CardError::Contract("one weight per test point is required".into())),
        None => vec![1.0; test_scores.len()],
    };
    let pvalues = test_scores
        .iter()
        .zip(&test_w)
        .map(|(&s, &w)| cal.pvalue(s, w))
        .collect::<Result<Vec<f64>>>()?;
    let rejected = bh_adjust(&pvalues, alpha)?;
    let entries = (0..pvalues.len())
        .map(|i| PValueEntry {
            index: test_index[i],
            score: test_scores[i],
            weight: test_w[i],
            pvalue: pvalues[i],
            rejected: rejected[i],
        })
        .collect();
    Ok(PValueReport {
        method: method.to_string(),
        alpha,
        k: calibration_scores.len(),
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CardConfig {
    pub alpha: f64,
    pub knockoff_fraction: f64,
    pub propensity: PropensityMode,
    /// Cross-fitting folds for estimated propensities.
    pub folds: usize,
    pub scorer: ResponderForestParams,
    pub seed: u64,
}

impl Default for CardConfig {
    fn default() -> Self {
        CardConfig {
            alpha: 0.1,
            knockoff_fraction: 0.2,
            propensity: PropensityMode::None,
            folds: 10,
            scorer: ResponderForestParams::default(),
            seed: 0,
        }
    }
}

/// Everything produced by one CARD run.
#[derive(Debug, Clone)]
pub struct CardAnalysis {
    pub report: PValueReport,
    pub split: KnockoffSplit,
    pub propensity: Option<PropensityEstimates>,
    pub forest: ResponderForest,
}

/// Estimates propensities for `mode`, or `None` when unweighted.
pub(crate) fn estimate_propensity<R: Rng + ?Sized>(
    d: &Dataset,
    mode: PropensityMode,
    folds: usize,
    rng: &mut R,
    exec: Exec,
) -> Result<Option<PropensityEstimates>> {
    Ok(match mode {
        PropensityMode::None => None,
        PropensityMode::Oracle => Some(PropensityEstimates::oracle(d)?),
        PropensityMode::Logistic => Some(cross_fit_propensity(d, Learner::Logistic, folds, rng, exec)?),
        PropensityMode::Forest => Some(cross_fit_propensity(d, Learner::Forest, folds, rng, exec)?),
    })
}

/// Full pipeline: knockoff split, propensities, responder forest on
/// untreated-training versus treated-plus-knockoffs, scores, p-values, BH.
pub fn card_fit(d: &Dataset, config: &CardConfig, exec: Exec) -> Result<CardAnalysis> {
    check_alpha(config.alpha)?;
    if config.propensity == PropensityMode::Oracle && d.oracle_propensity().is_none() {
        return Err(CardError::Config(
            "propensity mode `oracle` needs a propensity column".into(),
        ));
    }
    d.require_arms(1, 2)?;
    let mut rng = rng_from_seed(config.seed);
    let split = split_knockoffs(d, config.knockoff_fraction, &mut rng)?;
    let propensity = estimate_propensity(d, config.propensity, config.folds, &mut rng, exec)?;
    let sample = ResponderSample::from_split(d, &split);
    let forest = fit_responder_forest(&sample, &config.scorer, rng.random(), exec)?;
    let knockoff_scores = forest.score_rows(d, &split.knockoffs, exec)?;
    let treated_scores = forest.score_rows(d, &split.treated, exec)?;
    let weights = match &propensity {
        Some(est) => {
            let w = propensity_weights(&est.e)?;
            Some((
                split.knockoffs.iter().map(|&i| w[i]).collect::<Vec<f64>>(),
                split.treated.iter().map(|&i| w[i]).collect::<Vec<f64>>(),
            ))
        }
        None => None,
    };
    let method = match config.propensity {
        PropensityMode::None => "card".to_string(),
        mode => format!("card_{}", mode.name()),
    };
    let report = conformal_report(
        &method,
        &split.treated,
        &treated_scores,
        &knockoff_scores,
        weights.as_ref().map(|(c, t)| (c.as_slice(), t.as_slice())),
        config.alpha,
    )?;
    Ok(CardAnalysis {
        report,
        split,
        propensity,
        forest,
    })
}

/// Runs CARD and returns its p-value report.
pub fn card_analyze(d: &Dataset, config: &CardConfig, exec: Exec) -> Result<PValueReport> {
    Ok(card_fit(d, config, exec)?.report)
}
