//! Responder trees and forests.
//!
//! A responder tree recursively partitions the covariate space. Inside each
//! covariate cell it fits a shallow classification tree that uses only the
//! response `y` to separate class 1 (treated subjects plus knockoffs) from
//! class 0 (the remaining untreated subjects). A covariate split is kept when
//! it lowers the responder loss
//!
//! ```text
//! Loss = sum over cells l of  (n_l / N) * Loss_y(l)
//! ```
//!
//! where `Loss_y(l)` is the count-weighted terminal impurity of the cell's
//! response subtree. The score of `(x, y)` is the class-1 proportion of the
//! response-subtree leaf reached by `y` inside the cell of `x`, averaged over
//! the trees of the forest.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, KnockoffSplit};
use crate::error::{CardError, Result};
use crate::exec::{derive_seed, rng_from_seed, Exec};
use crate::trees::{candidate_cuts, grow_sorted, split_threshold, ClassTree, Impurity, SPLIT_EPS};

/// Shape of the per-cell response subtree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubtreeParams {
    pub depth: usize,
    pub min_leaf: usize,
    pub impurity: Impurity,
}

impl Default for SubtreeParams {
    fn default() -> Self {
        SubtreeParams {
            depth: 2,
            min_leaf: 5,
            impurity: Impurity::Gini,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponderForestParams {
    pub n_trees: usize,
    pub max_x_depth: usize,
    /// Minimum observations in a covariate cell.
    pub min_leaf: usize,
    pub y_subtree_depth: usize,
    /// Minimum observations in a response-subtree leaf.
    pub y_min_leaf: usize,
    /// Covariates drawn at each covariate split; `None` means `ceil(sqrt(p))`.
    pub feature_subsample: Option<usize>,
    pub impurity: Impurity,
    /// A covariate split must lower the (whole-sample) responder loss by
    /// more than this.
    pub min_loss_decrease: f64,
    pub bootstrap: bool,
}

impl Default for ResponderForestParams {
    fn default() -> Self {
        ResponderForestParams {
            n_trees: 100,
            max_x_depth: 5,
            min_leaf: 20,
            y_subtree_depth: 2,
            y_min_leaf: 5,
            feature_subsample: None,
            impurity: Impurity::Gini,
            min_loss_decrease: 1e-4,
            bootstrap: true,
        }
    }
}

impl ResponderForestParams {
    pub fn subtree(&self) -> SubtreeParams {
        SubtreeParams {
            depth: self.y_subtree_depth,
            min_leaf: self.y_min_leaf,
            impurity: self.impurity,
        }
    }

    fn validate(&self, p: usize) -> Result<usize> {
        if self.n_trees == 0 {
            return Err(CardError::Parameter("n_trees must be at least 1".into()));
        }
        if self.min_leaf == 0 || self.y_min_leaf == 0 {
            return Err(CardError::Parameter("leaf sizes must be at least 1".into()));
        }
        if !(self.min_loss_decrease >= 0.0) {
            return Err(CardError::Parameter(format!(
                "min_loss_decrease must be nonnegative, got {}",
                self.min_loss_decrease
            )));
        }
        let mf = self
            .feature_subsample
            .unwrap_or_else(|| (p as f64).sqrt().ceil() as usize);
        if mf == 0 || mf > p {
            return Err(CardError::Parameter(format!(
                "feature_subsample {mf} outside 1..={p}"
            )));
        }
        Ok(mf)
    }
}

/// Training table for the scorer: class 1 marks the treated-plus-knockoff
/// pool, class 0 the untreated training pool.
#[derive(Debug, Clone)]
pub struct ResponderSample {
    x: Array2<f64>,
    y: Vec<f64>,
    class1: Vec<bool>,
}

impl ResponderSample {
    pub fn new(x: Array2<f64>, y: Vec<f64>, class1: Vec<bool>) -> Result<Self> {
        if x.nrows() != y.len() || y.len() != class1.len() {
            return Err(CardError::Contract(format!(
                "sample lengths differ: x {}, y {}, class {}",
                x.nrows(),
                y.len(),
                class1.len()
            )));
        }
        if x.ncols() == 0 {
            return Err(CardError::Data("responder trees need at least one covariate".into()));
        }
        Ok(ResponderSample { x, y, class1 })
    }

    /// Rows of the untreated training pool (class 0) followed by the treated
    /// subjects and knockoffs (class 1).
    pub fn from_split(d: &Dataset, split: &KnockoffSplit) -> Self {
        let rows: Vec<(usize, bool)> = split
            .untreated_train
            .iter()
            .map(|&i| (i, false))
            .chain(split.treated.iter().chain(&split.knockoffs).map(|&i| (i, true)))
            .collect();
        let x = Array2::from_shape_fn((rows.len(), d.p()), |(r, j)| d.x()[[rows[r].0, j]]);
        let y = rows.iter().map(|&(i, _)| d.y()[i]).collect();
        let class1 = rows.iter().map(|&(_, c)| c).collect();
        ResponderSample { x, y, class1 }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn class1(&self) -> &[bool] {
        &self.class1
    }
}

/// Count-weighted terminal impurity of the response subtree fit on one
/// cell's untreated (class 0) and treated (class 1) responses.
fn cell_mass(untreated: &[f64], treated: &[f64], sub: &SubtreeParams) -> f64 {
    let mut pairs: Vec<(f64, bool)> = untreated
        .iter()
        .map(|&y| (y, false))
        .chain(treated.iter().map(|&y| (y, true)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let prefix = prefix_counts(pairs.iter().map(|p| p.1));
    grow_sorted(
        &values,
        &prefix,
        (0, values.len()),
        sub.depth,
        sub.min_leaf,
        sub.impurity,
        None,
    )
}

fn prefix_counts(labels: impl Iterator<Item = bool>) -> Vec<usize> {
    let mut prefix = vec![0usize];
    let mut acc = 0;
    for l in labels {
        acc += usize::from(l);
        prefix.push(acc);
    }
    prefix
}

/// Responder loss of a covariate partition given, per cell, the untreated
/// and treated responses falling in it.
pub fn responder_loss(cells: &[(&[f64], &[f64])], sub: &SubtreeParams) -> Result<f64> {
    let total: usize = cells.iter().map(|(a, b)| a.len() + b.len()).sum();
    if cells.iter().any(|(a, b)| a.is_empty() && b.is_empty()) {
        return Err(CardError::Parameter("responder loss needs nonempty cells".into()));
    }
    if total == 0 {
        return Err(CardError::Parameter("responder loss of an empty partition".into()));
    }
    let mass: f64 = cells.iter().map(|(a, b)| cell_mass(a, b, sub)).sum();
    Ok(mass / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum XNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        count: usize,
        subtree: ClassTree,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponderTree {
    nodes: Vec<XNode>,
    n_features: usize,
}

impl ResponderTree {
    pub fn nodes(&self) -> &[XNode] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[XNode], at: usize) -> usize {
            match nodes[at] {
                XNode::Leaf { .. } => 0,
                XNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn is_root_only(&self) -> bool {
        matches!(self.nodes[0], XNode::Leaf { .. })
    }

    /// Index of the covariate cell containing `x`.
    pub fn cell_of(&self, x: &[f64]) -> Result<usize> {
        self.check_dim(x.len())?;
        Ok(self.cell(|f| x[f]))
    }

    pub fn score(&self, x: &[f64], y: f64) -> Result<f64> {
        self.check_dim(x.len())?;
        Ok(self.route(|f| x[f], y))
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.n_features {
            return Err(CardError::Contract(format!(
                "responder tree was fit on {} covariates, got {got}",
                self.n_features
            )));
        }
        Ok(())
    }

    #[inline]
    fn cell(&self, x: impl Fn(usize) -> f64) -> usize {
        let mut at = 0;
        while let XNode::Split {
            feature,
            threshold,
            left,
            right,
        } = self.nodes[at]
        {
            at = if x(feature) <= threshold { left } else { right };
        }
        at
    }

    #[inline]
    pub(crate) fn route(&self, x: impl Fn(usize) -> f64, y: f64) -> f64 {
        match &self.nodes[self.cell(x)] {
            XNode::Leaf { subtree, .. } => subtree.route(|_| y),
            XNode::Split { .. } => unreachable!("cell() stops at a leaf"),
        }
    }
}

fn check_sample(sample: &ResponderSample, min_leaf: usize) -> Result<()> {
    let n1 = sample.class1.iter().filter(|&&c| c).count();
    if n1 == 0 || n1 == sample.len() {
        return Err(CardError::Data(
            "responder trees need both classes in the training sample".into(),
        ));
    }
    if sample.len() < 2 * min_leaf {
        return Err(CardError::Data(format!(
            "responder trees need at least {} observations, found {}",
            2 * min_leaf,
            sample.len()
        )));
    }
    Ok(())
}

/// Fits one responder tree on every row of `sample` (no bootstrap).
pub fn fit_responder_tree<R: Rng + ?Sized>(
    sample: &ResponderSample,
    params: &ResponderForestParams,
    rng: &mut R,
) -> Result<ResponderTree> {
    let mf = params.validate(sample.p())?;
    check_sample(sample, params.min_leaf)?;
    Ok(grow_tree(sample, (0..sample.len()).collect(), params, mf, rng))
}

fn grow_tree<R: Rng + ?Sized>(
    sample: &ResponderSample,
    mut rows: Vec<usize>,
    params: &ResponderForestParams,
    max_features: usize,
    rng: &mut R,
) -> ResponderTree {
    rows.sort_by(|&a, &b| sample.y[a].total_cmp(&sample.y[b]).then(a.cmp(&b)));
    let mut grower = Grower {
        sample,
        params,
        sub: params.subtree(),
        max_features,
        total: rows.len() as f64,
        rng,
        nodes: Vec::new(),
        scratch: Scratch::default(),
    };
    grower.grow(rows, 0);
    ResponderTree {
        nodes: grower.nodes,
        n_features: sample.p(),
    }
}

#[derive(Default)]
struct Scratch {
    xs: Vec<f64>,
    sorted_xs: Vec<f64>,
    left_y: Vec<f64>,
    right_y: Vec<f64>,
    left_prefix: Vec<usize>,
    right_prefix: Vec<usize>,
}

struct Grower<'a, R: ?Sized> {
    sample: &'a ResponderSample,
    params: &'a ResponderForestParams,
    sub: SubtreeParams,
    max_features: usize,
    total: f64,
    rng: &'a mut R,
    nodes: Vec<XNode>,
    scratch: Scratch,
}

impl<R: Rng + ?Sized> Grower<'_, R> {
    /// `rows` are ordered by response.
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let at = self.nodes.len();
        let values: Vec<f64> = rows.iter().map(|&r| self.sample.y[r]).collect();
        let prefix = prefix_counts(rows.iter().map(|&r| self.sample.class1[r]));
        let mut subtree_nodes = Vec::new();
        let mass = grow_sorted(
            &values,
            &prefix,
            (0, rows.len()),
            self.sub.depth,
            self.sub.min_leaf,
            self.sub.impurity,
            Some(&mut subtree_nodes),
        );
        self.nodes.push(XNode::Leaf {
            count: rows.len(),
            subtree: ClassTree::from_nodes(subtree_nodes, 1),
        });
        if depth >= self.params.max_x_depth || rows.len() < 2 * self.params.min_leaf {
            return at;
        }
        let Some((feature, threshold, children_mass)) = self.best_split(&rows) else {
            return at;
        };
        if (mass - children_mass) / self.total <= self.params.min_loss_decrease {
            return at;
        }
        let x = self.sample.x.view();
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&r| x[[r, feature]] <= threshold);
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        self.nodes[at] = XNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        at
    }

    /// Best covariate split of a node by total children mass. Ties keep the
    /// lowest feature, then the smallest threshold.
    fn best_split(&mut self, rows: &[usize]) -> Option<(usize, f64, f64)> {
        let p = self.sample.p();
        let features: Vec<usize> = if self.max_features < p {
            let mut f = rand::seq::index::sample(self.rng, p, self.max_features).into_vec();
            f.sort_unstable();
            f
        } else {
            (0..p).collect()
        };
        let x = self.sample.x.view();
        let y = &self.sample.y;
        let class1 = &self.sample.class1;
        let sub = self.sub;
        let s = &mut self.scratch;
        let mut best: Option<(usize, f64, f64)> = None;
        for feature in features {
            s.xs.clear();
            s.xs.extend(rows.iter().map(|&r| x[[r, feature]]));
            s.sorted_xs.clear();
            s.sorted_xs.extend_from_slice(&s.xs);
            s.sorted_xs.sort_by(f64::total_cmp);
            for pos in candidate_cuts(&s.sorted_xs, self.params.min_leaf) {
                let threshold = split_threshold(s.sorted_xs[pos - 1], s.sorted_xs[pos]);
                s.left_y.clear();
                s.right_y.clear();
                s.left_prefix.clear();
                s.right_prefix.clear();
                s.left_prefix.push(0);
                s.right_prefix.push(0);
                let (mut l1, mut r1) = (0usize, 0usize);
                for (j, &r) in rows.iter().enumerate() {
                    let c = usize::from(class1[r]);
                    if s.xs[j] <= threshold {
                        s.left_y.push(y[r]);
                        l1 += c;
                        s.left_prefix.push(l1);
                    } else {
                        s.right_y.push(y[r]);
                        r1 += c;
                        s.right_prefix.push(r1);
                    }
                }
                let mass = grow_sorted(
                    &s.left_y,
                    &s.left_prefix,
                    (0, s.left_y.len()),
                    sub.depth,
                    sub.min_leaf,
                    sub.impurity,
                    None,
                ) + grow_sorted(
                    &s.right_y,
                    &s.right_prefix,
                    (0, s.right_y.len()),
                    sub.depth,
                    sub.min_leaf,
                    sub.impurity,
                    None,
                );
                if best.is_none_or(|(_, _, b)| mass < b - SPLIT_EPS * rows.len() as f64) {
                    best = Some((feature, threshold, mass));
                }
            }
        }
        best
    }
}

/// Ensemble of responder trees; the score is the mean tree score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponderForest {
    trees: Vec<ResponderTree>,
}

impl ResponderForest {
    pub fn from_trees(trees: Vec<ResponderTree>) -> Result<Self> {
        if trees.is_empty() {
            return Err(CardError::Parameter("a forest needs at least one tree".into()));
        }
        Ok(ResponderForest { trees })
    }

    pub fn trees(&self) -> &[ResponderTree] {
        &self.trees
    }

    pub fn score(&self, x: &[f64], y: f64) -> Result<f64> {
        self.trees[0].check_dim(x.len())?;
        Ok(self.route(|f| x[f], y))
    }

    #[inline]
    fn route(&self, x: impl Fn(usize) -> f64 + Copy, y: f64) -> f64 {
        self.trees.iter().map(|t| t.route(x, y)).sum::<f64>() / self.trees.len() as f64
    }

    /// Scores the given rows of a dataset.
    pub fn score_rows(&self, d: &Dataset, rows: &[usize], exec: Exec) -> Result<Vec<f64>> {
        self.trees[0].check_dim(d.p())?;
        let x = d.x();
        let y: ArrayView1<'_, f64> = d.y();
        Ok(exec.map(rows.len(), |k| {
            let i = rows[k];
            self.route(|f| x[[i, f]], y[i])
        }))
    }

    /// Pretty-printed JSON dump of every tree (covariate nodes with their
    /// response subtrees).
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Grows `n_trees` responder trees, each on a bootstrap resample (when
/// enabled) with its own RNG stream derived from `seed`.
pub fn fit_responder_forest(
    sample: &ResponderSample,
    params: &ResponderForestParams,
    seed: u64,
    exec: Exec,
) -> Result<ResponderForest> {
    let mf = params.validate(sample.p())?;
    check_sample(sample, params.min_leaf)?;
    let n = sample.len();
    let trees = exec.map(params.n_trees, |b| {
        let mut rng = rng_from_seed(derive_seed(seed, b as u64));
        let rows: Vec<usize> = if params.bootstrap {
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        grow_tree(sample, rows, params, mf, &mut rng)
    });
    ResponderForest::from_trees(trees)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::rng_from_seed;
    use crate::trees::Node;

    fn sub(min_leaf: usize) -> SubtreeParams {
        SubtreeParams {
            depth: 2,
            min_leaf,
            impurity: Impurity::Gini,
        }
    }

    /// Independent oracle: exhaustive depth-2 greedy search over every
    /// threshold between distinct values, evaluated by direct counting.
    fn brute_leaf_mass(untreated: &[f64], treated: &[f64], depth: usize) -> f64 {
        let pts: Vec<(f64, bool)> = untreated
            .iter()
            .map(|&y| (y, false))
            .chain(treated.iter().map(|&y| (y, true)))
            .collect();
        fn mass(pts: &[(f64, bool)]) -> f64 {
            let n = pts.len() as f64;
            let n1 = pts.iter().filter(|p| p.1).count() as f64;
            if n == 0.0 {
                0.0
            } else {
                n * (1.0 - (n1 / n).powi(2) - ((n - n1) / n).powi(2))
            }
        }
        fn rec(pts: &[(f64, bool)], depth: usize) -> f64 {
            let parent = mass(pts);
            if depth == 0 {
                return parent;
            }
            let mut vals: Vec<f64> = pts.iter().map(|p| p.0).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            let mut best: Option<(f64, f64)> = None;
            for w in vals.windows(2) {
                let t = (w[0] + w[1]) / 2.0;
                let (l, r): (Vec<_>, Vec<_>) = pts.iter().partition(|p| p.0 <= t);
                let m = mass(&l) + mass(&r);
                if best.is_none_or(|(b, _)| m < b - 1e-12) {
                    best = Some((m, t));
                }
            }
            match best {
                Some((m, t)) if m < parent - 1e-12 => {
                    let (l, r): (Vec<_>, Vec<_>) = pts.iter().partition(|p| p.0 <= t);
                    rec(&l, depth - 1) + rec(&r, depth - 1)
                }
                _ => parent,
            }
        }
        rec(&pts, depth)
    }

    #[test]
    fn separable_cell_has_zero_loss() {
        let loss = responder_loss(&[(&[0.0, 0.0], &[1.0, 1.0])], &sub(1)).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn inseparable_cell_keeps_parent_impurity() {
        let (y0, y1) = ([0.0, 1.0], [0.0, 1.0]);
        let loss = responder_loss(&[(&y0, &y1)], &sub(1)).unwrap();
        let oracle = brute_leaf_mass(&y0, &y1, 2) / 4.0;
        assert_eq!(oracle, 0.5);
        assert!((loss - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cell_weights_follow_cell_shares() {
        // 30 observations at one response value, half in each class: 0.5.
        let a0 = vec![1.0; 15];
        let a1 = vec![1.0; 15];
        // 10 treated observations: pure.
        let b1 = vec![2.0; 10];
        let loss = responder_loss(&[(&a0, &a1), (&[], &b1)], &sub(1)).unwrap();
        assert!((loss - 0.375).abs() < 1e-15);
    }

    #[test]
    fn cell_mass_matches_exhaustive_search() {
        let mut rng = rng_from_seed(77);
        for _ in 0..200 {
            let n0 = rng.random_range(1..25);
            let n1 = rng.random_range(1..25);
            let y0: Vec<f64> = (0..n0).map(|_| f64::from(rng.random_range(0..12u8))).collect();
            let y1: Vec<f64> = (0..n1).map(|_| f64::from(rng.random_range(3..15u8))).collect();
            let fast = cell_mass(&y0, &y1, &sub(1));
            let oracle = brute_leaf_mass(&y0, &y1, 2);
            assert!((fast - oracle).abs() < 1e-9, "{fast} vs {oracle}");
        }
    }

    #[test]
    fn empty_cell_rejected() {
        assert!(responder_loss(&[(&[], &[])], &sub(1)).is_err());
    }

    fn leaf_tree(proportions: &[(f64, usize)]) -> ResponderTree {
        let subtree = match proportions {
            [(p, c)] => ClassTree::leaf(*p, *c, 1),
            _ => unreachable!(),
        };
        ResponderTree {
            nodes: vec![XNode::Leaf { count: 4, subtree }],
            n_features: 2,
        }
    }

    #[test]
    fn score_is_leaf_proportion() {
        // 3 treated and 1 untreated in the reached response leaf.
        let tree = leaf_tree(&[(0.75, 4)]);
        assert_eq!(tree.score(&[0.1, 0.2], 5.0).unwrap(), 0.75);

        let pure_untreated = leaf_tree(&[(0.0, 6)]);
        assert_eq!(pure_untreated.score(&[0.9, 0.9], -1.0).unwrap(), 0.0);

        let forest = ResponderForest::from_trees(vec![tree.clone(); 3]).unwrap();
        assert_eq!(forest.score(&[0.1, 0.2], 5.0).unwrap(), 0.75);
        assert!(matches!(forest.score(&[0.1], 5.0), Err(CardError::Contract(_))));
    }

    #[test]
    fn counts_in_fitted_leaf_give_score() {
        // One covariate cell; response subtree leaf above 2.5 holds 3 class-1
        // and 1 class-0 observations.
        let x = Array2::zeros((8, 1));
        let y = vec![0.0, 0.1, 0.2, 0.3, 3.0, 3.1, 3.2, 3.3];
        let class1 = vec![false, false, false, false, true, true, true, false];
        let sample = ResponderSample::new(x, y, class1).unwrap();
        let params = ResponderForestParams {
            max_x_depth: 0,
            min_leaf: 1,
            y_min_leaf: 4,
            feature_subsample: Some(1),
            ..Default::default()
        };
        let tree = fit_responder_tree(&sample, &params, &mut rng_from_seed(0)).unwrap();
        assert!(tree.is_root_only());
        assert_eq!(tree.score(&[0.0], 3.05).unwrap(), 0.75);
        assert_eq!(tree.score(&[0.0], 0.0).unwrap(), 0.0);
    }

    fn shifted_sample(n: usize, seed: u64) -> ResponderSample {
        // Class-1 responses are shifted up only where x1 > 0.5.
        let mut rng = rng_from_seed(seed);
        let x = Array2::from_shape_fn((n, 2), |_| rng.random::<f64>());
        let class1: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        let y = (0..n)
            .map(|i| {
                let shift = if class1[i] && x[[i, 1]] > 0.5 { 3.0 } else { 0.0 };
                rng.random::<f64>() + shift
            })
            .collect();
        ResponderSample::new(x, y, class1).unwrap()
    }

    #[test]
    fn root_split_finds_generating_boundary() {
        let sample = shifted_sample(2000, 4);
        let params = ResponderForestParams {
            feature_subsample: Some(2),
            ..Default::default()
        };
        let tree = fit_responder_tree(&sample, &params, &mut rng_from_seed(1)).unwrap();
        match tree.nodes()[0] {
            XNode::Split { feature, threshold, .. } => {
                assert_eq!(feature, 1);
                assert!((threshold - 0.5).abs() < 0.1, "threshold {threshold}");
            }
            _ => panic!("expected a covariate split"),
        }
    }

    #[test]
    fn max_depth_zero_reduces_to_response_subtree() {
        let sample = shifted_sample(300, 8);
        let params = ResponderForestParams {
            max_x_depth: 0,
            feature_subsample: Some(2),
            ..Default::default()
        };
        let tree = fit_responder_tree(&sample, &params, &mut rng_from_seed(1)).unwrap();
        assert_eq!(tree.nodes().len(), 1);
        let XNode::Leaf { subtree, count } = &tree.nodes()[0] else {
            panic!("expected a leaf")
        };
        assert_eq!(*count, 300);
        let generic = crate::trees::fit_class_tree(
            Array2::from_shape_vec((300, 1), sample.y().to_vec()).unwrap().view(),
            sample.class1(),
            &crate::trees::TreeParams {
                max_depth: 2,
                min_leaf: params.y_min_leaf,
                impurity: Impurity::Gini,
                max_features: None,
            },
            &mut rng_from_seed(0),
        )
        .unwrap();
        assert_eq!(subtree, &generic);
    }

    #[test]
    fn single_tree_forest_equals_tree() {
        let sample = shifted_sample(400, 12);
        let params = ResponderForestParams {
            n_trees: 1,
            bootstrap: false,
            feature_subsample: Some(1),
            ..Default::default()
        };
        let forest = fit_responder_forest(&sample, &params, 5, Exec::Sequential).unwrap();
        let tree = fit_responder_tree(&sample, &params, &mut rng_from_seed(derive_seed(5, 0))).unwrap();
        assert_eq!(forest.trees()[0], tree);
    }

    #[test]
    fn forest_scores_in_unit_interval_and_deterministic() {
        let sample = shifted_sample(500, 2);
        let params = ResponderForestParams {
            n_trees: 12,
            ..Default::default()
        };
        let a = fit_responder_forest(&sample, &params, 3, Exec::Sequential).unwrap();
        let b = crate::exec::with_workers(8, |exec| fit_responder_forest(&sample, &params, 3, exec).unwrap());
        assert_eq!(a, b);
        let mut rng = rng_from_seed(0);
        for _ in 0..200 {
            let x = [rng.random::<f64>() * 3.0 - 1.0, rng.random::<f64>()];
            let s = a.score(&x, rng.random::<f64>() * 6.0 - 1.0).unwrap();
            assert!((0.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn rejects_single_class_and_zero_trees() {
        let x = Array2::zeros((50, 1));
        let sample = ResponderSample::new(x, vec![0.0; 50], vec![true; 50]).unwrap();
        assert!(matches!(
            fit_responder_tree(&sample, &ResponderForestParams::default(), &mut rng_from_seed(0)),
            Err(CardError::Data(_))
        ));
        let sample = shifted_sample(100, 1);
        let params = ResponderForestParams { n_trees: 0, ..Default::default() };
        assert!(matches!(
            fit_responder_forest(&sample, &params, 0, Exec::Sequential),
            Err(CardError::Parameter(_))
        ));
    }

    #[test]
    fn json_dump_round_trips() {
        let sample = shifted_sample(200, 3);
        let params = ResponderForestParams { n_trees: 2, ..Default::default() };
        let forest = fit_responder_forest(&sample, &params, 1, Exec::Sequential).unwrap();
        let json = forest.to_json().unwrap();
        assert!(json.contains("\"kind\": \"split\"") || json.contains("\"kind\": \"leaf\""));
        let back: ResponderForest = serde_json::from_str(&json).unwrap();
        assert_eq!(back, forest);
    }

    #[test]
    fn leaf_subtrees_only_use_the_response() {
        let sample = shifted_sample(600, 21);
        let forest = fit_responder_forest(&sample, &ResponderForestParams { n_trees: 5, ..Default::default() }, 2, Exec::Sequential).unwrap();
        for tree in forest.trees() {
            for node in tree.nodes() {
                if let XNode::Leaf { subtree, .. } = node {
                    assert_eq!(subtree.n_features(), 1);
                    assert!(subtree.depth() <= 2);
                    for n in subtree.nodes() {
                        if let Node::Split { feature, .. } = n {
                            assert_eq!(*feature, 0);
                        }
                    }
                }
            }
        }
    }
}
