//! CART-style binary classification trees and a random-forest classifier.
//!
//! Candidate thresholds are midpoints between adjacent distinct sorted values,
//! taken at up to [`MAX_CANDIDATES`] empirical quantile positions of the node
//! (every boundary when the node has at most that many distinct values).
//! Among equally good splits the lowest feature index wins, then the
//! smallest threshold. Routing sends `value <= threshold` left.

use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CardError, Result};
use crate::exec::{derive_seed, rng_from_seed, Exec};

pub const MAX_CANDIDATES: usize = 32;

/// Relative slack (per observation) below which a split is not considered
/// an impurity decrease.
pub(crate) const SPLIT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Impurity {
    #[default]
    Gini,
    Entropy,
}

/// Node impurity of per-class counts. Gini is `1 - sum p_c^2`, entropy is
/// `-sum p_c log2 p_c` with `0 log 0 = 0`.
pub fn impurity(counts: &[usize], kind: Impurity) -> Result<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(CardError::Parameter(
            "impurity of an empty node is undefined".into(),
        ));
    }
    let total = total as f64;
    let value = match kind {
        Impurity::Gini => 1.0 - counts.iter().map(|&c| (c as f64 / total).powi(2)).sum::<f64>(),
        Impurity::Entropy => -counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / total;
                p * p.log2()
            })
            .sum::<f64>(),
    };
    Ok(value.max(0.0))
}

/// Binary impurity of a node with `n1` positives among `n > 0`.
#[inline]
pub(crate) fn binary_impurity(n1: usize, n: usize, kind: Impurity) -> f64 {
    let p = n1 as f64 / n as f64;
    match kind {
        Impurity::Gini => 2.0 * p * (1.0 - p),
        Impurity::Entropy => {
            let term = |q: f64| if q > 0.0 { -q * q.log2() } else { 0.0 };
            term(p) + term(1.0 - p)
        }
    }
}

/// Count-weighted impurity `n * impurity`.
#[inline]
pub(crate) fn impurity_mass(n1: usize, n: usize, kind: Impurity) -> f64 {
    if n == 0 {
        0.0
    } else {
        n as f64 * binary_impurity(n1, n, kind)
    }
}

/// Cut positions into an ascending slice: a cut at `pos` sends
/// `sorted[..pos]` left. Only positions between distinct values whose both
/// sides hold at least `min_leaf` entries are returned, in ascending order.
pub(crate) fn candidate_cuts(sorted: &[f64], min_leaf: usize) -> Vec<usize> {
    let m = sorted.len();
    let min_leaf = min_leaf.max(1);
    if m < 2 * min_leaf {
        return Vec::new();
    }
    let boundaries: Vec<usize> = (1..m).filter(|&i| sorted[i - 1] < sorted[i]).collect();
    let admissible = |pos: usize| pos >= min_leaf && m - pos >= min_leaf;
    if boundaries.len() < MAX_CANDIDATES {
        return boundaries.into_iter().filter(|&p| admissible(p)).collect();
    }
    let mut cuts: Vec<usize> = Vec::with_capacity(MAX_CANDIDATES);
    for j in 1..=MAX_CANDIDATES {
        let target = (j * m / (MAX_CANDIDATES + 1)).max(1);
        let at = boundaries.partition_point(|&b| b < target);
        if let Some(&pos) = boundaries.get(at) {
            if admissible(pos) && cuts.last() != Some(&pos) {
                cuts.push(pos);
            }
        }
    }
    cuts
}

/// Midpoint of two adjacent distinct sorted values, guaranteed to satisfy
/// `lo <= t < hi` so that routing by `<=` reproduces the cut.
#[inline]
pub(crate) fn split_threshold(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid >= hi || mid < lo {
        lo
    } else {
        mid
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        proportion: f64,
        count: usize,
    },
}

/// Array-backed binary tree; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTree {
    nodes: Vec<Node>,
    n_features: usize,
}

impl ClassTree {
    pub(crate) fn from_nodes(nodes: Vec<Node>, n_features: usize) -> Self {
        ClassTree { nodes, n_features }
    }

    pub fn leaf(proportion: f64, count: usize, n_features: usize) -> Self {
        ClassTree {
            nodes: vec![Node::Leaf { proportion, count }],
            n_features,
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.nodes.iter().filter_map(|n| match *n {
            Node::Leaf { proportion, count } => Some((proportion, count)),
            Node::Split { .. } => None,
        })
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(CardError::Contract(format!(
                "tree was fit on {} features, got {}",
                self.n_features,
                x.len()
            )));
        }
        Ok(self.route(|f| x[f]))
    }

    /// Class-1 proportion of the leaf reached by a feature accessor.
    #[inline]
    pub(crate) fn route(&self, value: impl Fn(usize) -> f64) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { proportion, .. } => return proportion,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if value(feature) <= threshold { left } else { right },
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub impurity: Impurity,
    /// Features drawn (without replacement) at every node; `None` uses all.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 8,
            min_leaf: 5,
            impurity: Impurity::Gini,
            max_features: None,
        }
    }
}

/// Greedy CART induction on a binary label. A split is kept only if it
/// strictly lowers the count-weighted impurity of its node.
pub fn fit_class_tree<R: Rng + ?Sized>(
    features: ArrayView2<'_, f64>,
    labels: &[bool],
    params: &TreeParams,
    rng: &mut R,
) -> Result<ClassTree> {
    check_fit_inputs(features, labels, params.min_leaf)?;
    if let Some(mf) = params.max_features {
        if mf == 0 || mf > features.ncols() {
            return Err(CardError::Parameter(format!(
                "max_features {mf} outside 1..={}",
                features.ncols()
            )));
        }
    }
    let rows: Vec<usize> = (0..labels.len()).collect();
    Ok(grow_rows(features, labels, rows, params, rng))
}

fn check_fit_inputs(features: ArrayView2<'_, f64>, labels: &[bool], min_leaf: usize) -> Result<()> {
    if features.nrows() != labels.len() {
        return Err(CardError::Contract(format!(
            "{} feature rows for {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(CardError::Data("cannot fit a tree on zero observations".into()));
    }
    if features.ncols() == 0 {
        return Err(CardError::Data("cannot fit a tree without features".into()));
    }
    if min_leaf == 0 {
        return Err(CardError::Parameter("min_leaf must be at least 1".into()));
    }
    Ok(())
}

pub(crate) fn grow_rows<R: Rng + ?Sized>(
    features: ArrayView2<'_, f64>,
    labels: &[bool],
    rows: Vec<usize>,
    params: &TreeParams,
    rng: &mut R,
) -> ClassTree {
    let mut grower = Grower {
        x: features,
        labels,
        params,
        rng,
        nodes: Vec::new(),
        pairs: Vec::with_capacity(rows.len()),
    };
    grower.grow(rows, 0);
    ClassTree::from_nodes(grower.nodes, features.ncols())
}

struct Grower<'a, R: ?Sized> {
    x: ArrayView2<'a, f64>,
    labels: &'a [bool],
    params: &'a TreeParams,
    rng: &'a mut R,
    nodes: Vec<Node>,
    pairs: Vec<(f64, bool)>,
}

impl<R: Rng + ?Sized> Grower<'_, R> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let m = rows.len();
        let n1 = rows.iter().filter(|&&r| self.labels[r]).count();
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf {
            proportion: n1 as f64 / m as f64,
            count: m,
        });
        if depth >= self.params.max_depth || n1 == 0 || n1 == m || m < 2 * self.params.min_leaf {
            return at;
        }
        let Some((feature, threshold)) = self.best_split(&rows, n1) else {
            return at;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&r| self.x[[r, feature]] <= threshold);
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        self.nodes[at] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        at
    }

    fn best_split(&mut self, rows: &[usize], n1: usize) -> Option<(usize, f64)> {
        let p = self.x.ncols();
        let m = rows.len();
        let kind = self.params.impurity;
        let candidates: Vec<usize> = match self.params.max_features {
            Some(mf) if mf < p => {
                let mut f = rand::seq::index::sample(self.rng, p, mf).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..p).collect(),
        };
        let parent = impurity_mass(n1, m, kind);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut values = Vec::with_capacity(m);
        let mut prefix = Vec::with_capacity(m + 1);
        for feature in candidates {
            self.pairs.clear();
            self.pairs
                .extend(rows.iter().map(|&r| (self.x[[r, feature]], self.labels[r])));
            self.pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            values.clear();
            values.extend(self.pairs.iter().map(|&(v, _)| v));
            prefix.clear();
            prefix.push(0usize);
            let mut acc = 0;
            for &(_, l) in &self.pairs {
                acc += usize::from(l);
                prefix.push(acc);
            }
            for pos in candidate_cuts(&values, self.params.min_leaf) {
                let l1 = prefix[pos];
                let mass = impurity_mass(l1, pos, kind) + impurity_mass(n1 - l1, m - pos, kind);
                if best.is_none_or(|(b, _, _)| mass < b - SPLIT_EPS * m as f64) {
                    best = Some((mass, feature, split_threshold(values[pos - 1], values[pos])));
                }
            }
        }
        match best {
            Some((mass, feature, threshold)) if mass < parent - SPLIT_EPS * m as f64 => {
                Some((feature, threshold))
            }
            _ => None,
        }
    }
}

/// Grows a tree on one pre-sorted feature. `prefix[i]` counts positives in
/// `values[..i]`. Children of a node are contiguous sub-ranges, so no
/// re-sorting is needed. Returns the summed leaf mass (`count * impurity`)
/// and, when `nodes` is given, appends the tree in the layout used by
/// [`ClassTree`].
pub(crate) fn grow_sorted(
    values: &[f64],
    prefix: &[usize],
    range: (usize, usize),
    depth_left: usize,
    min_leaf: usize,
    kind: Impurity,
    mut nodes: Option<&mut Vec<Node>>,
) -> f64 {
    let (lo, hi) = range;
    let m = hi - lo;
    let n1 = prefix[hi] - prefix[lo];
    let parent = impurity_mass(n1, m, kind);
    let at = nodes.as_deref_mut().map(|ns| {
        ns.push(Node::Leaf {
            proportion: n1 as f64 / m as f64,
            count: m,
        });
        ns.len() - 1
    });
    if depth_left == 0 || n1 == 0 || n1 == m {
        return parent;
    }
    let mut best: Option<(f64, usize)> = None;
    for pos in candidate_cuts(&values[lo..hi], min_leaf) {
        let cut = lo + pos;
        let l1 = prefix[cut] - prefix[lo];
        let mass = impurity_mass(l1, pos, kind) + impurity_mass(n1 - l1, m - pos, kind);
        if best.is_none_or(|(b, _)| mass < b - SPLIT_EPS * m as f64) {
            best = Some((mass, cut));
        }
    }
    match best {
        Some((mass, cut)) if mass < parent - SPLIT_EPS * m as f64 => {
            let left_at = nodes.as_deref().map(|ns| ns.len());
            let left_mass = grow_sorted(
                values,
                prefix,
                (lo, cut),
                depth_left - 1,
                min_leaf,
                kind,
                nodes.as_deref_mut(),
            );
            let right_at = nodes.as_deref().map(|ns| ns.len());
            let right_mass = grow_sorted(
                values,
                prefix,
                (cut, hi),
                depth_left - 1,
                min_leaf,
                kind,
                nodes.as_deref_mut(),
            );
            if let (Some(ns), Some(at), Some(left), Some(right)) = (nodes, at, left_at, right_at) {
                ns[at] = Node::Split {
                    feature: 0,
                    threshold: split_threshold(values[cut - 1], values[cut]),
                    left,
                    right,
                };
            }
            left_mass + right_mass
        }
        _ => parent,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features considered at each split; `None` means `ceil(sqrt(q))`.
    pub feature_subsample: Option<usize>,
    pub impurity: Impurity,
    pub bootstrap: bool,
}

impl ForestParams {
    /// Generic classifier used by the AdaDetect baseline.
    pub fn adadetect() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: 8,
            min_leaf: 5,
            feature_subsample: None,
            impurity: Impurity::Gini,
            bootstrap: true,
        }
    }

    /// Classifier used for forest propensity estimation.
    pub fn propensity() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: 6,
            min_leaf: 10,
            ..Self::adadetect()
        }
    }

    pub(crate) fn resolved_subsample(&self, q: usize) -> Result<usize> {
        let mf = self
            .feature_subsample
            .unwrap_or_else(|| (q as f64).sqrt().ceil() as usize);
        if mf == 0 || mf > q {
            return Err(CardError::Parameter(format!(
                "feature_subsample {mf} outside 1..={q}"
            )));
        }
        Ok(mf)
    }
}

impl Default for ForestParams {
    fn default() -> Self {
        Self::adadetect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassForest {
    trees: Vec<ClassTree>,
}

impl ClassForest {
    pub fn from_trees(trees: Vec<ClassTree>) -> Result<Self> {
        if trees.is_empty() {
            return Err(CardError::Parameter("a forest needs at least one tree".into()));
        }
        Ok(ClassForest { trees })
    }

    pub fn trees(&self) -> &[ClassTree] {
        &self.trees
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        let n_features = self.trees[0].n_features();
        if x.len() != n_features {
            return Err(CardError::Contract(format!(
                "forest was fit on {n_features} features, got {}",
                x.len()
            )));
        }
        Ok(self.route(|f| x[f]))
    }

    #[inline]
    pub(crate) fn route(&self, value: impl Fn(usize) -> f64 + Copy) -> f64 {
        self.trees.iter().map(|t| t.route(value)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Random forest: each tree sees a bootstrap resample (when enabled) and
/// draws `feature_subsample` candidate features at every split. Tree `b`
/// uses its own RNG stream derived from `seed`, so the fit does not depend
/// on scheduling.
pub fn fit_forest_classifier(
    features: ArrayView2<'_, f64>,
    labels: &[bool],
    params: &ForestParams,
    seed: u64,
    exec: Exec,
) -> Result<ClassForest> {
    check_fit_inputs(features, labels, params.min_leaf)?;
    if params.n_trees == 0 {
        return Err(CardError::Parameter("n_trees must be at least 1".into()));
    }
    let q = features.ncols();
    let mf = params.resolved_subsample(q)?;
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        impurity: params.impurity,
        max_features: (mf < q).then_some(mf),
    };
    let n = labels.len();
    let trees = exec.map(params.n_trees, |b| {
        let mut rng = rng_from_seed(derive_seed(seed, b as u64));
        let rows: Vec<usize> = if params.bootstrap {
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        grow_rows(features, labels, rows, &tree_params, &mut rng)
    });
    ClassForest::from_trees(trees)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::exec::rng_from_seed;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn column(values: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((values.len(), 1), values.to_vec()).unwrap()
    }

    /// Brute force: every threshold between distinct values on every feature.
    fn brute_best_split(x: &Array2<f64>, labels: &[bool], min_leaf: usize) -> Option<(f64, usize, f64)> {
        let m = labels.len();
        let n1 = labels.iter().filter(|&&l| l).count();
        let mut best: Option<(f64, usize, f64)> = None;
        for f in 0..x.ncols() {
            let mut vals: Vec<f64> = x.column(f).to_vec();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let t = (w[0] + w[1]) / 2.0;
                let left: Vec<usize> = (0..m).filter(|&i| x[[i, f]] <= t).collect();
                if left.len() < min_leaf || m - left.len() < min_leaf {
                    continue;
                }
                let l1 = left.iter().filter(|&&i| labels[i]).count();
                let mass = impurity_mass(l1, left.len(), Impurity::Gini)
                    + impurity_mass(n1 - l1, m - left.len(), Impurity::Gini);
                if best.is_none_or(|(b, _, _)| mass < b - 1e-12) {
                    best = Some((mass, f, t));
                }
            }
        }
        best
    }

    #[test]
    fn impurity_values() {
        assert_eq!(impurity(&[10, 0], Impurity::Gini).unwrap(), 0.0);
        assert!((impurity(&[5, 5], Impurity::Gini).unwrap() - 0.5).abs() < 1e-15);
        assert!((impurity(&[3, 1], Impurity::Gini).unwrap() - 0.375).abs() < 1e-15);
        assert!((impurity(&[5, 5], Impurity::Entropy).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(impurity(&[4, 0], Impurity::Entropy).unwrap(), 0.0);
        assert!((impurity(&[1, 1, 2], Impurity::Entropy).unwrap() - 1.5).abs() < 1e-15);
        assert!(impurity(&[0, 0], Impurity::Gini).is_err());
    }

    #[test]
    fn binary_impurity_matches_general_form() {
        for (n1, n) in [(0, 5), (3, 4), (7, 13), (13, 13)] {
            for kind in [Impurity::Gini, Impurity::Entropy] {
                let general = impurity(&[n1, n - n1], kind).unwrap();
                assert!((binary_impurity(n1, n, kind) - general).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn candidate_cuts_small_and_large_nodes() {
        let v = [0.0, 0.0, 1.0, 2.0, 2.0, 3.0];
        assert_eq!(candidate_cuts(&v, 1), vec![2, 3, 5]);
        assert_eq!(candidate_cuts(&v, 2), vec![2, 3]);
        assert!(candidate_cuts(&[1.0, 1.0, 1.0], 1).is_empty());

        let big: Vec<f64> = (0..1000).map(f64::from).collect();
        let cuts = candidate_cuts(&big, 1);
        assert_eq!(cuts.len(), MAX_CANDIDATES);
        assert!(cuts.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(cuts[0], 1000 / 33);
    }

    #[test]
    fn threshold_between_adjacent_floats() {
        let a = 1.0_f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let t = split_threshold(a, b);
        assert!(a <= t && t < b);
        assert_eq!(split_threshold(0.0, 1.0), 0.5);
    }

    #[test]
    fn perfectly_separated_feature_gives_two_pure_leaves() {
        let xs = [0.1, 0.2, 0.3, 0.4, 0.6, 0.7, 0.8, 0.9];
        let labels: Vec<bool> = xs.iter().map(|&v| v > 0.5).collect();
        let x = column(&xs);
        let tree = fit_class_tree(x.view(), &labels, &TreeParams { max_depth: 3, min_leaf: 1, ..Default::default() }, &mut rng_from_seed(0)).unwrap();
        let (_, f, t) = brute_best_split(&x, &labels, 1).unwrap();
        match tree.nodes()[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(feature, f);
                assert!((threshold - t).abs() < 1e-12);
                assert!(threshold > 0.4 && threshold < 0.6);
            }
            _ => panic!("expected a root split"),
        }
        let leaves: Vec<_> = tree.leaves().collect();
        assert_eq!(leaves, vec![(0.0, 4), (1.0, 4)]);
    }

    #[test]
    fn depth_zero_is_mean_leaf() {
        let labels = [true, false, false, true, true];
        let x = column(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let tree = fit_class_tree(x.view(), &labels, &TreeParams { max_depth: 0, ..Default::default() }, &mut rng_from_seed(0)).unwrap();
        assert_eq!(tree.nodes(), &[Node::Leaf { proportion: 0.6, count: 5 }]);
    }

    #[test]
    fn pure_labels_make_single_leaf() {
        let x = column(&[1.0, 2.0, 3.0]);
        let tree = fit_class_tree(x.view(), &[false; 3], &TreeParams::default(), &mut rng_from_seed(0)).unwrap();
        assert_eq!(tree.nodes(), &[Node::Leaf { proportion: 0.0, count: 3 }]);
    }

    #[test]
    fn routing_and_tie_convention() {
        let tree = ClassTree::from_nodes(
            vec![
                Node::Split { feature: 0, threshold: 0.5, left: 1, right: 2 },
                Node::Leaf { proportion: 0.1, count: 3 },
                Node::Leaf { proportion: 0.9, count: 3 },
            ],
            2,
        );
        assert_eq!(tree.predict_proba(&[0.2, 7.0]).unwrap(), 0.1);
        assert_eq!(tree.predict_proba(&[0.5, 7.0]).unwrap(), 0.1);
        assert_eq!(tree.predict_proba(&[0.51, 7.0]).unwrap(), 0.9);
        assert!(matches!(tree.predict_proba(&[0.2]), Err(CardError::Contract(_))));

        let constant = ClassTree::leaf(0.3, 10, 1);
        assert_eq!(constant.predict_proba(&[123.0]).unwrap(), 0.3);
    }

    #[test]
    fn depth_two_separates_linear_problem() {
        let mut rng = rng_from_seed(5);
        let xs: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
        let labels: Vec<bool> = xs.iter().map(|&v| v > 0.37).collect();
        let x = column(&xs);
        let tree = fit_class_tree(x.view(), &labels, &TreeParams { max_depth: 2, min_leaf: 1, ..Default::default() }, &mut rng).unwrap();
        let correct = xs
            .iter()
            .zip(&labels)
            .filter(|(&v, &l)| (tree.predict_proba(&[v]).unwrap() > 0.5) == l)
            .count();
        // Candidates sit at 32 quantile positions, so one point may be lost.
        assert!(correct >= 198, "{correct}");
    }

    #[test]
    fn single_tree_forest_without_bootstrap_equals_tree() {
        let mut rng = rng_from_seed(11);
        let x = Array2::from_shape_fn((120, 3), |_| rng.random::<f64>());
        let labels: Vec<bool> = (0..120).map(|i| x[[i, 0]] + 0.3 * x[[i, 2]] > 0.6).collect();
        let params = ForestParams { n_trees: 1, bootstrap: false, feature_subsample: Some(3), max_depth: 4, min_leaf: 3, impurity: Impurity::Gini };
        let forest = fit_forest_classifier(x.view(), &labels, &params, 1, Exec::Sequential).unwrap();
        let tree = fit_class_tree(x.view(), &labels, &TreeParams { max_depth: 4, min_leaf: 3, impurity: Impurity::Gini, max_features: None }, &mut rng_from_seed(99)).unwrap();
        assert_eq!(forest.trees()[0], tree);
    }

    #[test]
    fn duplicated_trees_average_to_the_tree() {
        let tree = ClassTree::from_nodes(
            vec![
                Node::Split { feature: 0, threshold: 0.0, left: 1, right: 2 },
                Node::Leaf { proportion: 0.25, count: 4 },
                Node::Leaf { proportion: 0.75, count: 4 },
            ],
            1,
        );
        let forest = ClassForest::from_trees(vec![tree.clone(); 5]).unwrap();
        for v in [-1.0, 0.0, 1.0] {
            assert_eq!(forest.predict_proba(&[v]).unwrap(), tree.predict_proba(&[v]).unwrap());
        }
    }

    #[test]
    fn forest_is_independent_of_execution_mode() {
        let mut rng = rng_from_seed(3);
        let x = Array2::from_shape_fn((200, 4), |_| rng.random::<f64>());
        let labels: Vec<bool> = (0..200).map(|i| x[[i, 1]] > 0.5).collect();
        let params = ForestParams { n_trees: 16, ..ForestParams::adadetect() };
        let a = fit_forest_classifier(x.view(), &labels, &params, 7, Exec::Sequential).unwrap();
        let b = crate::exec::with_workers(4, |exec| fit_forest_classifier(x.view(), &labels, &params, 7, exec).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn forest_rejects_bad_subsample() {
        let x = Array2::<f64>::zeros((10, 2));
        let labels = vec![true; 10];
        let params = ForestParams { feature_subsample: Some(3), ..ForestParams::adadetect() };
        assert!(matches!(
            fit_forest_classifier(x.view(), &labels, &params, 0, Exec::Sequential),
            Err(CardError::Parameter(_))
        ));
    }

    fn replay_checks(tree: &ClassTree, x: &Array2<f64>, labels: &[bool], rows: Vec<usize>, at: usize, min_leaf: usize) {
        match tree.nodes()[at] {
            Node::Leaf { count, proportion } => {
                assert_eq!(count, rows.len());
                assert!(count >= min_leaf);
                assert!((0.0..=1.0).contains(&proportion));
            }
            Node::Split { feature, threshold, left, right } => {
                let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[[i, feature]] <= threshold);
                let n1 = |s: &[usize]| s.iter().filter(|&&i| labels[i]).count();
                let parent = impurity_mass(n1(&rows), rows.len(), Impurity::Gini);
                let children = impurity_mass(n1(&l), l.len(), Impurity::Gini) + impurity_mass(n1(&r), r.len(), Impurity::Gini);
                assert!(children < parent, "split does not decrease impurity");
                replay_checks(tree, x, labels, l, left, min_leaf);
                replay_checks(tree, x, labels, r, right, min_leaf);
            }
        }
    }

    proptest! {
        #[test]
        fn splits_are_admissible_and_leaves_respect_floor(
            seed in 0u64..1000,
            n in 10usize..120,
            min_leaf in 1usize..8,
            depth in 0usize..5,
        ) {
            let mut rng = rng_from_seed(seed);
            let x = Array2::from_shape_fn((n, 2), |_| (rng.random::<f64>() * 20.0).round());
            let labels: Vec<bool> = (0..n).map(|i| rng.random::<f64>() < 0.2 + 0.05 * x[[i, 0]]).collect();
            let params = TreeParams { max_depth: depth, min_leaf, impurity: Impurity::Gini, max_features: None };
            let tree = fit_class_tree(x.view(), &labels, &params, &mut rng).unwrap();
            prop_assert!(tree.depth() <= depth);
            replay_checks(&tree, &x, &labels, (0..n).collect(), 0, min_leaf.min(n));
        }

        #[test]
        fn root_split_matches_brute_force_on_small_nodes(seed in 0u64..500, n in 4usize..30) {
            // Few distinct values, so every boundary is a candidate.
            let mut rng = rng_from_seed(seed);
            let x = Array2::from_shape_fn((n, 2), |_| f64::from(rng.random_range(0..6u8)));
            let labels: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
            let params = TreeParams { max_depth: 1, min_leaf: 1, impurity: Impurity::Gini, max_features: None };
            let tree = fit_class_tree(x.view(), &labels, &params, &mut rng).unwrap();
            let n1 = labels.iter().filter(|&&l| l).count();
            let parent = impurity_mass(n1, n, Impurity::Gini);
            match (brute_best_split(&x, &labels, 1), &tree.nodes()[0]) {
                (Some((mass, f, t)), Node::Split { feature, threshold, .. }) => {
                    prop_assert!(mass < parent - 1e-9);
                    prop_assert_eq!(*feature, f);
                    prop_assert!((threshold - t).abs() < 1e-12);
                }
                (Some((mass, _, _)), Node::Leaf { .. }) => prop_assert!(mass >= parent - 1e-9),
                (None, Node::Leaf { .. }) => {}
                (None, Node::Split { .. }) => prop_assert!(false, "split without candidates"),
            }
        }

        #[test]
        fn sorted_path_equals_generic_tree(seed in 0u64..500, n in 2usize..200, min_leaf in 1usize..6) {
            let mut rng = rng_from_seed(seed);
            let mut pairs: Vec<(f64, bool)> = (0..n)
                .map(|_| {
                    let v = (rng.random::<f64>() * 50.0).round() / 10.0;
                    (v, rng.random::<f64>() < 0.3 + 0.1 * v)
                })
                .collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            let mut prefix = vec![0usize];
            for &l in &labels {
                prefix.push(prefix.last().unwrap() + usize::from(l));
            }
            let mut nodes = Vec::new();
            let mass = grow_sorted(&values, &prefix, (0, n), 2, min_leaf, Impurity::Gini, Some(&mut nodes));
            let fast = ClassTree::from_nodes(nodes, 1);
            let params = TreeParams { max_depth: 2, min_leaf, impurity: Impurity::Gini, max_features: None };
            let generic = fit_class_tree(column(&values).view(), &labels, &params, &mut rng).unwrap();
            prop_assert_eq!(&fast, &generic);
            let leaf_mass: f64 = fast.leaves().map(|(p, c)| c as f64 * 2.0 * p * (1.0 - p)).sum();
            prop_assert!((leaf_mass - mass).abs() < 1e-9);
            let bare = grow_sorted(&values, &prefix, (0, n), 2, min_leaf, Impurity::Gini, None);
            prop_assert_eq!(bare, mass);
        }
    }
}
