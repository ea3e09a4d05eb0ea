//! CART decision-tree shadow model with rule extraction and feature
//! importance.
//!
//! Splits are `r[feature] <= threshold` (left) versus `>` (right).
//! Candidate thresholds are midpoints between consecutive distinct values.
//! The split maximising the Gini decrease wins, with ties going to the lower
//! feature index and then the lower threshold. Split quality is compared
//! with exact integer arithmetic so ties are detected exactly.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::netcore::{Mlp, NetError};
use crate::oracle::{OracleError, OracleHandle};
use crate::prob::argmax;
use crate::seed;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("cannot fit a tree on an empty dataset")]
    Empty,
    #[error("record has {got} features, tree expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid tree parameters: {0}")]
    BadParams(String),
    #[error("{0}")]
    Data(#[from] crate::data::DataError),
    #[error("tree json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_impurity_decrease: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 8,
            min_samples_split: 5,
            min_impurity_decrease: 1e-7,
        }
    }
}

impl TreeParams {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), TreeError> {
        if self.max_depth == 0 {
            return Err(TreeError::BadParams("max_depth must be at least 1".into()));
        }
        if !(self.min_impurity_decrease >= 0.0) {
            return Err(TreeError::BadParams(
                "min_impurity_decrease must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        samples: usize,
        impurity: f64,
        /// Gini decrease of this split, local to the node.
        decrease: f64,
    },
    Leaf {
        counts: Vec<usize>,
        class: usize,
        impurity: f64,
    },
}

impl Node {
    pub fn samples(&self) -> usize {
        match self {
            Node::Split { samples, .. } => *samples,
            Node::Leaf { counts, .. } => counts.iter().sum(),
        }
    }
}

/// Nodes in preorder; node 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub feature_names: Vec<String>,
    pub class_count: usize,
    pub params: TreeParams,
}

pub fn gini(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn sum_sq(counts: &[usize]) -> u128 {
    counts.iter().map(|&c| (c as u128) * (c as u128)).sum()
}

/// Split score `Σl²/nl + Σr²/nr` as an exact fraction (larger is better;
/// equivalent to a larger Gini decrease at a fixed node).
#[derive(Clone, Copy, Debug)]
struct Score {
    num: u128,
    den: u128,
}

impl Score {
    fn new(left: &[usize], nl: usize, right: &[usize], nr: usize) -> Score {
        let (nl, nr) = (nl as u128, nr as u128);
        Score {
            num: sum_sq(left) * nr + sum_sq(right) * nl,
            den: nl * nr,
        }
    }

    fn beats(&self, other: &Score) -> bool {
        self.num * other.den > other.num * self.den
    }
}

/// Candidate best split of the rows in `idx`, if any feature is
/// non-constant. Returns `(feature, threshold, left_rows, right_rows)`.
#[allow(clippy::type_complexity)]
fn best_split(
    data: &Dataset,
    idx: &[usize],
    classes: usize,
) -> Option<(usize, f64, Vec<usize>, Vec<usize>)> {
    let n = idx.len();
    let total = class_counts(data, idx, classes);
    let mut best: Option<(Score, usize, f64)> = None;
    let mut sorted = idx.to_vec();
    for f in 0..data.feature_count() {
        sorted.sort_by(|&a, &b| data.rows[a][f].total_cmp(&data.rows[b][f]));
        let mut left = vec![0usize; classes];
        for i in 0..n - 1 {
            left[data.labels[sorted[i]]] += 1;
            let (a, b) = (data.rows[sorted[i]][f], data.rows[sorted[i + 1]][f]);
            if a == b {
                continue;
            }
            let right: Vec<usize> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
            let score = Score::new(&left, i + 1, &right, n - i - 1);
            if best.as_ref().is_none_or(|(s, _, _)| score.beats(s)) {
                best = Some((score, f, midpoint(a, b)));
            }
        }
    }
    let (_, f, t) = best?;
    let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| data.rows[i][f] <= t);
    Some((f, t, l, r))
}

/// Midpoint of `a < b` that still routes `a` left and `b` right.
pub fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b || m < a {
        a
    } else {
        m
    }
}

fn class_counts(data: &Dataset, idx: &[usize], classes: usize) -> Vec<usize> {
    let mut c = vec![0; classes];
    for &i in idx {
        c[data.labels[i]] += 1;
    }
    c
}

fn majority(counts: &[usize]) -> usize {
    let as_f: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    argmax(&as_f)
}

impl DecisionTree {
    /// Fits a tree to `data` using `data.labels`.
    pub fn fit(data: &Dataset, params: &TreeParams) -> Result<DecisionTree, TreeError> {
        params.validate()?;
        if data.is_empty() {
            return Err(TreeError::Empty);
        }
        let mut tree = DecisionTree {
            nodes: Vec::new(),
            feature_names: data.feature_names.clone(),
            class_count: data.class_count(),
            params: params.clone(),
        };
        let idx: Vec<usize> = (0..data.len()).collect();
        tree.grow(data, idx, 0);
        Ok(tree)
    }

    fn grow(&mut self, data: &Dataset, idx: Vec<usize>, depth: usize) -> usize {
        let counts = class_counts(data, &idx, self.class_count);
        let impurity = gini(&counts);
        let me = self.nodes.len();
        let leaf = Node::Leaf {
            class: majority(&counts),
            counts: counts.clone(),
            impurity,
        };
        self.nodes.push(leaf);
        if depth >= self.params.max_depth
            || idx.len() < self.params.min_samples_split.max(2)
            || impurity == 0.0
        {
            return me;
        }
        let Some((feature, threshold, l, r)) = best_split(data, &idx, self.class_count) else {
            return me;
        };
        let n = idx.len() as f64;
        let child = |rows: &[usize]| gini(&class_counts(data, rows, self.class_count));
        let decrease = impurity
            - (l.len() as f64 / n) * child(&l)
            - (r.len() as f64 / n) * child(&r);
        if decrease < self.params.min_impurity_decrease {
            return me;
        }
        let left = self.grow(data, l, depth + 1);
        let right = self.grow(data, r, depth + 1);
        self.nodes[me] = Node::Split {
            feature,
            threshold,
            left,
            right,
            samples: idx.len(),
            impurity,
            decrease,
        };
        me
    }

    pub fn feature_count(&self) -> usize {
        self.feature_names.len()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &DecisionTree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    fn leaf_for(&self, r: &[f64]) -> usize {
        let mut i = 0;
        while let Node::Split {
            feature,
            threshold,
            left,
            right,
            ..
        } = &self.nodes[i]
        {
            i = if r[*feature] <= *threshold { *left } else { *right };
        }
        i
    }

    pub fn predict(&self, r: &[f64]) -> Result<usize, TreeError> {
        if r.len() != self.feature_count() {
            return Err(TreeError::DimensionMismatch {
                expected: self.feature_count(),
                got: r.len(),
            });
        }
        match &self.nodes[self.leaf_for(r)] {
            Node::Leaf { class, .. } => Ok(*class),
            Node::Split { .. } => unreachable!("leaf_for stops at leaves"),
        }
    }

    pub fn predict_all(&self, rows: &[Vec<f64>]) -> Result<Vec<usize>, TreeError> {
        rows.iter().map(|r| self.predict(r)).collect()
    }

    /// One rule per leaf, in left-to-right leaf order.
    pub fn extract_rules(&self) -> Vec<Rule> {
        let mut out = Vec::new();
        let mut path = Vec::new();
        self.collect_rules(0, &mut path, &mut out);
        out
    }

    fn collect_rules(&self, i: usize, path: &mut Vec<Condition>, out: &mut Vec<Rule>) {
        match &self.nodes[i] {
            Node::Leaf { counts, class, .. } => {
                let support: usize = counts.iter().sum();
                let purity = if support == 0 {
                    0.0
                } else {
                    counts[*class] as f64 / support as f64
                };
                out.push(Rule {
                    conditions: path.clone(),
                    class: *class,
                    support,
                    purity,
                });
            }
            Node::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                for (op, child) in [(Op::Le, left), (Op::Gt, right)] {
                    path.push(Condition {
                        feature: *feature,
                        op,
                        threshold: *threshold,
                    });
                    self.collect_rules(*child, path, out);
                    path.pop();
                }
            }
        }
    }

    /// Plain-text rules, one per line.
    pub fn rules_text(&self) -> String {
        self.extract_rules()
            .iter()
            .map(|r| r.render(&self.feature_names) + "\n")
            .collect()
    }

    /// Indented rendering of the whole tree.
    pub fn render(&self) -> String {
        let mut s = String::new();
        self.render_node(0, 0, &mut s);
        s
    }

    fn render_node(&self, i: usize, indent: usize, s: &mut String) {
        let pad = "  ".repeat(indent);
        match &self.nodes[i] {
            Node::Leaf {
                counts,
                class,
                impurity,
            } => {
                let _ = writeln!(
                    s,
                    "{pad}leaf class={class} n={} gini={impurity:.4} counts={counts:?}",
                    counts.iter().sum::<usize>()
                );
            }
            Node::Split {
                feature,
                threshold,
                left,
                right,
                samples,
                impurity,
                ..
            } => {
                let name = &self.feature_names[*feature];
                let _ = writeln!(s, "{pad}if {name} <= {threshold:.4} n={samples} gini={impurity:.4}");
                self.render_node(*left, indent + 1, s);
                let _ = writeln!(s, "{pad}else");
                self.render_node(*right, indent + 1, s);
            }
        }
    }

    /// Per-feature sum of (node sample fraction × Gini decrease), normalised
    /// to sum to 1. All zeros for a single leaf.
    pub fn importance(&self) -> Vec<f64> {
        let mut scores = vec![0.0; self.feature_count()];
        let total = self.nodes[0].samples() as f64;
        for node in &self.nodes {
            if let Node::Split {
                feature,
                samples,
                decrease,
                ..
            } = node
            {
                scores[*feature] += (*samples as f64 / total) * decrease;
            }
        }
        let sum: f64 = scores.iter().sum();
        if sum > 0.0 {
            scores.iter_mut().for_each(|v| *v /= sum);
        }
        scores
    }

    pub fn to_json(&self) -> Result<String, TreeError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<DecisionTree, TreeError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), TreeError> {
        Ok(std::fs::write(path, self.to_json()?)?)
    }

    pub fn load(path: &Path) -> Result<DecisionTree, TreeError> {
        DecisionTree::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Free-function form of [`DecisionTree::importance`].
pub fn tree_importance(t: &DecisionTree) -> Vec<f64> {
    t.importance()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    Le,
    Gt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub feature: usize,
    pub op: Op,
    pub threshold: f64,
}

impl Condition {
    pub fn holds(&self, r: &[f64]) -> bool {
        match self.op {
            Op::Le => r[self.feature] <= self.threshold,
            Op::Gt => r[self.feature] > self.threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub conditions: Vec<Condition>,
    pub class: usize,
    pub support: usize,
    pub purity: f64,
}

impl Rule {
    pub fn matches(&self, r: &[f64]) -> bool {
        self.conditions.iter().all(|c| c.holds(r))
    }

    /// `IF f3 <= 1.50 AND f0 > 0.25 THEN class=1 [support=120 purity=0.97]`.
    /// An empty condition list renders as `IF TRUE`.
    pub fn render(&self, names: &[String]) -> String {
        let cond = if self.conditions.is_empty() {
            "TRUE".to_string()
        } else {
            self.conditions
                .iter()
                .map(|c| {
                    let op = match c.op {
                        Op::Le => "<=",
                        Op::Gt => ">",
                    };
                    format!("{} {op} {:.2}", names[c.feature], c.threshold)
                })
                .collect::<Vec<_>>()
                .join(" AND ")
        };
        format!(
            "IF {cond} THEN class={} [support={} purity={:.2}]",
            self.class, self.support, self.purity
        )
    }
}

/// Anything that maps a record to a class index.
pub trait Predictor: Sync {
    type Error: std::error::Error + Send;
    fn predict_record(&self, r: &[f64]) -> Result<usize, Self::Error>;
}

impl Predictor for DecisionTree {
    type Error = TreeError;
    fn predict_record(&self, r: &[f64]) -> Result<usize, TreeError> {
        self.predict(r)
    }
}

impl Predictor for Mlp {
    type Error = NetError;
    fn predict_record(&self, r: &[f64]) -> Result<usize, NetError> {
        self.predict_class(r)
    }
}

impl Predictor for OracleHandle {
    type Error = OracleError;
    fn predict_record(&self, r: &[f64]) -> Result<usize, OracleError> {
        self.predict(r)
    }
}

fn correct<P: Predictor>(model: &P, rows: &[Vec<f64>], labels: &[usize]) -> Result<usize, P::Error> {
    let mut hits = 0;
    for (r, &l) in rows.iter().zip(labels) {
        if model.predict_record(r)? == l {
            hits += 1;
        }
    }
    Ok(hits)
}

/// Baseline accuracy on `data` minus mean accuracy after shuffling one
/// column, for each feature, averaged over `n_repeats` shuffles. Feature
/// `j` draws its shuffles from `seed::rng(seed, [j])`.
pub fn permutation_importance<P: Predictor>(
    model: &P,
    data: &Dataset,
    n_repeats: usize,
    seed: u64,
) -> Result<Vec<f64>, P::Error> {
    let n = data.len();
    if n == 0 || n_repeats == 0 {
        return Ok(vec![0.0; data.feature_count()]);
    }
    let base = correct(model, &data.rows, &data.labels)?;
    let baseline = base as f64 / n as f64;
    (0..data.feature_count())
        .into_par_iter()
        .map(|j| {
            let mut rng = seed::rng(seed, &[j as u64]);
            let mut rows = data.rows.clone();
            let mut column: Vec<f64> = data.column(j).collect();
            let mut total = 0usize;
            for _ in 0..n_repeats {
                column.shuffle(&mut rng);
                for (r, &v) in rows.iter_mut().zip(&column) {
                    r[j] = v;
                }
                total += correct(model, &rows, &data.labels)?;
            }
            Ok(baseline - total as f64 / (n * n_repeats) as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(rows: Vec<Vec<f64>>, labels: Vec<usize>, classes: usize) -> Dataset {
        let f = rows[0].len();
        Dataset::new(
            crate::data::default_feature_names(f),
            (0..classes).map(|c| c.to_string()).collect(),
            rows,
            labels,
        )
        .unwrap()
    }

    #[test]
    fn single_class_is_one_leaf() {
        let d = ds(vec![vec![1.0], vec![2.0], vec![3.0]], vec![1, 1, 1], 2);
        let t = DecisionTree::fit(&d, &TreeParams::default()).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.predict(&[100.0]).unwrap(), 1);
        let rules = t.extract_rules();
        assert_eq!(rules.len(), 1);
        assert!(rules[0].conditions.is_empty());
        assert_eq!(t.importance(), vec![0.0]);
    }

    #[test]
    fn four_point_split() {
        let d = ds(
            vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]],
            vec![0, 0, 1, 1],
            2,
        );
        let p = TreeParams {
            min_samples_split: 2,
            ..TreeParams::default()
        };
        let t = DecisionTree::fit(&d, &p).unwrap();
        match &t.nodes[0] {
            Node::Split { threshold, .. } => assert_eq!(*threshold, 1.5),
            n => panic!("{n:?}"),
        }
        assert_eq!(t.leaf_count(), 2);
        // Values at the threshold go left.
        assert_eq!(t.predict(&[1.5]).unwrap(), 0);
        assert_eq!(t.predict(&[1.5000001]).unwrap(), 1);
        let rules = t.extract_rules();
        assert_eq!(rules.len(), 2);
        assert_eq!(rules[0].conditions[0].op, Op::Le);
        assert_eq!(rules[1].conditions[0].op, Op::Gt);
        assert_eq!(
            rules[0].render(&t.feature_names),
            "IF f0 <= 1.50 THEN class=0 [support=2 purity=1.00]"
        );
    }

    #[test]
    fn ties_go_to_lower_feature() {
        // Both features separate the classes perfectly.
        let d = ds(
            vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 1.0], vec![1.0, 1.0]],
            vec![0, 0, 1, 1],
            2,
        );
        let p = TreeParams {
            min_samples_split: 2,
            ..TreeParams::default()
        };
        let t = DecisionTree::fit(&d, &p).unwrap();
        assert!(matches!(t.nodes[0], Node::Split { feature: 0, .. }));
        assert_eq!(t.importance(), vec![1.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let d = ds(vec![vec![0.0, 1.0]], vec![0], 1);
        let t = DecisionTree::fit(&d, &TreeParams::default()).unwrap();
        assert!(matches!(
            t.predict(&[0.0]),
            Err(TreeError::DimensionMismatch { expected: 2, got: 1 })
        ));
        assert!(matches!(
            DecisionTree::fit(&Dataset::empty(2, 2), &TreeParams::default()),
            Err(TreeError::Empty)
        ));
    }

    #[test]
    fn hand_built_importance() {
        // Root on f0 (n=8): counts [4,4], children [4,1] | [0,3].
        // Left child on f1 (n=5): [4,1] -> [4,0] | [0,1].
        let rows = vec![
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![1.0, 0.0],
        ];
        let labels = vec![0, 0, 0, 0, 1, 1, 1, 1];
        let p = TreeParams {
            min_samples_split: 2,
            ..TreeParams::default()
        };
        let t = DecisionTree::fit(&ds(rows, labels, 2), &p).unwrap();
        let g_root = 0.5;
        let g_left = 1.0 - (0.8f64.powi(2) + 0.2f64.powi(2));
        let root = g_root - 5.0 / 8.0 * g_left;
        let left = (5.0 / 8.0) * g_left;
        let want = [root / (root + left), left / (root + left)];
        let got = t.importance();
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn json_round_trip() {
        let d = ds(
            vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]],
            vec![0, 0, 1, 1],
            2,
        );
        let t = DecisionTree::fit(&d, &TreeParams { min_samples_split: 2, ..TreeParams::default() }).unwrap();
        assert_eq!(DecisionTree::from_json(&t.to_json().unwrap()).unwrap(), t);
    }

    #[test]
    fn constant_and_ignored_features_have_zero_permutation_importance() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![i as f64, 7.0, (i * 37 % 11) as f64])
            .collect();
        let labels: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
        let d = ds(rows, labels, 2);
        let t = DecisionTree::fit(&d, &TreeParams::default()).unwrap();
        assert_eq!(t.importance(), vec![1.0, 0.0, 0.0]);
        let imp = permutation_importance(&t, &d, 5, 3).unwrap();
        assert!(imp[0] > 0.0);
        assert_eq!(imp[1], 0.0);
        assert_eq!(imp[2], 0.0);
        assert_eq!(imp, permutation_importance(&t, &d, 5, 3).unwrap());
    }

    #[test]
    fn midpoint_of_adjacent_floats() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let m = midpoint(a, b);
        assert!(a <= m && m < b);
        assert_eq!(midpoint(0.0, 1.0), 0.5);
    }
}
