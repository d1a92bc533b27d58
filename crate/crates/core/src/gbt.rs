//! Second-order gradient-boosted decision trees for binary logistic loss,
//! with exact greedy split search and total-gain feature importance.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

use crate::linalg::{bernoulli_loglik, sigmoid};

const FORMAT_VERSION: &str = "riskforge-gbt v1";
const BASE_SCORE_CAP: f64 = 10.0;

#[derive(Debug, Error)]
pub enum GbtError {
    #[error("outcome must be binary 0/1")]
    NotBinary,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("design has {rows} rows but outcome has {outcome}")]
    DimensionMismatch { rows: usize, outcome: usize },
    #[error("model text malformed: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbtConfig {
    pub max_depth: usize,
    pub learning_rate: f64,
    pub n_trees: usize,
    pub subsample: f64,
    pub reg_lambda: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self { max_depth: 3, learning_rate: 0.05, n_trees: 100, subsample: 0.8, reg_lambda: 1.0, gamma: 0.0, seed: 42 }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<(), GbtError> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(GbtError::Config(format!("learning_rate {} not in (0, 1]", self.learning_rate)));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(GbtError::Config(format!("subsample {} not in (0, 1]", self.subsample)));
        }
        if self.reg_lambda < 0.0 || self.gamma < 0.0 {
            return Err(GbtError::Config("reg_lambda and gamma must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split { feature: usize, threshold: f64, gain: f64, left: usize, right: usize },
    Leaf { weight: f64 },
}

/// Nodes stored in a flat arena; node 0 is the root. Rows with
/// `x < threshold` (or a missing value) go left.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_index(&self, row: impl Fn(usize) -> f64) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { .. } => return at,
                Node::Split { feature, threshold, left, right, .. } => {
                    let v = row(*feature);
                    at = if v.is_nan() || v < *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn predict(&self, row: impl Fn(usize) -> f64) -> f64 {
        match self.nodes[self.leaf_index(row)] {
            Node::Leaf { weight } => weight,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn n_splits(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Split { .. })).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbtModel {
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub importance_gain: Vec<f64>,
}

impl GbtModel {
    /// Raw margin (log-odds) for every row of `x`.
    pub fn margin(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| {
                self.base_score
                    + self.learning_rate * self.trees.iter().map(|t| t.predict(|j| x[(i, j)])).sum::<f64>()
            })
            .collect()
    }

    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.margin(x).into_iter().map(sigmoid).collect()
    }

    /// Versioned line-oriented text: header, base score, then one line per node.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{FORMAT_VERSION}");
        let _ = writeln!(s, "base_score {}", self.base_score);
        let _ = writeln!(s, "learning_rate {}", self.learning_rate);
        let _ = writeln!(s, "n_features {}", self.n_features);
        let _ = writeln!(s, "n_trees {}", self.trees.len());
        for (t, tree) in self.trees.iter().enumerate() {
            let _ = writeln!(s, "tree {t} {}", tree.nodes.len());
            for node in &tree.nodes {
                match node {
                    Node::Split { feature, threshold, gain, left, right } => {
                        let _ = writeln!(s, "split {feature} {threshold} {gain} {left} {right}");
                    }
                    Node::Leaf { weight } => {
                        let _ = writeln!(s, "leaf {weight}");
                    }
                }
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, GbtError> {
        let bad = |m: &str| GbtError::Parse(m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some(FORMAT_VERSION) {
            return Err(bad("unknown format version"));
        }
        let mut field = |key: &str| -> Result<String, GbtError> {
            let line = lines.next().ok_or_else(|| bad("truncated header"))?;
            line.strip_prefix(key)
                .map(|v| v.trim().to_string())
                .ok_or_else(|| GbtError::Parse(format!("expected `{key}`")))
        };
        let num = |s: String| s.parse::<f64>().map_err(|_| GbtError::Parse(format!("bad number `{s}`")));
        let base_score = num(field("base_score")?)?;
        let learning_rate = num(field("learning_rate")?)?;
        let n_features = num(field("n_features")?)? as usize;
        let n_trees = num(field("n_trees")?)? as usize;
        let mut trees = Vec::with_capacity(n_trees);
        let mut importance_gain = vec![0.0; n_features];
        for _ in 0..n_trees {
            let head = lines.next().ok_or_else(|| bad("missing tree"))?;
            let count: usize = head.split_whitespace().nth(2).and_then(|c| c.parse().ok()).ok_or_else(|| bad(head))?;
            let mut nodes = Vec::with_capacity(count);
            for _ in 0..count {
                let line = lines.next().ok_or_else(|| bad("missing node"))?;
                let parts: Vec<&str> = line.split_whitespace().collect();
                let f = |i: usize| parts.get(i).and_then(|p| p.parse::<f64>().ok()).ok_or_else(|| bad(line));
                nodes.push(match parts.first() {
                    Some(&"split") => {
                        let feature = f(1)? as usize;
                        let gain = f(3)?;
                        if feature >= n_features {
                            return Err(bad("feature index out of range"));
                        }
                        importance_gain[feature] += gain;
                        Node::Split { feature, threshold: f(2)?, gain, left: f(4)? as usize, right: f(5)? as usize }
                    }
                    Some(&"leaf") => Node::Leaf { weight: f(1)? },
                    _ => return Err(bad(line)),
                });
            }
            trees.push(Tree { nodes });
        }
        Ok(Self { base_score, learning_rate, trees, n_features, importance_gain })
    }
}

struct Grower<'a> {
    x: &'a DMatrix<f64>,
    /// Row indices of each feature sorted by value, missing values excluded.
    order: &'a [Vec<usize>],
    grad: &'a [f64],
    hess: &'a [f64],
    cfg: &'a GbtConfig,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Grower<'_> {
    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.cfg.reg_lambda)
    }

    fn leaf_weight(&self, g: f64, h: f64) -> f64 {
        -g / (h + self.cfg.reg_lambda)
    }

    fn find_split(&self, in_node: &[bool], g_tot: f64, h_tot: f64) -> Option<BestSplit> {
        let parent = self.score(g_tot, h_tot);
        let mut best: Option<BestSplit> = None;
        for (feature, sorted) in self.order.iter().enumerate() {
            // missing rows sit on the left from the start
            let (mut gl, mut hl) = (0.0, 0.0);
            let (mut g_present, mut h_present) = (0.0, 0.0);
            for &i in sorted {
                if in_node[i] {
                    g_present += self.grad[i];
                    h_present += self.hess[i];
                }
            }
            gl += g_tot - g_present;
            hl += h_tot - h_present;
            let mut prev: Option<f64> = None;
            for &i in sorted {
                if !in_node[i] {
                    continue;
                }
                let v = self.x[(i, feature)];
                if let Some(pv) = prev {
                    if v > pv {
                        let (gr, hr) = (g_tot - gl, h_tot - hl);
                        let gain = 0.5 * (self.score(gl, hl) + self.score(gr, hr) - parent) - self.cfg.gamma;
                        if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
                            best = Some(BestSplit { feature, threshold: 0.5 * (pv + v), gain });
                        }
                    }
                }
                gl += self.grad[i];
                hl += self.hess[i];
                prev = Some(v);
            }
        }
        best
    }

    fn grow(&self, rows: Vec<usize>, depth: usize, nodes: &mut Vec<Node>, importance: &mut [f64]) -> usize {
        let g: f64 = rows.iter().map(|&i| self.grad[i]).sum();
        let h: f64 = rows.iter().map(|&i| self.hess[i]).sum();
        let at = nodes.len();
        nodes.push(Node::Leaf { weight: self.leaf_weight(g, h) });
        if depth >= self.cfg.max_depth || rows.len() < 2 {
            return at;
        }
        let mut in_node = vec![false; self.x.nrows()];
        for &i in &rows {
            in_node[i] = true;
        }
        let Some(split) = self.find_split(&in_node, g, h) else {
            return at;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| {
            let v = self.x[(i, split.feature)];
            v.is_nan() || v < split.threshold
        });
        importance[split.feature] += split.gain;
        let left = self.grow(left_rows, depth + 1, nodes, importance);
        let right = self.grow(right_rows, depth + 1, nodes, importance);
        nodes[at] = Node::Split { feature: split.feature, threshold: split.threshold, gain: split.gain, left, right };
        at
    }
}

/// Regularized training objective: logistic loss plus ½·λ·Σw² over leaves.
pub fn training_loss(model: &GbtModel, x: &DMatrix<f64>, y: &[f64], reg_lambda: f64) -> f64 {
    let margin = model.margin(x);
    let loss: f64 = margin.iter().zip(y).map(|(&m, &yi)| -bernoulli_loglik(yi, m)).sum();
    let penalty: f64 = model
        .trees
        .iter()
        .flat_map(|t| t.nodes.iter())
        .map(|n| match n {
            Node::Leaf { weight } => 0.5 * reg_lambda * (model.learning_rate * weight).powi(2),
            Node::Split { .. } => 0.0,
        })
        .sum();
    loss + penalty
}

pub fn fit_gbt(x: &DMatrix<f64>, y: &[f64], cfg: &GbtConfig) -> Result<GbtModel, GbtError> {
    cfg.validate()?;
    if x.nrows() != y.len() {
        return Err(GbtError::DimensionMismatch { rows: x.nrows(), outcome: y.len() });
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(GbtError::NotBinary);
    }
    let (n, p) = x.shape();
    let prevalence = y.iter().sum::<f64>() / n.max(1) as f64;
    let base_score = if prevalence <= 0.0 {
        -BASE_SCORE_CAP
    } else if prevalence >= 1.0 {
        BASE_SCORE_CAP
    } else {
        (prevalence / (1.0 - prevalence)).ln().clamp(-BASE_SCORE_CAP, BASE_SCORE_CAP)
    };

    let order: Vec<Vec<usize>> = (0..p)
        .map(|j| {
            let mut idx: Vec<usize> = (0..n).filter(|&i| !x[(i, j)].is_nan()).collect();
            idx.sort_by(|&a, &b| x[(a, j)].total_cmp(&x[(b, j)]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut rng = crate::seed::rng(cfg.seed);
    let mut margin = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::with_capacity(cfg.n_trees);
    let mut importance = vec![0.0; p];

    for _ in 0..cfg.n_trees {
        for i in 0..n {
            let prob = sigmoid(margin[i]);
            grad[i] = prob - y[i];
            hess[i] = prob * (1.0 - prob);
        }
        let rows: Vec<usize> = if cfg.subsample < 1.0 {
            (0..n).filter(|_| rng.random::<f64>() < cfg.subsample).collect()
        } else {
            (0..n).collect()
        };
        let grower = Grower { x, order: &order, grad: &grad, hess: &hess, cfg };
        let mut nodes = Vec::new();
        grower.grow(rows, 0, &mut nodes, &mut importance);
        let tree = Tree { nodes };
        for (i, m) in margin.iter_mut().enumerate() {
            *m += cfg.learning_rate * tree.predict(|j| x[(i, j)]);
        }
        trees.push(tree);
    }
    Ok(GbtModel { base_score, learning_rate: cfg.learning_rate, trees, n_features: p, importance_gain: importance })
}

/// Features with positive accumulated gain, descending; ties by index.
pub fn gain_importance(model: &GbtModel) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> =
        model.importance_gain.iter().copied().enumerate().filter(|&(_, g)| g > 0.0).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

pub fn top_k_features(model: &GbtModel, names: &[String], k: usize) -> Vec<String> {
    gain_importance(model).into_iter().take(k).map(|(j, _)| names[j].clone()).collect()
}
