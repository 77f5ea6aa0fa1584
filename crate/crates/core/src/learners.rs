//! From-scratch classifiers with deliberately different bias/variance
//! profiles, behind one train/predict contract.
//!
//! All models return crisp class indices. Every vote or argmax breaks ties
//! towards the lowest class index, and classes absent from the training set
//! are never predicted.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{squared_distance, Dataset};
use crate::seed;
use crate::{Error, Result};

/// Something that can be fitted to a dataset.
pub trait Trainer: Sync {
    type Model: Classifier;

    fn fit(&self, data: &Dataset) -> Result<Self::Model>;
}

/// A fitted model producing crisp class decisions.
pub trait Classifier: Send + Sync {
    fn feature_count(&self) -> usize;

    /// Predict without checking the input length.
    fn predict_unchecked(&self, x: &[f64]) -> usize;

    fn predict(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.feature_count() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_count(),
                got: x.len(),
            });
        }
        Ok(self.predict_unchecked(x))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerKind {
    GaussianNb,
    Knn { k: usize, zscore: bool },
    DecisionTree { max_depth: usize },
    DecisionStump,
    BaggedTrees { count: usize, max_depth: usize },
    MajorityBaseline,
}

/// A learning algorithm plus its hyperparameters.
///
/// `seed` only affects stochastic kinds (bagging).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Learner {
    pub kind: LearnerKind,
    #[serde(default)]
    pub seed: u64,
}

pub const DEFAULT_K: usize = 3;
pub const DEFAULT_DEPTH: usize = 8;
pub const DEFAULT_BAG_COUNT: usize = 25;

impl Learner {
    pub fn new(kind: LearnerKind) -> Self {
        Self { kind, seed: 0 }
    }

    pub fn gaussian_nb() -> Self {
        Self::new(LearnerKind::GaussianNb)
    }

    pub fn knn(k: usize) -> Self {
        Self::new(LearnerKind::Knn { k, zscore: false })
    }

    pub fn tree(max_depth: usize) -> Self {
        Self::new(LearnerKind::DecisionTree { max_depth })
    }

    pub fn stump() -> Self {
        Self::new(LearnerKind::DecisionStump)
    }

    pub fn bagged(count: usize, max_depth: usize) -> Self {
        Self::new(LearnerKind::BaggedTrees { count, max_depth })
    }

    pub fn majority() -> Self {
        Self::new(LearnerKind::MajorityBaseline)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| {
            Err(Error::LearnerSpec {
                spec: self.to_string(),
                reason: reason.to_owned(),
            })
        };
        match self.kind {
            LearnerKind::Knn { k: 0, .. } => bad("k must be at least 1"),
            LearnerKind::DecisionTree { max_depth: 0 }
            | LearnerKind::BaggedTrees { max_depth: 0, .. } => bad("depth must be at least 1"),
            LearnerKind::BaggedTrees { count: 0, .. } => bad("count must be at least 1"),
            _ => Ok(()),
        }
    }

    pub fn train(&self, data: &Dataset) -> Result<TrainedModel> {
        self.validate()?;
        if data.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        let fitted = match self.kind {
            LearnerKind::MajorityBaseline => Fitted::Constant(majority_class(data.labels(), data.class_count())),
            LearnerKind::GaussianNb => Fitted::GaussianNb(GaussianNb::fit(data)),
            LearnerKind::Knn { k, zscore } => Fitted::Knn(Knn::fit(data, k, zscore)),
            LearnerKind::DecisionTree { max_depth } => {
                let sample: Vec<usize> = (0..data.len()).collect();
                Fitted::Tree(Tree::grow(data, &sample, max_depth))
            }
            LearnerKind::DecisionStump => {
                let sample: Vec<usize> = (0..data.len()).collect();
                Fitted::Tree(Tree::grow(data, &sample, 1))
            }
            LearnerKind::BaggedTrees { count, max_depth } => {
                let n = data.len();
                let trees = (0..count)
                    .map(|t| {
                        let mut rng = seed::rng(seed::derive(self.seed, t as u64));
                        let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                        Tree::grow(data, &sample, max_depth)
                    })
                    .collect();
                Fitted::Bagged(trees)
            }
        };
        Ok(TrainedModel {
            learner: self.clone(),
            class_count: data.class_count(),
            feature_count: data.feature_count(),
            fitted,
        })
    }
}

impl Trainer for Learner {
    type Model = TrainedModel;

    fn fit(&self, data: &Dataset) -> Result<TrainedModel> {
        self.train(data)
    }
}

impl fmt::Display for Learner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            LearnerKind::GaussianNb => write!(f, "gnb")?,
            LearnerKind::Knn { k, zscore } => {
                write!(f, "knn:k={k}")?;
                if zscore {
                    write!(f, ",zscore=true")?;
                }
            }
            LearnerKind::DecisionTree { max_depth } => write!(f, "tree:depth={max_depth}")?,
            LearnerKind::DecisionStump => write!(f, "stump")?,
            LearnerKind::BaggedTrees { count, max_depth } => {
                write!(f, "bag:count={count},depth={max_depth}")?
            }
            LearnerKind::MajorityBaseline => write!(f, "majority")?,
        }
        if self.seed != 0 {
            let sep = if matches!(
                self.kind,
                LearnerKind::GaussianNb | LearnerKind::DecisionStump | LearnerKind::MajorityBaseline
            ) {
                ':'
            } else {
                ','
            };
            write!(f, "{sep}seed={}", self.seed)?;
        }
        Ok(())
    }
}

/// Parses `gnb`, `knn:k=3`, `knn:k=5,zscore=true`, `tree:depth=8`, `stump`,
/// `bag:count=25,depth=8`, `majority`; any kind also accepts `seed=<u64>`.
impl FromStr for Learner {
    type Err = Error;

    fn from_str(spec: &str) -> Result<Self> {
        let err = |reason: String| Error::LearnerSpec {
            spec: spec.to_owned(),
            reason,
        };
        let (name, params) = match spec.trim().split_once(':') {
            Some((n, p)) => (n.trim(), p.trim()),
            None => (spec.trim(), ""),
        };
        let mut k = DEFAULT_K;
        let mut zscore = false;
        let mut depth = DEFAULT_DEPTH;
        let mut count = DEFAULT_BAG_COUNT;
        let mut seed = 0u64;
        let allowed: &[&str] = match name {
            "gnb" | "stump" | "majority" => &["seed"],
            "knn" => &["k", "zscore", "seed"],
            "tree" => &["depth", "seed"],
            "bag" => &["count", "depth", "seed"],
            other => return Err(err(format!("unknown learner '{other}'"))),
        };
        for param in params.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = param
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got '{param}'")))?;
            let (key, value) = (key.trim(), value.trim());
            if !allowed.contains(&key) {
                return Err(err(format!("unknown parameter '{key}' for '{name}'")));
            }
            let int = || -> Result<u64> {
                value
                    .parse::<u64>()
                    .map_err(|_| err(format!("'{key}' expects an integer, got '{value}'")))
            };
            match key {
                "k" => k = int()? as usize,
                "depth" => depth = int()? as usize,
                "count" => count = int()? as usize,
                "seed" => seed = int()?,
                "zscore" => {
                    zscore = value
                        .parse()
                        .map_err(|_| err(format!("'zscore' expects true/false, got '{value}'")))?
                }
                _ => unreachable!(),
            }
        }
        let kind = match name {
            "gnb" => LearnerKind::GaussianNb,
            "knn" => LearnerKind::Knn { k, zscore },
            "tree" => LearnerKind::DecisionTree { max_depth: depth },
            "stump" => LearnerKind::DecisionStump,
            "bag" => LearnerKind::BaggedTrees {
                count,
                max_depth: depth,
            },
            _ => LearnerKind::MajorityBaseline,
        };
        let learner = Learner { kind, seed };
        learner.validate().map_err(|e| match e {
            Error::LearnerSpec { reason, .. } => err(reason),
            other => other,
        })?;
        Ok(learner)
    }
}

/// A fitted learner.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    learner: Learner,
    class_count: usize,
    feature_count: usize,
    fitted: Fitted,
}

#[derive(Debug, Clone)]
enum Fitted {
    Constant(usize),
    GaussianNb(GaussianNb),
    Knn(Knn),
    Tree(Tree),
    Bagged(Vec<Tree>),
}

impl TrainedModel {
    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }
}

impl Classifier for TrainedModel {
    fn feature_count(&self) -> usize {
        self.feature_count
    }

    fn predict_unchecked(&self, x: &[f64]) -> usize {
        match &self.fitted {
            Fitted::Constant(c) => *c,
            Fitted::GaussianNb(m) => m.predict(x),
            Fitted::Knn(m) => m.predict(x, self.class_count),
            Fitted::Tree(t) => t.predict(x),
            Fitted::Bagged(trees) => {
                let mut votes = vec![0usize; self.class_count];
                for t in trees {
                    votes[t.predict(x)] += 1;
                }
                argmax_lowest(&votes)
            }
        }
    }
}

/// Index of the largest value; the lowest index wins ties.
pub(crate) fn argmax_lowest<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn majority_class(labels: &[usize], class_count: usize) -> usize {
    let mut counts = vec![0usize; class_count];
    for &y in labels {
        counts[y] += 1;
    }
    argmax_lowest(&counts)
}

#[derive(Debug, Clone)]
struct GaussianNb {
    /// Only classes present in the training data.
    classes: Vec<NbClass>,
}

#[derive(Debug, Clone)]
struct NbClass {
    label: usize,
    log_prior: f64,
    means: Vec<f64>,
    variances: Vec<f64>,
    log_norm: f64,
}

impl GaussianNb {
    fn fit(data: &Dataset) -> Self {
        let d = data.feature_count();
        let n = data.len() as f64;

        // Floor relative to the variance of the whole training set so constant
        // features never divide by zero.
        let mut global_mean = vec![0.0; d];
        for row in data.rows() {
            for (m, v) in global_mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut floor = vec![0.0; d];
        for row in data.rows() {
            for j in 0..d {
                floor[j] += (row[j] - global_mean[j]).powi(2) / n;
            }
        }
        for f in floor.iter_mut() {
            *f = if *f > 0.0 { *f * 1e-9 } else { 1.0 };
        }

        let counts = data.class_histogram();
        let classes = counts
            .iter()
            .enumerate()
            .filter(|&(_, &c)| c > 0)
            .map(|(label, &count)| {
                let cn = count as f64;
                let mut means = vec![0.0; d];
                for i in (0..data.len()).filter(|&i| data.label(i) == label) {
                    for (m, v) in means.iter_mut().zip(data.row(i)) {
                        *m += v / cn;
                    }
                }
                let mut variances = vec![0.0; d];
                for i in (0..data.len()).filter(|&i| data.label(i) == label) {
                    for (j, v) in data.row(i).iter().enumerate() {
                        variances[j] += (v - means[j]).powi(2) / cn;
                    }
                }
                for (v, f) in variances.iter_mut().zip(&floor) {
                    *v = v.max(*f);
                }
                let log_norm = -0.5
                    * variances
                        .iter()
                        .map(|v| (2.0 * std::f64::consts::PI * v).ln())
                        .sum::<f64>();
                NbClass {
                    label,
                    log_prior: (cn / n).ln(),
                    means,
                    variances,
                    log_norm,
                }
            })
            .collect();
        Self { classes }
    }

    fn predict(&self, x: &[f64]) -> usize {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for c in &self.classes {
            let quad: f64 = x
                .iter()
                .zip(c.means.iter().zip(&c.variances))
                .map(|(v, (m, var))| (v - m) * (v - m) / var)
                .sum();
            let score = c.log_prior + c.log_norm - 0.5 * quad;
            // Classes are visited in increasing label order, so strict `>`
            // keeps the lowest label on ties.
            if score > best.0 || best.1 == usize::MAX {
                best = (score, c.label);
            }
        }
        best.1
    }
}

#[derive(Debug, Clone)]
struct Knn {
    k: usize,
    rows: Vec<f64>,
    labels: Vec<usize>,
    d: usize,
    /// Per-feature (mean, sd) from the training data when z-scoring.
    scaling: Option<Vec<(f64, f64)>>,
}

impl Knn {
    fn fit(data: &Dataset, k: usize, zscore: bool) -> Self {
        let d = data.feature_count();
        let n = data.len() as f64;
        let scaling = zscore.then(|| {
            (0..d)
                .map(|j| {
                    let mean = data.rows().map(|r| r[j]).sum::<f64>() / n;
                    let var = data.rows().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
                    let sd = var.sqrt();
                    (mean, if sd > 0.0 { sd } else { 1.0 })
                })
                .collect::<Vec<_>>()
        });
        let mut rows = Vec::with_capacity(data.len() * d);
        for r in data.rows() {
            match &scaling {
                Some(s) => rows.extend(r.iter().zip(s).map(|(v, (m, sd))| (v - m) / sd)),
                None => rows.extend_from_slice(r),
            }
        }
        Self {
            k,
            rows,
            labels: data.labels().to_vec(),
            d,
            scaling,
        }
    }

    fn predict(&self, x: &[f64], class_count: usize) -> usize {
        let scaled;
        let x = match &self.scaling {
            Some(s) => {
                scaled = x.iter().zip(s).map(|(v, (m, sd))| (v - m) / sd).collect::<Vec<_>>();
                &scaled[..]
            }
            None => x,
        };
        let k = self.k.min(self.labels.len());
        // Sorted by (distance, training index); ties on distance keep the
        // earlier training item.
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        for (i, row) in self.rows.chunks_exact(self.d.max(1)).enumerate().take(self.labels.len()) {
            let dist = if self.d == 0 { 0.0 } else { squared_distance(row, x) };
            if best.len() == k && dist >= best[k - 1].0 {
                continue;
            }
            let pos = best.partition_point(|&(bd, _)| bd <= dist);
            best.insert(pos, (dist, i));
            best.truncate(k);
        }
        let mut votes = vec![0usize; class_count];
        for &(_, i) in &best {
            votes[self.labels[i]] += 1;
        }
        argmax_lowest(&votes)
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(usize),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Binary CART tree on Gini impurity. Items with `x[feature] <= threshold`
/// go left.
#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

struct TreeBuilder<'a> {
    data: &'a Dataset,
    /// Dataset row of each sample position (bootstrap samples repeat rows).
    sample: &'a [usize],
    labels: Vec<usize>,
    class_count: usize,
    /// Per feature, sample positions sorted by value; every node owns the
    /// same contiguous range in each list.
    sorted: Vec<Vec<usize>>,
    goes_left: Vec<bool>,
    scratch: Vec<usize>,
    nodes: Vec<Node>,
    max_depth: usize,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    left_count: usize,
}

impl Tree {
    fn grow(data: &Dataset, sample: &[usize], max_depth: usize) -> Tree {
        let m = sample.len();
        let d = data.feature_count();
        let sorted = (0..d)
            .map(|f| {
                let mut order: Vec<usize> = (0..m).collect();
                order.sort_by(|&a, &b| {
                    data.row(sample[a])[f]
                        .total_cmp(&data.row(sample[b])[f])
                        .then(a.cmp(&b))
                });
                order
            })
            .collect();
        let mut builder = TreeBuilder {
            data,
            sample,
            labels: sample.iter().map(|&i| data.label(i)).collect(),
            class_count: data.class_count(),
            sorted,
            goes_left: vec![false; m],
            scratch: Vec::with_capacity(m),
            nodes: Vec::new(),
            max_depth,
        };
        builder.build(0, m, 0);
        Tree {
            nodes: builder.nodes,
        }
    }

    fn predict(&self, x: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(c) => return c,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

impl TreeBuilder<'_> {
    fn value(&self, pos: usize, feature: usize) -> f64 {
        self.data.row(self.sample[pos])[feature]
    }

    /// Builds the subtree for sample range `lo..hi` and returns its node id.
    fn build(&mut self, lo: usize, hi: usize, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(0));

        let mut counts = vec![0usize; self.class_count];
        // Any feature list covers the same set; with zero features fall back
        // to the identity order.
        if let Some(list) = self.sorted.first() {
            for &p in &list[lo..hi] {
                counts[self.labels[p]] += 1;
            }
        } else {
            for p in lo..hi {
                counts[self.labels[p]] += 1;
            }
        }
        let majority = argmax_lowest(&counts);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if depth >= self.max_depth || pure || hi - lo < 2 {
            self.nodes[id] = Node::Leaf(majority);
            return id;
        }
        let Some(split) = self.best_split(lo, hi, &counts) else {
            self.nodes[id] = Node::Leaf(majority);
            return id;
        };

        let f = split.feature;
        for &p in &self.sorted[f][lo..hi] {
            self.goes_left[p] = self.value(p, f) <= split.threshold;
        }
        for list in self.sorted.iter_mut() {
            self.scratch.clear();
            self.scratch
                .extend(list[lo..hi].iter().copied().filter(|&p| self.goes_left[p]));
            self.scratch
                .extend(list[lo..hi].iter().copied().filter(|&p| !self.goes_left[p]));
            list[lo..hi].copy_from_slice(&self.scratch);
        }
        let mid = lo + split.left_count;
        let left = self.build(lo, mid, depth + 1);
        let right = self.build(mid, hi, depth + 1);
        self.nodes[id] = Node::Split {
            feature: f,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }

    /// Split minimising weighted Gini impurity. Minimising
    /// `nL*giniL + nR*giniR` is maximising `sumsqL/nL + sumsqR/nR` where
    /// `sumsq` is the sum of squared class counts. Returns `None` when no
    /// split strictly improves on the parent.
    fn best_split(&self, lo: usize, hi: usize, counts: &[usize]) -> Option<BestSplit> {
        let n = hi - lo;
        let parent_sumsq: f64 = counts.iter().map(|&c| (c * c) as f64).sum();
        let parent_score = parent_sumsq / n as f64;
        let mut best: Option<(f64, BestSplit)> = None;
        let mut left = vec![0usize; self.class_count];

        for (f, list) in self.sorted.iter().enumerate() {
            left.iter_mut().for_each(|c| *c = 0);
            let mut sumsq_left = 0.0;
            let mut sumsq_right = parent_sumsq;
            let range = &list[lo..hi];
            for (i, &p) in range.iter().enumerate().take(n - 1) {
                let y = self.labels[p];
                let right_c = counts[y] - left[y];
                sumsq_left += (2 * left[y] + 1) as f64;
                sumsq_right -= (2 * right_c - 1) as f64;
                left[y] += 1;

                let here = self.value(p, f);
                let next = self.value(range[i + 1], f);
                if here >= next {
                    continue;
                }
                let nl = (i + 1) as f64;
                let score = sumsq_left / nl + sumsq_right / (n as f64 - nl);
                if score <= parent_score * (1.0 + 1e-12) {
                    continue;
                }
                if best.as_ref().is_none_or(|(s, _)| score > *s) {
                    let mut threshold = 0.5 * (here + next);
                    if threshold >= next {
                        threshold = here;
                    }
                    best = Some((
                        score,
                        BestSplit {
                            feature: f,
                            threshold,
                            left_count: i + 1,
                        },
                    ));
                }
            }
        }
        best.map(|(_, s)| s)
    }
}
