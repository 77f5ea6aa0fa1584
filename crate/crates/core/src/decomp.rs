//! Repeated N-fold cross-validation (sub-sampled CV) and the Kohavi–Wolpert
//! decomposition of 0/1 loss.
//!
//! Every repeat draws a fresh seeded partition of the items into `folds`
//! near-equal folds. Each item is held out exactly once per repeat, so after
//! `repeats` repeats it carries `repeats` crisp predictions. Their empirical
//! distribution `p_y` stands in for the learner's prediction distribution
//! over training sets.
//!
//! With crisp truth `t`, per item:
//!
//! ```text
//! bias2    = 1/2 [ (1 - p_t)^2 + sum_{y != t} p_y^2 ]
//! variance = 1/2 [ 1 - sum_y p_y^2 ]
//! error    = 1 - p_t               (= bias2 + variance)
//! ```
//!
//! Intrinsic noise cannot be separated from bias for a single learner, so it
//! is folded into `bias2`.

use serde::{Deserialize, Serialize};

use crate::data::{shuffled_order, Dataset};
use crate::learners::{Classifier, Trainer};
use crate::seed;
use crate::{Error, Result};

pub const DEFAULT_FOLDS: usize = 10;
pub const DEFAULT_REPEATS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SscvConfig {
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for SscvConfig {
    fn default() -> Self {
        Self {
            folds: DEFAULT_FOLDS,
            repeats: DEFAULT_REPEATS,
            seed: 0,
        }
    }
}

impl SscvConfig {
    pub fn new(folds: usize, repeats: usize, seed: u64) -> Self {
        Self {
            folds,
            repeats,
            seed,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    /// Checks the configuration against a dataset of `n` items.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidArgument(format!(
                "folds must be at least 2, got {}",
                self.folds
            )));
        }
        if self.repeats < 1 {
            return Err(Error::InvalidArgument("repeats must be at least 1".into()));
        }
        if self.folds > n {
            return Err(Error::InvalidArgument(format!(
                "{} folds exceed {n} items",
                self.folds
            )));
        }
        Ok(())
    }

    pub(crate) fn repeat_seed(&self, repeat: usize) -> u64 {
        seed::derive(self.seed, repeat as u64)
    }
}

/// The held-out predictions an item received, one per repeat.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub item_index: usize,
    pub true_label: usize,
    pub predictions: Vec<usize>,
}

/// Partition `0..n` into `folds` folds after a seeded shuffle. The first
/// `n % folds` folds get one extra item.
pub fn fold_partition(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let order = shuffled_order(n, seed);
    let (base, extra) = (n / folds, n % folds);
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let size = base + usize::from(f < extra);
        out.push(order[start..start + size].to_vec());
        start += size;
    }
    out
}

/// Run sub-sampled cross-validation of `trainer` on `data`.
///
/// Records come back ordered by item index.
pub fn run_sscv<T: Trainer>(
    data: &Dataset,
    trainer: &T,
    config: &SscvConfig,
) -> Result<Vec<PredictionRecord>> {
    let n = data.len();
    config.validate(n)?;
    let mut records: Vec<PredictionRecord> = (0..n)
        .map(|i| PredictionRecord {
            item_index: i,
            true_label: data.label(i),
            predictions: Vec::with_capacity(config.repeats),
        })
        .collect();

    let mut in_fold = vec![false; n];
    for repeat in 0..config.repeats {
        for fold in fold_partition(n, config.folds, config.repeat_seed(repeat)) {
            for &i in &fold {
                in_fold[i] = true;
            }
            let train: Vec<usize> = (0..n).filter(|&i| !in_fold[i]).collect();
            let model = trainer.fit(&data.subset(&train))?;
            for &i in &fold {
                records[i].predictions.push(model.predict_unchecked(data.row(i)));
                in_fold[i] = false;
            }
        }
    }
    Ok(records)
}

/// Per-item decomposition terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItemDecomposition {
    pub bias2: f64,
    pub variance: f64,
    pub error: f64,
}

impl ItemDecomposition {
    /// Terms for one item from its prediction counts and true label.
    pub fn from_counts(counts: &[usize], truth: usize) -> Self {
        let l: usize = counts.iter().sum();
        let l = l as f64;
        let p = |c: usize| c as f64 / l;
        let p_t = p(counts[truth]);
        let sum_sq: f64 = counts.iter().map(|&c| p(c) * p(c)).sum();
        let others_sq = sum_sq - p_t * p_t;
        Self {
            bias2: 0.5 * ((1.0 - p_t) * (1.0 - p_t) + others_sq),
            variance: 0.5 * (1.0 - sum_sq),
            error: 1.0 - p_t,
        }
    }
}

/// Aggregate decomposition: unweighted means over items.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub bias2: f64,
    pub variance: f64,
    pub error: f64,
    /// Number of items the estimate covers.
    pub n: usize,
}

fn check_records(records: &[PredictionRecord], class_count: usize) -> Result<usize> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidArgument("no prediction records".into()))?;
    let l = first.predictions.len();
    if l == 0 {
        return Err(Error::InvalidArgument("records carry no predictions".into()));
    }
    for r in records {
        if r.predictions.len() != l {
            return Err(Error::InvalidArgument(format!(
                "item {} has {} predictions, expected {l}",
                r.item_index,
                r.predictions.len()
            )));
        }
        if r.true_label >= class_count || r.predictions.iter().any(|&y| y >= class_count) {
            return Err(Error::InvalidArgument(format!(
                "item {} has a class outside 0..{class_count}",
                r.item_index
            )));
        }
    }
    Ok(l)
}

/// Per-item terms, in record order.
pub fn decompose_items(
    records: &[PredictionRecord],
    class_count: usize,
) -> Result<Vec<ItemDecomposition>> {
    check_records(records, class_count)?;
    let mut counts = vec![0usize; class_count];
    Ok(records
        .iter()
        .map(|r| {
            counts.iter_mut().for_each(|c| *c = 0);
            for &y in &r.predictions {
                counts[y] += 1;
            }
            ItemDecomposition::from_counts(&counts, r.true_label)
        })
        .collect())
}

pub fn decompose(records: &[PredictionRecord], class_count: usize) -> Result<Decomposition> {
    let items = decompose_items(records, class_count)?;
    let m = items.len() as f64;
    let mut agg = Decomposition {
        bias2: 0.0,
        variance: 0.0,
        error: 0.0,
        n: items.len(),
    };
    for it in &items {
        agg.bias2 += it.bias2;
        agg.variance += it.variance;
        agg.error += it.error;
    }
    agg.bias2 /= m;
    agg.variance /= m;
    agg.error /= m;
    Ok(agg)
}

/// Error rate of each repeat (fraction of items misclassified in it).
pub fn repeat_error_rates(records: &[PredictionRecord]) -> Vec<f64> {
    let Some(first) = records.first() else {
        return Vec::new();
    };
    let n = records.len() as f64;
    (0..first.predictions.len())
        .map(|r| {
            records
                .iter()
                .filter(|rec| rec.predictions.get(r) != Some(&rec.true_label))
                .count() as f64
                / n
        })
        .collect()
}

/// One cell's result as persisted: one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub learner: String,
    pub n: usize,
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    pub bias2: f64,
    pub variance: f64,
    pub error: f64,
    /// Estimate on the whole dataset rather than on a grid prefix.
    #[serde(rename = "final", default)]
    pub is_final: bool,
}

impl RunRecord {
    pub fn new(
        dataset: impl Into<String>,
        learner: impl Into<String>,
        config: &SscvConfig,
        decomposition: &Decomposition,
        is_final: bool,
    ) -> Self {
        Self {
            dataset: dataset.into(),
            learner: learner.into(),
            n: decomposition.n,
            folds: config.folds,
            repeats: config.repeats,
            seed: config.seed,
            bias2: decomposition.bias2,
            variance: decomposition.variance,
            error: decomposition.error,
            is_final,
        }
    }

    pub fn decomposition(&self) -> Decomposition {
        Decomposition {
            bias2: self.bias2,
            variance: self.variance,
            error: self.error,
            n: self.n,
        }
    }

    /// `dataset/learner@n` (or `@final`), for messages.
    pub fn cell_label(&self) -> String {
        if self.is_final {
            format!("{}/{}@final", self.dataset, self.learner)
        } else {
            format!("{}/{}@{}", self.dataset, self.learner, self.n)
        }
    }
}
