//! Datasets: a dense numeric feature matrix plus dense class labels.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::{Error, Result};

/// Default name of the label column in CSV files.
pub const DEFAULT_LABEL_COLUMN: &str = "label";

/// Numeric items with categorical labels `0..class_count`.
///
/// Features are stored row-major. The value is immutable once built; every
/// transformation returns a new dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    feature_names: Vec<String>,
    features: Vec<f64>,
    labels: Vec<usize>,
    class_names: Vec<String>,
}

impl Dataset {
    /// Build a dataset from row-major features, validating every invariant.
    pub fn new(
        name: impl Into<String>,
        feature_names: Vec<String>,
        features: Vec<f64>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let d = feature_names.len();
        if labels.is_empty() {
            return Err(Error::InvalidDataset("no items".into()));
        }
        if features.len() != d * labels.len() {
            return Err(Error::InvalidDataset(format!(
                "{} feature values for {} rows of {} features",
                features.len(),
                labels.len(),
                d
            )));
        }
        if class_names.len() < 2 {
            return Err(Error::SingleClass);
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_names.len()) {
            return Err(Error::InvalidDataset(format!(
                "label {bad} outside 0..{}",
                class_names.len()
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "non-finite feature value at row {}, column {}",
                pos / d.max(1),
                pos % d.max(1)
            )));
        }
        Ok(Self {
            name: name.into(),
            feature_names,
            features,
            labels,
            class_names,
        })
    }

    /// Build from nested rows with synthetic feature and class names.
    pub fn from_rows(
        name: impl Into<String>,
        rows: &[Vec<f64>],
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidDataset("ragged rows".into()));
        }
        if rows.len() != labels.len() {
            return Err(Error::InvalidDataset(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        Self::new(
            name,
            (0..d).map(|j| format!("x{j}")).collect(),
            rows.concat(),
            labels,
            (0..class_count).map(|k| k.to_string()).collect(),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_count(&self) -> usize {
        self.feature_names.len()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.feature_count();
        &self.features[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.len()).map(move |i| self.row(i))
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Items at `indices`, in that order. Class names are kept, so the class
    /// count is unchanged even if some classes are absent from the subset.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let d = self.feature_count();
        let mut features = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            name: self.name.clone(),
            feature_names: self.feature_names.clone(),
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    /// The first `n` items of a seeded shuffle of the whole dataset.
    ///
    /// The shuffle depends only on the dataset size and `seed`, so prefixes
    /// taken with the same seed are nested.
    pub fn prefix(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 || n > self.len() {
            return Err(Error::InvalidArgument(format!(
                "prefix size {n} outside 1..={}",
                self.len()
            )));
        }
        let order = shuffled_order(self.len(), seed);
        Ok(self.subset(&order[..n]))
    }

    /// Number of items per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count()];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Write as CSV with the label column last.
    pub fn save_csv(&self, path: impl AsRef<Path>, label_column: &str) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut line = self.feature_names.join(",");
        if !line.is_empty() {
            line.push(',');
        }
        line.push_str(label_column);
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        for i in 0..self.len() {
            line.clear();
            for v in self.row(i) {
                // `Display` for f64 is the shortest representation that
                // parses back to the same value.
                line.push_str(&v.to_string());
                line.push(',');
            }
            line.push_str(&self.class_names[self.labels[i]]);
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// A seeded permutation of `0..n`.
pub fn shuffled_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    order
}

/// Load a CSV file with a header row. Every column except `label_column`
/// must hold finite reals; labels are encoded by first appearance.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::MissingLabelColumn(label_column.to_owned()))?;

    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != label_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut class_index: HashMap<String, usize> = HashMap::new();

    for (r, record) in reader.records().enumerate() {
        let record = record?;
        // Row numbers are 1-based over data rows.
        let row = r + 1;
        for (j, cell) in record.iter().enumerate() {
            if j == label_idx {
                let next = class_names.len();
                let y = *class_index.entry(cell.to_owned()).or_insert_with(|| {
                    class_names.push(cell.to_owned());
                    next
                });
                labels.push(y);
            } else {
                let v: f64 = cell
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        row,
                        column: header[j].clone(),
                        value: cell.to_owned(),
                    })?;
                features.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::InvalidDataset(format!("{}: no data rows", path.display())));
    }
    if class_names.len() < 2 {
        return Err(Error::SingleClass);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, feature_names, features, labels, class_names)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    /// One axis-aligned Gaussian blob per class.
    GaussianMixture,
    /// Uniform points in the unit hypercube labelled by their nearest
    /// prototype; each class owns several prototypes.
    RuleLabelledHypercube,
}

fn default_separation() -> f64 {
    4.0
}

/// Parameters of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub generator: Generator,
    pub item_count: usize,
    pub feature_count: usize,
    pub class_count: usize,
    /// Probability that an item's label is replaced by a different class
    /// after noiseless generation.
    pub bayes_error: f64,
    pub seed: u64,
    /// Distance between class means, in within-class standard deviations.
    /// Only used by the Gaussian mixture.
    #[serde(default = "default_separation")]
    pub separation: f64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::InvalidArgument("class_count must be at least 2".into()));
        }
        if self.feature_count == 0 {
            return Err(Error::InvalidArgument("feature_count must be at least 1".into()));
        }
        if self.item_count < self.class_count {
            return Err(Error::InvalidArgument(format!(
                "item_count {} is smaller than class_count {}",
                self.item_count, self.class_count
            )));
        }
        if !(0.0..0.5).contains(&self.bayes_error) {
            return Err(Error::InvalidArgument(format!(
                "bayes_error {} outside [0, 0.5)",
                self.bayes_error
            )));
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return Err(Error::InvalidArgument("separation must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Generate a synthetic dataset. Output depends only on `spec`.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    // Separate streams for geometry, items and label noise, so changing the
    // noise level leaves the clean sample untouched.
    let mut geometry = seed::rng(seed::derive(spec.seed, 0));
    let mut items = seed::rng(seed::derive(spec.seed, 1));
    let mut noise = seed::rng(seed::derive(spec.seed, 2));

    let (n, d, k) = (spec.item_count, spec.feature_count, spec.class_count);
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);

    match spec.generator {
        Generator::GaussianMixture => {
            let means = class_means(k, d, spec.separation, &mut geometry);
            let scales: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..d).map(|_| geometry.random_range(0.75..1.25)).collect())
                .collect();
            for _ in 0..n {
                let y = items.random_range(0..k);
                for j in 0..d {
                    let z: f64 = items.sample(StandardNormal);
                    features.push(means[y][j] + scales[y][j] * z);
                }
                labels.push(y);
            }
        }
        Generator::RuleLabelledHypercube => {
            const PROTOTYPES_PER_CLASS: usize = 3;
            let prototypes: Vec<Vec<f64>> = (0..k * PROTOTYPES_PER_CLASS)
                .map(|_| (0..d).map(|_| geometry.random::<f64>()).collect())
                .collect();
            for _ in 0..n {
                let x: Vec<f64> = (0..d).map(|_| items.random::<f64>()).collect();
                let nearest = prototypes
                    .iter()
                    .enumerate()
                    .map(|(p, proto)| (p, squared_distance(proto, &x)))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(p, _)| p)
                    .unwrap_or(0);
                features.extend_from_slice(&x);
                labels.push(nearest % k);
            }
        }
    }

    for y in labels.iter_mut() {
        if noise.random::<f64>() < spec.bayes_error {
            // Uniform over the other k-1 classes.
            let shift = noise.random_range(1..k);
            *y = (*y + shift) % k;
        }
    }

    Dataset::new(
        format!("synthetic-{}", spec.seed),
        (0..d).map(|j| format!("x{j}")).collect(),
        features,
        labels,
        (0..k).map(|c| c.to_string()).collect(),
    )
}

/// Class centres with pairwise distance `separation` when `k <= d`
/// (scaled basis vectors); otherwise random directions of the same norm.
fn class_means(k: usize, d: usize, separation: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let radius = separation / std::f64::consts::SQRT_2;
    (0..k)
        .map(|c| {
            if k <= d {
                let mut m = vec![0.0; d];
                m[c] = radius;
                m
            } else {
                let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                dir.into_iter().map(|v| v / norm * radius).collect()
            }
        })
        .collect()
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
