//! Experiment plans and the resumable cell runner behind `decompose`.
//!
//! A plan crosses datasets with learners and grid sizes. Each
//! (dataset, learner, n) cell, plus one full-size cell per (dataset,
//! learner), yields one [`RunRecord`]. Records are stored one JSON object per
//! line in `records.jsonl`, in a canonical order that does not depend on
//! scheduling.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, Generator, SyntheticSpec, DEFAULT_LABEL_COLUMN};
use crate::decomp::{decompose, run_sscv, RunRecord, SscvConfig};
use crate::learners::Learner;
use crate::seed;
use crate::{Error, Result};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const FAILURES_FILE: &str = "failures.json";

fn default_label_column() -> String {
    DEFAULT_LABEL_COLUMN.to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        #[serde(default = "default_label_column")]
        label_column: String,
        /// Defaults to the file stem.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    Synthetic { name: String, spec: SyntheticSpec },
}

impl DatasetSource {
    /// Load or generate the dataset. Relative CSV paths are resolved
    /// against `base_dir`.
    pub fn load(&self, base_dir: &Path) -> Result<Dataset> {
        match self {
            DatasetSource::Csv {
                path,
                label_column,
                name,
            } => {
                let data = data::load_csv(base_dir.join(path), label_column)?;
                Ok(match name {
                    Some(n) => data.with_name(n.clone()),
                    None => data,
                })
            }
            DatasetSource::Synthetic { name, spec } => Ok(data::generate(spec)?.with_name(name.clone())),
        }
    }
}

fn default_parallelism() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub datasets: Vec<DatasetSource>,
    pub learners: Vec<String>,
    pub n_grid: Vec<usize>,
    #[serde(default)]
    pub sscv: SscvConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Ensemble spec for the `ensemble` command.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<String>,
}

impl ExperimentPlan {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks that need no data.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.datasets.is_empty() {
            return bad("plan lists no datasets".into());
        }
        if self.learners.is_empty() {
            return bad("plan lists no learners".into());
        }
        if self.n_grid.is_empty() {
            return bad("n_grid is empty".into());
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("n_grid {:?} is not strictly increasing", self.n_grid));
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        if self.sscv.folds < 2 || self.sscv.repeats < 1 {
            return bad("need folds >= 2 and repeats >= 1".into());
        }
        if self.sscv.folds > self.n_grid[0] {
            return bad(format!(
                "{} folds do not fit the smallest grid size {}",
                self.sscv.folds, self.n_grid[0]
            ));
        }
        self.parsed_learners()?;
        let mut names: Vec<&str> = self.datasets.iter().filter_map(|d| match d {
            DatasetSource::Synthetic { name, .. } => Some(name.as_str()),
            DatasetSource::Csv { name, .. } => name.as_deref(),
        }).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return bad(format!("dataset name '{}' appears twice", w[0]));
        }
        Ok(())
    }

    pub fn parsed_learners(&self) -> Result<Vec<Learner>> {
        self.learners.iter().map(|s| s.parse()).collect()
    }

    /// Load every dataset and check the grid leaves headroom below each.
    pub fn load_datasets(&self, base_dir: &Path) -> Result<Vec<Dataset>> {
        let sets = self
            .datasets
            .iter()
            .map(|d| d.load(base_dir))
            .collect::<Result<Vec<_>>>()?;
        let largest = self.n_grid.last().copied().unwrap_or(0);
        for d in &sets {
            if largest >= d.len() {
                return Err(Error::InvalidArgument(format!(
                    "largest grid size {largest} is not below the {} items of '{}'",
                    d.len(),
                    d.name()
                )));
            }
        }
        for (i, a) in sets.iter().enumerate() {
            if sets[..i].iter().any(|b| b.name() == a.name()) {
                return Err(Error::InvalidArgument(format!("dataset name '{}' appears twice", a.name())));
            }
        }
        Ok(sets)
    }
}

/// Seed of the nested prefixes drawn from one dataset.
pub fn prefix_seed(plan_seed: u64, dataset: &str) -> u64 {
    seed::splitmix64(seed::fnv1a([&plan_seed.to_le_bytes()[..], dataset.as_bytes()]))
}

/// Cross-validation seed of one cell: FNV-1a over (plan seed, dataset name,
/// learner spec, n or "final"), finished with SplitMix64.
pub fn cell_seed(plan_seed: u64, dataset: &str, learner: &str, n: Option<usize>) -> u64 {
    let n_field = match n {
        Some(n) => n.to_string(),
        None => "final".to_owned(),
    };
    seed::splitmix64(seed::fnv1a([
        &plan_seed.to_le_bytes()[..],
        dataset.as_bytes(),
        learner.as_bytes(),
        n_field.as_bytes(),
    ]))
}

/// One unit of work.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub dataset: usize,
    pub learner: usize,
    /// Grid size, or `None` for the full-size run.
    pub n: Option<usize>,
}

/// Every cell of the plan in canonical order: datasets, then learners, then
/// grid sizes, then the full-size run.
pub fn plan_cells(plan: &ExperimentPlan) -> Vec<Cell> {
    let mut cells = Vec::new();
    for dataset in 0..plan.datasets.len() {
        for learner in 0..plan.learners.len() {
            for &n in &plan.n_grid {
                cells.push(Cell {
                    dataset,
                    learner,
                    n: Some(n),
                });
            }
            cells.push(Cell {
                dataset,
                learner,
                n: None,
            });
        }
    }
    cells
}

/// Compute one cell's record.
pub fn run_cell(
    dataset: &Dataset,
    learner: &Learner,
    n: Option<usize>,
    plan_seed: &SscvConfig,
) -> Result<RunRecord> {
    let spec = learner.to_string();
    let config = plan_seed.with_seed(cell_seed(plan_seed.seed, dataset.name(), &spec, n));
    let sample = match n {
        Some(n) => dataset.prefix(n, prefix_seed(plan_seed.seed, dataset.name()))?,
        None => dataset.clone(),
    };
    let records = run_sscv(&sample, learner, &config)?;
    let d = decompose(&records, sample.class_count())?;
    Ok(RunRecord::new(dataset.name(), spec, &config, &d, n.is_none()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads.
    pub jobs: usize,
    /// Recompute cells that already have a record.
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub total: usize,
    pub computed: usize,
    pub reused: usize,
    pub failures: Vec<CellFailure>,
    pub records_path: PathBuf,
}

impl RunSummary {
    pub fn complete(&self) -> bool {
        self.failures.is_empty()
    }
}

type RecordKey = (String, String, Option<usize>);

fn key_of(r: &RunRecord) -> RecordKey {
    (r.dataset.clone(), r.learner.clone(), (!r.is_final).then_some(r.n))
}

/// Parse a record file strictly.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Split records into grid-size records and full-size records.
pub fn split_finals(records: Vec<RunRecord>) -> (Vec<RunRecord>, Vec<RunRecord>) {
    records.into_iter().partition(|r| !r.is_final)
}

fn record_line(r: &RunRecord) -> Result<String> {
    Ok(serde_json::to_string(r)? + "\n")
}

/// Replace `path` atomically with `contents`.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Lines already on disk holding records that are still valid for this
/// plan, keyed by cell. A torn final line from an interrupted run is
/// ignored. Lines are kept verbatim so reuse never changes bytes.
fn reusable_records(
    path: &Path,
    plan: &ExperimentPlan,
    sets: &[Dataset],
    learners: &[String],
) -> Result<HashMap<RecordKey, String>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(HashMap::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = HashMap::new();
    for line in text.lines() {
        let Ok(r) = serde_json::from_str::<RunRecord>(line) else {
            continue;
        };
        let Some(d) = sets.iter().find(|d| d.name() == r.dataset) else {
            continue;
        };
        if !learners.contains(&r.learner) {
            continue;
        }
        let n = (!r.is_final).then_some(r.n);
        let expected_n = n.unwrap_or(d.len());
        let expected_seed = cell_seed(plan.sscv.seed, &r.dataset, &r.learner, n);
        let fits_plan = n.is_none_or(|n| plan.n_grid.contains(&n));
        if fits_plan
            && r.n == expected_n
            && r.seed == expected_seed
            && r.folds == plan.sscv.folds
            && r.repeats == plan.sscv.repeats
        {
            out.insert(key_of(&r), format!("{line}\n"));
        }
    }
    Ok(out)
}

/// Run every cell of `plan` that has no valid record yet, writing
/// `records.jsonl` (and `failures.json` if any cell failed) under
/// `plan.output_dir`.
///
/// Finished records are appended as whole lines while the run progresses,
/// so an interrupted run loses at most the cells in flight. At the end the
/// file is rewritten in canonical cell order, making its bytes independent
/// of `jobs` and of interruptions.
pub fn run_plan(plan: &ExperimentPlan, sets: &[Dataset], options: &RunOptions) -> Result<RunSummary> {
    plan.validate()?;
    let learners = plan.parsed_learners()?;
    let specs: Vec<String> = learners.iter().map(Learner::to_string).collect();
    fs::create_dir_all(&plan.output_dir).map_err(|e| Error::io(&plan.output_dir, e))?;
    let records_path = plan.output_dir.join(RECORDS_FILE);
    let failures_path = plan.output_dir.join(FAILURES_FILE);

    let cells = plan_cells(plan);
    let cell_key = |c: &Cell| -> RecordKey { (sets[c.dataset].name().to_owned(), specs[c.learner].clone(), c.n) };
    let mut done = if options.force {
        HashMap::new()
    } else {
        reusable_records(&records_path, plan, sets, &specs)?
    };
    let reused = cells.iter().filter(|c| done.contains_key(&cell_key(c))).count();
    let todo: Vec<&Cell> = cells.iter().filter(|c| !done.contains_key(&cell_key(c))).collect();

    // Start from a clean file holding only the reusable records.
    let canonical = |done: &HashMap<RecordKey, String>| -> Vec<u8> {
        let mut buf = Vec::new();
        for c in &cells {
            if let Some(line) = done.get(&cell_key(c)) {
                buf.extend_from_slice(line.as_bytes());
            }
        }
        buf
    };
    let existing = fs::read(&records_path).ok();
    let start = canonical(&done);
    if existing.as_deref() != Some(&start[..]) {
        write_atomic(&records_path, &start)?;
    }

    let mut failures = Vec::new();
    if !todo.is_empty() {
        let file = OpenOptions::new()
            .append(true)
            .open(&records_path)
            .map_err(|e| Error::io(&records_path, e))?;
        let mut out = BufWriter::new(file);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.jobs.max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
        let (tx, rx) = mpsc::channel::<(usize, Result<RunRecord>)>();
        let write_result: Result<()> = std::thread::scope(|scope| {
            let todo = &todo;
            scope.spawn(move || {
                pool.install(|| {
                    todo.par_iter().enumerate().for_each_with(tx, |tx, (i, c)| {
                        let r = run_cell(&sets[c.dataset], &learners[c.learner], c.n, &plan.sscv);
                        let _ = tx.send((i, r));
                    })
                })
            });
            // Single writer: append finished records in work-list order.
            let mut pending = BTreeMap::new();
            let mut next = 0;
            for (i, r) in rx {
                pending.insert(i, r);
                while let Some(r) = pending.remove(&next) {
                    let cell = todo[next];
                    match r {
                        Ok(rec) => {
                            let line = record_line(&rec)?;
                            out.write_all(line.as_bytes())
                                .and_then(|_| out.flush())
                                .map_err(|e| Error::io(&records_path, e))?;
                            done.insert(cell_key(cell), line);
                        }
                        Err(e) => {
                            let (d, l, n) = cell_key(cell);
                            let at = n.map_or("final".to_owned(), |n| n.to_string());
                            failures.push(CellFailure {
                                cell: format!("{d}/{l}@{at}"),
                                error: e.to_string(),
                            });
                        }
                    }
                    next += 1;
                }
            }
            Ok(())
        });
        write_result?;
        drop(out);
        write_atomic(&records_path, &canonical(&done))?;
    }

    if failures.is_empty() {
        match fs::remove_file(&failures_path) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(Error::io(&failures_path, e)),
            _ => {}
        }
    } else {
        let text = serde_json::to_string_pretty(&failures)?;
        fs::write(&failures_path, text + "\n").map_err(|e| Error::io(&failures_path, e))?;
    }
    Ok(RunSummary {
        total: cells.len(),
        computed: todo.len() - failures.len(),
        reused,
        failures,
        records_path,
    })
}

/// Six synthetic datasets of 1500 to 4000 items with varied geometry,
/// dimension, class count and label noise. `seed` varies the samples but
/// not the design.
pub fn synthetic_corpus(seed: u64) -> Vec<DatasetSource> {
    use Generator::{GaussianMixture as Mix, RuleLabelledHypercube as Cube};
    let designs: [(&str, Generator, usize, usize, usize, f64, f64); 6] = [
        ("blobs-2d", Mix, 1500, 2, 2, 0.05, 2.0),
        ("cube-4d", Cube, 2000, 4, 2, 0.0, 4.0),
        ("blobs-6d", Mix, 2500, 6, 3, 0.10, 3.0),
        ("cube-8d", Cube, 3000, 8, 4, 0.05, 4.0),
        ("blobs-10d", Mix, 3500, 10, 5, 0.15, 2.5),
        ("cube-3d", Cube, 4000, 3, 3, 0.10, 4.0),
    ];
    designs
        .iter()
        .enumerate()
        .map(|(i, &(name, generator, item_count, feature_count, class_count, bayes_error, separation))| {
            DatasetSource::Synthetic {
                name: name.to_owned(),
                spec: SyntheticSpec {
                    generator,
                    item_count,
                    feature_count,
                    class_count,
                    bayes_error,
                    seed: seed::derive(seed, i as u64),
                    separation,
                },
            }
        })
        .collect()
}

/// Write a record file in one go (used by tools and tests).
pub fn write_records(path: impl AsRef<Path>, records: &[RunRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for r in records {
        out.write_all(record_line(r)?.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
