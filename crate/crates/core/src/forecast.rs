//! Pooled regression models relating early estimates to final values, and
//! forecasts built from them.
//!
//! For each variable (bias², variance, error) and each grid size `n`, one
//! linear model `final = slope * estimate_at_n + intercept` is fitted over
//! every (dataset, learner) cell. Final error can then be forecast directly
//! from the error model, or by summing the bias² and variance forecasts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decomp::{Decomposition, RunRecord};
use crate::regress::{ols, paired_t_test, LinearModel, TTestResult};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Bias2,
    Variance,
    Error,
}

impl Variable {
    pub const ALL: [Variable; 3] = [Variable::Bias2, Variable::Variance, Variable::Error];

    pub fn of(self, d: &Decomposition) -> f64 {
        match self {
            Variable::Bias2 => d.bias2,
            Variable::Variance => d.variance,
            Variable::Error => d.error,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variable::Bias2 => "bias2",
            Variable::Variance => "variance",
            Variable::Error => "error",
        }
    }
}

/// A (dataset, learner) pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellId {
    pub dataset: String,
    pub learner: String,
}

impl CellId {
    pub fn of(r: &RunRecord) -> Self {
        Self {
            dataset: r.dataset.clone(),
            learner: r.learner.clone(),
        }
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.dataset, self.learner)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub variable: Variable,
    pub n: usize,
    #[serde(flatten)]
    pub model: LinearModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRegistry {
    pub n_grid: Vec<usize>,
    pub entries: Vec<RegistryEntry>,
    /// Cells the models were pooled from.
    pub provenance: Vec<CellId>,
}

impl ModelRegistry {
    pub fn model(&self, variable: Variable, n: usize) -> Option<&LinearModel> {
        self.entries
            .iter()
            .find(|e| e.variable == variable && e.n == n)
            .map(|e| &e.model)
    }

    /// Whether the cell contributed to the pooled models.
    pub fn has_seen(&self, dataset: &str, learner: &str) -> bool {
        self.provenance
            .iter()
            .any(|c| c.dataset == dataset && c.learner == learner)
    }

    /// Grid size closest to `n`; the smaller one on ties.
    pub fn nearest_n(&self, n: usize) -> Option<usize> {
        self.n_grid.iter().copied().min_by_key(|&g| (g.abs_diff(n), g))
    }

    /// `(n, [r2 of bias2, variance, error], pooled points)` per grid size.
    pub fn r2_table(&self) -> Vec<(usize, [f64; 3], usize)> {
        self.n_grid
            .iter()
            .map(|&n| {
                let mut r2 = [f64::NAN; 3];
                let mut count = 0;
                for (slot, v) in r2.iter_mut().zip(Variable::ALL) {
                    if let Some(m) = self.model(v, n) {
                        *slot = m.r2;
                        count = m.point_count;
                    }
                }
                (n, r2, count)
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

type CellTable<'a> = BTreeMap<CellId, BTreeMap<usize, &'a RunRecord>>;

fn index_grid(grid: &[RunRecord]) -> Result<CellTable<'_>> {
    let mut table: CellTable = BTreeMap::new();
    for r in grid {
        if table.entry(CellId::of(r)).or_default().insert(r.n, r).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate record {}", r.cell_label())));
        }
    }
    Ok(table)
}

fn index_finals(finals: &[RunRecord]) -> Result<BTreeMap<CellId, &RunRecord>> {
    let mut table = BTreeMap::new();
    for r in finals {
        if table.insert(CellId::of(r), r).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate record {}", r.cell_label())));
        }
    }
    Ok(table)
}

/// Pool `(estimate at n, final value)` pairs across cells and fit one model
/// per variable and grid size.
pub fn build_registry(grid: &[RunRecord], finals: &[RunRecord]) -> Result<ModelRegistry> {
    let by_cell = index_grid(grid)?;
    let final_by_cell = index_finals(finals)?;
    let n_grid: Vec<usize> = grid.iter().map(|r| r.n).collect::<BTreeSet<_>>().into_iter().collect();
    let cells: BTreeSet<&CellId> = by_cell.keys().chain(final_by_cell.keys()).collect();
    if cells.len() < 2 {
        return Err(Error::DegenerateFit(format!(
            "registry needs at least 2 cells, got {}",
            cells.len()
        )));
    }
    for cell in &cells {
        if !final_by_cell.contains_key(*cell) {
            return Err(Error::MissingCell(format!("{cell}@final")));
        }
        for &n in &n_grid {
            if !by_cell.get(*cell).is_some_and(|m| m.contains_key(&n)) {
                return Err(Error::MissingCell(format!("{cell}@{n}")));
            }
        }
    }

    let mut entries = Vec::with_capacity(3 * n_grid.len());
    for &n in &n_grid {
        for variable in Variable::ALL {
            let points: Vec<(f64, f64)> = cells
                .iter()
                .map(|c| {
                    let early = variable.of(&by_cell[*c][&n].decomposition());
                    let last = variable.of(&final_by_cell[*c].decomposition());
                    (early, last)
                })
                .collect();
            let model = ols(&points).map_err(|e| match e {
                Error::DegenerateFit(why) => {
                    Error::DegenerateFit(format!("{} model at n={n}: {why}", variable.name()))
                }
                other => other,
            })?;
            entries.push(RegistryEntry { variable, n, model });
        }
    }
    Ok(ModelRegistry {
        n_grid,
        entries,
        provenance: cells.into_iter().cloned().collect(),
    })
}

/// Diagnostic: the pooled model for one variable at `n`, refitted
/// separately for each final dataset size. Groups with fewer than two
/// usable points map to `None`.
pub fn stratified_by_final_size(
    grid: &[RunRecord],
    finals: &[RunRecord],
    variable: Variable,
    n: usize,
) -> Result<BTreeMap<usize, Option<LinearModel>>> {
    let by_cell = index_grid(grid)?;
    let mut groups: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for (cell, last) in index_finals(finals)? {
        if let Some(early) = by_cell.get(&cell).and_then(|m| m.get(&n)) {
            groups.entry(last.n).or_default().push((
                variable.of(&early.decomposition()),
                variable.of(&last.decomposition()),
            ));
        }
    }
    Ok(groups.into_iter().map(|(size, pts)| (size, ols(&pts).ok())).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub dataset: String,
    pub learner: String,
    /// Size of the estimate the forecast was made from.
    pub n: usize,
    /// Grid size whose models were used (differs from `n` only with the
    /// nearest-size fallback).
    pub n_used: usize,
    /// Predicted final bias².
    pub p_b: f64,
    /// Predicted final variance.
    pub p_v: f64,
    /// Decomposed prediction of final error, `p_b + p_v`.
    pub p_e1: f64,
    /// Direct prediction of final error from the error model.
    pub p_e2: f64,
    /// Some prediction fell outside [0, 1] and was clamped.
    pub clamped: bool,
    pub observed_final: Option<Decomposition>,
}

/// Forecast final values for one cell's estimate at size `estimate.n`.
///
/// Without `nearest`, `estimate.n` must be a grid size. With it, the closest
/// grid size is used instead.
pub fn forecast_cell(registry: &ModelRegistry, estimate: &RunRecord, nearest: bool) -> Result<Forecast> {
    let n_used = if registry.n_grid.contains(&estimate.n) {
        estimate.n
    } else if nearest {
        registry
            .nearest_n(estimate.n)
            .ok_or_else(|| Error::InvalidArgument("registry has an empty grid".into()))?
    } else {
        return Err(Error::InvalidArgument(format!(
            "n={} is not in the registry grid {:?}",
            estimate.n, registry.n_grid
        )));
    };
    let model = |v: Variable| {
        registry
            .model(v, n_used)
            .ok_or_else(|| Error::MissingCell(format!("registry entry {}@{n_used}", v.name())))
    };
    let d = estimate.decomposition();
    let raw_b = model(Variable::Bias2)?.predict(d.bias2);
    let raw_v = model(Variable::Variance)?.predict(d.variance);
    let raw_e = model(Variable::Error)?.predict(d.error);

    // Clamp bias first, then variance into what is left, so that the
    // decomposed error stays an exact sum inside [0, 1].
    let p_b = raw_b.clamp(0.0, 1.0);
    let p_v = raw_v.clamp(0.0, 1.0 - p_b);
    let p_e2 = raw_e.clamp(0.0, 1.0);
    Ok(Forecast {
        dataset: estimate.dataset.clone(),
        learner: estimate.learner.clone(),
        n: estimate.n,
        n_used,
        p_b,
        p_v,
        p_e1: p_b + p_v,
        p_e2,
        clamped: p_b != raw_b || p_v != raw_v || p_e2 != raw_e,
        observed_final: None,
    })
}

/// Which prediction an evaluation row refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicted {
    /// `p_e1`, the sum of the bias² and variance forecasts.
    ErrorDecomposed,
    /// `p_e2`, the direct error forecast.
    ErrorDirect,
    Bias2,
    Variance,
}

impl Predicted {
    pub const ALL: [Predicted; 4] = [
        Predicted::ErrorDecomposed,
        Predicted::ErrorDirect,
        Predicted::Bias2,
        Predicted::Variance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Predicted::ErrorDecomposed => "error_decomposed",
            Predicted::ErrorDirect => "error_direct",
            Predicted::Bias2 => "bias2",
            Predicted::Variance => "variance",
        }
    }

    fn pair(self, f: &Forecast, obs: &Decomposition) -> (f64, f64) {
        match self {
            Predicted::ErrorDecomposed => (f.p_e1, obs.error),
            Predicted::ErrorDirect => (f.p_e2, obs.error),
            Predicted::Bias2 => (f.p_b, obs.bias2),
            Predicted::Variance => (f.p_v, obs.variance),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub dataset: String,
    pub learner: String,
    pub n: usize,
    pub variable: Predicted,
    pub predicted: f64,
    pub observed: f64,
    /// `100 * (predicted - observed) / observed`; absent when the
    /// observation is exactly zero.
    pub rel_dev_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableEvaluation {
    pub variable: Predicted,
    /// Coefficient of determination of observed on predicted; absent when
    /// every prediction is identical.
    pub r2: Option<f64>,
    pub t_test: TTestResult,
    pub mean_rel_dev_pct: Option<f64>,
    pub mean_abs_rel_dev_pct: Option<f64>,
    /// Cells left out of the relative-deviation aggregates (zero observation).
    pub rel_dev_excluded: Vec<CellId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub count: usize,
    pub variables: Vec<VariableEvaluation>,
    pub rows: Vec<EvaluationRow>,
}

impl EvaluationReport {
    pub fn variable(&self, v: Predicted) -> Option<&VariableEvaluation> {
        self.variables.iter().find(|e| e.variable == v)
    }
}

pub fn relative_deviation_pct(predicted: f64, observed: f64) -> Option<f64> {
    (observed != 0.0).then(|| 100.0 * (predicted - observed) / observed)
}

/// Compare forecasts with their observed final values.
pub fn evaluate(forecasts: &[Forecast]) -> Result<EvaluationReport> {
    let observed: Vec<(&Forecast, &Decomposition)> = forecasts
        .iter()
        .filter_map(|f| f.observed_final.as_ref().map(|o| (f, o)))
        .collect();
    if observed.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "evaluation needs at least 2 forecasts with observations, got {}",
            observed.len()
        )));
    }
    let mut rows = Vec::new();
    let mut variables = Vec::new();
    for v in Predicted::ALL {
        let pairs: Vec<(f64, f64)> = observed.iter().map(|(f, o)| v.pair(f, o)).collect();
        let r2 = match ols(&pairs) {
            Ok(m) => Some(m.r2),
            Err(Error::DegenerateFit(_)) => None,
            Err(e) => return Err(e),
        };
        let t_test = paired_t_test(&pairs)?;
        let mut devs = Vec::new();
        let mut excluded = Vec::new();
        for ((f, _), &(pred, obs)) in observed.iter().zip(&pairs) {
            let dev = relative_deviation_pct(pred, obs);
            match dev {
                Some(d) => devs.push(d),
                None => excluded.push(CellId {
                    dataset: f.dataset.clone(),
                    learner: f.learner.clone(),
                }),
            }
            rows.push(EvaluationRow {
                dataset: f.dataset.clone(),
                learner: f.learner.clone(),
                n: f.n,
                variable: v,
                predicted: pred,
                observed: obs,
                rel_dev_pct: dev,
            });
        }
        let mean_of = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
        let abs: Vec<f64> = devs.iter().map(|d| d.abs()).collect();
        variables.push(VariableEvaluation {
            variable: v,
            r2,
            t_test,
            mean_rel_dev_pct: mean_of(&devs),
            mean_abs_rel_dev_pct: mean_of(&abs),
            rel_dev_excluded: excluded,
        });
    }
    Ok(EvaluationReport {
        count: observed.len(),
        variables,
        rows,
    })
}
