//! Heterogeneous voting ensembles, the oracle partition of items, and the
//! power-law forecast of ensemble error.
//!
//! Over `l` repeats, every item falls into exactly one of:
//!
//! * `A+`: predicted correctly in every repeat,
//! * `A-`: given the same wrong class in every repeat,
//! * `B`: everything else.
//!
//! Items in `A-` carry per-item bias² of exactly 1 and items in `A+` exactly
//! 0, so `|A-|/|X| <= bias2 <= |A-|/|X| + |B|/|X|`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::decomp::{repeat_error_rates, run_sscv, PredictionRecord, SscvConfig};
use crate::learners::{argmax_lowest, Classifier, Learner, TrainedModel, Trainer};
use crate::regress::{constant_fit, fit_power_law, ols, LinearModel, PowerLawModel};
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combiner {
    Plurality,
    AccuracyWeighted,
}

impl Combiner {
    fn name(self) -> &'static str {
        match self {
            Combiner::Plurality => "plurality",
            Combiner::AccuracyWeighted => "weighted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VotingEnsemble {
    pub members: Vec<Learner>,
    pub combiner: Combiner,
    /// Mixed into the seeds of stochastic members when nonzero.
    #[serde(default)]
    pub seed: u64,
}

impl VotingEnsemble {
    pub fn new(members: Vec<Learner>, combiner: Combiner) -> Result<Self> {
        let e = Self {
            members,
            combiner,
            seed: 0,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::LearnerSpec {
                spec: self.to_string(),
                reason: "an ensemble needs at least one member".into(),
            });
        }
        self.members.iter().try_for_each(Learner::validate)
    }

    fn member(&self, i: usize) -> Learner {
        let m = &self.members[i];
        if self.seed == 0 {
            m.clone()
        } else {
            m.clone().with_seed(seed::derive(self.seed ^ m.seed, i as u64))
        }
    }
}

impl fmt::Display for VotingEnsemble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ens:{}[", self.combiner.name())?;
        for (i, m) in self.members.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            write!(f, "{m}")?;
        }
        f.write_str("]")?;
        if self.seed != 0 {
            write!(f, ":seed={}", self.seed)?;
        }
        Ok(())
    }
}

/// Parses `ens:<combiner>[<learner>|<learner>|...]` with combiner
/// `plurality` or `weighted`, optionally followed by `:seed=<u64>`.
impl FromStr for VotingEnsemble {
    type Err = Error;

    fn from_str(spec: &str) -> Result<Self> {
        let err = |reason: &str| Error::LearnerSpec {
            spec: spec.to_owned(),
            reason: reason.to_owned(),
        };
        let body = spec
            .trim()
            .strip_prefix("ens:")
            .ok_or_else(|| err("ensemble specs start with 'ens:'"))?;
        let (combiner, rest) = body.split_once('[').ok_or_else(|| err("missing '['"))?;
        let (members, tail) = rest.rsplit_once(']').ok_or_else(|| err("missing ']'"))?;
        let combiner = match combiner.trim() {
            "plurality" => Combiner::Plurality,
            "weighted" | "accuracy_weighted" => Combiner::AccuracyWeighted,
            other => return Err(err(&format!("unknown combiner '{other}'"))),
        };
        let seed = match tail.trim() {
            "" => 0,
            t => t
                .strip_prefix(":seed=")
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| err(&format!("unexpected trailing '{t}'")))?,
        };
        let members = members
            .split('|')
            .map(str::parse)
            .collect::<Result<Vec<Learner>>>()?;
        Ok(VotingEnsemble::new(members, combiner)?.with_seed(seed))
    }
}

#[derive(Debug, Clone)]
pub struct TrainedEnsemble {
    members: Vec<TrainedModel>,
    /// One weight per member, summing to 1.
    weights: Vec<f64>,
    combiner: Combiner,
    class_count: usize,
    feature_count: usize,
}

impl TrainedEnsemble {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn members(&self) -> &[TrainedModel] {
        &self.members
    }
}

impl Trainer for VotingEnsemble {
    type Model = TrainedEnsemble;

    fn fit(&self, data: &Dataset) -> Result<TrainedEnsemble> {
        self.validate()?;
        let members = (0..self.members.len())
            .into_par_iter()
            .map(|i| self.member(i).train(data))
            .collect::<Result<Vec<_>>>()?;
        let k = members.len();
        let weights = match self.combiner {
            Combiner::Plurality => vec![1.0 / k as f64; k],
            Combiner::AccuracyWeighted => {
                let acc: Vec<f64> = members
                    .iter()
                    .map(|m| {
                        let hits = (0..data.len())
                            .filter(|&i| m.predict_unchecked(data.row(i)) == data.label(i))
                            .count();
                        hits as f64 / data.len() as f64
                    })
                    .collect();
                let total: f64 = acc.iter().sum();
                if total > 0.0 {
                    acc.iter().map(|a| a / total).collect()
                } else {
                    vec![1.0 / k as f64; k]
                }
            }
        };
        Ok(TrainedEnsemble {
            members,
            weights,
            combiner: self.combiner,
            class_count: data.class_count(),
            feature_count: data.feature_count(),
        })
    }
}

impl Classifier for TrainedEnsemble {
    fn feature_count(&self) -> usize {
        self.feature_count
    }

    fn predict_unchecked(&self, x: &[f64]) -> usize {
        match self.combiner {
            Combiner::Plurality => {
                let mut votes = vec![0usize; self.class_count];
                for m in &self.members {
                    votes[m.predict_unchecked(x)] += 1;
                }
                argmax_lowest(&votes)
            }
            Combiner::AccuracyWeighted => {
                let mut votes = vec![0.0; self.class_count];
                for (m, w) in self.members.iter().zip(&self.weights) {
                    votes[m.predict_unchecked(x)] += w;
                }
                argmax_lowest(&votes)
            }
        }
    }
}

/// Sub-sampled cross-validation of the ensemble as a single classifier.
/// All members see the same training folds.
pub fn ensemble_predictions(
    data: &Dataset,
    ensemble: &VotingEnsemble,
    config: &SscvConfig,
) -> Result<Vec<PredictionRecord>> {
    run_sscv(data, ensemble, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OraclePartition {
    pub a_plus: usize,
    pub a_minus: usize,
    pub b_count: usize,
    pub total: usize,
    pub or_value: f64,
}

pub fn oracle_partition(records: &[PredictionRecord]) -> Result<OraclePartition> {
    let Some(first) = records.first() else {
        return Err(Error::InvalidArgument("oracle partition of no records".into()));
    };
    let l = first.predictions.len();
    if l == 0 {
        return Err(Error::InvalidArgument("records carry no predictions".into()));
    }
    let (mut a_plus, mut a_minus) = (0, 0);
    for r in records {
        if r.predictions.len() != l {
            return Err(Error::InvalidArgument(format!(
                "item {} has {} predictions, expected {l}",
                r.item_index,
                r.predictions.len()
            )));
        }
        let p0 = r.predictions[0];
        if r.predictions.iter().all(|&p| p == p0) {
            if p0 == r.true_label {
                a_plus += 1;
            } else {
                a_minus += 1;
            }
        }
    }
    let total = records.len();
    Ok(OraclePartition {
        a_plus,
        a_minus,
        b_count: total - a_plus - a_minus,
        total,
        or_value: a_minus as f64 / total as f64,
    })
}

/// `Or_final = a1 * Or_n + a0` over `(or_n, or_final)` pairs.
pub fn or_progression_model(pairs: &[(f64, f64)]) -> Result<LinearModel> {
    ols(pairs)
}

/// The grid `{100, 120, ..., 1000}`.
pub fn default_grid() -> Vec<usize> {
    (100..=1000).step_by(20).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrPoint {
    pub n: usize,
    pub or_value: f64,
    pub a_plus: usize,
    pub a_minus: usize,
    pub b_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorPoint {
    pub n: usize,
    /// Mean of the per-repeat error rates.
    pub mean: f64,
    /// Sample standard deviation of the per-repeat error rates.
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandedPrediction {
    pub n: usize,
    pub value: f64,
    /// Half-width: the std model evaluated at `n`.
    pub band: f64,
    pub lower: f64,
    pub upper: f64,
}

impl BandedPrediction {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// What a full-size run of the ensemble actually achieved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedFinal {
    pub n: usize,
    pub error_mean: f64,
    pub error_std: f64,
    pub or_value: f64,
}

pub const BAND_METHOD: &str =
    "power law (asymptote 0) fitted to the across-repeat standard deviation of the error rate";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleForecast {
    pub dataset: String,
    pub ensemble: String,
    pub or_curve: Vec<OrPoint>,
    pub or_constant: f64,
    pub error_curve: Vec<ErrorPoint>,
    pub error_model: PowerLawModel,
    pub std_model: PowerLawModel,
    pub predicted_final: BandedPrediction,
    pub band_method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed_final: Option<ObservedFinal>,
}

impl EnsembleForecast {
    pub fn predict(&self, n: usize) -> BandedPrediction {
        let value = self.error_model.predict(n as f64);
        let band = self.std_model.predict(n as f64);
        BandedPrediction {
            n,
            value,
            band,
            lower: value - band,
            upper: value + band,
        }
    }

    pub const CURVE_HEADER: [&'static str; 7] =
        ["n", "or", "err_mean", "err_std", "model_err", "model_band_lo", "model_band_hi"];

    /// Plot rows, one per grid size.
    pub fn curve_rows(&self) -> Vec<[f64; 7]> {
        self.or_curve
            .iter()
            .zip(&self.error_curve)
            .map(|(o, e)| {
                let p = self.predict(e.n);
                [e.n as f64, o.or_value, e.mean, e.std, p.value, p.lower, p.upper]
            })
            .collect()
    }
}

fn mean_and_sample_std(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    let std = if xs.len() < 2 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
    };
    (mean, std)
}

fn sscv_seed(config: &SscvConfig, n: usize) -> SscvConfig {
    config.with_seed(seed::derive(config.seed, n as u64))
}

/// Forecast the ensemble's error on the whole dataset from nested prefixes
/// of the sizes in `n_grid`.
///
/// Prefixes are drawn with `config.seed`, so each is contained in the next;
/// the cross-validation at each size uses a seed derived from it and `n`.
pub fn forecast_ensemble(
    dataset: &Dataset,
    ensemble: &VotingEnsemble,
    n_grid: &[usize],
    config: &SscvConfig,
) -> Result<EnsembleForecast> {
    if n_grid.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "ensemble forecast needs at least 3 grid sizes, got {}",
            n_grid.len()
        )));
    }
    if n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("grid sizes must be strictly increasing".into()));
    }
    let largest = n_grid[n_grid.len() - 1];
    if largest > dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "grid size {largest} exceeds the {} items of '{}'",
            dataset.len(),
            dataset.name()
        )));
    }
    ensemble.validate()?;

    let points = n_grid
        .iter()
        .map(|&n| {
            let prefix = dataset.prefix(n, config.seed)?;
            let records = ensemble_predictions(&prefix, ensemble, &sscv_seed(config, n))?;
            let part = oracle_partition(&records)?;
            let (mean, std) = mean_and_sample_std(&repeat_error_rates(&records));
            Ok((
                OrPoint {
                    n,
                    or_value: part.or_value,
                    a_plus: part.a_plus,
                    a_minus: part.a_minus,
                    b_count: part.b_count,
                },
                ErrorPoint { n, mean, std },
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let (or_curve, error_curve): (Vec<OrPoint>, Vec<ErrorPoint>) = points.into_iter().unzip();

    let or_values: Vec<f64> = or_curve.iter().map(|p| p.or_value).collect();
    let or_constant = constant_fit(&or_values)?;
    let context = |what: &str, e: Error| match e {
        Error::DegenerateFit(why) => Error::DegenerateFit(format!("{what}: {why}")),
        Error::NothingToFit(why) => Error::NothingToFit(format!("{what}: {why}")),
        other => other,
    };
    let err_pts: Vec<(f64, f64)> = error_curve.iter().map(|p| (p.n as f64, p.mean)).collect();
    let error_model =
        fit_power_law(&err_pts, or_constant, true).map_err(|e| context("ensemble error curve", e))?;
    let std_pts: Vec<(f64, f64)> = error_curve.iter().map(|p| (p.n as f64, p.std)).collect();
    let std_model = fit_power_law(&std_pts, 0.0, true).map_err(|e| context("ensemble std curve", e))?;

    let mut forecast = EnsembleForecast {
        dataset: dataset.name().to_owned(),
        ensemble: ensemble.to_string(),
        or_curve,
        or_constant,
        error_curve,
        error_model,
        std_model,
        predicted_final: BandedPrediction {
            n: 0,
            value: 0.0,
            band: 0.0,
            lower: 0.0,
            upper: 0.0,
        },
        band_method: BAND_METHOD.to_owned(),
        observed_final: None,
    };
    forecast.predicted_final = forecast.predict(dataset.len());
    Ok(forecast)
}

/// Cross-validate the ensemble on the whole dataset.
pub fn observe_final(dataset: &Dataset, ensemble: &VotingEnsemble, config: &SscvConfig) -> Result<ObservedFinal> {
    let records = ensemble_predictions(dataset, ensemble, &sscv_seed(config, dataset.len()))?;
    let (error_mean, error_std) = mean_and_sample_std(&repeat_error_rates(&records));
    Ok(ObservedFinal {
        n: dataset.len(),
        error_mean,
        error_std,
        or_value: oracle_partition(&records)?.or_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, Generator, SyntheticSpec};
    use crate::decomp::decompose;
    use approx::assert_abs_diff_eq;

    fn rec(truth: usize, preds: &[usize]) -> PredictionRecord {
        PredictionRecord {
            item_index: 0,
            true_label: truth,
            predictions: preds.to_vec(),
        }
    }

    fn mixture(items: usize, seed: u64) -> Dataset {
        generate(&SyntheticSpec {
            generator: Generator::GaussianMixture,
            item_count: items,
            feature_count: 4,
            class_count: 3,
            bayes_error: 0.1,
            seed,
            separation: 4.0,
        })
        .unwrap()
    }

    #[test]
    fn spec_round_trip() {
        let s = "ens:plurality[gnb|knn:k=1|tree:depth=8|stump|knn:k=3]";
        let e: VotingEnsemble = s.parse().unwrap();
        assert_eq!(e.members.len(), 5);
        assert_eq!(e.combiner, Combiner::Plurality);
        assert_eq!(e.to_string(), s);
        let w: VotingEnsemble = "ens:weighted[gnb|stump]:seed=4".parse().unwrap();
        assert_eq!(w.combiner, Combiner::AccuracyWeighted);
        assert_eq!(w.to_string().parse::<VotingEnsemble>().unwrap(), w);
        for bad in ["plurality[gnb]", "ens:vote[gnb]", "ens:plurality[gnb", "ens:plurality[]", "ens:plurality[gnb|svm]"] {
            assert!(bad.parse::<VotingEnsemble>().is_err(), "{bad}");
        }
    }

    #[test]
    fn partition_counts() {
        let mut records = Vec::new();
        for _ in 0..5 {
            records.push(rec(1, &[1, 1, 1]));
        }
        for _ in 0..2 {
            records.push(rec(1, &[0, 0, 0]));
        }
        for _ in 0..3 {
            records.push(rec(1, &[1, 0, 1]));
        }
        let p = oracle_partition(&records).unwrap();
        assert_eq!((p.a_plus, p.a_minus, p.b_count, p.total), (5, 2, 3, 10));
        assert_abs_diff_eq!(p.or_value, 0.2);

        let perfect = vec![rec(0, &[0, 0]), rec(2, &[2, 2])];
        let p = oracle_partition(&perfect).unwrap();
        assert_eq!((p.a_plus, p.a_minus, p.b_count), (2, 0, 0));
        assert_eq!(p.or_value, 0.0);
    }

    #[test]
    fn wrong_but_unstable_items_are_in_b() {
        // Always wrong, but not always the same wrong class.
        let p = oracle_partition(&[rec(0, &[1, 2])]).unwrap();
        assert_eq!((p.a_minus, p.b_count), (0, 1));
        let d = decompose(&[rec(0, &[1, 2])], 3).unwrap();
        assert!(p.or_value <= d.bias2 && d.bias2 <= p.or_value + 1.0);
    }

    #[test]
    fn partition_errors() {
        assert!(oracle_partition(&[]).is_err());
        assert!(oracle_partition(&[rec(0, &[0, 1]), rec(0, &[0])]).is_err());
    }

    #[test]
    fn plurality_votes_and_ties() {
        let data = Dataset::from_rows("t", &[vec![0.0], vec![1.0]], vec![0, 1], 2).unwrap();
        let e = VotingEnsemble::new(vec![Learner::majority(), Learner::majority()], Combiner::Plurality).unwrap();
        let m = e.fit(&data).unwrap();
        assert_eq!(m.predict(&[0.5]).unwrap(), 0);
        assert!(m.predict(&[0.5, 1.0]).is_err());
    }

    #[test]
    fn single_member_matches_member() {
        let data = mixture(120, 3);
        let cfg = SscvConfig::new(5, 3, 11);
        let member = Learner::tree(3);
        let e = VotingEnsemble::new(vec![member.clone()], Combiner::Plurality).unwrap();
        assert_eq!(
            ensemble_predictions(&data, &e, &cfg).unwrap(),
            run_sscv(&data, &member, &cfg).unwrap()
        );
        let w = VotingEnsemble::new(vec![member.clone()], Combiner::AccuracyWeighted).unwrap();
        assert_eq!(
            ensemble_predictions(&data, &w, &cfg).unwrap(),
            run_sscv(&data, &member, &cfg).unwrap()
        );
    }

    #[test]
    fn weights_are_normalized_accuracies() {
        let data = mixture(150, 5);
        let e: VotingEnsemble = "ens:weighted[gnb|majority|knn:k=1]".parse().unwrap();
        let m = e.fit(&data).unwrap();
        let w = m.weights();
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        // 1-NN is perfect on its own training set; the baseline is not.
        assert!(w[2] > w[1]);
    }

    #[test]
    fn duplicating_a_member_keeps_plurality_winner() {
        let data = mixture(200, 8);
        let base: VotingEnsemble = "ens:plurality[gnb|stump|knn:k=1]".parse().unwrap();
        let trained = base.fit(&data).unwrap();
        for i in 0..data.len() {
            let x = data.row(i);
            let winner = trained.predict_unchecked(x);
            for (j, member) in trained.members().iter().enumerate() {
                if member.predict_unchecked(x) != winner {
                    continue;
                }
                let mut members = base.members.clone();
                members.push(base.members[j].clone());
                let bigger = VotingEnsemble::new(members, Combiner::Plurality).unwrap();
                assert_eq!(bigger.fit(&data).unwrap().predict_unchecked(x), winner);
                break;
            }
            if i >= 20 {
                break;
            }
        }
    }

    #[test]
    fn or_progression() {
        let m = or_progression_model(&[(0.1, 0.1), (0.2, 0.2), (0.3, 0.3)]).unwrap();
        assert_abs_diff_eq!(m.slope, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.intercept, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.r2, 1.0, epsilon = 1e-12);
        let flat = or_progression_model(&[(0.1, 0.2), (0.2, 0.2), (0.3, 0.2)]).unwrap();
        assert_abs_diff_eq!(flat.slope, 0.0, epsilon = 1e-12);
        assert!(or_progression_model(&[(0.1, 0.2)]).is_err());
    }

    #[test]
    fn grid_defaults_and_checks() {
        let g = default_grid();
        assert_eq!((g[0], g[1], *g.last().unwrap(), g.len()), (100, 120, 1000, 46));
        let data = mixture(300, 1);
        let e: VotingEnsemble = "ens:plurality[gnb|stump]".parse().unwrap();
        let cfg = SscvConfig::new(5, 3, 0);
        assert!(forecast_ensemble(&data, &e, &[100, 200], &cfg).is_err());
        assert!(forecast_ensemble(&data, &e, &[100, 300, 200], &cfg).is_err());
        assert!(forecast_ensemble(&data, &e, &[100, 200, 400], &cfg).is_err());
    }

    #[test]
    fn forecast_structure() {
        let data = mixture(600, 21);
        let e: VotingEnsemble = "ens:plurality[gnb|knn:k=3|tree:depth=4]".parse().unwrap();
        let cfg = SscvConfig::new(5, 4, 2);
        let f = forecast_ensemble(&data, &e, &[100, 150, 200, 250, 300], &cfg).unwrap();
        assert_eq!(f.or_curve.len(), 5);
        assert_eq!(f.error_model.asymptote, f.or_constant);
        assert_eq!(f.std_model.asymptote, 0.0);
        assert_eq!(f.predicted_final.n, 600);
        assert!(f.predicted_final.value >= f.or_constant);
        for n in [1usize, 10, 1000, 1_000_000] {
            assert!(f.error_model.predict(n as f64) >= f.or_constant);
        }
        let rows = f.curve_rows();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[0][0], 100.0);
        // Same inputs, same forecast.
        assert_eq!(f, forecast_ensemble(&data, &e, &[100, 150, 200, 250, 300], &cfg).unwrap());
        let text = serde_json::to_string(&f).unwrap();
        assert_eq!(serde_json::from_str::<EnsembleForecast>(&text).unwrap(), f);
    }
}
