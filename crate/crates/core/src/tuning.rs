//! Hyperparameter search by stratified k-fold cross-validation and
//! leave-one-out evaluation.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::classifiers::{Family, HyperValue, Hyperparameters, ModelSpec, Parameters};
use crate::dataset::{Dataset, LooGroup, ScalingMode, ScalingState, Split};
use crate::error::{Error, Result};
use crate::metrics::{confusion_matrix, macro_f1, metrics_of, MetricsReport};

const DEFAULT_SPACES_JSON: &str = include_str!("classifiers/search_spaces.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Distribution {
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
    IntegerRange { lo: i64, hi: i64 },
    Categorical { values: Vec<HyperValue> },
}

impl Distribution {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = match self {
            Distribution::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
            Distribution::LogUniform { lo, hi } => *lo > 0.0 && hi.is_finite() && lo < hi,
            Distribution::IntegerRange { lo, hi } => lo < hi,
            Distribution::Categorical { values } => !values.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("search space `{name}`: invalid distribution {self:?}")))
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> HyperValue {
        match self {
            Distribution::Uniform { lo, hi } => HyperValue::Float(rng.random_range(*lo..*hi)),
            Distribution::LogUniform { lo, hi } => HyperValue::Float(rng.random_range(lo.ln()..hi.ln()).exp()),
            Distribution::IntegerRange { lo, hi } => HyperValue::Int(rng.random_range(*lo..=*hi)),
            Distribution::Categorical { values } => values[rng.random_range(0..values.len())].clone(),
        }
    }

    /// Position of a value in [0, 1], used by the adaptive strategy's surrogate.
    fn encode(&self, v: &HyperValue) -> f64 {
        let num = |v: &HyperValue| match v {
            HyperValue::Float(x) => *x,
            HyperValue::Int(i) => *i as f64,
            _ => 0.0,
        };
        match self {
            Distribution::Uniform { lo, hi } => (num(v) - lo) / (hi - lo),
            Distribution::LogUniform { lo, hi } => (num(v) / lo).ln() / (hi / lo).ln(),
            Distribution::IntegerRange { lo, hi } => (num(v) - *lo as f64) / (*hi - *lo) as f64,
            Distribution::Categorical { values } => {
                let i = values.iter().position(|x| x == v).unwrap_or(0);
                if values.len() > 1 {
                    i as f64 / (values.len() - 1) as f64
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub family: Family,
    pub params: BTreeMap<String, Distribution>,
}

impl SearchSpace {
    /// Bundled space for a family.
    pub fn default_for(family: Family) -> SearchSpace {
        let all: BTreeMap<Family, BTreeMap<String, Distribution>> =
            serde_json::from_str(DEFAULT_SPACES_JSON).expect("bundled search spaces parse");
        SearchSpace {
            family,
            params: all[&family].clone(),
        }
    }

    pub fn single(spec: &ModelSpec) -> SearchSpace {
        SearchSpace {
            family: spec.family,
            params: spec
                .hyperparameters
                .iter()
                .map(|(k, v)| (k.clone(), Distribution::Categorical { values: vec![v.clone()] }))
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<SearchSpace> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let space: SearchSpace =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, d) in &self.params {
            d.validate(name)?;
        }
        let defaults = crate::classifiers::default_hyperparameters(self.family);
        let unknown: Vec<&String> = self.params.keys().filter(|k| !defaults.contains_key(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "search space for {} names unknown hyperparameter(s) {unknown:?}",
                self.family
            )))
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Hyperparameters {
        self.params.iter().map(|(k, d)| (k.clone(), d.draw(rng))).collect()
    }

    fn encode(&self, h: &Hyperparameters) -> Vec<f64> {
        self.params
            .iter()
            .map(|(k, d)| h.get(k).map(|v| d.encode(v)).unwrap_or(0.0))
            .collect()
    }
}

fn spec_from(space: &SearchSpace, drawn: Hyperparameters, seed: u64) -> ModelSpec {
    let mut spec = ModelSpec::default_for(space.family, seed);
    spec.hyperparameters.extend(drawn);
    spec
}

/// `n` independent draws; every spec carries the search seed as its model seed.
pub fn sample_configs(space: &SearchSpace, n: usize, seed: u64) -> Result<Vec<ModelSpec>> {
    if n == 0 {
        return Err(Error::Config("need at least one configuration".into()));
    }
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| spec_from(space, space.draw(&mut rng), seed)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub mean: f64,
    pub folds: Vec<f64>,
}

/// Scaled matrix shared by all splits in full-variant mode; `None` means per-split scaling.
fn shared_scaling(dataset: &Dataset, mode: ScalingMode) -> Result<Option<Array2<f64>>> {
    match mode {
        ScalingMode::FullVariant => Ok(Some(ScalingState::fit(dataset.features()).apply_matrix(dataset.features())?)),
        ScalingMode::TrainOnly => Ok(None),
    }
}

fn train_and_predict(
    dataset: &Dataset,
    spec: &ModelSpec,
    split: &Split,
    full: Option<&Array2<f64>>,
) -> Result<Vec<usize>> {
    let owned;
    let x: ArrayView2<f64> = match full {
        Some(x) => x.view(),
        None => {
            owned = ScalingState::fit_rows(dataset.features(), &split.train).apply_matrix(dataset.features())?;
            owned.view()
        }
    };
    let xtr = x.select(Axis(0), &split.train);
    let ytr: Vec<usize> = split.train.iter().map(|&i| dataset.labels()[i]).collect();
    let model = Parameters::fit(spec, xtr.view(), &ytr, dataset.n_classes())?;
    Ok(model.predict(x.select(Axis(0), &split.test).view()))
}

/// Macro-F1 on each held-out fold of a stratified k-fold split.
pub fn cross_validate(dataset: &Dataset, spec: &ModelSpec, k: usize, seed: u64, mode: ScalingMode) -> Result<CvScore> {
    spec.validate()?;
    let splits = dataset.kfold(k, seed)?;
    let full = shared_scaling(dataset, mode)?;
    let folds: Vec<Result<f64>> = splits
        .par_iter()
        .enumerate()
        .map(|(fold, split)| {
            let pred = train_and_predict(dataset, spec, split, full.as_ref()).map_err(|e| Error::Fold {
                fold,
                source: Box::new(e),
            })?;
            let truth: Vec<usize> = split.test.iter().map(|&i| dataset.labels()[i]).collect();
            Ok(macro_f1(&truth, &pred, dataset.n_classes()))
        })
        .collect();
    let folds = folds.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(CvScore {
        mean: folds.iter().sum::<f64>() / folds.len() as f64,
        folds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Independent draws from the space.
    #[default]
    Random,
    /// Random warm-up, then expected improvement under a Gaussian-process surrogate.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub folds: usize,
    pub strategy: Strategy,
    pub scaling: ScalingMode,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            folds: 10,
            strategy: Strategy::Random,
            scaling: ScalingMode::FullVariant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub index: usize,
    pub hyperparameters: Hyperparameters,
    pub cv_f1: Option<f64>,
    pub folds: Option<Vec<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: ModelSpec,
    pub cv_f1: f64,
    pub trace: Vec<TraceEntry>,
}

/// Highest mean CV macro-F1 over `n` sampled configurations; ties keep the earlier one.
pub fn select_best(
    dataset: &Dataset,
    space: &SearchSpace,
    n: usize,
    seed: u64,
    opts: &SearchOptions,
) -> Result<SearchResult> {
    if n == 0 {
        return Err(Error::Config("need at least one configuration".into()));
    }
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let warmup = match opts.strategy {
        Strategy::Random => n,
        Strategy::Adaptive => n.min(5),
    };
    let mut trace: Vec<TraceEntry> = Vec::with_capacity(n);
    let mut best: Option<(usize, f64)> = None;
    for index in 0..n {
        let drawn = if index < warmup {
            space.draw(&mut rng)
        } else {
            propose(space, &trace, &mut rng)
        };
        let spec = spec_from(space, drawn, seed);
        let entry = match cross_validate(dataset, &spec, opts.folds, seed, opts.scaling) {
            Ok(cv) => {
                if best.is_none_or(|(_, b)| cv.mean > b) {
                    best = Some((index, cv.mean));
                }
                TraceEntry {
                    index,
                    hyperparameters: spec.hyperparameters,
                    cv_f1: Some(cv.mean),
                    folds: Some(cv.folds),
                    error: None,
                }
            }
            Err(e) => TraceEntry {
                index,
                hyperparameters: spec.hyperparameters,
                cv_f1: None,
                folds: None,
                error: Some(e.to_string()),
            },
        };
        trace.push(entry);
    }
    match best {
        Some((i, score)) => Ok(SearchResult {
            best: ModelSpec {
                family: space.family,
                hyperparameters: trace[i].hyperparameters.clone(),
                seed,
            },
            cv_f1: score,
            trace,
        }),
        None => Err(Error::Search(
            trace
                .iter()
                .map(|t| format!("config {}: {}", t.index, t.error.as_deref().unwrap_or("")))
                .collect(),
        )),
    }
}

/// Picks the candidate with the largest expected improvement among random draws.
fn propose(space: &SearchSpace, trace: &[TraceEntry], rng: &mut ChaCha8Rng) -> Hyperparameters {
    let candidates: Vec<Hyperparameters> = (0..256).map(|_| space.draw(rng)).collect();
    let observed: Vec<(Vec<f64>, f64)> = trace
        .iter()
        .filter_map(|t| t.cv_f1.map(|f| (space.encode(&t.hyperparameters), f)))
        .collect();
    if observed.len() < 2 || space.params.is_empty() {
        return candidates.into_iter().next().unwrap();
    }
    let gp = match Surrogate::fit(&observed) {
        Some(gp) => gp,
        None => return candidates.into_iter().next().unwrap(),
    };
    let incumbent = observed.iter().map(|o| o.1).fold(f64::NEG_INFINITY, f64::max);
    let mut best = (0, f64::NEG_INFINITY);
    for (i, c) in candidates.iter().enumerate() {
        let ei = gp.expected_improvement(&space.encode(c), incumbent);
        if ei > best.1 {
            best = (i, ei);
        }
    }
    candidates.into_iter().nth(best.0).unwrap()
}

/// Gaussian process with a squared-exponential kernel on standardized scores.
struct Surrogate {
    points: Vec<Vec<f64>>,
    alpha: DVector<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    mean: f64,
    scale: f64,
}

const LENGTH_SCALE: f64 = 0.3;
const NOISE: f64 = 1e-6;

fn kernel(a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * LENGTH_SCALE * LENGTH_SCALE)).exp()
}

impl Surrogate {
    fn fit(obs: &[(Vec<f64>, f64)]) -> Option<Surrogate> {
        let n = obs.len();
        let mean = obs.iter().map(|o| o.1).sum::<f64>() / n as f64;
        let var = obs.iter().map(|o| (o.1 - mean).powi(2)).sum::<f64>() / n as f64;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        let k = DMatrix::from_fn(n, n, |i, j| kernel(&obs[i].0, &obs[j].0) + if i == j { NOISE } else { 0.0 });
        let y = DVector::from_iterator(n, obs.iter().map(|o| (o.1 - mean) / scale));
        let chol = k.cholesky()?;
        let alpha = chol.solve(&y);
        Some(Surrogate {
            points: obs.iter().map(|o| o.0.clone()).collect(),
            alpha,
            chol,
            mean,
            scale,
        })
    }

    fn expected_improvement(&self, x: &[f64], incumbent: f64) -> f64 {
        let ks = DVector::from_iterator(self.points.len(), self.points.iter().map(|p| kernel(p, x)));
        let mu = ks.dot(&self.alpha) * self.scale + self.mean;
        let v = self.chol.solve(&ks);
        let var = (1.0 - ks.dot(&v)).max(0.0) * self.scale * self.scale;
        let sigma = var.sqrt();
        let gap = mu - incumbent - 0.01 * self.scale;
        if sigma < 1e-12 {
            return gap.max(0.0);
        }
        let z = gap / sigma;
        let std = Normal::standard();
        gap * std.cdf(z) + sigma * std.pdf(z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooOutcome {
    pub metrics: MetricsReport,
    /// Predicted class per held-out unit (row, or recording in grouped mode), in split order.
    pub predictions: Vec<usize>,
}

/// Majority class of a set of predictions; ties go to the lowest class id.
pub fn majority_vote(preds: &[usize], n_classes: usize) -> usize {
    let mut counts = vec![0usize; n_classes];
    preds.iter().for_each(|&p| counts[p] += 1);
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

/// Leave-one-out with one pooled confusion matrix. In grouped mode each held-out
/// recording contributes one prediction, the majority vote of its segments.
pub fn evaluate_loo(dataset: &Dataset, spec: &ModelSpec, group: LooGroup, mode: ScalingMode) -> Result<LooOutcome> {
    spec.validate()?;
    let splits = dataset.loo(group)?;
    let full = shared_scaling(dataset, mode)?;
    let c = dataset.n_classes();
    let results: Vec<Result<(usize, usize)>> = splits
        .par_iter()
        .enumerate()
        .map(|(i, split)| {
            let pred = train_and_predict(dataset, spec, split, full.as_ref()).map_err(|e| Error::LooSplit {
                split: i,
                source: Box::new(e),
            })?;
            Ok((dataset.labels()[split.test[0]], majority_vote(&pred, c)))
        })
        .collect();
    let pairs = results.into_iter().collect::<Result<Vec<(usize, usize)>>>()?;
    let truth: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let predictions: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    Ok(LooOutcome {
        metrics: metrics_of(confusion_matrix(&truth, &predictions, c)),
        predictions,
    })
}
