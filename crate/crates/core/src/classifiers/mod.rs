//! Nine classifier families behind one train/predict contract, and the
//! versioned JSON model file.
//!
//! Every family trains on min-max scaled features. Ties in votes, distances and
//! decision values resolve to the lowest class id (or lowest row index).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, LabelMap, ScalingState};
use crate::error::{Error, Result};
use crate::features::FeatureLayout;

pub mod gbt;
pub mod knn;
pub mod linear;
pub mod mlp;
pub mod tree;

pub const FORMAT_VERSION: u32 = 1;

const DEFAULTS_JSON: &str = include_str!("defaults.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Knn,
    DecisionTree,
    RandomForest,
    LogisticRegression,
    LinearSvc,
    SgdClassifier,
    Mlp,
    Gbt,
    GbtRf,
}

impl Family {
    pub const ALL: [Family; 9] = [
        Family::LinearSvc,
        Family::DecisionTree,
        Family::Knn,
        Family::LogisticRegression,
        Family::Mlp,
        Family::RandomForest,
        Family::SgdClassifier,
        Family::Gbt,
        Family::GbtRf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Knn => "knn",
            Family::DecisionTree => "decision_tree",
            Family::RandomForest => "random_forest",
            Family::LogisticRegression => "logistic_regression",
            Family::LinearSvc => "linear_svc",
            Family::SgdClassifier => "sgd_classifier",
            Family::Mlp => "mlp",
            Family::Gbt => "gbt",
            Family::GbtRf => "gbt_rf",
        }
    }

    /// Short label used in report tables and charts.
    pub fn label(self) -> &'static str {
        match self {
            Family::Knn => "KNN",
            Family::DecisionTree => "DT",
            Family::RandomForest => "RF",
            Family::LogisticRegression => "LR",
            Family::LinearSvc => "LSVC",
            Family::SgdClassifier => "SGD",
            Family::Mlp => "MLP",
            Family::Gbt => "GBT",
            Family::GbtRf => "GBT-RF",
        }
    }

    pub fn parse(s: &str) -> Result<Family> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s || f.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown model family `{s}`")))
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HyperValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    IntList(Vec<i64>),
}

impl fmt::Display for HyperValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HyperValue::Bool(b) => write!(f, "{b}"),
            HyperValue::Int(i) => write!(f, "{i}"),
            HyperValue::Float(x) => write!(f, "{x}"),
            HyperValue::Str(s) => f.write_str(s),
            HyperValue::IntList(v) => {
                let parts: Vec<String> = v.iter().map(|i| i.to_string()).collect();
                write!(f, "[{}]", parts.join(","))
            }
        }
    }
}

pub type Hyperparameters = BTreeMap<String, HyperValue>;

#[derive(Debug, Deserialize)]
struct DefaultsTable {
    version: u32,
    families: BTreeMap<Family, Hyperparameters>,
}

fn defaults_table() -> &'static DefaultsTable {
    static TABLE: OnceLock<DefaultsTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let t: DefaultsTable = serde_json::from_str(DEFAULTS_JSON).expect("bundled defaults table parses");
        assert!(Family::ALL.iter().all(|f| t.families.contains_key(f)));
        t
    })
}

/// Version of the bundled defaults table.
pub fn defaults_version() -> u32 {
    defaults_table().version
}

pub fn default_hyperparameters(family: Family) -> Hyperparameters {
    defaults_table().families[&family].clone()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    pub fn default_for(family: Family, seed: u64) -> Self {
        ModelSpec {
            family,
            hyperparameters: default_hyperparameters(family),
            seed,
        }
    }

    pub fn with(mut self, key: &str, value: HyperValue) -> Self {
        self.hyperparameters.insert(key.to_string(), value);
        self
    }

    /// Hyperparameters with defaults filled in for absent keys.
    pub fn resolved(&self) -> Hyperparameters {
        let mut h = default_hyperparameters(self.family);
        h.extend(self.hyperparameters.clone());
        h
    }

    /// Checks that every hyperparameter is known and in range.
    pub fn validate(&self) -> Result<()> {
        FamilyParams::from_spec(self).map(|_| ())
    }
}

/// Typed access to a resolved hyperparameter map; rejects unknown keys.
pub(crate) struct HyperReader<'a> {
    family: Family,
    map: &'a Hyperparameters,
    used: Vec<&'static str>,
}

impl<'a> HyperReader<'a> {
    fn new(family: Family, map: &'a Hyperparameters) -> Self {
        HyperReader {
            family,
            map,
            used: Vec::new(),
        }
    }

    fn raw(&mut self, key: &'static str) -> Result<&'a HyperValue> {
        self.used.push(key);
        self.map
            .get(key)
            .ok_or_else(|| Error::Config(format!("{}: missing hyperparameter `{key}`", self.family)))
    }

    fn bad(&self, key: &str, want: &str) -> Error {
        Error::Config(format!("{}: hyperparameter `{key}` must be {want}", self.family))
    }

    pub fn int(&mut self, key: &'static str, min: i64) -> Result<usize> {
        match self.raw(key)? {
            HyperValue::Int(i) if *i >= min => Ok(*i as usize),
            _ => Err(self.bad(key, &format!("an integer >= {min}"))),
        }
    }

    pub fn float(&mut self, key: &'static str, lo: f64, hi: f64) -> Result<f64> {
        let v = match self.raw(key)? {
            HyperValue::Float(x) => *x,
            HyperValue::Int(i) => *i as f64,
            _ => return Err(self.bad(key, "a number")),
        };
        if v.is_finite() && v >= lo && v <= hi {
            Ok(v)
        } else {
            Err(self.bad(key, &format!("in [{lo}, {hi}]")))
        }
    }

    pub fn boolean(&mut self, key: &'static str) -> Result<bool> {
        match self.raw(key)? {
            HyperValue::Bool(b) => Ok(*b),
            _ => Err(self.bad(key, "a boolean")),
        }
    }

    pub fn choice(&mut self, key: &'static str, options: &[&str]) -> Result<String> {
        match self.raw(key)? {
            HyperValue::Str(s) if options.contains(&s.as_str()) => Ok(s.clone()),
            _ => Err(self.bad(key, &format!("one of {}", options.join("|")))),
        }
    }

    pub fn int_list(&mut self, key: &'static str) -> Result<Vec<usize>> {
        match self.raw(key)? {
            HyperValue::IntList(v) if !v.is_empty() && v.iter().all(|&i| i >= 1) => {
                Ok(v.iter().map(|&i| i as usize).collect())
            }
            HyperValue::Int(i) if *i >= 1 => Ok(vec![*i as usize]),
            _ => Err(self.bad(key, "a non-empty list of positive integers")),
        }
    }

    fn finish(self) -> Result<()> {
        let unknown: Vec<&String> = self.map.keys().filter(|k| !self.used.contains(&k.as_str())).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "{}: unknown hyperparameter(s) {}",
                self.family,
                unknown.iter().map(|k| format!("`{k}`")).collect::<Vec<_>>().join(", ")
            )))
        }
    }
}

/// Validated, typed hyperparameters of one family.
#[derive(Debug, Clone, PartialEq)]
pub enum FamilyParams {
    Knn(knn::KnnParams),
    Tree(tree::TreeParams),
    Forest(tree::ForestParams),
    Linear(linear::LinearParams),
    Mlp(mlp::MlpParams),
    Gbt(gbt::GbtParams),
}

impl FamilyParams {
    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        let map = spec.resolved();
        let mut r = HyperReader::new(spec.family, &map);
        let p = match spec.family {
            Family::Knn => FamilyParams::Knn(knn::KnnParams::read(&mut r)?),
            Family::DecisionTree => FamilyParams::Tree(tree::TreeParams::read(&mut r)?),
            Family::RandomForest => FamilyParams::Forest(tree::ForestParams::read(&mut r)?),
            Family::LogisticRegression | Family::LinearSvc | Family::SgdClassifier => {
                FamilyParams::Linear(linear::LinearParams::read(&mut r)?)
            }
            Family::Mlp => FamilyParams::Mlp(mlp::MlpParams::read(&mut r)?),
            Family::Gbt => FamilyParams::Gbt(gbt::GbtParams::read(&mut r, false)?),
            Family::GbtRf => FamilyParams::Gbt(gbt::GbtParams::read(&mut r, true)?),
        };
        r.finish()?;
        Ok(p)
    }
}

/// Learned state of a model, tagged by kind in the model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Parameters {
    Knn(knn::Knn),
    Tree(tree::Tree),
    Forest(tree::Forest),
    Linear(linear::Linear),
    Mlp(mlp::Mlp),
    Gbt(gbt::Gbt),
}

impl Parameters {
    /// Fits on scaled features `x` (`[n x dim]`) with class ids `y` in `0..n_classes`.
    pub fn fit(spec: &ModelSpec, x: ArrayView2<f64>, y: &[usize], n_classes: usize) -> Result<Parameters> {
        if x.nrows() == 0 || x.nrows() != y.len() {
            return Err(Error::Training(format!(
                "need a non-empty training set with one label per row ({} rows, {} labels)",
                x.nrows(),
                y.len()
            )));
        }
        Ok(match FamilyParams::from_spec(spec)? {
            FamilyParams::Knn(p) => Parameters::Knn(knn::Knn::fit(&p, x, y, n_classes)?),
            FamilyParams::Tree(p) => Parameters::Tree(tree::Tree::fit_classifier(&p, x, y, n_classes)),
            FamilyParams::Forest(p) => Parameters::Forest(tree::Forest::fit(&p, x, y, n_classes, spec.seed)),
            FamilyParams::Linear(p) => Parameters::Linear(linear::Linear::fit(&p, x, y, n_classes, spec.seed)?),
            FamilyParams::Mlp(p) => Parameters::Mlp(mlp::Mlp::fit(&p, x, y, n_classes, spec.seed)?),
            FamilyParams::Gbt(p) => Parameters::Gbt(gbt::Gbt::fit(&p, x, y, n_classes, spec.seed)),
        })
    }

    /// Per-class scores for each row of scaled `x`.
    pub fn scores(&self, x: ArrayView2<f64>) -> Array2<f64> {
        match self {
            Parameters::Knn(m) => m.scores(x),
            Parameters::Tree(m) => m.scores(x),
            Parameters::Forest(m) => m.scores(x),
            Parameters::Linear(m) => m.decision_values(x),
            Parameters::Mlp(m) => m.predict_proba(x),
            Parameters::Gbt(m) => m.predict_proba(x),
        }
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<usize> {
        self.scores(x).rows().into_iter().map(argmax).collect()
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(v: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class_id: usize,
    pub label: String,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainedModel {
    pub format_version: u32,
    pub family: Family,
    pub hyperparameters: Hyperparameters,
    pub seed: u64,
    pub label_map: LabelMap,
    pub scaling: ScalingState,
    pub layout: FeatureLayout,
    pub parameters: Parameters,
}

impl TrainedModel {
    /// Fits scaling and model on every row of the dataset.
    pub fn train(dataset: &Dataset, spec: &ModelSpec) -> Result<TrainedModel> {
        let scaling = ScalingState::fit(dataset.features());
        let x = scaling.apply_matrix(dataset.features())?;
        let parameters = Parameters::fit(spec, x.view(), dataset.labels(), dataset.n_classes())?;
        Ok(TrainedModel {
            format_version: FORMAT_VERSION,
            family: spec.family,
            hyperparameters: spec.resolved(),
            seed: spec.seed,
            label_map: dataset.label_map.clone(),
            scaling,
            layout: dataset.layout.clone(),
            parameters,
        })
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            family: self.family,
            hyperparameters: self.hyperparameters.clone(),
            seed: self.seed,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.label_map.len()
    }

    /// Scales a raw feature vector with the stored state and predicts.
    pub fn predict(&self, raw: &[f64]) -> Result<Prediction> {
        let dim = self.layout.total_dim();
        if raw.len() != dim {
            return Err(Error::Layout(format!(
                "feature vector has {} values, model expects {dim}",
                raw.len()
            )));
        }
        let scaled = self.scaling.apply(raw)?;
        let x = ArrayView2::from_shape((1, dim), &scaled).expect("one row");
        let scores = self.parameters.scores(x).index_axis(Axis(0), 0).to_vec();
        let class_id = argmax(ArrayView1::from(&scores[..]));
        Ok(Prediction {
            class_id,
            label: self.label_map.name(class_id).to_string(),
            scores,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<TrainedModel> {
        let probe: serde_json::Value = serde_json::from_str(text)?;
        match probe.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::Compatibility(format!(
                    "model file format {v}, this build reads {FORMAT_VERSION}"
                )))
            }
            None => return Err(Error::Compatibility("model file has no format_version".into())),
        }
        let model: TrainedModel = serde_json::from_value(probe).map_err(|e| Error::Compatibility(e.to_string()))?;
        if model.scaling.dim() != model.layout.total_dim() {
            return Err(Error::Compatibility(format!(
                "scaling covers {} columns but the layout has {}",
                model.scaling.dim(),
                model.layout.total_dim()
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<TrainedModel> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainedModel::from_json(&text)
    }
}

/// Derives an independent stream seed from a base seed and an index (splitmix64).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One-hot rows for labels.
pub(crate) fn one_hot(y: &[usize], n_classes: usize) -> Array2<f64> {
    let mut t = Array2::zeros((y.len(), n_classes));
    for (i, &c) in y.iter().enumerate() {
        t[[i, c]] = 1.0;
    }
    t
}

/// Row-wise softmax, stable against large logits.
pub(crate) fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
    }
}
