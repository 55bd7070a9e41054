//! Feature tables, the rpm × multiplier dataset variants, min-max scaling and
//! evaluation splits.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio_io::Rpm;
use crate::error::{Error, Result};
use crate::features::FeatureLayout;
use crate::segmentation::Multiplier;

const META_COLUMNS: [&str; 6] = ["source_id", "segment_index", "manufacturer", "model", "rpm", "multiplier"];

/// One segment's feature vector with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub source_id: String,
    pub segment_index: usize,
    pub manufacturer: String,
    pub model: String,
    pub rpm: Rpm,
    pub multiplier: Multiplier,
    pub features: Vec<f64>,
}

pub fn write_feature_csv<W: Write>(writer: W, rows: &[Row], dim: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = META_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..dim).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for (i, row) in rows.iter().enumerate() {
        if row.features.len() != dim {
            return Err(Error::Value {
                row: i + 1,
                message: format!("expected {dim} features, got {}", row.features.len()),
            });
        }
        let mut rec = vec![
            row.source_id.clone(),
            row.segment_index.to_string(),
            row.manufacturer.clone(),
            row.model.clone(),
            row.rpm.to_string(),
            row.multiplier.to_string(),
        ];
        rec.extend(row.features.iter().map(|v| format!("{v:.16e}")));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<feature csv>", e))?;
    Ok(())
}

pub fn save_feature_csv(path: &Path, rows: &[Row], dim: usize) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_feature_csv(std::io::BufWriter::new(file), rows, dim)
}

/// Reads a feature CSV; returns the rows and the feature dimension.
pub fn read_feature_csv<R: Read>(reader: R) -> Result<(Vec<Row>, usize)> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    if header.len() < META_COLUMNS.len() || META_COLUMNS.iter().zip(header.iter()).any(|(a, b)| *a != b) {
        return Err(Error::Schema(format!(
            "feature CSV must start with columns {}",
            META_COLUMNS.join(",")
        )));
    }
    let dim = header.len() - META_COLUMNS.len();
    for (i, name) in header.iter().skip(META_COLUMNS.len()).enumerate() {
        if name != format!("f{i}") {
            return Err(Error::Schema(format!("feature column {i} is named `{name}`, expected `f{i}`")));
        }
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row_no = i + 1;
        let bad = |message: String| Error::Value { row: row_no, message };
        let parse_u32 = |s: &str, what: &str| s.trim().parse::<u32>().map_err(|_| bad(format!("{what} `{s}` is not an integer")));
        let rpm = Rpm::new(parse_u32(&rec[4], "rpm")?).map_err(|e| bad(e.to_string()))?;
        let multiplier = Multiplier::new(parse_u32(&rec[5], "multiplier")?).map_err(|e| bad(e.to_string()))?;
        let features = rec
            .iter()
            .skip(META_COLUMNS.len())
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad(format!("feature value `{s}` is not a number"))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(Row {
            source_id: rec[0].to_string(),
            segment_index: parse_u32(&rec[1], "segment_index")? as usize,
            manufacturer: rec[2].to_string(),
            model: rec[3].to_string(),
            rpm,
            multiplier,
            features,
        });
    }
    Ok((rows, dim))
}

pub fn load_feature_csv(path: &Path) -> Result<(Vec<Row>, usize)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_feature_csv(std::io::BufReader::new(file))
}

/// Sorted distinct manufacturers; the class id is the position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelMap(Vec<String>);

impl LabelMap {
    pub fn from_names<'a>(names: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v: Vec<String> = names.into_iter().map(str::to_string).collect();
        v.sort();
        v.dedup();
        LabelMap(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.0.binary_search_by(|n| n.as_str().cmp(name)).ok()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.0[id]
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }
}

/// Per-column min and max.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingState {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ScalingState {
    /// Fits on the rows of `x` (`[n_rows x dim]`). With no rows every column is constant at 0.
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let dim = x.ncols();
        let mut min = vec![f64::INFINITY; dim];
        let mut max = vec![f64::NEG_INFINITY; dim];
        for row in x.rows() {
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        if x.nrows() == 0 {
            min.fill(0.0);
            max.fill(0.0);
        }
        ScalingState { min, max }
    }

    pub fn fit_rows(x: ArrayView2<f64>, rows: &[usize]) -> Self {
        ScalingState::fit(x.select(ndarray::Axis(0), rows).view())
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    fn scale(&self, j: usize, v: f64) -> f64 {
        let span = self.max[j] - self.min[j];
        if span > 0.0 {
            ((v - self.min[j]) / span).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(v.iter().enumerate().map(|(j, &x)| self.scale(j, x)).collect())
    }

    pub fn apply_matrix(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.ncols(),
            });
        }
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.scale(j, *v);
            }
        }
        Ok(out)
    }
}

/// Where the min-max statistics come from during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    /// Fit once on the whole variant before any split.
    #[default]
    FullVariant,
    /// Fit on each split's training rows only.
    TrainOnly,
}

/// Leave-one-out granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LooGroup {
    /// One split per segment row.
    #[default]
    None,
    /// One split per recording, holding out all its segments.
    Recording,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified k-fold: rows of each class are shuffled and dealt round-robin,
/// continuing the deal across classes so fold sizes differ by at most one.
pub fn kfold_splits(labels: &[usize], n_classes: usize, k: usize, seed: u64) -> Result<Vec<Split>> {
    if k < 2 {
        return Err(Error::Split(format!("k-fold needs k >= 2 (got {k})")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; labels.len()];
    let mut dealt = 0usize;
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(Error::Stratification {
                class: class.to_string(),
                k,
                count: members.len(),
            });
        }
        members.shuffle(&mut rng);
        for &i in members.iter() {
            fold_of[i] = dealt % k;
            dealt += 1;
        }
    }
    Ok((0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| fold_of[i] == f);
            Split { train, test }
        })
        .collect())
}

/// Leave-one-out splits over rows or over recordings (groups in first-seen order).
pub fn loo_splits(source_ids: &[String], group: LooGroup) -> Result<Vec<Split>> {
    let n = source_ids.len();
    let groups: Vec<Vec<usize>> = match group {
        LooGroup::None => (0..n).map(|i| vec![i]).collect(),
        LooGroup::Recording => {
            let mut order: Vec<&str> = Vec::new();
            let mut members: Vec<Vec<usize>> = Vec::new();
            for (i, id) in source_ids.iter().enumerate() {
                match order.iter().position(|o| *o == id) {
                    Some(g) => members[g].push(i),
                    None => {
                        order.push(id);
                        members.push(vec![i]);
                    }
                }
            }
            members
        }
    };
    if groups.len() < 2 {
        return Err(Error::Split(format!(
            "leave-one-out needs at least 2 {} (got {})",
            if group == LooGroup::None { "rows" } else { "recordings" },
            groups.len()
        )));
    }
    Ok(groups
        .into_iter()
        .map(|test| {
            let mut held = vec![false; n];
            test.iter().for_each(|&i| held[i] = true);
            Split {
                train: (0..n).filter(|&i| !held[i]).collect(),
                test,
            }
        })
        .collect())
}

/// All rows of one (rpm, multiplier) variant with dense class ids.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub rpm: Rpm,
    pub multiplier: Multiplier,
    pub layout: FeatureLayout,
    pub label_map: LabelMap,
    rows: Vec<Row>,
    labels: Vec<usize>,
    x: Array2<f64>,
}

impl Dataset {
    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Raw (unscaled) feature matrix, `[n_rows x dim]`.
    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.label_map.len()
    }

    pub fn source_ids(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.source_id.clone()).collect()
    }

    pub fn kfold(&self, k: usize, seed: u64) -> Result<Vec<Split>> {
        kfold_splits(&self.labels, self.n_classes(), k, seed)
    }

    pub fn loo(&self, group: LooGroup) -> Result<Vec<Split>> {
        loo_splits(&self.source_ids(), group)
    }
}

/// Rows matching `(rpm, multiplier)`, in input order.
pub fn build_variant(all_rows: &[Row], rpm: Rpm, multiplier: Multiplier, layout: &FeatureLayout) -> Result<Dataset> {
    let rows: Vec<Row> = all_rows
        .iter()
        .filter(|r| r.rpm == rpm && r.multiplier == multiplier)
        .cloned()
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptyVariant {
            rpm: rpm.get(),
            multiplier: multiplier.get(),
        });
    }
    let dim = layout.total_dim();
    if let Some(bad) = rows.iter().find(|r| r.features.len() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            got: bad.features.len(),
        });
    }
    let label_map = LabelMap::from_names(rows.iter().map(|r| r.manufacturer.as_str()));
    let labels = rows.iter().map(|r| label_map.id(&r.manufacturer).unwrap()).collect();
    let mut x = Array2::zeros((rows.len(), dim));
    for (i, r) in rows.iter().enumerate() {
        x.row_mut(i).assign(&ndarray::ArrayView1::from(&r.features[..]));
    }
    Ok(Dataset {
        rpm,
        multiplier,
        layout: layout.clone(),
        label_map,
        rows,
        labels,
        x,
    })
}

/// Every (rpm, multiplier) combination, rpm-major.
pub fn all_variants() -> Vec<(Rpm, Multiplier)> {
    Rpm::LEVELS
        .iter()
        .flat_map(|&r| Multiplier::ALL.iter().map(move |&m| (r, m)))
        .collect()
}
