//! Commands behind the `enginebio` binary: corpus synthesis, feature
//! extraction, hyperparameter search, grid evaluation and prediction.

use std::path::{Path, PathBuf};

use enginebio::audio_io::{load_manifest, load_wav, RecordingMeta, Rpm};
use enginebio::classifiers::{defaults_version, Family, ModelSpec, TrainedModel};
use enginebio::dataset::{all_variants, build_variant, load_feature_csv, save_feature_csv, LooGroup, ScalingMode};
use enginebio::features::{FeatureConfig, FeatureExtractor, FeatureLayout};
use enginebio::pipeline::{extract_manifest, extract_waveform, RecordingSummary};
use enginebio::report::{build_report, write_report, EvaluationReport, ModelResult, VariantResult};
use enginebio::segmentation::{Multiplier, TempoAnalyzer};
use enginebio::synth::{build_corpus, CorpusSpec};
use enginebio::tuning::{evaluate_loo, majority_vote, select_best, SearchOptions, SearchSpace, Strategy, TraceEntry};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Domain(#[from] enginebio::Error),

    #[error("{path}: {key}: {message}")]
    Config { path: PathBuf, key: String, message: String },

    #[error("{} recording(s) failed:\n{}", .0.len(), .0.join("\n"))]
    Failures(Vec<String>),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// One (rpm, multiplier) cell of the evaluation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCell {
    pub rpm: Rpm,
    pub multiplier: Multiplier,
}

/// Parameters shared by all commands. Loaded from `--config`, then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; `None` uses every core.
    pub threads: Option<usize>,
    pub features: FeatureConfig,
    pub multipliers: Vec<Multiplier>,
    pub families: Vec<Family>,
    pub grid: Vec<GridCell>,
    /// Sampled configurations per (family, cell); 0 evaluates `specs` or the bundled defaults.
    pub n_configs: usize,
    pub folds: usize,
    pub strategy: Strategy,
    pub scaling: ScalingMode,
    pub loo_group: LooGroup,
    /// Fixed specs used instead of searching, at most one per family.
    pub specs: Vec<ModelSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: None,
            features: FeatureConfig::default(),
            multipliers: Multiplier::ALL.to_vec(),
            families: Family::ALL.to_vec(),
            grid: all_variants()
                .into_iter()
                .map(|(rpm, multiplier)| GridCell { rpm, multiplier })
                .collect(),
            n_configs: 10,
            folds: 10,
            strategy: Strategy::Random,
            scaling: ScalingMode::FullVariant,
            loo_group: LooGroup::None,
            specs: Vec::new(),
        }
    }
}

/// Parses JSON, reporting the path of the offending key.
pub fn parse_json<T: DeserializeOwned>(text: &str, path: &Path) -> CliResult<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| CliError::Config {
        path: path.to_path_buf(),
        key: match e.path().to_string().as_str() {
            "." => "(root)".to_string(),
            p => p.to_string(),
        },
        message: e.inner().to_string(),
    })
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|source| {
        enginebio::Error::Io {
            path: path.to_path_buf(),
            source,
        }
        .into()
    })
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| enginebio::Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| {
        enginebio::Error::Io {
            path: path.to_path_buf(),
            source,
        }
        .into()
    })
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<RunConfig> {
        let config: RunConfig = parse_json(&read_text(path)?, path)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(enginebio::Error::Config(m).into());
        if self.multipliers.is_empty() {
            return bad("multipliers is empty".into());
        }
        if self.families.is_empty() {
            return bad("families is empty".into());
        }
        if self.grid.is_empty() {
            return bad("grid is empty".into());
        }
        if self.folds < 2 {
            return bad(format!("folds must be at least 2, got {}", self.folds));
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        for s in &self.specs {
            s.validate()?;
            if self.specs.iter().filter(|o| o.family == s.family).count() > 1 {
                return bad(format!("more than one spec for {}", s.family));
            }
        }
        FeatureExtractor::new(self.features)?;
        Ok(())
    }

    fn extractor(&self) -> CliResult<FeatureExtractor> {
        Ok(FeatureExtractor::new(self.features)?)
    }

    fn search_options(&self) -> SearchOptions {
        SearchOptions {
            folds: self.folds,
            strategy: self.strategy,
            scaling: self.scaling,
        }
    }
}

/// Writes the corpus described by `spec_file` (or the default corpus) into `out_dir`.
pub fn cmd_synth(spec_file: Option<&Path>, seed: Option<u64>, out_dir: &Path) -> CliResult<PathBuf> {
    let mut spec = match spec_file {
        Some(p) => parse_json::<CorpusSpec>(&read_text(p)?, p)?,
        None => CorpusSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    Ok(build_corpus(&spec, out_dir)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractSummary {
    pub rows: usize,
    pub recordings: Vec<RecordingSummary>,
}

/// Features of every manifest entry at every configured multiplier.
/// Rows of the recordings that succeeded are written even when others fail.
pub fn cmd_extract(config: &RunConfig, manifest: &Path, out_csv: &Path) -> CliResult<ExtractSummary> {
    let metas = load_manifest(manifest)?;
    let extractor = config.extractor()?;
    let analyzer = TempoAnalyzer::new(config.features.grid, config.features.n_mels)?;
    let out = extract_manifest(&metas, &config.multipliers, &analyzer, &extractor);
    save_feature_csv(out_csv, &out.rows, extractor.layout().total_dim())?;
    if !out.failures.is_empty() {
        return Err(CliError::Failures(
            out.failures
                .iter()
                .map(|(p, e)| format!("{}: {e}", p.display()))
                .collect(),
        ));
    }
    Ok(ExtractSummary {
        rows: out.rows.len(),
        recordings: out.summaries,
    })
}

fn load_rows(config: &RunConfig, features_csv: &Path) -> CliResult<(Vec<enginebio::dataset::Row>, FeatureLayout)> {
    let (rows, dim) = load_feature_csv(features_csv)?;
    let layout = config.extractor()?.layout().clone();
    if !rows.is_empty() && dim != layout.total_dim() {
        return Err(enginebio::Error::Dimension {
            expected: layout.total_dim(),
            got: dim,
        }
        .into());
    }
    Ok((rows, layout))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutput {
    pub rpm: Rpm,
    pub multiplier: Multiplier,
    pub best: ModelSpec,
    pub cv_f1: f64,
    pub trace: Vec<TraceEntry>,
    pub config: RunConfig,
    pub defaults_version: u32,
}

/// Random (or adaptive) search on one variant; optionally saves the refitted best model.
pub fn cmd_tune(
    config: &RunConfig,
    features_csv: &Path,
    cell: GridCell,
    family: Family,
    space_file: Option<&Path>,
    model_out: Option<&Path>,
) -> CliResult<TuneOutput> {
    let (rows, layout) = load_rows(config, features_csv)?;
    let dataset = build_variant(&rows, cell.rpm, cell.multiplier, &layout)?;
    let space = match space_file {
        Some(p) => {
            let s: SearchSpace = parse_json(&read_text(p)?, p)?;
            s.validate()?;
            if s.family != family {
                return Err(enginebio::Error::Config(format!(
                    "search space is for {}, not {family}",
                    s.family
                ))
                .into());
            }
            s
        }
        None => SearchSpace::default_for(family),
    };
    let n = config.n_configs.max(1);
    let result = select_best(&dataset, &space, n, config.seed, &config.search_options())?;
    if let Some(path) = model_out {
        TrainedModel::train(&dataset, &result.best)?.save(path)?;
    }
    Ok(TuneOutput {
        rpm: cell.rpm,
        multiplier: cell.multiplier,
        best: ModelSpec {
            hyperparameters: result.best.resolved(),
            ..result.best
        },
        cv_f1: result.cv_f1,
        trace: result.trace,
        config: config.clone(),
        defaults_version: defaults_version(),
    })
}

/// Fits one spec (default: the family's bundled defaults) on a whole variant.
pub fn cmd_train(
    config: &RunConfig,
    features_csv: &Path,
    cell: GridCell,
    family: Family,
    model_out: &Path,
) -> CliResult<TrainedModel> {
    let (rows, layout) = load_rows(config, features_csv)?;
    let dataset = build_variant(&rows, cell.rpm, cell.multiplier, &layout)?;
    let spec = config
        .specs
        .iter()
        .find(|s| s.family == family)
        .cloned()
        .unwrap_or_else(|| ModelSpec::default_for(family, config.seed));
    let model = TrainedModel::train(&dataset, &spec)?;
    model.save(model_out)?;
    Ok(model)
}

/// Tunes (or takes the configured spec) and runs leave-one-out for every family
/// on every grid cell, then writes the report into `out_dir`.
pub fn cmd_evaluate(config: &RunConfig, features_csv: &Path, out_dir: &Path) -> CliResult<EvaluationReport> {
    config.validate()?;
    let (rows, layout) = load_rows(config, features_csv)?;
    let mut grid = config.grid.clone();
    grid.sort();
    grid.dedup();
    let mut datasets = Vec::new();
    let mut missing = Vec::new();
    for cell in &grid {
        match build_variant(&rows, cell.rpm, cell.multiplier, &layout) {
            Ok(d) => datasets.push(d),
            Err(enginebio::Error::EmptyVariant { .. }) => missing.extend(
                config
                    .families
                    .iter()
                    .map(|f| format!("{} @ {} rpm, multiplier {}", f.label(), cell.rpm, cell.multiplier)),
            ),
            Err(e) => return Err(e.into()),
        }
    }
    if !missing.is_empty() {
        return Err(enginebio::Error::IncompleteGrid(missing).into());
    }
    let mut variants = Vec::new();
    for dataset in &datasets {
        let mut models = Vec::new();
        for &family in &config.families {
            let fixed = config.specs.iter().find(|s| s.family == family);
            let (spec, cv_f1) = match (fixed, config.n_configs) {
                (Some(s), _) => (s.clone(), None),
                (None, 0) => (ModelSpec::default_for(family, config.seed), None),
                (None, n) => {
                    let r = select_best(dataset, &SearchSpace::default_for(family), n, config.seed, &config.search_options())?;
                    (r.best, Some(r.cv_f1))
                }
            };
            let spec = ModelSpec {
                hyperparameters: spec.resolved(),
                ..spec
            };
            let out = evaluate_loo(dataset, &spec, config.loo_group, config.scaling)?;
            models.push(ModelResult::new(spec, cv_f1, out.metrics));
        }
        variants.push(VariantResult {
            rpm: dataset.rpm.get(),
            multiplier: dataset.multiplier.get(),
            n_rows: dataset.len(),
            labels: dataset.label_map.names().to_vec(),
            models,
        });
    }
    let provenance = serde_json::json!({
        "run": config,
        "defaults_version": defaults_version(),
        "features_csv": features_csv.file_name().map(|n| n.to_string_lossy().into_owned()),
    });
    let cells: Vec<(u32, u32)> = grid.iter().map(|c| (c.rpm.get(), c.multiplier.get())).collect();
    let report = build_report(provenance, &config.families, &cells, variants)?;
    write_report(&report, out_dir)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPrediction {
    pub index: usize,
    pub label: String,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictOutput {
    pub label: String,
    pub class_id: usize,
    pub labels: Vec<String>,
    /// Segment votes per class.
    pub votes: Vec<usize>,
    /// Mean of the per-segment scores.
    pub scores: Vec<f64>,
    pub tempo: f64,
    pub segments: Vec<SegmentPrediction>,
}

/// Segments a recording, predicts every segment and takes the majority vote.
pub fn cmd_predict(config: &RunConfig, model_file: &Path, wav: &Path, multiplier: Multiplier) -> CliResult<PredictOutput> {
    let model = TrainedModel::load(model_file)?;
    let extractor = config.extractor()?;
    if extractor.layout() != &model.layout {
        return Err(enginebio::Error::Compatibility(format!(
            "model was trained on a {}-value layout, extractor produces {}",
            model.layout.total_dim(),
            extractor.layout().total_dim()
        ))
        .into());
    }
    let analyzer = TempoAnalyzer::new(config.features.grid, config.features.n_mels)?;
    let wave = load_wav(wav)?;
    let meta = RecordingMeta {
        path: wav.to_path_buf(),
        manufacturer: String::new(),
        model: String::new(),
        rpm: Rpm::LEVELS[0],
    };
    let (rows, summary) = extract_waveform(&wave, &meta, &[multiplier], &analyzer, &extractor)?;
    let c = model.n_classes();
    let mut segments = Vec::with_capacity(rows.len());
    let mut classes = Vec::with_capacity(rows.len());
    let mut mean = vec![0.0; c];
    for row in &rows {
        let p = model.predict(&row.features)?;
        mean.iter_mut().zip(&p.scores).for_each(|(m, s)| *m += s / rows.len() as f64);
        classes.push(p.class_id);
        segments.push(SegmentPrediction {
            index: row.segment_index,
            label: p.label,
            scores: p.scores,
        });
    }
    let mut votes = vec![0; c];
    classes.iter().for_each(|&k| votes[k] += 1);
    let class_id = majority_vote(&classes, c);
    Ok(PredictOutput {
        label: model.label_map.name(class_id).to_string(),
        class_id,
        labels: model.label_map.names().to_vec(),
        votes,
        scores: mean,
        tempo: summary.tempo,
        segments,
    })
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(value).map_err(enginebio::Error::from)? + "\n")
}

/// Writes JSON to `path`, or stdout when absent.
pub fn emit_json<T: Serialize>(value: &T, path: Option<&Path>) -> CliResult<()> {
    let text = to_json(value)?;
    match path {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Metric tables of every variant, as printed after an evaluation.
pub fn render_summary(report: &EvaluationReport) -> String {
    enginebio::report::render_tables(report)
}
