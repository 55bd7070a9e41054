//! Recording to feature rows: tempo, segmentation and per-segment extraction.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio_io::{load_wav, RecordingMeta, Waveform};
use crate::dataset::Row;
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::segmentation::{plan_with_tempo, segment, Multiplier, TempoAnalyzer};

/// Tempo found for one recording and the segment count per multiplier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingSummary {
    pub source_id: String,
    pub tempo: f64,
    pub defaulted_tempo: bool,
    pub segments: Vec<(Multiplier, usize)>,
}

/// Rows for one waveform, ordered by multiplier (as given) then segment index.
pub fn extract_waveform(
    wave: &Waveform,
    meta: &RecordingMeta,
    multipliers: &[Multiplier],
    analyzer: &TempoAnalyzer,
    extractor: &FeatureExtractor,
) -> Result<(Vec<Row>, RecordingSummary)> {
    let tempo = analyzer.tempo(wave);
    let mut rows = Vec::new();
    let mut summary = RecordingSummary {
        source_id: meta.source_id(),
        tempo: tempo.bpm,
        defaulted_tempo: tempo.defaulted,
        segments: Vec::new(),
    };
    for &m in multipliers {
        let plan = plan_with_tempo(tempo, m, wave.len())?;
        let segments = segment(wave, &plan);
        let features = segments
            .par_iter()
            .map(|s| extractor.extract(s))
            .collect::<Result<Vec<_>>>()?;
        summary.segments.push((m, segments.len()));
        rows.extend(segments.iter().zip(features).map(|(s, f)| Row {
            source_id: summary.source_id.clone(),
            segment_index: s.index,
            manufacturer: meta.manufacturer.clone(),
            model: meta.model.clone(),
            rpm: meta.rpm,
            multiplier: m,
            features: f.values,
        }));
    }
    Ok((rows, summary))
}

#[derive(Debug)]
pub struct ExtractionOutput {
    pub rows: Vec<Row>,
    pub summaries: Vec<RecordingSummary>,
    /// Recordings that failed, with their errors; their rows are absent.
    pub failures: Vec<(PathBuf, Error)>,
}

/// Extracts every manifest entry; rows keep manifest order.
pub fn extract_manifest(
    metas: &[RecordingMeta],
    multipliers: &[Multiplier],
    analyzer: &TempoAnalyzer,
    extractor: &FeatureExtractor,
) -> ExtractionOutput {
    let results: Vec<Result<(Vec<Row>, RecordingSummary)>> = metas
        .par_iter()
        .map(|meta| {
            let wave = load_wav(&meta.path)?;
            extract_waveform(&wave, meta, multipliers, analyzer, extractor)
        })
        .collect();
    let mut out = ExtractionOutput {
        rows: Vec::new(),
        summaries: Vec::new(),
        failures: Vec::new(),
    };
    for (meta, r) in metas.iter().zip(results) {
        match r {
            Ok((rows, summary)) => {
                out.rows.extend(rows);
                out.summaries.push(summary);
            }
            Err(e) => out.failures.push((meta.path.clone(), e)),
        }
    }
    out
}
