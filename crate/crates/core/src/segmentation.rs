//! Tempo-sized, non-overlapping segmentation of recordings.
//!
//! A window spans `multiplier` tempo periods, where one period is
//! `60 / tempo * sample_rate` samples rounded to the nearest integer. The tempo
//! is estimated once per recording from the onset strength of the full waveform.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::audio_io::{Waveform, CANONICAL_SAMPLE_RATE};
use crate::dsp::{self, FilterBank, FrameGrid, OnsetEnvelope, StftPlan, TempoEstimate};
use crate::error::{Error, Result};

/// Window size in tempo periods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Multiplier(u32);

impl Multiplier {
    pub const ALL: [Multiplier; 3] = [Multiplier(1), Multiplier(2), Multiplier(5)];

    pub fn new(value: u32) -> Result<Self> {
        match value {
            1 | 2 | 5 => Ok(Multiplier(value)),
            other => Err(Error::Config(format!("window multiplier must be 1, 2 or 5 (got {other})"))),
        }
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

impl TryFrom<u32> for Multiplier {
    type Error = Error;
    fn try_from(value: u32) -> Result<Self> {
        Multiplier::new(value)
    }
}

impl From<Multiplier> for u32 {
    fn from(m: Multiplier) -> u32 {
        m.0
    }
}

impl fmt::Display for Multiplier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationPlan {
    pub tempo: f64,
    pub samples_per_tempo: usize,
    pub multiplier: Multiplier,
    pub window_samples: usize,
    pub defaulted_tempo: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub samples: Vec<f64>,
    pub source_id: String,
    pub index: usize,
}

/// Samples in one tempo period at the canonical rate.
pub fn samples_per_tempo(tempo_bpm: f64) -> usize {
    (60.0 / tempo_bpm * CANONICAL_SAMPLE_RATE as f64).round() as usize
}

/// Onset envelope of a whole recording (128-band mel, dB), used for tempo estimation.
#[derive(Debug, Clone)]
pub struct TempoAnalyzer {
    stft: StftPlan,
    mel: FilterBank,
}

impl TempoAnalyzer {
    pub fn new(grid: FrameGrid, n_mels: usize) -> Result<Self> {
        let sr = CANONICAL_SAMPLE_RATE;
        Ok(TempoAnalyzer {
            stft: StftPlan::new(grid)?,
            mel: dsp::mel_filterbank(n_mels, grid.n_freq_bins(), sr, 0.0, sr as f64 / 2.0)?,
        })
    }

    pub fn onset_envelope(&self, samples: &[f64]) -> OnsetEnvelope {
        let power = dsp::power(&self.stft.magnitude(samples, CANONICAL_SAMPLE_RATE));
        let mel_db = self.mel.apply(power.bins.view()).mapv(dsp::power_to_db);
        dsp::onset_strength(mel_db.view(), self.stft.grid().frame_rate(CANONICAL_SAMPLE_RATE))
    }

    pub fn tempo(&self, waveform: &Waveform) -> TempoEstimate {
        if waveform.is_empty() {
            return TempoEstimate::fallback();
        }
        dsp::estimate_tempo(&self.onset_envelope(&waveform.samples))
    }
}

impl Default for TempoAnalyzer {
    fn default() -> Self {
        TempoAnalyzer::new(FrameGrid::default(), 128).expect("default tempo analyzer is valid")
    }
}

/// Plan for a recording whose tempo is already known.
pub fn plan_with_tempo(tempo: TempoEstimate, multiplier: Multiplier, n_samples: usize) -> Result<SegmentationPlan> {
    let per_tempo = samples_per_tempo(tempo.bpm);
    if per_tempo == 0 {
        return Err(Error::Config(format!("tempo {} BPM gives an empty window", tempo.bpm)));
    }
    let window = per_tempo * multiplier.get() as usize;
    if window > n_samples {
        return Err(Error::TooShort {
            needed: window,
            available: n_samples,
        });
    }
    Ok(SegmentationPlan {
        tempo: tempo.bpm,
        samples_per_tempo: per_tempo,
        multiplier,
        window_samples: window,
        defaulted_tempo: tempo.defaulted,
    })
}

pub fn plan_segmentation(waveform: &Waveform, multiplier: Multiplier) -> Result<SegmentationPlan> {
    let tempo = TempoAnalyzer::default().tempo(waveform);
    plan_with_tempo(tempo, multiplier, waveform.len())
}

/// Consecutive full windows; the trailing partial window is dropped.
pub fn segment(waveform: &Waveform, plan: &SegmentationPlan) -> Vec<Segment> {
    let w = plan.window_samples;
    waveform
        .samples
        .chunks_exact(w)
        .enumerate()
        .map(|(index, chunk)| Segment {
            samples: chunk.to_vec(),
            source_id: waveform.source_id.clone(),
            index,
        })
        .collect()
}
