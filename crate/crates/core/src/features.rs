//! The 22 per-segment acoustic features and their time-mean aggregation.
//!
//! Every feature is computed frame by frame on a shared [`SegmentAnalysis`]
//! (raw frames, magnitude/power STFT, mel power and dB, log-frequency chroma,
//! onset envelope) and then collapsed to its per-coefficient mean over time.
//! The concatenation order is fixed by [`FeatureKind::ALL`].

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::audio_io::CANONICAL_SAMPLE_RATE;
use crate::dsp::{self, DctPlan, FilterBank, FrameGrid, Spectrogram, StftPlan};
use crate::error::{Error, Result};
use crate::segmentation::Segment;

/// Floor used wherever a log or a ratio could hit zero.
pub const FLOOR: f64 = 1e-10;

/// C1, the lowest center of the log-frequency (pseudo constant-Q) projection.
pub const CQT_FMIN_C1: f64 = 32.703_195_662_574_83;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub grid: FrameGrid,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub contrast_bands: usize,
    pub contrast_fmin: f64,
    pub contrast_quantile: f64,
    pub rolloff_fraction: f64,
    pub n_filterbank: usize,
    pub n_subbands: usize,
    pub tempogram_lags: usize,
    pub cens_smoothing: usize,
    pub cqt_bins_per_octave: usize,
    pub cqt_fmin: f64,
    pub cqt_octaves: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            grid: FrameGrid::default(),
            n_mels: 128,
            n_mfcc: 13,
            contrast_bands: 6,
            contrast_fmin: 200.0,
            contrast_quantile: 0.02,
            rolloff_fraction: 0.85,
            n_filterbank: 26,
            n_subbands: 4,
            tempogram_lags: 384,
            cens_smoothing: 41,
            cqt_bins_per_octave: 36,
            cqt_fmin: CQT_FMIN_C1,
            cqt_octaves: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Rms,
    ZeroCrossing,
    ChromaCens,
    ChromaStft,
    ChromaCqt,
    SpectralCentroid,
    SpectralBandwidth,
    SpectralContrast,
    SpectralFlatness,
    SpectralRolloff,
    PolyZero,
    PolyLinear,
    PolyQuadratic,
    Mfcc,
    MelSpectrogram,
    SpectralFlux,
    Superflux,
    Tonnetz,
    Tempogram,
    FilterbankEnergies,
    LogFilterbankEnergies,
    SubbandCentroids,
}

impl FeatureKind {
    /// Canonical concatenation order.
    pub const ALL: [FeatureKind; 22] = [
        FeatureKind::Rms,
        FeatureKind::ZeroCrossing,
        FeatureKind::ChromaCens,
        FeatureKind::ChromaStft,
        FeatureKind::ChromaCqt,
        FeatureKind::SpectralCentroid,
        FeatureKind::SpectralBandwidth,
        FeatureKind::SpectralContrast,
        FeatureKind::SpectralFlatness,
        FeatureKind::SpectralRolloff,
        FeatureKind::PolyZero,
        FeatureKind::PolyLinear,
        FeatureKind::PolyQuadratic,
        FeatureKind::Mfcc,
        FeatureKind::MelSpectrogram,
        FeatureKind::SpectralFlux,
        FeatureKind::Superflux,
        FeatureKind::Tonnetz,
        FeatureKind::Tempogram,
        FeatureKind::FilterbankEnergies,
        FeatureKind::LogFilterbankEnergies,
        FeatureKind::SubbandCentroids,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Rms => "rms",
            FeatureKind::ZeroCrossing => "zero_crossing",
            FeatureKind::ChromaCens => "chroma_cens",
            FeatureKind::ChromaStft => "chroma_stft",
            FeatureKind::ChromaCqt => "chroma_cqt",
            FeatureKind::SpectralCentroid => "spectral_centroid",
            FeatureKind::SpectralBandwidth => "spectral_bandwidth",
            FeatureKind::SpectralContrast => "spectral_contrast",
            FeatureKind::SpectralFlatness => "spectral_flatness",
            FeatureKind::SpectralRolloff => "spectral_rolloff",
            FeatureKind::PolyZero => "poly_zero",
            FeatureKind::PolyLinear => "poly_linear",
            FeatureKind::PolyQuadratic => "poly_quadratic",
            FeatureKind::Mfcc => "mfcc",
            FeatureKind::MelSpectrogram => "mel_spectrogram",
            FeatureKind::SpectralFlux => "spectral_flux",
            FeatureKind::Superflux => "superflux",
            FeatureKind::Tonnetz => "tonnetz",
            FeatureKind::Tempogram => "tempogram",
            FeatureKind::FilterbankEnergies => "filterbank_energies",
            FeatureKind::LogFilterbankEnergies => "log_filterbank_energies",
            FeatureKind::SubbandCentroids => "subband_centroids",
        }
    }
}

impl FeatureConfig {
    pub fn dim(&self, kind: FeatureKind) -> usize {
        match kind {
            FeatureKind::Rms
            | FeatureKind::ZeroCrossing
            | FeatureKind::SpectralCentroid
            | FeatureKind::SpectralBandwidth
            | FeatureKind::SpectralFlatness
            | FeatureKind::SpectralRolloff
            | FeatureKind::PolyZero
            | FeatureKind::SpectralFlux
            | FeatureKind::Superflux => 1,
            FeatureKind::ChromaCens | FeatureKind::ChromaStft | FeatureKind::ChromaCqt => 12,
            FeatureKind::SpectralContrast => self.contrast_bands + 1,
            FeatureKind::PolyLinear => 2,
            FeatureKind::PolyQuadratic => 3,
            FeatureKind::Mfcc => self.n_mfcc,
            FeatureKind::MelSpectrogram => self.n_mels,
            FeatureKind::Tonnetz => 6,
            FeatureKind::Tempogram => self.tempogram_lags,
            FeatureKind::FilterbankEnergies | FeatureKind::LogFilterbankEnergies => self.n_filterbank,
            FeatureKind::SubbandCentroids => self.n_subbands,
        }
    }

    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout(
            FeatureKind::ALL
                .iter()
                .map(|&k| LayoutEntry {
                    name: k.name().to_string(),
                    dim: self.dim(k),
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub dim: usize,
}

/// Ordered `(feature name, dimension)` list describing a feature vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureLayout(pub Vec<LayoutEntry>);

impl FeatureLayout {
    pub fn total_dim(&self) -> usize {
        self.0.iter().map(|e| e.dim).sum()
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.0
    }

    /// Column offset of a named feature.
    pub fn offset_of(&self, name: &str) -> Option<usize> {
        let mut off = 0;
        for e in &self.0 {
            if e.name == name {
                return Some(off);
            }
            off += e.dim;
        }
        None
    }
}

/// `[dim x n_frames]` per-frame values of one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeature {
    pub values: Array2<f64>,
}

impl FrameFeature {
    pub fn aggregate_mean(&self) -> Vec<f64> {
        aggregate_mean(self.values.view())
    }
}

/// Per-coefficient mean over the time axis.
pub fn aggregate_mean(values: ArrayView2<f64>) -> Vec<f64> {
    let n = values.ncols().max(1) as f64;
    values.rows().into_iter().map(|r| r.sum() / n).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

/// Intermediate representations shared by all features of one segment.
#[derive(Debug, Clone)]
pub struct SegmentAnalysis {
    /// Raw centered frames, one per row.
    pub frames: Array2<f64>,
    pub magnitude: Spectrogram,
    pub power: Spectrogram,
    pub mel_power: Array2<f64>,
    pub mel_db: Array2<f64>,
    /// Unnormalized 12-bin chroma of the log-frequency projection.
    pub cqt_chroma: Array2<f64>,
    pub onset: dsp::OnsetEnvelope,
}

impl SegmentAnalysis {
    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }
}

/// Pitch class (C = 0, ..., A = 9, ..., B = 11) of a frequency, A4 = 440 Hz.
pub fn pitch_class(freq: f64) -> usize {
    let semis = (12.0 * (freq / 440.0).log2()).round() as i64;
    (semis + 9).rem_euclid(12) as usize
}

#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    config: FeatureConfig,
    stft: StftPlan,
    mel: FilterBank,
    fbank: FilterBank,
    log_freq: FilterBank,
    dct: DctPlan,
    stft_pitch_class: Vec<Option<usize>>,
    cqt_pitch_class: Vec<usize>,
    layout: FeatureLayout,
}

impl FeatureExtractor {
    pub fn new(config: FeatureConfig) -> Result<Self> {
        let sr = CANONICAL_SAMPLE_RATE;
        let nyquist = sr as f64 / 2.0;
        let n_bins = config.grid.n_freq_bins();
        if config.n_mfcc == 0 || config.n_mfcc > config.n_mels {
            return Err(Error::Config(format!(
                "n_mfcc ({}) must be in 1..=n_mels ({})",
                config.n_mfcc, config.n_mels
            )));
        }
        if config.contrast_bands == 0 || config.n_subbands == 0 || config.tempogram_lags == 0 || config.cens_smoothing == 0 {
            return Err(Error::Config("feature dimensions must be positive".into()));
        }
        if !(0.0 < config.rolloff_fraction && config.rolloff_fraction <= 1.0)
            || !(0.0 < config.contrast_quantile && config.contrast_quantile < 0.5)
        {
            return Err(Error::Config("rolloff fraction must be in (0, 1], contrast quantile in (0, 0.5)".into()));
        }
        if config.contrast_fmin * 2f64.powi(config.contrast_bands as i32 - 1) >= nyquist {
            return Err(Error::Config("spectral contrast bands exceed Nyquist".into()));
        }
        let stft = StftPlan::new(config.grid)?;
        let mel = dsp::mel_filterbank(config.n_mels, n_bins, sr, 0.0, nyquist)?;
        let fbank = speech_filterbank(config.n_filterbank, config.grid.frame_length, sr)?;
        let log_freq = dsp::log_freq_filterbank(
            n_bins,
            sr,
            config.cqt_bins_per_octave,
            config.cqt_fmin,
            config.cqt_bins_per_octave * config.cqt_octaves,
        )?;
        let stft_pitch_class = config
            .grid
            .bin_frequencies(sr)
            .iter()
            .map(|&f| (f > 0.0).then(|| pitch_class(f)))
            .collect();
        let cqt_pitch_class = log_freq.centers().iter().map(|&f| pitch_class(f)).collect();
        Ok(FeatureExtractor {
            dct: DctPlan::new(config.n_mels, config.n_mfcc, true),
            layout: config.layout(),
            config,
            stft,
            mel,
            fbank,
            log_freq,
            stft_pitch_class,
            cqt_pitch_class,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    pub fn mel_bank(&self) -> &FilterBank {
        &self.mel
    }

    pub fn analyze(&self, samples: &[f64]) -> SegmentAnalysis {
        let sr = CANONICAL_SAMPLE_RATE;
        let frames = dsp::frame_signal(samples, &self.config.grid);
        let magnitude = self.stft.magnitude_of_frames(frames.view(), sr);
        let power = dsp::power(&magnitude);
        let mel_power = self.mel.apply(power.bins.view());
        let mel_db = mel_power.mapv(dsp::power_to_db);
        let cqt = self.log_freq.apply(power.bins.view());
        let mut cqt_chroma = Array2::zeros((12, cqt.ncols()));
        for (k, &pc) in self.cqt_pitch_class.iter().enumerate() {
            let mut dst = cqt_chroma.row_mut(pc);
            dst += &cqt.row(k);
        }
        let onset = dsp::onset_strength(mel_db.view(), self.config.grid.frame_rate(sr));
        SegmentAnalysis {
            frames,
            magnitude,
            power,
            mel_power,
            mel_db,
            cqt_chroma,
            onset,
        }
    }

    /// Per-frame values of one feature.
    pub fn compute(&self, kind: FeatureKind, a: &SegmentAnalysis) -> FrameFeature {
        let c = &self.config;
        let freqs = &a.magnitude.bin_frequencies;
        let mag = &a.magnitude.bins;
        let pow = &a.power.bins;
        let per_frame = |dim: usize, f: &dyn Fn(usize) -> Vec<f64>| {
            let mut out = Array2::zeros((dim, a.n_frames()));
            for t in 0..a.n_frames() {
                for (i, v) in f(t).into_iter().enumerate() {
                    out[[i, t]] = v;
                }
            }
            out
        };
        let col = |m: &Array2<f64>, t: usize| m.column(t).to_vec();
        let values = match kind {
            FeatureKind::Rms => per_frame(1, &|t| vec![rms(a.frames.row(t).as_slice().unwrap())]),
            FeatureKind::ZeroCrossing => {
                per_frame(1, &|t| vec![zero_crossing_rate(a.frames.row(t).as_slice().unwrap())])
            }
            FeatureKind::ChromaStft => {
                let mut chroma = Array2::zeros((12, a.n_frames()));
                for (k, pc) in self.stft_pitch_class.iter().enumerate() {
                    if let Some(pc) = *pc {
                        let mut dst = chroma.row_mut(pc);
                        dst += &pow.row(k);
                    }
                }
                normalize_columns_max(&mut chroma);
                chroma
            }
            FeatureKind::ChromaCqt => {
                let mut chroma = a.cqt_chroma.clone();
                normalize_columns_max(&mut chroma);
                chroma
            }
            FeatureKind::ChromaCens => chroma_cens(a.cqt_chroma.view(), c.cens_smoothing),
            FeatureKind::SpectralCentroid => per_frame(1, &|t| vec![spectral_centroid(&col(mag, t), freqs)]),
            FeatureKind::SpectralBandwidth => per_frame(1, &|t| vec![spectral_bandwidth(&col(mag, t), freqs)]),
            FeatureKind::SpectralContrast => per_frame(c.contrast_bands + 1, &|t| {
                spectral_contrast(&col(pow, t), freqs, c.contrast_fmin, c.contrast_bands, c.contrast_quantile)
            }),
            FeatureKind::SpectralFlatness => per_frame(1, &|t| vec![spectral_flatness(&col(pow, t))]),
            FeatureKind::SpectralRolloff => {
                per_frame(1, &|t| vec![spectral_rolloff(&col(pow, t), freqs, c.rolloff_fraction)])
            }
            FeatureKind::PolyZero => per_frame(1, &|t| poly_fit(&col(mag, t), freqs, 0)),
            FeatureKind::PolyLinear => per_frame(2, &|t| poly_fit(&col(mag, t), freqs, 1)),
            FeatureKind::PolyQuadratic => per_frame(3, &|t| poly_fit(&col(mag, t), freqs, 2)),
            FeatureKind::Mfcc => per_frame(c.n_mfcc, &|t| self.dct.apply(&col(&a.mel_db, t))),
            FeatureKind::MelSpectrogram => a.mel_power.clone(),
            FeatureKind::SpectralFlux => spectral_flux(mag.view()).insert_axis(Axis(0)),
            FeatureKind::Superflux => superflux(a.mel_db.view()).insert_axis(Axis(0)),
            FeatureKind::Tonnetz => {
                let mut cens = chroma_cens(a.cqt_chroma.view(), c.cens_smoothing);
                normalize_columns_l1(&mut cens);
                per_frame(6, &|t| tonnetz(&col(&cens, t)).to_vec())
            }
            FeatureKind::Tempogram => tempogram(&a.onset.strength, c.tempogram_lags),
            FeatureKind::FilterbankEnergies => self.fbank.apply(pow.view()),
            FeatureKind::LogFilterbankEnergies => self.fbank.apply(pow.view()).mapv(|e| e.max(FLOOR).ln()),
            FeatureKind::SubbandCentroids => {
                let nyquist = CANONICAL_SAMPLE_RATE as f64 / 2.0;
                per_frame(c.n_subbands, &|t| subband_centroids(&col(pow, t), freqs, c.n_subbands, nyquist))
            }
        };
        FrameFeature { values }
    }

    /// Per-frame values of one feature computed directly from samples.
    pub fn frame_feature(&self, kind: FeatureKind, samples: &[f64]) -> Result<FrameFeature> {
        if samples.is_empty() {
            return Err(Error::Feature {
                name: kind.name(),
                message: "empty segment".into(),
            });
        }
        Ok(self.compute(kind, &self.analyze(samples)))
    }

    pub fn extract_samples(&self, samples: &[f64]) -> Result<FeatureVector> {
        if samples.is_empty() {
            return Err(Error::Feature {
                name: FeatureKind::ALL[0].name(),
                message: "empty segment".into(),
            });
        }
        let analysis = self.analyze(samples);
        let mut values = Vec::with_capacity(self.layout.total_dim());
        for kind in FeatureKind::ALL {
            let means = self.compute(kind, &analysis).aggregate_mean();
            if let Some(bad) = means.iter().position(|v| !v.is_finite()) {
                return Err(Error::Feature {
                    name: kind.name(),
                    message: format!("non-finite value at coefficient {bad}"),
                });
            }
            values.extend(means);
        }
        debug_assert_eq!(values.len(), self.layout.total_dim());
        Ok(FeatureVector { values })
    }

    pub fn extract(&self, segment: &Segment) -> Result<FeatureVector> {
        self.extract_samples(&segment.samples)
    }
}

/// Mel filterbank in the speech-features style: edges quantized to FFT bins,
/// unit peak height, `n_filters` filters spanning 0 Hz to Nyquist.
pub fn speech_filterbank(n_filters: usize, n_fft: usize, sample_rate: u32) -> Result<FilterBank> {
    let n_bins = n_fft / 2 + 1;
    let m_hi = dsp::hz_to_mel(sample_rate as f64 / 2.0);
    let edges: Vec<usize> = (0..n_filters + 2)
        .map(|i| {
            let hz = dsp::mel_to_hz(m_hi * i as f64 / (n_filters + 1) as f64);
            (((n_fft + 1) as f64 * hz / sample_rate as f64).floor() as usize).min(n_bins - 1)
        })
        .collect();
    let mut dense = Vec::with_capacity(n_filters);
    for j in 0..n_filters {
        let (lo, mid, hi) = (edges[j], edges[j + 1], edges[j + 2]);
        if lo == mid || mid == hi {
            return Err(Error::Construction(format!(
                "filterbank band {j} collapses onto one FFT bin; use fewer filters"
            )));
        }
        let mut row = vec![0.0; n_bins];
        for (k, w) in row.iter_mut().enumerate().take(mid).skip(lo) {
            *w = (k - lo) as f64 / (mid - lo) as f64;
        }
        for (k, w) in row.iter_mut().enumerate().take(hi).skip(mid) {
            *w = (hi - k) as f64 / (hi - mid) as f64;
        }
        dense.push(row);
    }
    let centers = edges[1..=n_filters]
        .iter()
        .map(|&b| b as f64 * sample_rate as f64 / n_fft as f64)
        .collect();
    Ok(FilterBank::from_dense(dense, n_bins, centers))
}

fn normalize_columns_max(m: &mut Array2<f64>) {
    for mut c in m.columns_mut() {
        let max = c.iter().cloned().fold(0.0, f64::max);
        if max > 0.0 {
            c /= max;
        }
    }
}

fn normalize_columns_l1(m: &mut Array2<f64>) {
    for mut c in m.columns_mut() {
        let s: f64 = c.iter().map(|v| v.abs()).sum();
        if s > 0.0 {
            c /= s;
        }
    }
}

fn normalize_columns_l2(m: &mut Array2<f64>) {
    for mut c in m.columns_mut() {
        let s: f64 = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if s > 0.0 {
            c /= s;
        }
    }
}

pub fn rms(frame: &[f64]) -> f64 {
    (frame.iter().map(|v| v * v).sum::<f64>() / frame.len() as f64).sqrt()
}

/// Sign changes between consecutive samples per sample; zero counts as nonnegative.
pub fn zero_crossing_rate(frame: &[f64]) -> f64 {
    let crossings = frame.windows(2).filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0)).count();
    crossings as f64 / frame.len() as f64
}

pub fn spectral_centroid(mag: &[f64], freqs: &[f64]) -> f64 {
    let total: f64 = mag.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    mag.iter().zip(freqs).map(|(m, f)| m * f).sum::<f64>() / total
}

pub fn spectral_bandwidth(mag: &[f64], freqs: &[f64]) -> f64 {
    let total: f64 = mag.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let c = spectral_centroid(mag, freqs);
    (mag.iter().zip(freqs).map(|(m, f)| m * (f - c).powi(2)).sum::<f64>() / total).sqrt()
}

/// Geometric over arithmetic mean of the floored power spectrum.
pub fn spectral_flatness(power: &[f64]) -> f64 {
    let n = power.len() as f64;
    let log_mean = power.iter().map(|p| p.max(FLOOR).ln()).sum::<f64>() / n;
    let mean = power.iter().map(|p| p.max(FLOOR)).sum::<f64>() / n;
    (log_mean.exp() / mean).min(1.0)
}

/// Lowest bin frequency whose cumulative power reaches `fraction` of the total.
pub fn spectral_rolloff(power: &[f64], freqs: &[f64], fraction: f64) -> f64 {
    let total: f64 = power.iter().sum();
    let threshold = fraction * total;
    let mut acc = 0.0;
    for (p, f) in power.iter().zip(freqs) {
        acc += p;
        if acc >= threshold {
            return *f;
        }
    }
    *freqs.last().unwrap_or(&0.0)
}

/// Octave-band contrast: bands `[0, fmin)`, `[fmin, 2 fmin)`, ..., last band open to Nyquist.
pub fn spectral_contrast(power: &[f64], freqs: &[f64], fmin: f64, n_bands: usize, quantile: f64) -> Vec<f64> {
    let mut edges = vec![0.0];
    edges.extend((0..n_bands).map(|b| fmin * 2f64.powi(b as i32)));
    edges.push(f64::INFINITY);
    edges
        .windows(2)
        .map(|e| {
            let mut band: Vec<f64> = power
                .iter()
                .zip(freqs)
                .filter(|(_, &f)| f >= e[0] && f < e[1])
                .map(|(&p, _)| p)
                .collect();
            if band.is_empty() {
                return 0.0;
            }
            band.sort_by(f64::total_cmp);
            let q = ((quantile * band.len() as f64).round() as usize).max(1);
            let valley = band[..q].iter().sum::<f64>() / q as f64;
            let peak = band[band.len() - q..].iter().sum::<f64>() / q as f64;
            peak.max(FLOOR).ln() - valley.max(FLOOR).ln()
        })
        .collect()
}

/// Least-squares polynomial of `order` fitted to `mag(freq)`, highest degree first.
pub fn poly_fit(mag: &[f64], freqs: &[f64], order: usize) -> Vec<f64> {
    let p = order + 1;
    // Fit in u = f / f_max so the design matrix stays well conditioned.
    let scale = freqs.iter().cloned().fold(0.0, f64::max).max(1.0);
    let a = DMatrix::from_fn(freqs.len(), p, |i, j| (freqs[i] / scale).powi(j as i32));
    let b = DVector::from_column_slice(mag);
    let coef_u = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map(|c| c.as_slice().to_vec())
        .unwrap_or_else(|_| vec![0.0; p]);
    // ascending powers of u -> descending powers of f
    (0..p).rev().map(|j| coef_u[j] / scale.powi(j as i32)).collect()
}

/// ℓ2 norm of the half-wave-rectified frame-to-frame magnitude increase.
pub fn spectral_flux(mag: ArrayView2<f64>) -> Array1<f64> {
    let n = mag.ncols();
    let mut out = Array1::zeros(n);
    for t in 1..n {
        out[t] = mag
            .column(t)
            .iter()
            .zip(mag.column(t - 1).iter())
            .map(|(a, b)| (a - b).max(0.0).powi(2))
            .sum::<f64>()
            .sqrt();
    }
    out
}

/// Rectified increase of a dB mel spectrogram summed over bands, without vibrato suppression.
pub fn mel_flux(mel_db: ArrayView2<f64>) -> Array1<f64> {
    let n = mel_db.ncols();
    let mut out = Array1::zeros(n);
    for t in 1..n {
        out[t] = (0..mel_db.nrows())
            .map(|m| (mel_db[[m, t]] - mel_db[[m, t - 1]]).max(0.0))
            .sum();
    }
    out
}

/// Flux against a width-3 maximum filter (across bands) of the previous frame.
pub fn superflux(mel_db: ArrayView2<f64>) -> Array1<f64> {
    let (n_bands, n) = mel_db.dim();
    let mut out = Array1::zeros(n);
    for t in 1..n {
        out[t] = (0..n_bands)
            .map(|m| {
                let lo = m.saturating_sub(1);
                let hi = (m + 1).min(n_bands - 1);
                let reference = (lo..=hi).map(|j| mel_db[[j, t - 1]]).fold(f64::NEG_INFINITY, f64::max);
                (mel_db[[m, t]] - reference).max(0.0)
            })
            .sum();
    }
    out
}

/// Energy-normalized chroma: ℓ1 normalize, quantize, smooth over time, ℓ2 normalize.
pub fn chroma_cens(chroma: ArrayView2<f64>, smoothing: usize) -> Array2<f64> {
    let mut c = chroma.to_owned();
    normalize_columns_l1(&mut c);
    c.mapv_inplace(|v| {
        if v > 0.4 {
            1.0
        } else if v > 0.2 {
            0.75
        } else if v > 0.1 {
            0.5
        } else if v > 0.05 {
            0.25
        } else {
            0.0
        }
    });
    let n = c.ncols();
    let half = smoothing / 2;
    let mut smoothed = Array2::zeros(c.dim());
    for t in 0..n {
        let lo = t.saturating_sub(half);
        let hi = (t + smoothing - half).min(n);
        for p in 0..12 {
            smoothed[[p, t]] = (lo..hi).map(|s| c[[p, s]]).sum::<f64>() / smoothing as f64;
        }
    }
    normalize_columns_l2(&mut smoothed);
    smoothed
}

/// 6-D projection onto the circles of fifths, minor thirds and major thirds.
pub fn tonnetz(chroma: &[f64]) -> [f64; 6] {
    let circles = [(7.0 * PI / 6.0, 1.0), (3.0 * PI / 2.0, 1.0), (2.0 * PI / 3.0, 0.5)];
    let mut out = [0.0; 6];
    for (i, (step, radius)) in circles.iter().enumerate() {
        for (p, &c) in chroma.iter().enumerate() {
            let theta = p as f64 * step;
            out[2 * i] += radius * c * theta.sin();
            out[2 * i + 1] += radius * c * theta.cos();
        }
    }
    out
}

/// Local autocorrelation of the onset envelope under a Hann window of `win` frames
/// centered on each frame, normalized by lag 0. Output is `[win x n_frames]`; frames
/// outside the envelope count as zero, so short envelopes are implicitly zero-padded.
pub fn tempogram(envelope: &[f64], win: usize) -> Array2<f64> {
    let n = envelope.len();
    let window = dsp::WindowKind::Hann.coefficients(win);
    let half = (win / 2) as isize;
    let mut out = Array2::zeros((win, n));
    let mut buf = Vec::with_capacity(win);
    for t in 0..n {
        let start = t as isize - half;
        let j0 = (-start).max(0) as usize;
        let j1 = ((n as isize - start).min(win as isize)) as usize;
        buf.clear();
        buf.extend((j0..j1).map(|j| window[j] * envelope[(start + j as isize) as usize]));
        let r0: f64 = buf.iter().map(|v| v * v).sum();
        if r0 <= 0.0 {
            continue;
        }
        for lag in 0..buf.len() {
            let r: f64 = buf[..buf.len() - lag].iter().zip(&buf[lag..]).map(|(a, b)| a * b).sum();
            out[[lag, t]] = r / r0;
        }
    }
    out
}

/// Power-weighted mean frequency of `n` equal-width bands over `[0, nyquist]`;
/// a band without power reports its midpoint.
pub fn subband_centroids(power: &[f64], freqs: &[f64], n: usize, nyquist: f64) -> Vec<f64> {
    let width = nyquist / n as f64;
    (0..n)
        .map(|b| {
            let (lo, hi) = (b as f64 * width, (b + 1) as f64 * width);
            let last = b + 1 == n;
            let (mut wsum, mut fsum) = (0.0, 0.0);
            for (&p, &f) in power.iter().zip(freqs) {
                if f >= lo && (f < hi || (last && f <= hi)) {
                    wsum += p;
                    fsum += p * f;
                }
            }
            if wsum > 0.0 {
                fsum / wsum
            } else {
                (lo + hi) / 2.0
            }
        })
        .collect()
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        FeatureExtractor::new(FeatureConfig::default()).expect("default feature config is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const SR: f64 = 44100.0;
    const BIN_HZ: f64 = SR / 2048.0;

    fn tone(freq: f64, amp: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / SR).sin()).collect()
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()
    }

    fn interior(f: &FrameFeature) -> impl Iterator<Item = ndarray::ArrayView1<'_, f64>> {
        let n = f.values.ncols();
        (2..n - 2).map(move |t| f.values.column(t))
    }

    #[test]
    fn default_layout_is_644_wide() {
        let layout = FeatureConfig::default().layout();
        assert_eq!(layout.total_dim(), 644);
        assert_eq!(layout.entries().len(), 22);
        assert_eq!(layout.entries()[0].name, "rms");
        assert_eq!(layout.entries()[21].name, "subband_centroids");
        assert_eq!(layout.offset_of("mfcc"), Some(55));
        assert_eq!(layout.offset_of("tempogram"), Some(204));
        assert_eq!(layout.offset_of("nope"), None);
    }

    #[test]
    fn pitch_classes() {
        assert_eq!(pitch_class(440.0), 9);
        assert_eq!(pitch_class(880.0), 9);
        assert_eq!(pitch_class(261.63), 0);
        assert_eq!(pitch_class(CQT_FMIN_C1), 0);
        assert_eq!(pitch_class(27.5), 9);
        assert_eq!(pitch_class(466.16), 10);
    }

    #[test]
    fn rms_and_zero_crossings() {
        let fx = FeatureExtractor::default();
        let r = fx.frame_feature(FeatureKind::Rms, &vec![0.5; 22050]).unwrap();
        assert!(r.values.iter().all(|v| (v - 0.5).abs() < 1e-12));

        let r = fx.frame_feature(FeatureKind::Rms, &tone(1000.0, 0.8, 22050)).unwrap();
        for c in interior(&r) {
            assert!((c[0] - 0.8 / 2f64.sqrt()).abs() < 2e-3, "{}", c[0]);
        }

        let alt: Vec<f64> = (0..22050).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let z = fx.frame_feature(FeatureKind::ZeroCrossing, &alt).unwrap();
        for c in interior(&z) {
            assert!((c[0] - 2047.0 / 2048.0).abs() < 1e-12);
        }
        let z = fx.frame_feature(FeatureKind::ZeroCrossing, &tone(1000.0, 0.5, 22050)).unwrap();
        for c in interior(&z) {
            assert!((c[0] - 2000.0 / SR).abs() < 2.0 / 2048.0, "{}", c[0]);
        }
    }

    #[test]
    fn bin_centered_tone_centroid_and_bandwidth() {
        // A periodic-Hann tone on bin 100 leaks only into bins 99 and 101 at
        // magnitudes 1/4, 1/2, 1/4 of the peak lobe.
        let fx = FeatureExtractor::default();
        let f0 = 100.0 * BIN_HZ;
        let x = tone(f0, 0.5, 22050);
        let c = fx.frame_feature(FeatureKind::SpectralCentroid, &x).unwrap();
        let b = fx.frame_feature(FeatureKind::SpectralBandwidth, &x).unwrap();
        for col in interior(&c) {
            assert!((col[0] - f0).abs() < 1e-6 * f0, "{}", col[0]);
        }
        for col in interior(&b) {
            assert!((col[0] - BIN_HZ / 2f64.sqrt()).abs() < 1e-6 * BIN_HZ, "{}", col[0]);
        }
    }

    #[test]
    fn zcr_and_bandwidth_small_cases() {
        assert_eq!(zero_crossing_rate(&[1.0, -1.0, 1.0, -1.0]), 0.75);
        assert_eq!(zero_crossing_rate(&[0.3; 8]), 0.0);
        assert_eq!(zero_crossing_rate(&[0.0, -0.0, 1.0]), 0.0);
        let freqs = [0.0, 100.0, 200.0, 300.0, 400.0];
        assert_eq!(spectral_bandwidth(&[0.0, 1.0, 0.0, 1.0, 0.0], &freqs), 100.0);
        assert_eq!(spectral_bandwidth(&[0.0, 0.0, 5.0, 0.0, 0.0], &freqs), 0.0);
        assert_eq!(spectral_centroid(&[0.0, 0.0, 0.0, 4.0, 0.0], &freqs), 300.0);
    }

    /// Hann-windowed DFT of an interior frame, evaluated term by term.
    fn naive_spectrum(frame: &[f64]) -> Vec<(f64, f64)> {
        let n = frame.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (j, &x) in frame.iter().enumerate() {
                    let w = 0.5 - 0.5 * (2.0 * PI * j as f64 / n as f64).cos();
                    let ang = -2.0 * PI * (k * j % n) as f64 / n as f64;
                    re += w * x * ang.cos();
                    im += w * x * ang.sin();
                }
                (k as f64 * SR / n as f64, (re * re + im * im).sqrt())
            })
            .collect()
    }

    #[test]
    fn spectral_features_match_direct_dft() {
        let fx = FeatureExtractor::default();
        let x = noise(4096, 21);
        // Frame 2 of a centered 512-hop grid covers samples 0..2048 exactly.
        let spec = naive_spectrum(&x[..2048]);
        let mag: Vec<f64> = spec.iter().map(|s| s.1).collect();
        let pow: Vec<f64> = mag.iter().map(|m| m * m).collect();
        let f: Vec<f64> = spec.iter().map(|s| s.0).collect();
        let msum: f64 = mag.iter().sum();
        let centroid = mag.iter().zip(&f).map(|(m, f)| m * f).sum::<f64>() / msum;
        let bandwidth = (mag.iter().zip(&f).map(|(m, f)| m * (f - centroid).powi(2)).sum::<f64>() / msum).sqrt();
        let flatness = (pow.iter().map(|p| p.ln()).sum::<f64>() / pow.len() as f64).exp()
            / (pow.iter().sum::<f64>() / pow.len() as f64);
        let total: f64 = pow.iter().sum();
        let mut acc = 0.0;
        let rolloff = f[pow.iter().position(|p| {
            acc += p;
            acc >= 0.85 * total
        }).unwrap()];
        let lowband: Vec<(f64, f64)> = f.iter().zip(&pow).filter(|(f, _)| **f < 5512.5).map(|(a, b)| (*a, *b)).collect();
        let sub0 = lowband.iter().map(|(f, p)| f * p).sum::<f64>() / lowband.iter().map(|(_, p)| p).sum::<f64>();

        let analysis = fx.analyze(&x);
        let got = |k: FeatureKind| fx.compute(k, &analysis).values[[0, 2]];
        for (name, want, have) in [
            ("centroid", centroid, got(FeatureKind::SpectralCentroid)),
            ("bandwidth", bandwidth, got(FeatureKind::SpectralBandwidth)),
            ("flatness", flatness, got(FeatureKind::SpectralFlatness)),
            ("rolloff", rolloff, got(FeatureKind::SpectralRolloff)),
            ("subband 0", sub0, got(FeatureKind::SubbandCentroids)),
        ] {
            assert!((want - have).abs() <= 1e-6 * want.abs(), "{name}: {want} vs {have}");
        }
    }

    #[test]
    fn mfcc_matches_composition() {
        let fx = FeatureExtractor::default();
        let x = noise(4096, 5);
        let a = fx.analyze(&x);
        let m = fx.compute(FeatureKind::Mfcc, &a);
        let power: Vec<f64> = a.power.bins.column(2).to_vec();
        let mel = fx.mel_bank().to_dense();
        let db: Vec<f64> = (0..128)
            .map(|i| 10.0 * ((0..1025).map(|k| mel[[i, k]] * power[k]).sum::<f64>() + 1e-10).log10())
            .collect();
        for q in 0..13 {
            let scale = if q == 0 { (1.0 / 128f64).sqrt() } else { (2.0 / 128f64).sqrt() };
            let c: f64 = db
                .iter()
                .enumerate()
                .map(|(i, v)| v * (PI * q as f64 * (2 * i + 1) as f64 / 256.0).cos())
                .sum::<f64>()
                * scale;
            assert!((c - m.values[[q, 2]]).abs() < 1e-8 * c.abs().max(1.0), "mfcc {q}");
        }
    }

    #[test]
    fn mel_row_of_a_centered_tone_is_argmax() {
        let fx = FeatureExtractor::default();
        let center = fx.mel_bank().centers()[60];
        let mel = fx.frame_feature(FeatureKind::MelSpectrogram, &tone(center, 0.5, 22050)).unwrap();
        for col in interior(&mel) {
            let arg = (0..128).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
            assert_eq!(arg, 60);
        }
        let zeros = fx.frame_feature(FeatureKind::MelSpectrogram, &vec![0.0; 4096]).unwrap();
        assert!(zeros.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn contrast_of_a_tone_peaks_in_its_band() {
        let fx = FeatureExtractor::default();
        // 1 kHz lies in [800, 1600), the fourth of the seven bands.
        let mut x = tone(1000.0, 0.5, 22050);
        for (v, n) in x.iter_mut().zip(noise(22050, 2)) {
            *v += 1e-3 * n;
        }
        let c = fx.frame_feature(FeatureKind::SpectralContrast, &x).unwrap().aggregate_mean();
        let arg = (0..7).max_by(|&a, &b| c[a].total_cmp(&c[b])).unwrap();
        assert_eq!(arg, 3, "{c:?}");
        assert!(c.iter().enumerate().all(|(i, &v)| i == 3 || v < c[3]));
    }

    #[test]
    fn flux_of_an_amplitude_step() {
        let fx = FeatureExtractor::default();
        let mut x = tone(1000.0, 0.1, 44100);
        x[22016..].iter_mut().for_each(|v| *v *= 5.0);
        let f = fx.frame_feature(FeatureKind::SpectralFlux, &x).unwrap();
        let v = f.values.row(0);
        // Reflect padding breaks the sine's phase in the outermost frames.
        let arg = (3..v.len() - 3).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
        assert!((41..=45).contains(&arg), "peak at frame {arg}");
        assert_eq!(v[0], 0.0);
        // Stationary stretches are flat; only frames whose window straddles the step move.
        for t in (3..38).chain(48..v.len() - 3) {
            assert!(v[t] < 1e-3 * v[arg], "frame {t}: {}", v[t]);
        }
        let base = noise(1025, 8).into_iter().map(f64::abs).collect::<Vec<_>>();
        let decaying = Array2::from_shape_fn((1025, 10), |(k, t)| base[k] * 0.8f64.powi(t as i32));
        assert!(spectral_flux(decaying.view()).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn centroid_of_silence_is_zero() {
        assert_eq!(spectral_centroid(&[0.0; 4], &[0.0, 1.0, 2.0, 3.0]), 0.0);
        assert_eq!(spectral_bandwidth(&[0.0; 4], &[0.0, 1.0, 2.0, 3.0]), 0.0);
    }

    #[test]
    fn flatness_extremes() {
        assert!((spectral_flatness(&[2.0; 16]) - 1.0).abs() < 1e-12);
        let mut spiky = vec![0.0; 1025];
        spiky[10] = 1.0;
        assert!(spectral_flatness(&spiky) < 1e-6);
    }

    #[test]
    fn rolloff_small_and_flat() {
        let freqs = [0.0, 10.0, 20.0, 30.0];
        assert_eq!(spectral_rolloff(&[1.0; 4], &freqs, 0.85), 30.0);
        assert_eq!(spectral_rolloff(&[1.0; 4], &freqs, 0.5), 10.0);
        let grid = FrameGrid::default();
        let freqs = grid.bin_frequencies(44100);
        // 0.85 * 1025 = 871.25, first reached after 872 bins, i.e. at index 871.
        let r = spectral_rolloff(&vec![1.0; 1025], &freqs, 0.85);
        assert!((r - 871.0 * BIN_HZ).abs() < 1e-9);
        assert!((r - 18755.42).abs() < 0.01);
        let mut sparse = vec![0.0; 1025];
        sparse[40] = 2.0;
        sparse[300] = 1.0;
        assert_eq!(spectral_rolloff(&sparse, &freqs, 1.0), freqs[300]);
        assert_eq!(spectral_rolloff(&sparse, &freqs, 0.5), freqs[40]);
    }

    #[test]
    fn contrast_is_zero_for_flat_and_positive_for_peaky() {
        let freqs = FrameGrid::default().bin_frequencies(44100);
        let flat = spectral_contrast(&vec![1.0; 1025], &freqs, 200.0, 6, 0.02);
        assert_eq!(flat.len(), 7);
        assert!(flat.iter().all(|v| v.abs() < 1e-12));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let peaky: Vec<f64> = (0..1025).map(|_| rng.random_range(0.01..1.0)).collect();
        let c = spectral_contrast(&peaky, &freqs, 200.0, 6, 0.02);
        assert!(c.iter().all(|&v| v > 0.0));
        let scaled: Vec<f64> = peaky.iter().map(|p| p * 7.0).collect();
        let c2 = spectral_contrast(&scaled, &freqs, 200.0, 6, 0.02);
        for (a, b) in c.iter().zip(&c2) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn poly_fit_recovers_exact_polynomials() {
        let freqs = FrameGrid::default().bin_frequencies(44100);
        let y: Vec<f64> = freqs.iter().map(|f| 3.0 - 2e-3 * f + 1e-7 * f * f).collect();
        let q = poly_fit(&y, &freqs, 2);
        assert!((q[0] - 1e-7).abs() < 1e-15);
        assert!((q[1] + 2e-3).abs() < 1e-10);
        assert!((q[2] - 3.0).abs() < 1e-7);

        let y: Vec<f64> = freqs.iter().map(|f| 0.5 + 1e-4 * f).collect();
        let l = poly_fit(&y, &freqs, 1);
        assert!((l[0] - 1e-4).abs() < 1e-14 && (l[1] - 0.5).abs() < 1e-9);

        // Noisy data against the 3x3 normal equations solved by Cramer's rule.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let noisy: Vec<f64> = freqs.iter().map(|f| 1.0 + f * 1e-5 + rng.random_range(-0.5..0.5)).collect();
        let s = |k: i32| freqs.iter().map(|f| f.powi(k)).sum::<f64>();
        let t = |k: i32| freqs.iter().zip(&noisy).map(|(f, y)| f.powi(k) * y).sum::<f64>();
        let m = [[s(0), s(1), s(2)], [s(1), s(2), s(3)], [s(2), s(3), s(4)]];
        let rhs = [t(0), t(1), t(2)];
        let det = |m: [[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det(m);
        let cramer: Vec<f64> = (0..3)
            .map(|c| {
                let mut mc = m;
                (0..3).for_each(|r| mc[r][c] = rhs[r]);
                det(mc) / d
            })
            .collect();
        let q = poly_fit(&noisy, &freqs, 2);
        for (got, want) in q.iter().zip(cramer.iter().rev()) {
            assert!((got - want).abs() <= 1e-8 * want.abs().max(1e-12), "{got} vs {want}");
        }

        let z = poly_fit(&y, &freqs, 0);
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((z[0] - mean).abs() < 1e-12);
    }

    #[test]
    fn mfcc_of_silence() {
        let fx = FeatureExtractor::default();
        let m = fx.frame_feature(FeatureKind::Mfcc, &vec![0.0; 8192]).unwrap();
        for col in m.values.columns() {
            assert!((col[0] + 100.0 * 128f64.sqrt()).abs() < 1e-9);
            assert!(col.iter().skip(1).all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn chroma_of_a440_and_middle_c() {
        let fx = FeatureExtractor::default();
        // Semitones only separate cleanly in 21.5 Hz STFT bins from the fifth octave up.
        for (freq, pc) in [(440.0, 9), (1046.5, 0), (783.99, 7)] {
            let x = tone(freq, 0.5, 22050);
            for kind in [FeatureKind::ChromaStft, FeatureKind::ChromaCqt, FeatureKind::ChromaCens] {
                let mean = fx.frame_feature(kind, &x).unwrap().aggregate_mean();
                let arg = (0..12).max_by(|&a, &b| mean[a].total_cmp(&mean[b])).unwrap();
                assert_eq!(arg, pc, "{kind:?} at {freq} Hz: {mean:?}");
            }
        }
    }

    #[test]
    fn cens_columns_are_unit_or_zero() {
        let fx = FeatureExtractor::default();
        let mut x = noise(30000, 9);
        x[..4096].iter_mut().for_each(|v| *v = 0.0);
        let c = fx.frame_feature(FeatureKind::ChromaCens, &x).unwrap();
        for col in c.values.columns() {
            let n: f64 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(n.abs() < 1e-12 || (n - 1.0).abs() < 1e-12);
            assert!(col.iter().all(|&v| v >= 0.0));
        }
        let silent = fx.frame_feature(FeatureKind::ChromaCens, &vec![0.0; 8192]).unwrap();
        assert!(silent.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tonnetz_of_single_pitch_classes() {
        let mut c = [0.0; 12];
        c[0] = 1.0;
        let t = tonnetz(&c);
        let expect = [0.0, 1.0, 0.0, 1.0, 0.0, 0.5];
        for (a, b) in t.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let t = tonnetz(&[1.0 / 12.0; 12]);
        assert!(t.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn tempogram_peaks_at_envelope_period() {
        let env: Vec<f64> = (0..600).map(|i| if i % 20 == 0 { 1.0 } else { 0.0 }).collect();
        let tg = tempogram(&env, 384);
        assert_eq!(tg.dim(), (384, 600));
        let t = 300;
        assert!((tg[[0, t]] - 1.0).abs() < 1e-12);
        let best = (1..384).max_by(|&a, &b| tg[[a, t]].total_cmp(&tg[[b, t]])).unwrap();
        assert_eq!(best, 20);
        assert!(tempogram(&[0.0; 50], 384).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_envelope_is_zero_padded() {
        let tg = tempogram(&[1.0, 0.0, 1.0], 8);
        assert_eq!(tg.dim(), (8, 3));
        assert!(tg.slice(ndarray::s![3.., ..]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn superflux_suppresses_vibrato() {
        // A 20 dB peak that wobbles by one mel band every frame.
        let (bands, frames) = (40, 30);
        let mut s = Array2::from_elem((bands, frames), -60.0);
        for t in 0..frames {
            let b = 20 + (t % 2);
            s[[b, t]] = -40.0;
        }
        let sf: f64 = superflux(s.view()).sum();
        let mf: f64 = mel_flux(s.view()).sum();
        assert!(mf > 0.0);
        assert!(sf < 0.5 * mf, "superflux {sf} vs mel flux {mf}");
    }

    #[test]
    fn spectral_flux_of_a_step() {
        let mut m = Array2::zeros((4, 3));
        m[[1, 1]] = 3.0;
        m[[2, 1]] = 4.0;
        let f = spectral_flux(m.view());
        assert_eq!(f.to_vec(), vec![0.0, 5.0, 0.0]);
    }

    #[test]
    fn silent_subbands_report_midpoints() {
        let freqs = FrameGrid::default().bin_frequencies(44100);
        let c = subband_centroids(&vec![0.0; 1025], &freqs, 4, 22050.0);
        assert_eq!(c, vec![2756.25, 8268.75, 13781.25, 19293.75]);
        let fx = FeatureExtractor::default();
        let tonal = fx.frame_feature(FeatureKind::SubbandCentroids, &tone(100.0 * BIN_HZ, 0.5, 22050)).unwrap();
        for col in interior(&tonal) {
            assert!((col[0] - 100.0 * BIN_HZ).abs() < 1e-6);
        }
    }

    #[test]
    fn log_filterbank_is_log_of_energies() {
        let fx = FeatureExtractor::default();
        let x = noise(16384, 4);
        let e = fx.frame_feature(FeatureKind::FilterbankEnergies, &x).unwrap();
        let l = fx.frame_feature(FeatureKind::LogFilterbankEnergies, &x).unwrap();
        assert_eq!(e.values.dim(), (26, 33));
        for (a, b) in e.values.iter().zip(l.values.iter()) {
            assert!((a.max(FLOOR).ln() - b).abs() < 1e-12);
        }
    }

    #[test]
    fn speech_filterbank_rows_peak_at_one() {
        let fb = speech_filterbank(26, 2048, 44100).unwrap();
        let dense = fb.to_dense();
        for row in dense.rows() {
            let max = row.iter().cloned().fold(0.0, f64::max);
            assert!((max - 1.0).abs() < 1e-12);
        }
        assert!(speech_filterbank(400, 2048, 44100).is_err());
    }

    #[test]
    fn gain_covariance() {
        let fx = FeatureExtractor::default();
        let x = noise(22050, 11);
        let x2: Vec<f64> = x.iter().map(|v| v * 2.0).collect();
        let a = fx.extract_samples(&x).unwrap().values;
        let b = fx.extract_samples(&x2).unwrap().values;
        let layout = fx.layout();
        let at = |name: &str| layout.offset_of(name).unwrap();
        assert!((b[at("rms")] - 2.0 * a[at("rms")]).abs() < 1e-12);
        for name in ["zero_crossing", "spectral_centroid", "spectral_bandwidth", "spectral_flatness", "spectral_rolloff"] {
            assert!((a[at(name)] - b[at(name)]).abs() < 1e-6 * a[at(name)].abs().max(1.0), "{name}");
        }
        for i in 0..12 {
            for name in ["chroma_stft", "chroma_cqt", "chroma_cens"] {
                assert!((a[at(name) + i] - b[at(name) + i]).abs() < 1e-9, "{name}[{i}]");
            }
        }
        let shift = 10.0 * 4f64.log10() * 128f64.sqrt();
        let m = at("mfcc");
        assert!((b[m] - a[m] - shift).abs() < 1e-3, "{} vs {}", b[m] - a[m], shift);
        for i in 1..13 {
            assert!((b[m + i] - a[m + i]).abs() < 1e-3);
        }
        let con = at("spectral_contrast");
        for i in 0..7 {
            assert!((a[con + i] - b[con + i]).abs() < 1e-9, "contrast[{i}]");
        }
        let fb = at("filterbank_energies");
        for i in 0..26 {
            assert!((b[fb + i] - 4.0 * a[fb + i]).abs() < 1e-9 * a[fb + i]);
        }
        let mel = at("mel_spectrogram");
        for i in 0..128 {
            assert!((b[mel + i] - 4.0 * a[mel + i]).abs() < 1e-9 * a[mel + i].max(1e-12));
        }
    }

    #[test]
    fn identical_segments_give_identical_vectors() {
        let fx = FeatureExtractor::default();
        let x = noise(20000, 77);
        let a = fx.extract_samples(&x).unwrap().values;
        let b = FeatureExtractor::default().extract_samples(&x.clone()).unwrap().values;
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn aggregate_mean_small_cases() {
        let m = ndarray::arr2(&[[1.0, 3.0], [2.0, 2.0]]);
        assert_eq!(aggregate_mean(m.view()), vec![2.0, 2.0]);
        let single = ndarray::arr2(&[[5.0], [-1.0]]);
        assert_eq!(aggregate_mean(single.view()), vec![5.0, -1.0]);
    }

    #[test]
    fn silence_extracts_finite_vector() {
        let fx = FeatureExtractor::default();
        let v = fx.extract_samples(&vec![0.0; 22050]).unwrap().values;
        assert_eq!(v.len(), 644);
        assert!(v.iter().all(|x| x.is_finite()));
        assert!(matches!(
            fx.extract_samples(&[]),
            Err(Error::Feature { .. })
        ));
    }

    #[test]
    fn invalid_configs() {
        let bad = FeatureConfig { n_mfcc: 200, ..Default::default() };
        assert!(FeatureExtractor::new(bad).is_err());
        let bad = FeatureConfig { contrast_fmin: 2000.0, ..Default::default() };
        assert!(FeatureExtractor::new(bad).is_err());
        let bad = FeatureConfig { rolloff_fraction: 1.5, ..Default::default() };
        assert!(FeatureExtractor::new(bad).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn features_stay_in_range(seed in 0u64..1000, len in 1usize..12000, amp in 0.0f64..1.0) {
            let fx = FeatureExtractor::default();
            let x: Vec<f64> = noise(len, seed).into_iter().map(|v| v * amp).collect();
            let v = fx.extract_samples(&x).unwrap().values;
            prop_assert_eq!(v.len(), 644);
            prop_assert!(v.iter().all(|x| x.is_finite()));
            let l = fx.layout();
            let flat = v[l.offset_of("spectral_flatness").unwrap()];
            prop_assert!((0.0..=1.0).contains(&flat));
            let cen = v[l.offset_of("spectral_centroid").unwrap()];
            prop_assert!((0.0..=22050.0).contains(&cen));
            let con = l.offset_of("spectral_contrast").unwrap();
            prop_assert!(v[con..con + 7].iter().all(|&c| c >= -1e-12));
            let zc = v[l.offset_of("zero_crossing").unwrap()];
            prop_assert!((0.0..=1.0).contains(&zc));
        }

        #[test]
        fn superflux_never_exceeds_mel_flux(vals in proptest::collection::vec(-80.0f64..0.0, 10 * 6)) {
            let m = Array2::from_shape_vec((10, 6), vals).unwrap();
            let sf = superflux(m.view());
            let mf = mel_flux(m.view());
            for t in 0..6 {
                prop_assert!(sf[t] <= mf[t] + 1e-12);
            }
        }
    }
}
