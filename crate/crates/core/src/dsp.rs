//! Time-frequency machinery shared by segmentation and feature extraction.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor added to power before taking decibels.
pub const DB_EPSILON: f64 = 1e-10;

pub const TEMPO_MIN_BPM: f64 = 30.0;
pub const TEMPO_MAX_BPM: f64 = 300.0;
pub const TEMPO_FALLBACK_BPM: f64 = 120.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Hann,
    Rectangular,
}

impl WindowKind {
    /// Periodic window of length `n` (the DFT-even form).
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            WindowKind::Rectangular => vec![1.0; n],
            WindowKind::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameGrid {
    pub frame_length: usize,
    pub hop_length: usize,
    pub window: WindowKind,
    pub center: bool,
}

impl Default for FrameGrid {
    fn default() -> Self {
        FrameGrid {
            frame_length: 2048,
            hop_length: 512,
            window: WindowKind::Hann,
            center: true,
        }
    }
}

impl FrameGrid {
    pub fn validate(&self) -> Result<()> {
        if self.frame_length == 0 || self.hop_length == 0 || self.hop_length > self.frame_length {
            return Err(Error::Config(format!(
                "frame grid needs 0 < hop ({}) <= frame ({})",
                self.hop_length, self.frame_length
            )));
        }
        Ok(())
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        if self.center {
            1 + n_samples / self.hop_length
        } else if n_samples <= self.frame_length {
            1
        } else {
            1 + (n_samples - self.frame_length) / self.hop_length
        }
    }

    pub fn n_freq_bins(&self) -> usize {
        self.frame_length / 2 + 1
    }

    pub fn frame_rate(&self, sample_rate: u32) -> f64 {
        sample_rate as f64 / self.hop_length as f64
    }

    pub fn bin_frequencies(&self, sample_rate: u32) -> Vec<f64> {
        (0..self.n_freq_bins())
            .map(|k| k as f64 * sample_rate as f64 / self.frame_length as f64)
            .collect()
    }
}

/// Index into `0..n` under numpy-style "reflect" padding (edge sample not repeated).
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Splits a signal into (unwindowed) frames, one frame per row.
pub fn frame_signal(samples: &[f64], grid: &FrameGrid) -> Array2<f64> {
    assert!(!samples.is_empty(), "frame_signal needs a non-empty signal");
    let n = samples.len();
    let n_frames = grid.n_frames(n);
    let fl = grid.frame_length;
    let mut frames = Array2::zeros((n_frames, fl));
    let offset = if grid.center { (fl / 2) as isize } else { 0 };
    for (t, mut row) in frames.axis_iter_mut(Axis(0)).enumerate() {
        let start = (t * grid.hop_length) as isize - offset;
        for (j, v) in row.iter_mut().enumerate() {
            let idx = start + j as isize;
            *v = if grid.center {
                samples[reflect_index(idx, n)]
            } else if (idx as usize) < n {
                samples[idx as usize]
            } else {
                0.0
            };
        }
    }
    frames
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumKind {
    Magnitude,
    Power,
}

/// `bins` is `[n_freq_bins x n_frames]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub bins: Array2<f64>,
    pub kind: SpectrumKind,
    pub bin_frequencies: Vec<f64>,
    pub grid: FrameGrid,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn n_bins(&self) -> usize {
        self.bins.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.bins.ncols()
    }
}

/// Reusable STFT plan for one frame grid.
#[derive(Clone)]
pub struct StftPlan {
    grid: FrameGrid,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftPlan").field("grid", &self.grid).finish()
    }
}

impl StftPlan {
    pub fn new(grid: FrameGrid) -> Result<Self> {
        grid.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(grid.frame_length);
        Ok(StftPlan {
            window: grid.window.coefficients(grid.frame_length),
            grid,
            fft,
        })
    }

    pub fn grid(&self) -> &FrameGrid {
        &self.grid
    }

    /// Magnitude spectrogram of already-framed signal (`frames` rows are frames).
    pub fn magnitude_of_frames(&self, frames: ArrayView2<f64>, sample_rate: u32) -> Spectrogram {
        let fl = self.grid.frame_length;
        let n_bins = self.grid.n_freq_bins();
        let mut bins = Array2::zeros((n_bins, frames.nrows()));
        let mut buf = vec![Complex::new(0.0, 0.0); fl];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for (t, frame) in frames.axis_iter(Axis(0)).enumerate() {
            for ((b, &x), &w) in buf.iter_mut().zip(frame.iter()).zip(&self.window) {
                *b = Complex::new(x * w, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..n_bins {
                bins[[k, t]] = buf[k].norm();
            }
        }
        Spectrogram {
            bins,
            kind: SpectrumKind::Magnitude,
            bin_frequencies: self.grid.bin_frequencies(sample_rate),
            grid: self.grid,
            sample_rate,
        }
    }

    pub fn magnitude(&self, samples: &[f64], sample_rate: u32) -> Spectrogram {
        let frames = frame_signal(samples, &self.grid);
        self.magnitude_of_frames(frames.view(), sample_rate)
    }
}

/// Magnitude STFT.
pub fn stft(samples: &[f64], sample_rate: u32, grid: &FrameGrid) -> Result<Spectrogram> {
    Ok(StftPlan::new(*grid)?.magnitude(samples, sample_rate))
}

/// Elementwise square of a magnitude spectrogram.
pub fn power(spec: &Spectrogram) -> Spectrogram {
    debug_assert_eq!(spec.kind, SpectrumKind::Magnitude);
    Spectrogram {
        bins: spec.bins.mapv(|m| m * m),
        kind: SpectrumKind::Power,
        bin_frequencies: spec.bin_frequencies.clone(),
        grid: spec.grid,
        sample_rate: spec.sample_rate,
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

pub fn power_to_db(p: f64) -> f64 {
    10.0 * (p + DB_EPSILON).log10()
}

/// Sparse filter matrix: each row is a contiguous run of weights starting at `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    rows: Vec<(usize, Vec<f64>)>,
    n_inputs: usize,
    centers: Vec<f64>,
}

impl FilterBank {
    pub fn from_dense(dense: Vec<Vec<f64>>, n_inputs: usize, centers: Vec<f64>) -> Self {
        let rows = dense
            .into_iter()
            .map(|row| {
                let first = row.iter().position(|&w| w != 0.0);
                let last = row.iter().rposition(|&w| w != 0.0);
                match (first, last) {
                    (Some(a), Some(b)) => (a, row[a..=b].to_vec()),
                    _ => (0, Vec::new()),
                }
            })
            .collect();
        FilterBank {
            rows,
            n_inputs,
            centers,
        }
    }

    pub fn n_filters(&self) -> usize {
        self.rows.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    /// Center frequency of each filter in Hz.
    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn weight(&self, filter: usize, input: usize) -> f64 {
        let (start, w) = &self.rows[filter];
        if input < *start {
            0.0
        } else {
            w.get(input - start).copied().unwrap_or(0.0)
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.n_filters(), self.n_inputs), |(i, j)| self.weight(i, j))
    }

    /// Applies the bank to one spectrum column.
    pub fn apply_vector(&self, column: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|(start, w)| w.iter().zip(&column[*start..]).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Applies the bank to `[n_inputs x n_frames]`, giving `[n_filters x n_frames]`.
    pub fn apply(&self, spec: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(spec.nrows(), self.n_inputs, "filter bank input size mismatch");
        let mut out = Array2::zeros((self.n_filters(), spec.ncols()));
        for (i, (start, w)) in self.rows.iter().enumerate() {
            for (k, &wk) in w.iter().enumerate() {
                let src = spec.row(start + k);
                let mut dst = out.row_mut(i);
                dst.scaled_add(wk, &src);
            }
        }
        out
    }
}

/// Triangular mel filters with unit area in Hz, peaks at mel-uniform centers.
pub fn mel_filterbank(n_mels: usize, n_fft_bins: usize, sample_rate: u32, f_min: f64, f_max: f64) -> Result<FilterBank> {
    let nyquist = sample_rate as f64 / 2.0;
    if n_mels == 0 || n_fft_bins < 2 || !(0.0 <= f_min && f_min < f_max && f_max <= nyquist) {
        return Err(Error::Construction(format!(
            "mel filterbank needs n_mels >= 1 and 0 <= f_min < f_max <= {nyquist} (got {n_mels}, {f_min}, {f_max})"
        )));
    }
    let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = nyquist / (n_fft_bins - 1) as f64;
    let mut dense = Vec::with_capacity(n_mels);
    for m in 0..n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let norm = 2.0 / (hi - lo);
        let row: Vec<f64> = (0..n_fft_bins)
            .map(|k| {
                let f = k as f64 * bin_hz;
                let up = (f - lo) / (mid - lo);
                let down = (hi - f) / (hi - mid);
                up.min(down).max(0.0) * norm
            })
            .collect();
        if row.iter().all(|&w| w <= 0.0) {
            return Err(Error::Construction(format!(
                "mel band {m} ({lo:.2}-{hi:.2} Hz) covers no FFT bin; use fewer mels or a longer frame"
            )));
        }
        dense.push(row);
    }
    Ok(FilterBank::from_dense(dense, n_fft_bins, edges[1..=n_mels].to_vec()))
}

/// Precomputed DCT-II basis.
#[derive(Debug, Clone)]
pub struct DctPlan {
    n_in: usize,
    basis: Vec<Vec<f64>>,
}

impl DctPlan {
    pub fn new(n_in: usize, n_out: usize, orthonormal: bool) -> Self {
        assert!(n_in > 0 && n_out <= n_in, "dct needs 0 < n_out <= n_in");
        let n = n_in as f64;
        let basis = (0..n_out)
            .map(|k| {
                let scale = match (orthonormal, k) {
                    (true, 0) => (1.0 / n).sqrt(),
                    (true, _) => (2.0 / n).sqrt(),
                    (false, _) => 2.0,
                };
                (0..n_in)
                    .map(|i| scale * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos())
                    .collect()
            })
            .collect();
        DctPlan { n_in, basis }
    }

    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), self.n_in);
        self.basis
            .iter()
            .map(|row| row.iter().zip(input).map(|(a, b)| a * b).sum())
            .collect()
    }
}

pub fn dct_ii(input: &[f64], n_out: usize, orthonormal: bool) -> Vec<f64> {
    DctPlan::new(input.len(), n_out, orthonormal).apply(input)
}

/// Inverse of the orthonormal DCT-II (an orthonormal DCT-III).
pub fn idct_ii_orthonormal(coeffs: &[f64]) -> Vec<f64> {
    let n = coeffs.len() as f64;
    (0..coeffs.len())
        .map(|i| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, &c)| {
                    let s = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
                    s * c * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos()
                })
                .sum()
        })
        .collect()
}

/// Projection of linear STFT bins onto geometrically spaced centers `f_min * 2^(k / bpo)`.
///
/// Each center gets a triangular kernel whose half-width is the larger of the
/// log-bin spacing and the STFT bin spacing, so low centers interpolate between
/// neighbouring STFT bins instead of falling between them.
pub fn log_freq_filterbank(
    n_fft_bins: usize,
    sample_rate: u32,
    bins_per_octave: usize,
    f_min: f64,
    n_bins: usize,
) -> Result<FilterBank> {
    let nyquist = sample_rate as f64 / 2.0;
    if f_min < 20.0 || bins_per_octave == 0 || n_bins == 0 {
        return Err(Error::Construction(format!(
            "log-frequency bins need f_min >= 20 Hz and positive sizes (f_min {f_min})"
        )));
    }
    let step = 2f64.powf(1.0 / bins_per_octave as f64);
    let centers: Vec<f64> = (0..n_bins)
        .map(|k| f_min * 2f64.powf(k as f64 / bins_per_octave as f64))
        .collect();
    let top = centers[n_bins - 1];
    if top * step >= nyquist {
        return Err(Error::Construction(format!(
            "{n_bins} log-frequency bins from {f_min} Hz reach {top:.1} Hz, beyond Nyquist coverage ({nyquist} Hz)"
        )));
    }
    let bin_hz = nyquist / (n_fft_bins - 1) as f64;
    let dense = centers
        .iter()
        .map(|&c| {
            let half = (c * (step - 1.0)).max(bin_hz);
            (0..n_fft_bins)
                .map(|k| (1.0 - (k as f64 * bin_hz - c).abs() / half).max(0.0))
                .collect()
        })
        .collect();
    Ok(FilterBank::from_dense(dense, n_fft_bins, centers))
}

pub fn log_freq_spectrogram(spec: &Spectrogram, bins_per_octave: usize, f_min: f64, n_bins: usize) -> Result<Spectrogram> {
    if spec.kind != SpectrumKind::Power {
        return Err(Error::Input("log-frequency projection expects a power spectrogram".into()));
    }
    let bank = log_freq_filterbank(spec.n_bins(), spec.sample_rate, bins_per_octave, f_min, n_bins)?;
    Ok(Spectrogram {
        bins: bank.apply(spec.bins.view()),
        kind: SpectrumKind::Power,
        bin_frequencies: bank.centers().to_vec(),
        grid: spec.grid,
        sample_rate: spec.sample_rate,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnsetEnvelope {
    pub strength: Vec<f64>,
    pub frame_rate: f64,
}

/// Mean over bands of the half-wave-rectified first difference of a dB spectrogram
/// (`[n_bands x n_frames]`). The first frame is zero.
pub fn onset_strength(spec_db: ArrayView2<f64>, frame_rate: f64) -> OnsetEnvelope {
    let (n_bands, n_frames) = spec_db.dim();
    let mut strength = vec![0.0; n_frames];
    if n_bands > 0 {
        for t in 1..n_frames {
            let rise: f64 = (0..n_bands)
                .map(|m| (spec_db[[m, t]] - spec_db[[m, t - 1]]).max(0.0))
                .sum();
            strength[t] = rise / n_bands as f64;
        }
    }
    OnsetEnvelope {
        strength,
        frame_rate,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TempoEstimate {
    pub bpm: f64,
    /// Autocorrelation lag (frames) that produced the estimate; `None` for the fallback.
    pub lag: Option<usize>,
    pub defaulted: bool,
}

impl TempoEstimate {
    pub fn fallback() -> Self {
        TempoEstimate {
            bpm: TEMPO_FALLBACK_BPM,
            lag: None,
            defaulted: true,
        }
    }
}

/// A sub-multiple lag of the autocorrelation peak replaces it when its correlation
/// reaches this fraction of the peak.
pub const PERIOD_MULTIPLE_RATIO: f64 = 0.5;

/// Tempo from the autocorrelation of the mean-removed envelope over lags spanning 30-300 BPM.
///
/// The argmax lag is then checked against its integer sub-multiples (1/4, 1/3, 1/2, each
/// searched within +-1 lag): when the beat period is not a whole number of frames the
/// peak tends to land on a period multiple, where the rounding errors cancel. The
/// shortest sub-multiple reaching [`PERIOD_MULTIPLE_RATIO`] of the peak wins.
pub fn estimate_tempo(envelope: &OnsetEnvelope) -> TempoEstimate {
    let e = &envelope.strength;
    let fr = envelope.frame_rate;
    if e.len() < 2 || e.iter().all(|&v| v == 0.0) || !fr.is_finite() || fr <= 0.0 {
        return TempoEstimate::fallback();
    }
    let mean = e.iter().sum::<f64>() / e.len() as f64;
    let centered: Vec<f64> = e.iter().map(|v| v - mean).collect();
    let min_lag = (60.0 * fr / TEMPO_MAX_BPM).ceil().max(1.0) as usize;
    let max_lag = ((60.0 * fr / TEMPO_MIN_BPM).floor() as usize).min(e.len() - 1);
    if min_lag > max_lag {
        return TempoEstimate::fallback();
    }
    let acf: Vec<f64> = (min_lag..=max_lag)
        .map(|lag| {
            centered[..e.len() - lag]
                .iter()
                .zip(&centered[lag..])
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect();
    let r = |lag: usize| acf[lag - min_lag];

    let mut best: Option<(usize, f64)> = None;
    for lag in min_lag..=max_lag {
        if r(lag) > 0.0 && best.is_none_or(|(_, br)| r(lag) > br) {
            best = Some((lag, r(lag)));
        }
    }
    let Some((peak_lag, peak)) = best else {
        return TempoEstimate::fallback();
    };

    let mut lag = peak_lag;
    for k in [4usize, 3, 2] {
        let base = peak_lag as f64 / k as f64;
        let lo = (base.floor() as usize).saturating_sub(1).max(min_lag);
        let hi = (base.ceil() as usize + 1).min(max_lag);
        let candidate = (lo..=hi)
            .filter(|&l| l < peak_lag)
            .fold(None, |acc: Option<(usize, f64)>, l| match acc {
                Some((_, v)) if v >= r(l) => acc,
                _ => Some((l, r(l))),
            });
        if let Some((l, v)) = candidate {
            if v >= PERIOD_MULTIPLE_RATIO * peak {
                lag = l;
                break;
            }
        }
    }
    TempoEstimate {
        bpm: 60.0 * fr / lag as f64,
        lag: Some(lag),
        defaulted: false,
    }
}
