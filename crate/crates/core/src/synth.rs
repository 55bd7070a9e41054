//! Deterministic synthetic engine recordings: harmonics of the four-stroke
//! firing frequency plus coloured noise, under a slow pulsed envelope, with
//! frequency wobble.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio_io::{write_manifest, write_wav_pcm16, RecordingMeta, Rpm, Waveform};
use crate::classifiers::derive_seed;
use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 44_100;
const PEAK: f64 = 0.9;
/// Components of the slow frequency wobble.
const WOBBLE_TERMS: usize = 3;
/// Exponent shaping the modulation into short pulses with clear attacks.
const PULSE_SHARPNESS: i32 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineProfile {
    /// Manufacturer label written to the manifest.
    pub name: String,
    #[serde(default)]
    pub model: String,
    #[serde(default = "default_cylinders")]
    pub cylinders: u32,
    /// Amplitudes of harmonics 1..=H of the firing frequency.
    pub harmonic_weights: Vec<f64>,
    /// Noise power spectrum falls as f^-exponent.
    pub noise_color_exponent: f64,
    /// Envelope dips to `1 - am_depth` between pulses.
    pub am_depth: f64,
    /// Pulses per second.
    pub am_rate: f64,
    /// Peak relative frequency deviation, at most 0.05.
    pub jitter: f64,
}

fn default_cylinders() -> u32 {
    4
}

impl EngineProfile {
    pub fn validate(&self) -> Result<()> {
        let w = &self.harmonic_weights;
        let bad = if w.is_empty() || w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().all(|&v| v == 0.0) {
            Some("harmonic_weights must be finite, non-negative and not all zero")
        } else if !(0.0..=0.05).contains(&self.jitter) {
            Some("jitter must lie in [0, 0.05]")
        } else if self.cylinders == 0 {
            Some("cylinders must be positive")
        } else if !(0.0..=1.0).contains(&self.am_depth) || !(self.am_rate >= 0.0 && self.am_rate.is_finite()) {
            Some("am_depth must lie in [0, 1] and am_rate must be finite and non-negative")
        } else if !self.noise_color_exponent.is_finite() {
            Some("noise_color_exponent must be finite")
        } else {
            None
        };
        match bad {
            Some(msg) => Err(Error::Config(format!("profile `{}`: {msg}", self.name))),
            None => Ok(()),
        }
    }

    /// Firing frequency of a four-stroke engine.
    pub fn firing_frequency(&self, rpm: f64) -> f64 {
        rpm / 60.0 * self.cylinders as f64 / 2.0
    }

    /// Five profiles with distinct harmonic envelopes, noise colours and modulation.
    pub fn defaults() -> Vec<EngineProfile> {
        let p = |name: &str, model: &str, w: &[f64], noise: f64, depth: f64, rate: f64, jitter: f64| EngineProfile {
            name: name.into(),
            model: model.into(),
            cylinders: 4,
            harmonic_weights: w.to_vec(),
            noise_color_exponent: noise,
            am_depth: depth,
            am_rate: rate,
            jitter,
        };
        vec![
            p("Citroen", "C3", &[1.0, 0.6, 0.3, 0.15, 0.1, 0.05], 1.0, 0.6, 0.62, 0.010),
            p("Fiat", "Punto", &[0.4, 1.0, 0.5, 0.3, 0.2, 0.1], 0.5, 0.5, 0.70, 0.015),
            p("Ford", "Fiesta", &[0.3, 0.3, 1.0, 0.2, 0.6, 0.1], 1.5, 0.7, 0.58, 0.010),
            p("Opel", "Corsa", &[0.8, 0.2, 0.2, 0.9, 0.1, 0.5], 2.0, 0.5, 0.75, 0.020),
            p("Peugeot", "208", &[0.5, 0.5, 0.2, 0.2, 0.2, 0.2, 0.7, 0.7], 0.0, 0.6, 0.66, 0.010),
        ]
    }
}

/// Renders `duration` seconds at `rpm`. `snr_db = inf` disables noise. The SNR is
/// set before the envelope is applied, so it holds at every instant.
pub fn synth_engine(profile: &EngineProfile, rpm: f64, duration: f64, snr_db: f64, seed: u64) -> Result<Waveform> {
    profile.validate()?;
    if !(rpm > 0.0 && rpm.is_finite()) {
        return Err(Error::Config(format!("rpm must be positive, got {rpm}")));
    }
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::Config(format!("duration must be positive, got {duration}")));
    }
    if snr_db.is_nan() {
        return Err(Error::Config("snr_db is NaN".into()));
    }
    let sr = SAMPLE_RATE as f64;
    let n = (duration * sr).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0 = profile.firing_frequency(rpm);
    let nyquist = sr / 2.0;

    let phases: Vec<f64> = profile.harmonic_weights.iter().map(|_| rng.random_range(0.0..TAU)).collect();
    let wobble: Vec<(f64, f64)> = (0..WOBBLE_TERMS)
        .map(|_| (rng.random_range(0.3..3.0), rng.random_range(0.0..TAU)))
        .collect();
    let am_phase = rng.random_range(0.0..TAU);

    // Harmonics that could cross Nyquist at peak deviation are dropped.
    let active: Vec<(usize, f64)> = profile
        .harmonic_weights
        .iter()
        .enumerate()
        .filter(|&(h, &w)| w > 0.0 && (h + 1) as f64 * f0 * (1.0 + profile.jitter) < nyquist)
        .map(|(h, &w)| (h + 1, w))
        .collect();

    let mut signal = Vec::with_capacity(n);
    let mut theta = 0.0f64;
    for i in 0..n {
        let t = i as f64 / sr;
        let w = wobble.iter().map(|&(f, p)| (TAU * f * t + p).sin()).sum::<f64>() / WOBBLE_TERMS as f64;
        let v: f64 = active
            .iter()
            .map(|&(h, weight)| weight * (h as f64 * theta + phases[h - 1]).sin())
            .sum();
        signal.push(v);
        theta = (theta + TAU * f0 * (1.0 + profile.jitter * w) / sr) % (TAU * 64.0);
    }

    if snr_db.is_finite() {
        let noise = coloured_noise(n, profile.noise_color_exponent, &mut rng);
        let ps = signal.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let pn = noise.iter().map(|v| v * v).sum::<f64>() / n as f64;
        if pn > 0.0 {
            let g = (ps / pn / 10f64.powf(snr_db / 10.0)).sqrt();
            signal.iter_mut().zip(&noise).for_each(|(s, e)| *s += g * e);
        }
    }
    for (i, v) in signal.iter_mut().enumerate() {
        *v *= envelope(profile, i as f64 / sr, am_phase);
    }
    let peak = signal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        signal.iter_mut().for_each(|v| *v *= PEAK / peak);
    }
    Ok(Waveform::new(signal, SAMPLE_RATE, format!("{}@{rpm}", profile.name)))
}

/// Slow pulsed amplitude envelope in [1 - depth, 1], shared by harmonics and noise.
pub fn envelope(profile: &EngineProfile, t: f64, phase: f64) -> f64 {
    let pulse = (0.5 + 0.5 * (TAU * profile.am_rate * t + phase).cos()).powi(PULSE_SHARPNESS);
    1.0 - profile.am_depth + profile.am_depth * pulse
}

/// Gaussian noise whose power spectrum falls as f^-exponent (zero mean).
pub fn coloured_noise(n: usize, exponent: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n).map(|_| Complex::new(rng.sample(StandardNormal), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[0] = Complex::new(0.0, 0.0);
    for (k, c) in buf.iter_mut().enumerate().skip(1) {
        let f = k.min(n - k) as f64;
        *c *= f.powf(-exponent / 2.0);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub profiles: Vec<EngineProfile>,
    pub recordings_per_profile: usize,
    pub rpm_levels: Vec<Rpm>,
    pub duration_secs: f64,
    pub snr_db: f64,
    pub seed: u64,
    /// Per-recording relative spread of harmonic weights.
    pub weight_spread: f64,
    /// Per-recording relative spread of the true engine speed around its level.
    pub rpm_spread: f64,
    /// Per-recording relative spread of the modulation rate.
    pub am_rate_spread: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            profiles: EngineProfile::defaults(),
            recordings_per_profile: 4,
            rpm_levels: Rpm::LEVELS.to_vec(),
            duration_secs: 15.0,
            snr_db: 20.0,
            seed: 0,
            weight_spread: 0.15,
            rpm_spread: 0.02,
            am_rate_spread: 0.10,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.profiles.len() < 2 {
            return Err(Error::Config("corpus needs at least 2 profiles".into()));
        }
        if self.recordings_per_profile < 2 {
            return Err(Error::Config("recordings_per_profile must be at least 2".into()));
        }
        if self.rpm_levels.is_empty() {
            return Err(Error::Config("rpm_levels is empty".into()));
        }
        if !(self.duration_secs > 0.0 && self.duration_secs.is_finite()) {
            return Err(Error::Config("duration_secs must be positive".into()));
        }
        for (name, v) in [
            ("weight_spread", self.weight_spread),
            ("rpm_spread", self.rpm_spread),
            ("am_rate_spread", self.am_rate_spread),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        let mut names: Vec<&str> = self.profiles.iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("profile names must be distinct".into()));
        }
        self.profiles.iter().try_for_each(EngineProfile::validate)
    }
}

/// One planned recording of the corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedRecording {
    pub profile: usize,
    pub index: usize,
    pub rpm: Rpm,
    pub seed: u64,
    pub file_name: String,
}

/// Recordings in manifest order: profile, then rpm level, then index.
pub fn plan_corpus(spec: &CorpusSpec) -> Vec<PlannedRecording> {
    let mut out = Vec::new();
    for (p, profile) in spec.profiles.iter().enumerate() {
        for &rpm in &spec.rpm_levels {
            for index in 0..spec.recordings_per_profile {
                let seed = derive_seed(derive_seed(derive_seed(spec.seed, p as u64), index as u64), rpm.get() as u64);
                out.push(PlannedRecording {
                    profile: p,
                    index,
                    rpm,
                    seed,
                    file_name: format!("{}_{}_{:03}.wav", slug(&profile.name), rpm.get(), index),
                });
            }
        }
    }
    out
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

/// Waveform of one planned recording, with variation drawn from its seed.
pub fn render(spec: &CorpusSpec, plan: &PlannedRecording) -> Result<Waveform> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(plan.seed, u64::MAX));
    let mut spread = |s: f64| if s > 0.0 { 1.0 + rng.random_range(-s..s) } else { 1.0 };
    let base = &spec.profiles[plan.profile];
    let mut profile = base.clone();
    profile
        .harmonic_weights
        .iter_mut()
        .for_each(|w| *w *= spread(spec.weight_spread));
    let rpm = plan.rpm.get() as f64 * spread(spec.rpm_spread);
    profile.am_rate *= spread(spec.am_rate_spread);
    let mut wave = synth_engine(&profile, rpm, spec.duration_secs, spec.snr_db, plan.seed)?;
    wave.source_id = plan.file_name.clone();
    Ok(wave)
}

/// Writes every recording plus `manifest.csv` into `out_dir`; returns the manifest path.
pub fn build_corpus(spec: &CorpusSpec, out_dir: &Path) -> Result<PathBuf> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let plan = plan_corpus(spec);
    plan.par_iter().try_for_each(|rec| {
        let wave = render(spec, rec)?;
        write_wav_pcm16(out_dir.join(&rec.file_name), &wave)
    })?;
    let rows: Vec<RecordingMeta> = plan
        .iter()
        .map(|rec| {
            let p = &spec.profiles[rec.profile];
            RecordingMeta {
                path: out_dir.join(&rec.file_name),
                manufacturer: p.name.clone(),
                model: p.model.clone(),
                rpm: rec.rpm,
            }
        })
        .collect();
    let manifest = out_dir.join("manifest.csv");
    write_manifest(&manifest, &rows, out_dir)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_io::load_manifest;

    fn pure(weights: &[f64]) -> EngineProfile {
        EngineProfile {
            name: "P".into(),
            model: String::new(),
            cylinders: 4,
            harmonic_weights: weights.to_vec(),
            noise_color_exponent: 0.0,
            am_depth: 0.0,
            am_rate: 0.0,
            jitter: 0.0,
        }
    }

    /// |X(f)| by direct correlation at one frequency.
    fn dft_mag(x: &[f64], f: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in x.iter().enumerate() {
            let a = TAU * f * i as f64 / SAMPLE_RATE as f64;
            re += v * a.cos();
            im -= v * a.sin();
        }
        (re * re + im * im).sqrt()
    }

    #[test]
    fn firing_frequency_formula() {
        let p = pure(&[1.0]);
        assert!((p.firing_frequency(2000.0) - 200.0 / 3.0).abs() < 1e-12);
        assert!((p.firing_frequency(1000.0) - 100.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn clean_tone_peaks_at_firing_frequency() {
        let x = synth_engine(&pure(&[1.0]), 2000.0, 1.0, f64::INFINITY, 3).unwrap().samples;
        let bin = SAMPLE_RATE as f64 / x.len() as f64;
        let peak = (1..200)
            .map(|k| k as f64 * bin)
            .max_by(|a, b| dft_mag(&x, *a).total_cmp(&dft_mag(&x, *b)))
            .unwrap();
        assert!((peak - 200.0 / 3.0).abs() <= bin, "{peak}");
        let amp = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((amp - PEAK).abs() < 1e-12);
    }

    #[test]
    fn harmonics_follow_weights() {
        let x = synth_engine(&pure(&[0.2, 1.0, 0.5]), 1500.0, 2.0, f64::INFINITY, 1).unwrap().samples;
        let f0 = 50.0;
        let m: Vec<f64> = (1..=3).map(|h| dft_mag(&x, h as f64 * f0)).collect();
        assert!((m[0] / m[1] - 0.2).abs() < 1e-3 && (m[2] / m[1] - 0.5).abs() < 1e-3, "{m:?}");
    }

    #[test]
    fn harmonics_above_nyquist_are_dropped() {
        let mut w = vec![0.0; 400];
        w[0] = 1.0;
        w[399] = 1.0;
        let x = synth_engine(&pure(&w), 2000.0, 0.5, f64::INFINITY, 0).unwrap().samples;
        assert!(x.iter().all(|v| v.is_finite()));
        let f0 = 200.0 / 3.0;
        assert!(dft_mag(&x, f0) > 1000.0);
    }

    #[test]
    fn snr_sets_noise_power() {
        let p = EngineProfile {
            noise_color_exponent: 1.0,
            ..pure(&[1.0, 0.5])
        };
        let clean = synth_engine(&p, 2000.0, 2.0, f64::INFINITY, 5).unwrap().samples;
        let noisy = synth_engine(&p, 2000.0, 2.0, 10.0, 5).unwrap().samples;
        // Undo the common peak normalisation with the least-squares gain on the clean part.
        let g = noisy.iter().zip(&clean).map(|(a, b)| a * b).sum::<f64>() / clean.iter().map(|b| b * b).sum::<f64>();
        let ps = clean.iter().map(|v| (g * v).powi(2)).sum::<f64>();
        let pn = noisy.iter().zip(&clean).map(|(a, b)| (a - g * b).powi(2)).sum::<f64>();
        let snr = 10.0 * (ps / pn).log10();
        assert!((snr - 10.0).abs() < 0.5, "{snr}");
    }

    #[test]
    fn noise_slope_matches_exponent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 1 << 14;
        for exponent in [0.0, 1.0, 2.0] {
            let x = coloured_noise(n, exponent, &mut rng);
            let band = |lo: usize, hi: usize| {
                let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
                FftPlanner::new().plan_fft_forward(n).process(&mut buf);
                buf[lo..hi].iter().map(|c| c.norm_sqr()).sum::<f64>() / (hi - lo) as f64
            };
            // Octave bands 200..400 and 1600..3200 bins: three octaves apart.
            let ratio = (band(200, 400) / band(1600, 3200)).log2() / 3.0;
            assert!((ratio - exponent).abs() < 0.1, "exponent {exponent}: slope {ratio}");
        }
    }

    #[test]
    fn same_seed_same_samples() {
        let p = &EngineProfile::defaults()[2];
        let a = synth_engine(p, 1500.0, 0.5, 20.0, 9).unwrap();
        assert_eq!(a, synth_engine(p, 1500.0, 0.5, 20.0, 9).unwrap());
        assert_ne!(a.samples, synth_engine(p, 1500.0, 0.5, 20.0, 10).unwrap().samples);
    }

    #[test]
    fn invalid_profiles() {
        for p in [
            pure(&[]),
            pure(&[0.0, 0.0]),
            pure(&[1.0, f64::NAN]),
            pure(&[1.0, -0.5]),
            EngineProfile { jitter: 0.06, ..pure(&[1.0]) },
        ] {
            assert!(matches!(synth_engine(&p, 1000.0, 1.0, 20.0, 0), Err(Error::Config(_))), "{p:?}");
        }
        assert!(synth_engine(&pure(&[1.0]), 0.0, 1.0, 20.0, 0).is_err());
    }

    #[test]
    fn corpus_files_and_manifest() {
        let spec = CorpusSpec {
            recordings_per_profile: 2,
            rpm_levels: vec![Rpm::new(1000).unwrap(), Rpm::new(2000).unwrap()],
            duration_secs: 0.25,
            ..Default::default()
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = build_corpus(&spec, a.path()).unwrap();
        build_corpus(&spec, b.path()).unwrap();
        let rows = load_manifest(&ma).unwrap();
        assert_eq!(rows.len(), 5 * 2 * 2);
        assert!(rows.iter().all(|r| spec.rpm_levels.contains(&r.rpm)));
        assert_eq!(rows[0].manufacturer, "Citroen");
        for r in &rows {
            let name = r.path.file_name().unwrap();
            assert_eq!(std::fs::read(&r.path).unwrap(), std::fs::read(b.path().join(name)).unwrap());
        }
        assert_eq!(std::fs::read(ma).unwrap(), std::fs::read(b.path().join("manifest.csv")).unwrap());
        let other = CorpusSpec { seed: 1, ..spec.clone() };
        let c = tempfile::tempdir().unwrap();
        build_corpus(&other, c.path()).unwrap();
        assert_ne!(
            std::fs::read(a.path().join("ford_1000_000.wav")).unwrap(),
            std::fs::read(c.path().join("ford_1000_000.wav")).unwrap()
        );
    }

    #[test]
    fn corpus_spec_validation() {
        let bad = [
            CorpusSpec { recordings_per_profile: 1, ..Default::default() },
            CorpusSpec { duration_secs: 0.0, ..Default::default() },
            CorpusSpec { profiles: EngineProfile::defaults()[..1].to_vec(), ..Default::default() },
            CorpusSpec { rpm_levels: vec![], ..Default::default() },
        ];
        for s in bad {
            assert!(matches!(s.validate(), Err(Error::Config(_))));
        }
        let json = r#"{"seed": 4, "duration_secs": 3.0}"#;
        let s: CorpusSpec = serde_json::from_str(json).unwrap();
        assert_eq!((s.seed, s.duration_secs, s.profiles.len()), (4, 3.0, 5));
        assert!(serde_json::from_str::<CorpusSpec>(r#"{"sed": 4}"#).is_err());
    }
}
