//! WAV ingestion and canonicalization to mono 44100 Hz, plus the recording manifest.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CANONICAL_SAMPLE_RATE: u32 = 44100;

/// A canonical recording: mono samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub source_id: String,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32, source_id: impl Into<String>) -> Self {
        Waveform {
            samples,
            sample_rate,
            source_id: source_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Engine speed levels of the recording protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Rpm(u32);

impl Rpm {
    pub const LEVELS: [Rpm; 3] = [Rpm(1000), Rpm(1500), Rpm(2000)];

    pub fn new(value: u32) -> Result<Self> {
        match value {
            1000 | 1500 | 2000 => Ok(Rpm(value)),
            other => Err(Error::Config(format!(
                "rpm must be one of 1000, 1500, 2000 (got {other})"
            ))),
        }
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

impl TryFrom<u32> for Rpm {
    type Error = Error;
    fn try_from(value: u32) -> Result<Self> {
        Rpm::new(value)
    }
}

impl From<Rpm> for u32 {
    fn from(rpm: Rpm) -> u32 {
        rpm.0
    }
}

impl fmt::Display for Rpm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordingMeta {
    pub path: PathBuf,
    pub manufacturer: String,
    pub model: String,
    pub rpm: Rpm,
}

impl RecordingMeta {
    /// Identifier used for the recording in feature tables: the file stem.
    pub fn source_id(&self) -> String {
        self.path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.path.to_string_lossy().into_owned())
    }
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_wav(BufReader::new(file), source_id)
}

/// Decodes a RIFF/WAVE stream into a canonical waveform.
pub fn decode_wav<R: Read>(reader: R, source_id: impl Into<String>) -> Result<Waveform> {
    let source_id = source_id.into();
    let reader = hound::WavReader::new(reader).map_err(|e| map_hound(e, &source_id))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Format(format!("{source_id}: zero channels")));
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(e, &source_id))?,
        (hound::SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let full_scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / full_scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| map_hound(e, &source_id))?
        }
        (format, bits) => {
            return Err(Error::Unsupported(format!(
                "{source_id}: {bits}-bit {format:?} samples"
            )))
        }
    };

    if interleaved.len() < channels {
        return Err(Error::EmptyAudio(source_id));
    }

    let mono = downmix(&interleaved, channels);
    let mut samples = if spec.sample_rate == CANONICAL_SAMPLE_RATE {
        mono
    } else {
        resample_linear(&mono, spec.sample_rate, CANONICAL_SAMPLE_RATE)
    };
    for s in &mut samples {
        *s = s.clamp(-1.0, 1.0);
    }
    Ok(Waveform::new(samples, CANONICAL_SAMPLE_RATE, source_id))
}

fn map_hound(err: hound::Error, source_id: &str) -> Error {
    match err {
        hound::Error::IoError(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
            Error::Format(format!("{source_id}: truncated file"))
        }
        hound::Error::IoError(e) => Error::io(source_id, e),
        hound::Error::Unsupported => Error::Unsupported(format!("{source_id}: compressed or unknown codec")),
        hound::Error::TooWide => Error::Unsupported(format!("{source_id}: sample width too large")),
        other => Error::Format(format!("{source_id}: {other}")),
    }
}

/// Averages interleaved frames down to one channel.
pub fn downmix(interleaved: &[f64], channels: usize) -> Vec<f64> {
    if channels == 1 {
        return interleaved.to_vec();
    }
    interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect()
}

/// Linear-interpolation resampling. Output has `floor((n - 1) * to / from) + 1` samples so the
/// first and last input samples land exactly on output samples when the ratio is integral.
pub fn resample_linear(samples: &[f64], from_rate: u32, to_rate: u32) -> Vec<f64> {
    if samples.len() < 2 || from_rate == to_rate {
        return samples.to_vec();
    }
    let (from, to) = (from_rate as u64, to_rate as u64);
    let out_len = ((samples.len() as u64 - 1) * to / from + 1) as usize;
    (0..out_len as u64)
        .map(|i| {
            // exact rational source position i * from / to
            let num = i * from;
            let idx = (num / to) as usize;
            let frac = (num % to) as f64 / to as f64;
            if idx + 1 >= samples.len() {
                samples[samples.len() - 1]
            } else {
                samples[idx] + (samples[idx + 1] - samples[idx]) * frac
            }
        })
        .collect()
}

/// Writes a waveform as 16-bit mono PCM.
pub fn write_wav_pcm16(path: impl AsRef<Path>, waveform: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: waveform.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_io = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_io)?;
    for &s in &waveform.samples {
        writer.write_sample(quantize_pcm16(s)).map_err(to_io)?;
    }
    writer.finalize().map_err(to_io)
}

pub fn quantize_pcm16(sample: f64) -> i16 {
    (sample.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

const MANIFEST_COLUMNS: [&str; 4] = ["path", "manufacturer", "model", "rpm"];

/// Reads a `path,manufacturer,model,rpm` manifest. Relative paths resolve against the
/// manifest's directory. Row numbers in errors count data rows from 1.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<RecordingMeta>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(file, &base)
}

pub fn parse_manifest<R: Read>(reader: R, base_dir: &Path) -> Result<Vec<RecordingMeta>> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv.headers()?.clone();
    let mut index = [0usize; 4];
    for (slot, column) in index.iter_mut().zip(MANIFEST_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| Error::Schema(format!("missing column `{column}`")))?;
    }

    let mut out = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let field = |k: usize| record.get(index[k]).unwrap_or("").to_string();
        let rpm_text = field(3);
        let rpm = rpm_text
            .parse::<u32>()
            .ok()
            .and_then(|v| Rpm::new(v).ok())
            .ok_or_else(|| Error::Value {
                row,
                message: format!("rpm `{rpm_text}` not in {{1000, 1500, 2000}}"),
            })?;
        let rel = PathBuf::from(field(0));
        let path = if rel.is_absolute() { rel } else { base_dir.join(rel) };
        out.push(RecordingMeta {
            path,
            manufacturer: field(1),
            model: field(2),
            rpm,
        });
    }
    Ok(out)
}

/// Writes a manifest; paths are written relative to `base_dir` when possible.
pub fn write_manifest(path: impl AsRef<Path>, rows: &[RecordingMeta], base_dir: &Path) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(MANIFEST_COLUMNS)?;
    for meta in rows {
        let p = meta.path.strip_prefix(base_dir).unwrap_or(&meta.path);
        w.write_record([
            p.to_string_lossy().as_ref(),
            &meta.manufacturer,
            &meta.model,
            &meta.rpm.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
