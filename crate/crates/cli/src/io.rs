//! WAV, JSON and atomic file helpers.

use std::io::{Cursor, Write};
use std::path::Path;

use farfield::MultiChannelWave;
use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use ndarray::{Array2, ArrayView2};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, Result};

/// Reads a 16-bit PCM or 32-bit float WAV file.
pub fn read_wav(path: &Path) -> Result<MultiChannelWave> {
    let bad = |e: hound::Error| CliError::input(format!("{}: {e}", path.display()));
    let reader = WavReader::open(path).map_err(bad)?;
    let spec = reader.spec();
    let flat: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(bad)?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(bad)?,
        (fmt, bits) => {
            return Err(CliError::input(format!(
            "{}: unsupported WAV format {bits}-bit {fmt:?}, expected 16-bit PCM or 32-bit float",
            path.display()
        )))
        }
    };
    let c = spec.channels as usize;
    let frames = flat.len() / c;
    let samples = Array2::from_shape_fn((c, frames), |(ch, t)| flat[t * c + ch]);
    MultiChannelWave::new(samples, spec.sample_rate)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Encodes `[channels × samples]` as 32-bit float WAV.
pub fn wav_bytes(samples: ArrayView2<f64>, sample_rate: u32) -> Result<Vec<u8>> {
    let spec = WavSpec {
        channels: samples.nrows() as u16,
        sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut buf = Cursor::new(Vec::new());
    let enc = |e: hound::Error| CliError::input(format!("WAV encoding failed: {e}"));
    let mut w = WavWriter::new(&mut buf, spec).map_err(enc)?;
    for t in 0..samples.ncols() {
        for c in 0..samples.nrows() {
            w.write_sample(samples[[c, t]] as f32).map_err(enc)?;
        }
    }
    w.finalize().map_err(enc)?;
    Ok(buf.into_inner())
}

pub fn write_wav(path: &Path, samples: ArrayView2<f64>, sample_rate: u32) -> Result<()> {
    write_atomic(path, &wav_bytes(samples, sample_rate)?)
}

/// Writes to a temporary file in the target directory, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| CliError::input(format!("JSON encoding failed: {e}")))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Parses JSON, naming the offending field on failure.
pub fn parse_json<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::input(format!("{origin}: field `{path}`: {}", e.into_inner()))
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_json(&text, &path.display().to_string())
}

/// Geometry sidecar: a JSON list of `[x, y, z]` positions in metres.
pub fn read_geometry(path: &Path) -> Result<Vec<[f64; 3]>> {
    read_json(path)
}
