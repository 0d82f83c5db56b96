use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{Label, Utterance, SAMPLE_RATE};
use crate::error::{Error, Result};

fn hound_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            field: "container",
            found: other.to_string(),
            expected: "RIFF/WAVE".into(),
        },
    }
}

fn check(path: &Path, field: &'static str, found: impl ToString, expected: impl ToString, ok: bool) -> Result<()> {
    if ok {
        return Ok(());
    }
    Err(Error::Format {
        path: path.to_path_buf(),
        field,
        found: found.to_string(),
        expected: expected.to_string(),
    })
}

/// Reads a 16 kHz mono PCM16 file. The utterance id is the file stem and
/// the label is `Unknown` until a protocol assigns one.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Utterance> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| hound_err(path, e))?;
    let spec = reader.spec();
    check(path, "channels", spec.channels, 1, spec.channels == 1)?;
    check(path, "sample_rate", spec.sample_rate, SAMPLE_RATE, spec.sample_rate == SAMPLE_RATE)?;
    check(
        path,
        "sample_format",
        format!("{:?}", spec.sample_format),
        "Int",
        spec.sample_format == SampleFormat::Int,
    )?;
    check(path, "bits_per_sample", spec.bits_per_sample, 16, spec.bits_per_sample == 16)?;
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| hound_err(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if samples.is_empty() {
        return Err(Error::Input(format!("{}: no samples", path.display())));
    }
    Utterance::new(id, samples, Label::Unknown)
}

/// Writes PCM16 mono, rounding `x · 32768` and clipping to the i16 range.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f32]) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| hound_err(path, e))?;
    for &s in samples {
        let v = (s as f64 * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        w.write_sample(v).map_err(|e| hound_err(path, e))?;
    }
    w.finalize().map_err(|e| hound_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_on_the_pcm_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("utt_01.wav");
        let x: Vec<f32> = (-100..100).map(|i| i as f32 * 37.0 / 32768.0).collect();
        write_wav(&path, &x).unwrap();
        let u = load_wav(&path).unwrap();
        assert_eq!(u.id, "utt_01");
        assert_eq!(u.samples, x);
        assert_eq!(u.label, Label::Unknown);
    }

    #[test]
    fn wrong_rate_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        match load_wav(&path) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "sample_rate"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stereo_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        let err = load_wav(&path).unwrap_err();
        assert!(err.to_string().contains("channels"), "{err}");
    }

    #[test]
    fn garbage_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.wav");
        std::fs::write(&path, b"not a wav file at all").unwrap();
        assert!(matches!(load_wav(&path), Err(Error::Format { .. })));
    }
}
