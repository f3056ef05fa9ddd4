//! 16-bit PCM mono WAV at 16 kHz. Anything else is rejected rather than
//! converted.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::Utterance;
use crate::error::{Error, Result};
use crate::sinc::SAMPLE_RATE;

const FULL_SCALE: f64 = 32768.0;

fn audio_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Audio {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Reads a WAV file into `[-1, 1]` samples; the id is the file stem.
pub fn load_wav(path: &Path) -> Result<Utterance> {
    let reader = WavReader::open(path).map_err(|e| audio_err(path, e.to_string()))?;
    let spec = reader.spec();
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(audio_err(
            path,
            format!("{}-bit {:?} samples, expected 16-bit PCM", spec.bits_per_sample, spec.sample_format),
        ));
    }
    if spec.channels != 1 {
        return Err(audio_err(path, format!("{} channels, expected mono", spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(audio_err(path, format!("{} Hz, expected {SAMPLE_RATE} Hz", spec.sample_rate)));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / FULL_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| audio_err(path, e.to_string()))?;
    if samples.is_empty() {
        return Err(audio_err(path, "no samples"));
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Utterance {
        id,
        samples,
        label: None,
    })
}

/// Writes samples as 16-bit PCM, clipping to full scale.
pub fn write_wav(path: &Path, samples: &[f64]) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| audio_err(path, e.to_string()))?;
    for &s in samples {
        if !s.is_finite() {
            return Err(audio_err(path, "non-finite sample"));
        }
        let v = (s * FULL_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        w.write_sample(v).map_err(|e| audio_err(path, e.to_string()))?;
    }
    w.finalize().map_err(|e| audio_err(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_scale_and_zero() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wav");
        write_wav(&p, &[1.0, 0.0, -1.0]).unwrap();
        let u = load_wav(&p).unwrap();
        assert_eq!(u.id, "x");
        assert!((u.samples[0] - 32767.0 / 32768.0).abs() < 1e-12);
        assert_eq!(u.samples[1], 0.0);
        assert_eq!(u.samples[2], -1.0);
    }

    #[test]
    fn round_trip_within_quantisation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.wav");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..500).map(|_| rng.gen_range(-0.99..0.99)).collect();
        write_wav(&p, &x).unwrap();
        let y = load_wav(&p).unwrap().samples;
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() <= 0.5 / FULL_SCALE + 1e-12);
        }
    }

    #[test]
    fn rejects_other_formats() {
        let dir = tempfile::tempdir().unwrap();
        for (channels, rate, bits) in [(2u16, 16_000u32, 16u16), (1, 8_000, 16), (1, 16_000, 8)] {
            let p = dir.path().join(format!("{channels}_{rate}_{bits}.wav"));
            let spec = WavSpec {
                channels,
                sample_rate: rate,
                bits_per_sample: bits,
                sample_format: SampleFormat::Int,
            };
            let mut w = WavWriter::create(&p, spec).unwrap();
            for _ in 0..4 {
                if bits == 8 {
                    w.write_sample(1i8).unwrap();
                } else {
                    w.write_sample(1i16).unwrap();
                }
            }
            w.finalize().unwrap();
            assert!(matches!(load_wav(&p), Err(Error::Audio { .. })), "{channels} {rate} {bits}");
        }
    }
}
