use std::path::Path;

use hound::{SampleFormat, WavSpec};

use crate::error::{Error, Result};
use crate::types::Waveform;

const FULL_SCALE: f64 = 32768.0;

/// Reads 16-bit PCM mono; samples are scaled by 1/32768.
pub fn read_wav(path: &Path, utterance_id: impl Into<String>) -> Result<Waveform> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != SampleFormat::Int {
        return Err(Error::invalid(format!(
            "{}: only 16-bit PCM mono is supported (got {} channels, {} bits, {:?})",
            path.display(),
            spec.channels,
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / FULL_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wav_err)?;
    Ok(Waveform::new(utterance_id, spec.sample_rate, samples))
}

/// Writes 16-bit PCM mono, clamping to the representable range.
pub fn write_wav(w: &Waveform, path: &Path) -> Result<()> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &w.samples {
        let v = (s * FULL_SCALE).round().clamp(-FULL_SCALE, FULL_SCALE - 1.0) as i16;
        writer.write_sample(v).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm_grid_values_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let samples: Vec<f64> = [-32768i32, -1, 0, 1, 12345, 32767]
            .iter()
            .map(|&v| f64::from(v) / FULL_SCALE)
            .collect();
        let w = Waveform::new("a", 16000, samples);
        write_wav(&w, &path).unwrap();
        assert_eq!(read_wav(&path, "a").unwrap(), w);
    }

    #[test]
    fn stereo_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(read_wav(&path, "s").is_err());
    }
}
