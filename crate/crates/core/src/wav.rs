//! Multichannel WAV I/O: 16-bit PCM or 32-bit float in, 32-bit float out.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{CoreError, Result};

pub struct Audio {
    pub sample_rate: u32,
    /// `channels[m][t]`.
    pub channels: Vec<Vec<f64>>,
}

pub fn read_wav(path: &Path) -> Result<Audio> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let m = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(CoreError::Signal(format!(
                "{}: unsupported sample format {fmt:?}/{bits} bit",
                path.display()
            )))
        }
    };
    let mut channels = vec![Vec::with_capacity(interleaved.len() / m.max(1)); m];
    for (i, v) in interleaved.into_iter().enumerate() {
        channels[i % m].push(v);
    }
    Ok(Audio {
        sample_rate: spec.sample_rate,
        channels,
    })
}

pub fn write_wav(path: &Path, sample_rate: u32, channels: &[Vec<f64>]) -> Result<()> {
    let len = channels.first().map_or(0, Vec::len);
    if channels.is_empty() || channels.iter().any(|c| c.len() != len) {
        return Err(CoreError::Signal("channels must be non-empty and equal length".into()));
    }
    let spec = WavSpec {
        channels: channels.len() as u16,
        sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = WavWriter::create(path, spec)?;
    for t in 0..len {
        for c in channels {
            w.write_sample(c[t] as f32)?;
        }
    }
    w.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_float() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let ch = vec![vec![0.5, -0.25, 0.125], vec![0.0, 1.0, -1.0]];
        write_wav(&p, 16000, &ch).unwrap();
        let a = read_wav(&p).unwrap();
        assert_eq!(a.sample_rate, 16000);
        assert_eq!(a.channels, ch);
    }

    #[test]
    fn reads_pcm16() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        w.write_sample(16384i16).unwrap();
        w.write_sample(-32768i16).unwrap();
        w.finalize().unwrap();
        assert_eq!(read_wav(&p).unwrap().channels, vec![vec![0.5, -1.0]]);
    }
}
