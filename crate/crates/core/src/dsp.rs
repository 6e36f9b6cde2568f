//! STFT front-end and Laplace input normalization.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub type C64 = Complex<f64>;

pub const SAMPLE_RATE: u32 = 16_000;
pub const WINDOW_LENGTH: usize = 512;
pub const FRAME_SHIFT: usize = 256;
/// Default memory of the online normalizer, in frames (about 2 s).
pub const ONLINE_MEMORY: usize = 125;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_length: usize,
    pub frame_shift: usize,
    pub sample_rate: u32,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            window_length: WINDOW_LENGTH,
            frame_shift: FRAME_SHIFT,
            sample_rate: SAMPLE_RATE,
        }
    }
}

impl StftConfig {
    /// Retained bins: `1..=window_length/2` (DC dropped).
    pub fn num_bins(&self) -> usize {
        self.window_length / 2
    }

    /// Center frequency of retained bin `i` (zero-based), Hz.
    pub fn bin_frequency(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.sample_rate as f64 / self.window_length as f64
    }

    pub fn bin_frequencies(&self) -> Vec<f64> {
        (0..self.num_bins()).map(|i| self.bin_frequency(i)).collect()
    }

    pub fn num_frames(&self, samples: usize) -> usize {
        if samples < self.window_length {
            0
        } else {
            (samples - self.window_length) / self.frame_shift + 1
        }
    }

    /// Sample index at the center of frame `n`.
    pub fn frame_center(&self, n: usize) -> usize {
        n * self.frame_shift + self.window_length / 2
    }

    fn validate(&self) -> Result<()> {
        if self.window_length < 2 || self.window_length % 2 != 0 || self.frame_shift == 0 || self.sample_rate == 0 {
            return Err(CoreError::Signal(format!("invalid STFT configuration {self:?}")));
        }
        Ok(())
    }
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos())
        .collect()
}

/// Complex spectra indexed `[channel][frame][bin]`, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct StftTensor {
    pub values: Vec<C64>,
    pub channels: usize,
    pub frames: usize,
    pub bins: usize,
    pub config: StftConfig,
}

impl StftTensor {
    pub fn zeros(channels: usize, frames: usize, config: StftConfig) -> Self {
        let bins = config.num_bins();
        StftTensor {
            values: vec![C64::new(0.0, 0.0); channels * frames * bins],
            channels,
            frames,
            bins,
            config,
        }
    }

    #[inline]
    pub fn index(&self, m: usize, n: usize, f: usize) -> usize {
        (m * self.frames + n) * self.bins + f
    }

    #[inline]
    pub fn at(&self, m: usize, n: usize, f: usize) -> C64 {
        self.values[self.index(m, n, f)]
    }

    pub fn frame(&self, m: usize, n: usize) -> &[C64] {
        let s = self.index(m, n, 0);
        &self.values[s..s + self.bins]
    }

    pub fn channel(&self, m: usize) -> &[C64] {
        let s = self.index(m, 0, 0);
        &self.values[s..s + self.frames * self.bins]
    }

    /// Keeps frames `0..n`.
    pub fn truncate_frames(&self, n: usize) -> StftTensor {
        let n = n.min(self.frames);
        let mut out = StftTensor::zeros(self.channels, n, self.config);
        for m in 0..self.channels {
            for t in 0..n {
                let (d, s) = (out.index(m, t, 0), self.index(m, t, 0));
                out.values[d..d + self.bins].copy_from_slice(&self.values[s..s + self.bins]);
            }
        }
        out
    }

    /// Keeps only the listed channels, in the given order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<StftTensor> {
        let mut out = StftTensor::zeros(channels.len(), self.frames, self.config);
        for (i, &m) in channels.iter().enumerate() {
            if m >= self.channels {
                return Err(CoreError::MicOutOfRange {
                    index: m,
                    count: self.channels,
                });
            }
            let len = self.frames * self.bins;
            out.values[i * len..(i + 1) * len].copy_from_slice(self.channel(m));
        }
        Ok(out)
    }

    fn mean_magnitude(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        let per_channel = self
            .values
            .chunks_exact(self.frames * self.bins)
            .map(|c| c.iter().map(|v| v.norm()).sum::<f64>());
        channel_sum(per_channel) / self.values.len() as f64
    }
}

/// Adds per-channel partial sums in sorted order, so the result does not
/// depend on channel order.
fn channel_sum(parts: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = parts.collect();
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

/// Multichannel STFT. `waveforms[m]` holds the samples of channel `m`.
pub fn stft(waveforms: &[Vec<f64>], config: &StftConfig) -> Result<StftTensor> {
    config.validate()?;
    let channels = waveforms.len();
    if channels == 0 {
        return Err(CoreError::Signal("no channels".into()));
    }
    let len = waveforms[0].len();
    if waveforms.iter().any(|w| w.len() != len) {
        return Err(CoreError::Signal("channels differ in length".into()));
    }
    if len < config.window_length {
        return Err(CoreError::Signal(format!(
            "{len} samples is shorter than the {}-sample window",
            config.window_length
        )));
    }
    let frames = config.num_frames(len);
    let window = hann(config.window_length);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(config.window_length);
    let mut out = StftTensor::zeros(channels, frames, *config);
    let mut buf = vec![C64::new(0.0, 0.0); config.window_length];
    let mut scratch = vec![C64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for (m, w) in waveforms.iter().enumerate() {
        for n in 0..frames {
            let start = n * config.frame_shift;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = C64::new(w[start + i] * window[i], 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            let d = out.index(m, n, 0);
            out.values[d..d + out.bins].copy_from_slice(&buf[1..=out.bins]);
        }
    }
    Ok(out)
}

/// Divides every bin by one scalar: the mean magnitude over all channels,
/// frames and bins. Silent input is returned unchanged.
pub fn normalize_offline(x: &StftTensor) -> StftTensor {
    let mu = x.mean_magnitude();
    let mut out = x.clone();
    if mu > 0.0 {
        for v in &mut out.values {
            *v /= mu;
        }
    }
    out
}

/// Causal normalizer: `mu(n) = beta mu(n-1) + (1-beta) mean|X(n)|`, with
/// `beta = (L-1)/(L+1)` and `mu(0)` equal to the first frame's mean magnitude.
#[derive(Debug, Clone)]
pub struct OnlineNormalizer {
    beta: f64,
    mu: Option<f64>,
}

impl OnlineNormalizer {
    pub fn new(memory: usize) -> Result<Self> {
        if memory < 2 {
            return Err(CoreError::Signal(format!("normalizer memory {memory} must be at least 2 frames")));
        }
        Ok(OnlineNormalizer {
            beta: (memory as f64 - 1.0) / (memory as f64 + 1.0),
            mu: None,
        })
    }

    pub fn mu(&self) -> Option<f64> {
        self.mu
    }

    /// Updates the state with one frame (all channels) and returns its scale.
    pub fn update(&mut self, frame_mean: f64) -> f64 {
        let mu = match self.mu {
            None => frame_mean,
            Some(prev) => self.beta * prev + (1.0 - self.beta) * frame_mean,
        };
        self.mu = Some(mu);
        mu
    }
}

pub fn normalize_online(x: &StftTensor, memory: usize) -> Result<StftTensor> {
    let mut state = OnlineNormalizer::new(memory)?;
    let mut out = x.clone();
    let count = (x.channels * x.bins) as f64;
    for n in 0..x.frames {
        let sum = channel_sum((0..x.channels).map(|m| x.frame(m, n).iter().map(|v| v.norm()).sum::<f64>()));
        let mu = state.update(if count > 0.0 { sum / count } else { 0.0 });
        if mu > 0.0 {
            for m in 0..x.channels {
                let s = out.index(m, n, 0);
                for v in &mut out.values[s..s + x.bins] {
                    *v /= mu;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, len: usize) -> Vec<f64> {
        (0..len)
            .map(|t| (2.0 * std::f64::consts::PI * freq * t as f64 / 16000.0).sin())
            .collect()
    }

    #[test]
    fn frame_count() {
        let c = StftConfig::default();
        assert_eq!(c.num_frames(512), 1);
        assert_eq!(c.num_frames(767), 1);
        assert_eq!(c.num_frames(768), 2);
        assert_eq!(c.num_frames(16000), 61);
        assert_eq!(c.num_bins(), 256);
        assert_eq!(c.bin_frequency(31), 1000.0);
    }

    #[test]
    fn zero_signal() {
        let x = stft(&[vec![0.0; 2000]], &StftConfig::default()).unwrap();
        assert!(x.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn bin_centered_tone() {
        let x = stft(&[tone(1000.0, 4096)], &StftConfig::default()).unwrap();
        for n in 0..x.frames {
            let f = x
                .frame(0, n)
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
                .unwrap()
                .0;
            // Retained index 31 is FFT bin 32.
            assert_eq!(f + 1, 32);
        }
    }

    #[test]
    fn short_input_rejected() {
        assert!(stft(&[vec![0.0; 100]], &StftConfig::default()).is_err());
        assert!(stft(&[vec![0.0; 600], vec![0.0; 601]], &StftConfig::default()).is_err());
        assert!(stft(&[], &StftConfig::default()).is_err());
    }

    #[test]
    fn constant_magnitude() {
        let mut x = StftTensor::zeros(2, 5, StftConfig::default());
        for (i, v) in x.values.iter_mut().enumerate() {
            *v = C64::from_polar(5.0, i as f64 * 0.1);
        }
        for y in [normalize_offline(&x), normalize_online(&x, 125).unwrap()] {
            for (a, b) in y.values.iter().zip(&x.values) {
                assert!((a.norm() - 1.0).abs() < 1e-12);
                assert!((a.arg() - b.arg()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn silent_passthrough() {
        let x = StftTensor::zeros(2, 3, StftConfig::default());
        assert_eq!(normalize_offline(&x), x);
        assert_eq!(normalize_online(&x, 10).unwrap(), x);
        assert!(normalize_online(&x, 1).is_err());
    }
}
