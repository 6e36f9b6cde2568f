//! Synthetic speech-like source material.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Colored noise with a syllable-rate envelope and short pauses, RMS about 0.1.
///
/// The envelope stays strictly positive except inside pauses, so every
/// non-pause frame carries broadband energy.
pub fn noise_burst(seed: u64, samples: usize, sample_rate: u32) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = sample_rate as f64;
    // First-order low-pass mixed with the white input: roughly -6 dB/octave tilt
    // above a few hundred Hz, with a floor that keeps high bins populated.
    let pole = rng.gen_range(0.85..0.95);
    let mut lp = 0.0;
    let mut out = Vec::with_capacity(samples);
    let syllable = rng.gen_range(3.0..6.0);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut pause_left = 0usize;
    let mut pause_ramp = 1.0f64;
    for t in 0..samples {
        let w: f64 = StandardNormal.sample(&mut rng);
        lp = pole * lp + (1.0 - pole) * w;
        let colored = 4.0 * lp + 0.3 * w;
        let env = 0.6 + 0.4 * (std::f64::consts::TAU * syllable * t as f64 / fs + phase).sin();
        if pause_left == 0 && rng.gen_bool(0.8 / fs) {
            pause_left = rng.gen_range((0.05 * fs) as usize..(0.2 * fs) as usize);
        }
        let target = if pause_left > 0 {
            pause_left -= 1;
            0.0
        } else {
            1.0
        };
        // 5 ms ramps into and out of pauses.
        let step = 1.0 / (0.005 * fs);
        pause_ramp = if target > pause_ramp {
            (pause_ramp + step).min(1.0)
        } else {
            (pause_ramp - step).max(0.0)
        };
        out.push(0.1 * colored * env * pause_ramp);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_scaled() {
        let a = noise_burst(3, 32000, 16000);
        assert_eq!(a, noise_burst(3, 32000, 16000));
        assert_ne!(a, noise_burst(4, 32000, 16000));
        let rms = (a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64).sqrt();
        assert!(rms > 0.02 && rms < 0.5, "{rms}");
    }
}
