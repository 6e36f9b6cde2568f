//! Cylindrically isotropic diffuse noise and sensor noise.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

use crate::bessel::j0;
use crate::dsp::C64;
use crate::error::{CoreError, Result};
use crate::geometry::{distance, ArrayGeometry, Position};

pub const DIAGONAL_LOADING: f64 = 1e-6;

/// Target coherence `J0(2 pi f d_ij / c)` for every microphone pair at frequency `f`.
pub fn coherence_matrix(p: &[Position], c: f64, f: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p.len(), p.len(), |i, j| {
        j0(2.0 * std::f64::consts::PI * f * distance(&p[i], &p[j]) / c)
    })
}

/// `samples` of diffuse noise for `geometry`, unit variance per channel.
///
/// Independent white channels are mixed per FFT bin by the Cholesky factor of
/// the (diagonally loaded) target coherence matrix.
pub fn diffuse_noise(geometry: &ArrayGeometry, samples: usize, sample_rate: u32, seed: u64) -> Result<Vec<Vec<f64>>> {
    diffuse_noise_at(geometry.positions(), geometry.sound_speed(), samples, sample_rate, seed)
}

/// [`diffuse_noise`] for bare positions; a single position yields white noise.
pub fn diffuse_noise_at(
    positions: &[Position],
    sound_speed: f64,
    samples: usize,
    sample_rate: u32,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if samples < sample_rate as usize {
        return Err(CoreError::Signal(format!(
            "diffuse noise needs at least 1 s ({sample_rate} samples), got {samples}"
        )));
    }
    let m = positions.len();
    let len = samples + samples % 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let mut spectra: Vec<Vec<C64>> = (0..m)
        .map(|_| {
            let mut buf: Vec<C64> = (0..len)
                .map(|_| C64::new(StandardNormal.sample(&mut rng), 0.0))
                .collect();
            fwd.process(&mut buf);
            buf
        })
        .collect();
    let mut mixed = vec![vec![C64::new(0.0, 0.0); len]; m];
    for k in 0..=len / 2 {
        let f = k as f64 * sample_rate as f64 / len as f64;
        let mut gamma = coherence_matrix(positions, sound_speed, f);
        for i in 0..m {
            gamma[(i, i)] += DIAGONAL_LOADING;
        }
        let chol = gamma
            .cholesky()
            .ok_or_else(|| CoreError::Signal(format!("coherence matrix not positive definite at {f:.1} Hz")))?;
        let l = chol.l();
        for bin in [k, (len - k) % len] {
            for i in 0..m {
                let mut acc = C64::new(0.0, 0.0);
                for j in 0..=i {
                    acc += spectra[j][bin] * l[(i, j)];
                }
                mixed[i][bin] = acc;
            }
        }
    }
    spectra.clear();
    let scale = 1.0 / len as f64;
    Ok(mixed
        .into_iter()
        .map(|mut buf| {
            inv.process(&mut buf);
            buf.iter().take(samples).map(|v| v.re * scale).collect()
        })
        .collect())
}

/// Independent white Gaussian noise, unit variance per channel.
pub fn sensor_noise(channels: usize, samples: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..channels)
        .map(|_| (0..samples).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_channel_is_white() {
        let n = diffuse_noise_at(&[[0.0; 3]], 343.0, 16000, 16000, 1).unwrap();
        assert_eq!(n.len(), 1);
        let var: f64 = n[0].iter().map(|v| v * v).sum::<f64>() / 16000.0;
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn too_short_rejected() {
        let g = ArrayGeometry::two_mic(0.04).unwrap();
        assert!(diffuse_noise(&g, 1000, 16000, 1).is_err());
    }

    #[test]
    fn deterministic() {
        let g = ArrayGeometry::circular(3, 0.05).unwrap();
        assert_eq!(
            diffuse_noise(&g, 16000, 16000, 9).unwrap(),
            diffuse_noise(&g, 16000, 16000, 9).unwrap()
        );
    }
}
