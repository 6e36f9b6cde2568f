//! Template-matching localization: spatial spectra and thresholded detection.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::Direction;
use crate::targets::TemplateBank;

pub const DETECTION_THRESHOLD: f64 = 0.5;

/// Estimated DP-IPD vectors, `[frame][track][pair][2F]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedEstimate {
    pub frames: usize,
    pub tracks: usize,
    pub pairs: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl TrackedEstimate {
    pub fn zeros(frames: usize, tracks: usize, pairs: usize, dim: usize) -> Self {
        TrackedEstimate {
            frames,
            tracks,
            pairs,
            dim,
            values: vec![0.0; frames * tracks * pairs * dim],
        }
    }

    /// `[pair][2F]` for one frame and track.
    pub fn track(&self, g: usize, k: usize) -> &[f64] {
        let n = self.pairs * self.dim;
        let s = (g * self.tracks + k) * n;
        &self.values[s..s + n]
    }

    pub fn track_mut(&mut self, g: usize, k: usize) -> &mut [f64] {
        let n = self.pairs * self.dim;
        let s = (g * self.tracks + k) * n;
        &mut self.values[s..s + n]
    }

    /// Frames `0..frames` only.
    pub fn prefix(&self, frames: usize) -> TrackedEstimate {
        let frames = frames.min(self.frames);
        let n = self.tracks * self.pairs * self.dim;
        TrackedEstimate {
            frames,
            values: self.values[..frames * n].to_vec(),
            ..*self
        }
    }
}

/// Spectrum of one track over the bank's grid:
/// `s(i) = (1/P) sum_p (1/F) q_hat_p . q_p(i)`.
///
/// Dividing by `F` makes an exact on-manifold match score 1.
pub fn spatial_spectrum(estimate: &[f64], bank: &TemplateBank) -> Result<Vec<f64>> {
    let (pairs, dim) = (bank.num_pairs(), bank.dim);
    if estimate.len() != pairs * dim {
        return Err(CoreError::Shape(format!(
            "estimate holds {} values, bank expects {pairs} pairs x {dim}",
            estimate.len()
        )));
    }
    let scale = 1.0 / (pairs as f64 * (dim / 2) as f64);
    let mut s = vec![0.0; bank.grid.len()];
    for p in 0..pairs {
        let q = &estimate[p * dim..(p + 1) * dim];
        for (i, t) in bank.pair(p).chunks_exact(dim).enumerate() {
            s[i] += q.iter().zip(t).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    for v in &mut s {
        *v *= scale;
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub track: usize,
    pub grid_index: usize,
    pub direction: Direction,
    pub peak: f64,
}

/// Argmax of the spectrum (lowest index on ties) if it strictly exceeds `threshold`.
pub fn detect_track(spectrum: &[f64], threshold: f64) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in spectrum.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.filter(|&(_, v)| v > threshold)
}

/// One detection per track at most.
pub fn detect(spectra: &[Vec<f64>], bank: &TemplateBank, threshold: f64) -> Vec<Detection> {
    spectra
        .iter()
        .enumerate()
        .filter_map(|(k, s)| {
            detect_track(s, threshold).map(|(i, peak)| Detection {
                track: k,
                grid_index: i,
                direction: bank.grid.directions[i],
                peak,
            })
        })
        .collect()
}

/// Spectra of every frame and track, `[frame][track][grid]`.
pub fn spectra(estimate: &TrackedEstimate, bank: &TemplateBank) -> Result<Vec<Vec<Vec<f64>>>> {
    if estimate.pairs != bank.num_pairs() || estimate.dim != bank.dim {
        return Err(CoreError::Shape(format!(
            "estimate has {} pairs x {}, bank {} pairs x {}",
            estimate.pairs,
            estimate.dim,
            bank.num_pairs(),
            bank.dim
        )));
    }
    (0..estimate.frames)
        .map(|g| {
            (0..estimate.tracks)
                .map(|k| spatial_spectrum(estimate.track(g, k), bank))
                .collect()
        })
        .collect()
}

/// Detections of every output frame.
pub fn localize(estimate: &TrackedEstimate, bank: &TemplateBank, threshold: f64) -> Result<Vec<Vec<Detection>>> {
    Ok(spectra(estimate, bank)?
        .iter()
        .map(|s| detect(s, bank, threshold))
        .collect())
}
