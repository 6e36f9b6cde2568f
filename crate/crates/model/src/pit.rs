//! Frame-level permutation-invariant MSE.

use ipdnet_autodiff::{Graph, Scalar, Tensor, Var};
use ipdnet_core::localize::TrackedEstimate;
use ipdnet_core::targets::MultiTrackTarget;

use crate::config::{ModelConfig, Variant};
use crate::error::{ModelError, Result};
use crate::net::output_index;

/// All permutations of `0..k` in lexicographic order, identity first.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(k), &mut vec![false; k], &mut out);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PitFrame {
    pub loss: f64,
    /// Estimate track `k` is compared with target track `perm[k]`.
    pub perm: Vec<usize>,
}

/// MSE of one frame under `perm`; `est` and `target` are `[K][P][dim]`.
pub fn permuted_mse(est: &[f64], target: &[f64], tracks: usize, pairs: usize, dim: usize, perm: &[usize]) -> f64 {
    let n = pairs * dim;
    let mut sum = 0.0;
    for (k, &t) in perm.iter().enumerate().take(tracks) {
        let (e, q) = (&est[k * n..(k + 1) * n], &target[t * n..(t + 1) * n]);
        for (a, b) in e.iter().zip(q) {
            let d = b - a;
            sum += d * d;
        }
    }
    sum / (tracks * n) as f64
}

/// Minimum over all track permutations (shared by every pair); the first
/// minimizing permutation in lexicographic order wins ties.
pub fn pit_loss(est: &[f64], target: &[f64], tracks: usize, pairs: usize, dim: usize) -> Result<PitFrame> {
    let n = tracks * pairs * dim;
    if est.len() != n || target.len() != n {
        return Err(ModelError::Config(format!(
            "pit: estimate {} and target {} values, expected {n}",
            est.len(),
            target.len()
        )));
    }
    let mut best = PitFrame {
        loss: f64::INFINITY,
        perm: Vec::new(),
    };
    for perm in permutations(tracks) {
        let loss = permuted_mse(est, target, tracks, pairs, dim, &perm);
        if loss < best.loss || best.perm.is_empty() {
            best = PitFrame { loss, perm };
        }
    }
    Ok(best)
}

/// Frame-averaged PIT loss of a whole utterance.
pub fn pit_loss_sequence(est: &TrackedEstimate, target: &MultiTrackTarget) -> Result<(f64, Vec<Vec<usize>>)> {
    if (est.frames, est.tracks, est.pairs, est.dim) != (target.frames, target.tracks, target.pairs, target.dim) {
        return Err(ModelError::Config(format!(
            "estimate {}x{}x{}x{} vs target {}x{}x{}x{}",
            est.frames, est.tracks, est.pairs, est.dim, target.frames, target.tracks, target.pairs, target.dim
        )));
    }
    let n = est.tracks * est.pairs * est.dim;
    let mut total = 0.0;
    let mut perms = Vec::with_capacity(est.frames);
    for g in 0..est.frames {
        let f = pit_loss(&est.values[g * n..(g + 1) * n], target.frame(g), est.tracks, est.pairs, est.dim)?;
        total += f.loss;
        perms.push(f.perm);
    }
    Ok((total / est.frames.max(1) as f64, perms))
}

/// Adds the PIT objective for a head output `out[B, G, F, O]` to the graph.
///
/// Permutations are chosen per utterance and frame from the current output;
/// the returned node is the MSE against the correspondingly permuted
/// targets, which equals the frame-averaged PIT loss.
pub fn pit_objective<T: Scalar>(
    g: &mut Graph<T>,
    out: Var,
    config: &ModelConfig,
    targets: &[&MultiTrackTarget],
) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    let expected_utts = match config.variant {
        Variant::Fixed => shape[0],
        Variant::Variable => 1,
    };
    if targets.len() != expected_utts {
        return Err(ModelError::Config(format!("{} targets for {expected_utts} utterances", targets.len())));
    }
    let values = g.value(out).to_f64_vec();
    let mut permuted = vec![T::zero(); values.len()];
    let (frames, f) = (shape[1], shape[2]);
    let dim = 2 * f;
    for (u, t) in targets.iter().enumerate() {
        if t.frames != frames || t.dim != dim || t.tracks != config.tracks {
            return Err(ModelError::Config(format!(
                "target {}x{}x{} does not match output {frames} frames, {} tracks, dim {dim}",
                t.frames, t.tracks, t.dim, config.tracks
            )));
        }
        let pairs = t.pairs;
        let mut est = vec![0.0; config.tracks * pairs * dim];
        for gi in 0..frames {
            for k in 0..config.tracks {
                for p in 0..pairs {
                    for c in 0..dim {
                        est[(k * pairs + p) * dim + c] = values[output_index(config, &shape, u, gi, k, p, c)];
                    }
                }
            }
            let best = pit_loss(&est, t.frame(gi), config.tracks, pairs, dim)?;
            for k in 0..config.tracks {
                for p in 0..pairs {
                    let src = t.vector(gi, best.perm[k], p);
                    for (c, &v) in src.iter().enumerate() {
                        permuted[output_index(config, &shape, u, gi, k, p, c)] = T::from_f64(v);
                    }
                }
            }
        }
    }
    Ok(g.mse_const(out, Tensor::new(&shape, permuted)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_listing() {
        assert_eq!(permutations(2), vec![vec![0, 1], vec![1, 0]]);
        assert_eq!(permutations(3).len(), 6);
        assert_eq!(permutations(3)[0], vec![0, 1, 2]);
    }

    #[test]
    fn identity_and_swap() {
        let a = vec![0.1, -0.2, 0.3, 0.4];
        let b = vec![0.5, 0.6, -0.7, 0.8];
        let est: Vec<f64> = a.iter().chain(&b).cloned().collect();
        let f = pit_loss(&est, &est, 2, 1, 4).unwrap();
        assert_eq!((f.loss, f.perm), (0.0, vec![0, 1]));
        let swapped: Vec<f64> = b.iter().chain(&a).cloned().collect();
        let f = pit_loss(&est, &swapped, 2, 1, 4).unwrap();
        assert_eq!((f.loss, f.perm), (0.0, vec![1, 0]));
    }
}
