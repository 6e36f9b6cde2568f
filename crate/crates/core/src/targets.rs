//! DP-IPD target vectors, the non-source target, multi-track targets and templates.

use serde::{Deserialize, Serialize};

use crate::bessel::j0;
use crate::dsp::StftConfig;
use crate::error::{CoreError, Result};
use crate::container::{NamedTensor, WeightContainer};
use crate::geometry::{pair_tdoa, ArrayGeometry, CandidateGrid, Direction, GridKind};
use crate::simulate::FrameTruth;

/// Output frames are produced once per this many STFT frames.
pub const OUTPUT_STRIDE: usize = 12;

/// `F` real parts followed by `F` imaginary parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpIpdVector {
    pub values: Vec<f64>,
}

impl DpIpdVector {
    pub fn bins(&self) -> usize {
        self.values.len() / 2
    }

    pub fn real(&self) -> &[f64] {
        &self.values[..self.bins()]
    }

    pub fn imag(&self) -> &[f64] {
        &self.values[self.bins()..]
    }

    pub fn dot(&self, other: &DpIpdVector) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}

/// Target for frequencies `freqs`: `[cos(2 pi v tau) ..., -sin(2 pi v tau) ...]`.
pub fn dp_ipd_from_tdoa(tau: f64, freqs: &[f64]) -> DpIpdVector {
    let mut values = vec![0.0; 2 * freqs.len()];
    let f = freqs.len();
    for (i, &v) in freqs.iter().enumerate() {
        let phase = 2.0 * std::f64::consts::PI * v * tau;
        values[i] = phase.cos();
        values[f + i] = -phase.sin();
    }
    DpIpdVector { values }
}

pub fn dp_ipd_vector_with(geometry: &ArrayGeometry, m: usize, dir: &Direction, stft: &StftConfig) -> Result<DpIpdVector> {
    let tau = pair_tdoa(geometry, m, dir)?;
    Ok(dp_ipd_from_tdoa(tau, &stft.bin_frequencies()))
}

/// DP-IPD of pair `(reference, m)` for a far-field source in `dir`, default STFT.
pub fn dp_ipd_vector(geometry: &ArrayGeometry, m: usize, dir: &Direction) -> Result<DpIpdVector> {
    dp_ipd_vector_with(geometry, m, dir, &StftConfig::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonSourceMode {
    /// `J0(2 pi v d / c)` real parts, zero imaginary parts.
    #[default]
    Bessel,
    /// All-zero vector.
    Zero,
}

/// Non-source target for a pair at distance `d` meters.
pub fn non_source_from_distance(d: f64, c: f64, freqs: &[f64], mode: NonSourceMode) -> DpIpdVector {
    let mut values = vec![0.0; 2 * freqs.len()];
    if mode == NonSourceMode::Bessel {
        for (i, &v) in freqs.iter().enumerate() {
            values[i] = j0(2.0 * std::f64::consts::PI * v * d / c);
        }
    }
    DpIpdVector { values }
}

pub fn non_source_vector_with(
    geometry: &ArrayGeometry,
    m: usize,
    stft: &StftConfig,
    mode: NonSourceMode,
) -> Result<DpIpdVector> {
    let d = geometry.pair_distance(m)?;
    Ok(non_source_from_distance(d, geometry.sound_speed(), &stft.bin_frequencies(), mode))
}

/// Bessel non-source target of pair `(reference, m)`, default STFT.
pub fn non_source_vector(geometry: &ArrayGeometry, m: usize) -> Result<DpIpdVector> {
    non_source_vector_with(geometry, m, &StftConfig::default(), NonSourceMode::Bessel)
}

/// Templates for every non-reference microphone and grid direction.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateBank {
    pub geometry: ArrayGeometry,
    pub grid: CandidateGrid,
    /// Length `2F`.
    pub dim: usize,
    /// `[pair][direction][2F]`, pairs in [`ArrayGeometry::pair_mics`] order.
    pub data: Vec<f64>,
}

impl TemplateBank {
    pub fn num_pairs(&self) -> usize {
        self.geometry.num_pairs()
    }

    pub fn template(&self, pair: usize, i: usize) -> &[f64] {
        let s = (pair * self.grid.len() + i) * self.dim;
        &self.data[s..s + self.dim]
    }

    /// All templates of one pair, `[direction][2F]`.
    pub fn pair(&self, pair: usize) -> &[f64] {
        let n = self.grid.len() * self.dim;
        &self.data[pair * n..(pair + 1) * n]
    }
}

pub fn build_templates_with(geometry: &ArrayGeometry, grid: &CandidateGrid, stft: &StftConfig) -> Result<TemplateBank> {
    let freqs = stft.bin_frequencies();
    let dim = 2 * freqs.len();
    let mut data = Vec::with_capacity(geometry.num_pairs() * grid.len() * dim);
    for m in geometry.pair_mics() {
        for d in &grid.directions {
            data.extend(dp_ipd_from_tdoa(pair_tdoa(geometry, m, d)?, &freqs).values);
        }
    }
    Ok(TemplateBank {
        geometry: geometry.clone(),
        grid: grid.clone(),
        dim,
        data,
    })
}

pub fn build_templates(geometry: &ArrayGeometry, grid: &CandidateGrid) -> Result<TemplateBank> {
    build_templates_with(geometry, grid, &StftConfig::default())
}

impl TemplateBank {
    /// Cache form: one `[grid, 2F]` tensor per pair named `template/pair{m}/grid`
    /// (`m` the zero-based non-reference microphone), plus the geometry text,
    /// grid description and geometry hash under `meta/`.
    pub fn to_container(&self) -> Result<WeightContainer> {
        let mut c = WeightContainer::new();
        c.push(NamedTensor::text("meta/geometry", &self.geometry.to_text()))?;
        c.push(NamedTensor::text("meta/geometry_hash", &self.geometry.content_hash()))?;
        c.push(NamedTensor::text(
            "meta/grid",
            &grid_text(&self.grid.kind, self.grid.resolution),
        ))?;
        for (p, m) in self.geometry.pair_mics().into_iter().enumerate() {
            c.push(NamedTensor::new(
                format!("template/pair{m}/grid"),
                vec![self.grid.len(), self.dim],
                self.pair(p).iter().map(|&v| v as f32).collect(),
            )?)?;
        }
        Ok(c)
    }

    /// Rebuilds the bank from a cache, checking the stored templates against
    /// a fresh computation at f32 precision.
    pub fn from_container(c: &WeightContainer, stft: &StftConfig) -> Result<TemplateBank> {
        let geometry = ArrayGeometry::parse(&c.require("meta/geometry")?.as_text()?)?;
        if c.require("meta/geometry_hash")?.as_text()? != geometry.content_hash() {
            return Err(CoreError::Container("template geometry hash mismatch".into()));
        }
        let grid_text = c.require("meta/grid")?.as_text()?;
        let (kind, resolution) = parse_grid_text(&grid_text)?;
        let bank = build_templates_with(&geometry, &crate::geometry::make_grid(kind, resolution)?, stft)?;
        for (p, m) in geometry.pair_mics().into_iter().enumerate() {
            let t = c.require(&format!("template/pair{m}/grid"))?;
            if t.dims != [bank.grid.len(), bank.dim] {
                return Err(CoreError::Container(format!("template/pair{m}/grid has dims {:?}", t.dims)));
            }
            if t.data.iter().zip(bank.pair(p)).any(|(a, &b)| *a != b as f32) {
                return Err(CoreError::Container(format!("template/pair{m}/grid differs from the geometry")));
            }
        }
        Ok(bank)
    }
}

fn grid_text(kind: &GridKind, resolution: f64) -> String {
    let k = match kind {
        GridKind::HalfAzimuth => "half_azimuth",
        GridKind::FullAzimuth => "full_azimuth",
        GridKind::Joint => "joint",
    };
    format!("{k} {resolution}")
}

fn parse_grid_text(s: &str) -> Result<(GridKind, f64)> {
    let mut it = s.split_whitespace();
    let kind = match it.next() {
        Some("half_azimuth") => GridKind::HalfAzimuth,
        Some("full_azimuth") => GridKind::FullAzimuth,
        Some("joint") => GridKind::Joint,
        _ => return Err(CoreError::Container(format!("bad grid description {s:?}"))),
    };
    let res = it
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CoreError::Container(format!("bad grid description {s:?}")))?;
    Ok((kind, res))
}

/// Index of the STFT frame that represents output frame `g`: the center of its group.
pub fn group_center(g: usize, frames: usize, stride: usize) -> usize {
    let start = g * stride;
    let len = stride.min(frames - start);
    start + len / 2
}

pub fn num_output_frames(frames: usize, stride: usize) -> usize {
    frames.div_ceil(stride)
}

/// Ground truth resampled to the output frame rate.
pub fn output_truth(frame_truth: &[FrameTruth], stride: usize) -> Vec<FrameTruth> {
    (0..num_output_frames(frame_truth.len(), stride))
        .map(|g| frame_truth[group_center(g, frame_truth.len(), stride)].clone())
        .collect()
}

/// Per output frame, per track, per pair DP-IPD targets.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTrackTarget {
    pub frames: usize,
    pub tracks: usize,
    pub pairs: usize,
    pub dim: usize,
    /// `[frame][track][pair][2F]`.
    pub values: Vec<f64>,
    /// `[frame][track]`.
    pub active: Vec<bool>,
    /// `[frame][track]`, meaningful where active.
    pub directions: Vec<Option<Direction>>,
}

impl MultiTrackTarget {
    pub fn vector(&self, g: usize, k: usize, p: usize) -> &[f64] {
        let s = ((g * self.tracks + k) * self.pairs + p) * self.dim;
        &self.values[s..s + self.dim]
    }

    /// All tracks and pairs of output frame `g`, `[track][pair][2F]`.
    pub fn frame(&self, g: usize) -> &[f64] {
        let n = self.tracks * self.pairs * self.dim;
        &self.values[g * n..(g + 1) * n]
    }

    pub fn is_active(&self, g: usize, k: usize) -> bool {
        self.active[g * self.tracks + k]
    }
}

/// Targets for `tracks` output tracks. Active sources fill tracks in source
/// order; remaining tracks take the non-source vector of each pair.
pub fn assemble_training_target(
    frame_truth: &[FrameTruth],
    geometry: &ArrayGeometry,
    tracks: usize,
    mode: NonSourceMode,
    stft: &StftConfig,
    stride: usize,
) -> Result<MultiTrackTarget> {
    if frame_truth.is_empty() {
        return Err(CoreError::Scene("no frame truth".into()));
    }
    let freqs = stft.bin_frequencies();
    let dim = 2 * freqs.len();
    let pair_mics = geometry.pair_mics();
    let pairs = pair_mics.len();
    let non_source = pair_mics
        .iter()
        .map(|&m| non_source_vector_with(geometry, m, stft, mode))
        .collect::<Result<Vec<_>>>()?;
    let truth = output_truth(frame_truth, stride);
    let frames = truth.len();
    let mut values = Vec::with_capacity(frames * tracks * pairs * dim);
    let mut active = Vec::with_capacity(frames * tracks);
    let mut directions = Vec::with_capacity(frames * tracks);
    for (g, t) in truth.iter().enumerate() {
        let dirs = t.active_directions();
        if dirs.len() > tracks {
            return Err(CoreError::TooManySources {
                frame: g,
                active: dirs.len(),
                tracks,
            });
        }
        for k in 0..tracks {
            match dirs.get(k) {
                Some(d) => {
                    for &m in &pair_mics {
                        values.extend(dp_ipd_from_tdoa(pair_tdoa(geometry, m, d)?, &freqs).values);
                    }
                    active.push(true);
                    directions.push(Some(*d));
                }
                None => {
                    for v in &non_source {
                        values.extend_from_slice(&v.values);
                    }
                    active.push(false);
                    directions.push(None);
                }
            }
        }
    }
    Ok(MultiTrackTarget {
        frames,
        tracks,
        pairs,
        dim,
        values,
        active,
        directions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_grid, GridKind};
    use crate::simulate::SourceFrame;

    #[test]
    fn broadside_is_exact() {
        let g = ArrayGeometry::two_mic(0.04).unwrap();
        let v = dp_ipd_vector(&g, 1, &Direction::azimuth(90.0)).unwrap();
        assert!(v.real().iter().all(|&x| x == 1.0));
        assert!(v.imag().iter().all(|&x| x == 0.0 || x == -0.0));
    }

    #[test]
    fn endfire_bin_32() {
        let g = ArrayGeometry::two_mic(0.04).unwrap();
        let v = dp_ipd_vector(&g, 1, &Direction::azimuth(0.0)).unwrap();
        let phase = 2.0 * std::f64::consts::PI * 1000.0 * 0.04 / 343.0;
        assert!((phase - 0.73273).abs() < 1e-5);
        assert!((v.real()[31] - 0.743349080032561).abs() < 1e-12);
        assert!((v.imag()[31] + 0.668903689042559).abs() < 1e-12);
    }

    #[test]
    fn zero_mode_and_reference_error() {
        let g = ArrayGeometry::two_mic(0.04).unwrap();
        let z = non_source_vector_with(&g, 1, &StftConfig::default(), NonSourceMode::Zero).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));
        assert!(non_source_vector(&g, 0).is_err());
        assert!(dp_ipd_vector(&g, 0, &Direction::azimuth(0.0)).is_err());
    }

    #[test]
    fn template_shape() {
        let g = ArrayGeometry::two_mic(0.04).unwrap();
        let bank = build_templates(&g, &make_grid(GridKind::HalfAzimuth, 1.0).unwrap()).unwrap();
        assert_eq!(bank.num_pairs(), 1);
        assert_eq!(bank.grid.len(), 181);
        assert_eq!(bank.dim, 512);
        assert_eq!(bank.template(0, 90), &dp_ipd_vector(&g, 1, &Direction::azimuth(90.0)).unwrap().values[..]);
    }

    #[test]
    fn template_cache_round_trip() {
        let g = ArrayGeometry::circular(3, 0.05).unwrap();
        let bank = build_templates(&g, &make_grid(GridKind::FullAzimuth, 5.0).unwrap()).unwrap();
        let c = bank.to_container().unwrap();
        assert!(c.get("template/pair1/grid").is_some() && c.get("template/pair2/grid").is_some());
        let back = TemplateBank::from_container(&c, &StftConfig::default()).unwrap();
        assert_eq!(back, bank);
    }

    #[test]
    fn group_centers() {
        assert_eq!(num_output_frames(48, 12), 4);
        assert_eq!(num_output_frames(49, 12), 5);
        assert_eq!(group_center(0, 48, 12), 6);
        assert_eq!(group_center(3, 48, 12), 42);
        assert_eq!(group_center(4, 49, 12), 48);
    }

    fn truth(dirs: &[Option<f64>]) -> FrameTruth {
        FrameTruth {
            sources: dirs
                .iter()
                .map(|d| SourceFrame {
                    active: d.is_some(),
                    direction: Direction::azimuth(d.unwrap_or(0.0)),
                    ratio: if d.is_some() { 1.0 } else { 0.0 },
                })
                .collect(),
        }
    }

    #[test]
    fn gating() {
        let g = ArrayGeometry::two_mic(0.04).unwrap();
        let cfg = StftConfig::default();
        let ft = vec![truth(&[None, None]), truth(&[Some(30.0), None])];
        let t = assemble_training_target(&ft, &g, 2, NonSourceMode::Bessel, &cfg, 1).unwrap();
        let ns = non_source_vector(&g, 1).unwrap();
        assert_eq!(t.vector(0, 0, 0), &ns.values[..]);
        assert_eq!(t.vector(0, 1, 0), &ns.values[..]);
        assert_eq!(t.vector(1, 0, 0), &dp_ipd_vector(&g, 1, &Direction::azimuth(30.0)).unwrap().values[..]);
        assert_eq!(t.vector(1, 1, 0), &ns.values[..]);
        assert!(t.is_active(1, 0) && !t.is_active(1, 1));

        let three = vec![truth(&[Some(1.0), Some(2.0), Some(3.0)])];
        assert!(matches!(
            assemble_training_target(&three, &g, 2, NonSourceMode::Bessel, &cfg, 1),
            Err(CoreError::TooManySources { .. })
        ));
    }
}
