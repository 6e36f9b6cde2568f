//! Multichannel scene rendering with per-frame ground truth.

mod delay;
pub mod noise;
pub mod room;
pub mod signal;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{stft, StftConfig, StftTensor};
use crate::error::{CoreError, Result};
use crate::geometry::{ArrayGeometry, Direction, Position};

pub use delay::{add_delayed, TAPS as DELAY_TAPS};
pub use noise::{diffuse_noise, diffuse_noise_at, sensor_noise};
pub use room::Room;
pub use signal::noise_burst;

/// Sources per frame the scene may hold at once.
pub const MAX_ACTIVE_SOURCES: usize = 2;
pub const ACTIVITY_THRESHOLD: f64 = 0.001;
pub const SNR_RANGE: (f64, f64) = (-5.0, 15.0);
pub const MAX_SOURCE_SPEED: f64 = 1.0;
pub const DEFAULT_SOURCE_DISTANCE: f64 = 1.5;
/// Moving sources are re-steered every block of this many samples.
pub const BLOCK: usize = 128;
/// Noise RMS used when the sources are silent and no SNR reference exists.
pub const SILENT_NOISE_RMS: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    /// Seconds from scene start.
    pub time: f64,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    Static { direction: Direction },
    /// Great-circle interpolation between waypoints, held constant outside them.
    Waypoints { points: Vec<Waypoint> },
}

fn from_unit(u: [f64; 3]) -> Direction {
    let el = u[2].clamp(-1.0, 1.0).asin().to_degrees();
    let az = if u[0].abs() < 1e-15 && u[1].abs() < 1e-15 {
        0.0
    } else {
        u[1].atan2(u[0]).to_degrees()
    };
    Direction::new(az, el)
}

fn arc(a: &Direction, b: &Direction) -> f64 {
    let (u, v) = (a.unit_vector(), b.unit_vector());
    (u[0] * v[0] + u[1] * v[1] + u[2] * v[2]).clamp(-1.0, 1.0).acos()
}

fn slerp(a: &Direction, b: &Direction, w: f64) -> Direction {
    let omega = arc(a, b);
    if omega < 1e-12 {
        return *a;
    }
    let (u, v) = (a.unit_vector(), b.unit_vector());
    let (ka, kb) = (((1.0 - w) * omega).sin() / omega.sin(), (w * omega).sin() / omega.sin());
    from_unit([ka * u[0] + kb * v[0], ka * u[1] + kb * v[1], ka * u[2] + kb * v[2]])
}

impl Trajectory {
    pub fn at(&self, time: f64) -> Direction {
        match self {
            Trajectory::Static { direction } => *direction,
            Trajectory::Waypoints { points } => {
                let first = &points[0];
                if time <= first.time {
                    return first.direction;
                }
                for pair in points.windows(2) {
                    let (a, b) = (&pair[0], &pair[1]);
                    if time <= b.time {
                        let w = if b.time > a.time { (time - a.time) / (b.time - a.time) } else { 1.0 };
                        return slerp(&a.direction, &b.direction, w);
                    }
                }
                points[points.len() - 1].direction
            }
        }
    }

    pub fn is_static(&self) -> bool {
        match self {
            Trajectory::Static { .. } => true,
            Trajectory::Waypoints { points } => points.windows(2).all(|p| p[0].direction == p[1].direction),
        }
    }

    /// Largest source speed in m/s for a source `distance` meters away.
    pub fn max_speed(&self, distance: f64) -> f64 {
        match self {
            Trajectory::Static { .. } => 0.0,
            Trajectory::Waypoints { points } => points
                .windows(2)
                .map(|p| {
                    let dt = p[1].time - p[0].time;
                    let travel = arc(&p[0].direction, &p[1].direction) * distance;
                    if travel == 0.0 {
                        0.0
                    } else if dt <= 0.0 {
                        f64::INFINITY
                    } else {
                        travel / dt
                    }
                })
                .fold(0.0, f64::max),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Trajectory::Static { direction } if !direction.is_valid() => {
                Err(CoreError::Scene(format!("invalid direction {direction:?}")))
            }
            Trajectory::Static { .. } => Ok(()),
            Trajectory::Waypoints { points } => {
                if points.is_empty() {
                    return Err(CoreError::Scene("trajectory without waypoints".into()));
                }
                if points.iter().any(|p| !p.direction.is_valid() || !p.time.is_finite()) {
                    return Err(CoreError::Scene("invalid waypoint".into()));
                }
                if points.windows(2).any(|p| p[1].time < p[0].time) {
                    return Err(CoreError::Scene("waypoint times must not decrease".into()));
                }
                if points.windows(2).any(|p| arc(&p[0].direction, &p[1].direction) > 179f64.to_radians()) {
                    return Err(CoreError::Scene("consecutive waypoints are (nearly) antipodal".into()));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceSignal {
    /// Synthetic speech-like noise, see [`noise_burst`].
    Burst { seed: u64 },
    /// Caller-supplied mono samples at the scene rate; `label` names their origin.
    Samples {
        label: String,
        #[serde(skip)]
        samples: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub signal: SourceSignal,
    pub trajectory: Trajectory,
    /// Seconds; the signal's first sample plays here.
    pub onset: f64,
    /// Seconds; the source is silent from here on.
    pub offset: f64,
    #[serde(default = "unit_gain")]
    pub gain: f64,
}

fn unit_gain() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub geometry: ArrayGeometry,
    pub sources: Vec<SourceSpec>,
    pub room: Room,
    /// `None` renders without noise.
    pub snr_db: Option<f64>,
    /// Uncorrelated sensor noise level relative to the diffuse noise, dB.
    pub sensor_noise_db: f64,
    pub source_distance: f64,
    pub duration: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(geometry: ArrayGeometry, duration: f64, seed: u64) -> Self {
        SceneSpec {
            geometry,
            sources: Vec::new(),
            room: Room::anechoic(),
            snr_db: None,
            sensor_noise_db: -30.0,
            source_distance: DEFAULT_SOURCE_DISTANCE,
            duration,
            sample_rate: crate::dsp::SAMPLE_RATE,
            seed,
        }
    }

    pub fn samples(&self) -> usize {
        (self.duration * self.sample_rate as f64).round() as usize
    }

    fn source_position(&self, dir: &Direction) -> Position {
        let u = dir.unit_vector();
        let c = self.room.array_center;
        let r = self.source_distance;
        [c[0] + r * u[0], c[1] + r * u[1], c[2] + r * u[2]]
    }

    pub fn validate(&self) -> Result<()> {
        let fs = self.sample_rate as f64;
        if self.sample_rate == 0 {
            return Err(CoreError::Scene("sample rate must be positive".into()));
        }
        if !(self.duration.is_finite() && self.samples() >= crate::dsp::WINDOW_LENGTH) {
            return Err(CoreError::Scene(format!(
                "duration {} s is shorter than one {}-sample window",
                self.duration,
                crate::dsp::WINDOW_LENGTH
            )));
        }
        if let Some(snr) = self.snr_db {
            if !(SNR_RANGE.0..=SNR_RANGE.1).contains(&snr) {
                return Err(CoreError::Scene(format!(
                    "snr {snr} dB outside [{}, {}] dB",
                    SNR_RANGE.0, SNR_RANGE.1
                )));
            }
        }
        if !self.sensor_noise_db.is_finite() {
            return Err(CoreError::Scene("sensor noise level must be finite".into()));
        }
        // Far field: the source must sit well outside the array aperture.
        let aperture = self.geometry.aperture();
        if !(self.source_distance >= 0.5 && self.source_distance >= 4.0 * aperture) {
            return Err(CoreError::Scene(format!(
                "source distance {} m leaves far-field validity for a {aperture:.3} m aperture",
                self.source_distance
            )));
        }
        self.room.validate()?;
        for (k, s) in self.sources.iter().enumerate() {
            s.trajectory.validate()?;
            if !(s.onset.is_finite() && s.offset.is_finite() && s.onset >= 0.0 && s.offset > s.onset) {
                return Err(CoreError::Scene(format!("source {k}: need 0 <= onset < offset")));
            }
            if !s.gain.is_finite() {
                return Err(CoreError::Scene(format!("source {k}: gain must be finite")));
            }
            let speed = s.trajectory.max_speed(self.source_distance);
            if speed > MAX_SOURCE_SPEED + 1e-9 {
                return Err(CoreError::Scene(format!(
                    "source {k} moves at {speed:.2} m/s, above {MAX_SOURCE_SPEED} m/s"
                )));
            }
            if self.room.enabled {
                let step = BLOCK as f64 / fs;
                let mut t = s.onset;
                while t <= s.offset.min(self.duration) {
                    let p = self.source_position(&s.trajectory.at(t));
                    if !self.room.contains(&p, 0.1) {
                        return Err(CoreError::Scene(format!("source {k} trajectory leaves the room at {t:.3} s")));
                    }
                    t += step;
                }
            }
        }
        // Overlap count at every onset.
        for a in &self.sources {
            let overlapping = self
                .sources
                .iter()
                .filter(|b| b.onset <= a.onset && a.onset < b.offset)
                .count();
            if overlapping > MAX_ACTIVE_SOURCES {
                return Err(CoreError::Scene(format!(
                    "{overlapping} sources overlap at {:.3} s, at most {MAX_ACTIVE_SOURCES} allowed",
                    a.onset
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceFrame {
    pub active: bool,
    pub direction: Direction,
    pub ratio: f64,
}

/// Ground truth of one STFT frame: one entry per scene source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub sources: Vec<SourceFrame>,
}

impl FrameTruth {
    pub fn active_directions(&self) -> Vec<Direction> {
        self.sources.iter().filter(|s| s.active).map(|s| s.direction).collect()
    }

    pub fn num_active(&self) -> usize {
        self.sources.iter().filter(|s| s.active).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneAudio {
    /// `[channel][sample]`.
    pub mixture: Vec<Vec<f64>>,
    /// Direct path of each source at the reference microphone, `[source][sample]`.
    pub direct_ref: Vec<Vec<f64>>,
    /// The scaled noise contained in `mixture`, `[channel][sample]` (zeros when disabled).
    pub noise: Vec<Vec<f64>>,
    /// Mean per-channel power of the summed direct paths.
    pub direct_power: f64,
    /// One entry per STFT frame.
    pub frame_truth: Vec<FrameTruth>,
    pub stft: StftConfig,
}

impl SceneAudio {
    /// Ratio of summed direct-path power to noise power, dB.
    pub fn measured_snr_db(&self) -> f64 {
        let (m, t) = (self.noise.len(), self.noise[0].len());
        let p = self.noise.iter().flatten().map(|v| v * v).sum::<f64>() / (m * t) as f64;
        10.0 * (self.direct_power / p).log10()
    }
}

fn place_signal(spec: &SceneSpec, source: &SourceSpec, len: usize) -> Vec<f64> {
    let fs = spec.sample_rate as f64;
    let start = (source.onset * fs).round() as usize;
    let stop = ((source.offset * fs).round() as usize).min(len);
    let mut out = vec![0.0; len];
    if start >= stop {
        return out;
    }
    let material = match &source.signal {
        SourceSignal::Burst { seed } => noise_burst(*seed, stop - start, spec.sample_rate),
        SourceSignal::Samples { samples, .. } => samples.clone(),
    };
    for (o, s) in out[start..stop].iter_mut().zip(material) {
        *o = source.gain * s;
    }
    out
}

/// Delay (samples) and gain of every propagation path to every microphone.
struct Paths {
    /// `[mic]`: list of `(delay, gain)`.
    direct: Vec<(f64, f64)>,
    reverb: Vec<Vec<(f64, f64)>>,
}

fn paths(spec: &SceneSpec, dir: &Direction) -> Paths {
    let g = &spec.geometry;
    let fs = spec.sample_rate as f64;
    let c = g.sound_speed();
    let r = spec.source_distance;
    let u = dir.unit_vector();
    let centroid = g.centroid();
    let direct = g
        .positions()
        .iter()
        .map(|p| {
            let proj = (0..3).map(|k| (p[k] - centroid[k]) * u[k]).sum::<f64>();
            ((r - proj) / c * fs, 1.0 / r)
        })
        .collect();
    let reverb = if spec.room.enabled {
        let beta = spec.room.reflection();
        let images = spec.room.images(&spec.source_position(dir));
        let a = spec.room.array_center;
        g.positions()
            .iter()
            .map(|p| {
                let mic = [a[0] + p[0] - centroid[0], a[1] + p[1] - centroid[1], a[2] + p[2] - centroid[2]];
                images
                    .iter()
                    .map(|(img, refl)| {
                        let d = crate::geometry::distance(img, &mic);
                        (d / c * fs, beta.powi(*refl as i32) / d)
                    })
                    .collect()
            })
            .collect()
    } else {
        vec![Vec::new(); g.num_mics()]
    };
    Paths { direct, reverb }
}

/// Renders one source: `(direct, reverb)`, each `[mic][sample]`.
fn render_source(spec: &SceneSpec, source: &SourceSpec, len: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let m = spec.geometry.num_mics();
    let s = place_signal(spec, source, len);
    let mut direct = vec![vec![0.0; len]; m];
    let mut reverb = vec![vec![0.0; len]; m];
    let mut apply = |segment: &[f64], offset: i64, p: &Paths| {
        for mic in 0..m {
            let (d, g) = p.direct[mic];
            add_delayed(&mut direct[mic], segment, offset, d, g);
            for &(d, g) in &p.reverb[mic] {
                add_delayed(&mut reverb[mic], segment, offset, d, g);
            }
        }
    };
    let fs = spec.sample_rate as f64;
    if source.trajectory.is_static() {
        apply(&s, 0, &paths(spec, &source.trajectory.at(0.0)));
    } else {
        // Periodic Hann of 2*BLOCK at hop BLOCK sums to one; block b is centered on sample b*BLOCK.
        let window = crate::dsp::hann(2 * BLOCK);
        let blocks = len.div_ceil(BLOCK) + 1;
        let mut segment = vec![0.0; 2 * BLOCK];
        for b in 0..blocks {
            let start = b as i64 * BLOCK as i64 - BLOCK as i64;
            let mut any = false;
            for (i, v) in segment.iter_mut().enumerate() {
                let t = start + i as i64;
                *v = if t >= 0 && (t as usize) < len { s[t as usize] * window[i] } else { 0.0 };
                any |= *v != 0.0;
            }
            if any {
                let dir = source.trajectory.at((b * BLOCK) as f64 / fs);
                apply(&segment, start, &paths(spec, &dir));
            }
        }
    }
    (direct, reverb)
}

/// Per-source activity `v_k(n) = (1/F) sum_f |D_k(n,f)| / |X_r(n,f)|`; bins with
/// `|X_r| = 0` contribute 0.
pub fn activity_ratio(direct_ref: &StftTensor, mixture_ref: &StftTensor, frame: usize) -> Result<Vec<f64>> {
    if direct_ref.frames != mixture_ref.frames || direct_ref.bins != mixture_ref.bins {
        return Err(CoreError::Shape(format!(
            "direct reference has {}x{} frames x bins, mixture {}x{}",
            direct_ref.frames, direct_ref.bins, mixture_ref.frames, mixture_ref.bins
        )));
    }
    if frame >= mixture_ref.frames {
        return Err(CoreError::FrameOutOfRange {
            frame,
            frames: mixture_ref.frames,
        });
    }
    let x = mixture_ref.frame(0, frame);
    Ok((0..direct_ref.channels)
        .map(|k| {
            let d = direct_ref.frame(k, frame);
            let sum: f64 = d
                .iter()
                .zip(x)
                .map(|(d, x)| {
                    let den = x.norm();
                    if den == 0.0 {
                        0.0
                    } else {
                        d.norm() / den
                    }
                })
                .sum();
            sum / x.len() as f64
        })
        .collect())
}

pub fn render_scene(spec: &SceneSpec) -> Result<SceneAudio> {
    spec.validate()?;
    let len = spec.samples();
    let m = spec.geometry.num_mics();
    let r = spec.geometry.reference();
    let mut mixture = vec![vec![0.0; len]; m];
    let mut direct_sum = vec![vec![0.0; len]; m];
    let mut direct_ref = Vec::with_capacity(spec.sources.len());
    for source in &spec.sources {
        let (direct, reverb) = render_source(spec, source, len);
        for mic in 0..m {
            for t in 0..len {
                mixture[mic][t] += direct[mic][t] + reverb[mic][t];
                direct_sum[mic][t] += direct[mic][t];
            }
        }
        direct_ref.push(direct[r].clone());
    }
    let direct_power = direct_sum.iter().flatten().map(|v| v * v).sum::<f64>() / (m * len) as f64;

    let mut noise = vec![vec![0.0; len]; m];
    if let Some(snr) = spec.snr_db {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (diffuse_seed, sensor_seed) = (rng.gen::<u64>(), rng.gen::<u64>());
        let fs = spec.sample_rate as usize;
        let diffuse = diffuse_noise(&spec.geometry, len.max(fs), spec.sample_rate, diffuse_seed)?;
        let sensor = sensor_noise(m, len, sensor_seed);
        let sensor_gain = 10f64.powf(spec.sensor_noise_db / 20.0);
        for mic in 0..m {
            for t in 0..len {
                noise[mic][t] = diffuse[mic][t] + sensor_gain * sensor[mic][t];
            }
        }
        let p = noise.iter().flatten().map(|v| v * v).sum::<f64>() / (m * len) as f64;
        let scale = if direct_power > 0.0 {
            (direct_power / (p * 10f64.powf(snr / 10.0))).sqrt()
        } else {
            SILENT_NOISE_RMS / p.sqrt()
        };
        for mic in 0..m {
            for t in 0..len {
                noise[mic][t] *= scale;
                mixture[mic][t] += noise[mic][t];
            }
        }
    }

    let cfg = StftConfig {
        sample_rate: spec.sample_rate,
        ..StftConfig::default()
    };
    let frames = cfg.num_frames(len);
    let mut frame_truth = Vec::with_capacity(frames);
    if spec.sources.is_empty() {
        frame_truth.resize(frames, FrameTruth { sources: Vec::new() });
    } else {
        let d = stft(&direct_ref, &cfg)?;
        let x = stft(&mixture[r..=r], &cfg)?;
        for n in 0..frames {
            let ratios = activity_ratio(&d, &x, n)?;
            let t = cfg.frame_center(n) as f64 / spec.sample_rate as f64;
            frame_truth.push(FrameTruth {
                sources: spec
                    .sources
                    .iter()
                    .zip(ratios)
                    .map(|(s, ratio)| SourceFrame {
                        active: ratio > ACTIVITY_THRESHOLD,
                        direction: s.trajectory.at(t),
                        ratio,
                    })
                    .collect(),
            });
        }
    }
    Ok(SceneAudio {
        mixture,
        direct_ref,
        noise,
        direct_power,
        frame_truth,
        stft: cfg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_with(dirs: &[f64]) -> SceneSpec {
        let mut spec = SceneSpec::new(ArrayGeometry::two_mic(0.04).unwrap(), 1.0, 7);
        for (k, &az) in dirs.iter().enumerate() {
            spec.sources.push(SourceSpec {
                signal: SourceSignal::Burst { seed: 100 + k as u64 },
                trajectory: Trajectory::Static {
                    direction: Direction::azimuth(az),
                },
                onset: 0.0,
                offset: 1.0,
                gain: 1.0,
            });
        }
        spec
    }

    #[test]
    fn trajectory_interpolation_wraps() {
        let t = Trajectory::Waypoints {
            points: vec![
                Waypoint { time: 0.0, direction: Direction::azimuth(350.0) },
                Waypoint { time: 1.0, direction: Direction::azimuth(10.0) },
            ],
        };
        assert!(crate::geometry::angular_error(&t.at(0.5), &Direction::azimuth(0.0), crate::geometry::AngleMetric::Azimuth) < 1e-9);
        assert_eq!(t.at(-1.0), Direction::azimuth(350.0));
        assert_eq!(t.at(2.0), Direction::azimuth(10.0));
    }

    #[test]
    fn speed_limit() {
        let mut spec = spec_with(&[30.0]);
        spec.sources[0].trajectory = Trajectory::Waypoints {
            points: vec![
                Waypoint { time: 0.0, direction: Direction::azimuth(0.0) },
                Waypoint { time: 0.1, direction: Direction::azimuth(90.0) },
            ],
        };
        assert!(spec.validate().unwrap_err().to_string().contains("m/s"));
    }

    #[test]
    fn too_many_sources() {
        let spec = spec_with(&[10.0, 50.0, 90.0]);
        assert!(matches!(spec.validate(), Err(CoreError::Scene(_))));
    }

    #[test]
    fn far_field_rejected() {
        let mut spec = spec_with(&[10.0]);
        spec.source_distance = 0.05;
        assert!(spec.validate().unwrap_err().to_string().contains("far-field"));
    }

    #[test]
    fn snr_is_exact() {
        let mut spec = spec_with(&[40.0]);
        spec.snr_db = Some(5.0);
        let a = render_scene(&spec).unwrap();
        assert!((a.measured_snr_db() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn block_rendering_matches_static() {
        let mut a = spec_with(&[40.0]);
        let s = render_scene(&a).unwrap();
        a.sources[0].trajectory = Trajectory::Waypoints {
            points: vec![
                Waypoint { time: 0.0, direction: Direction::azimuth(40.0) },
                Waypoint { time: 1.0, direction: Direction::azimuth(40.0 + 1e-9) },
            ],
        };
        let b = render_scene(&a).unwrap();
        let peak = s.mixture[0].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in s.mixture.iter().flatten().zip(b.mixture.iter().flatten()) {
            assert!((x - y).abs() < 1e-9 * peak.max(1.0));
        }
    }
}
