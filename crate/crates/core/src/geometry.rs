//! Microphone-array geometry, far-field delays and candidate-direction grids.
//!
//! Positions are in meters in the array frame. Azimuth is measured in the
//! horizontal plane from the frame's +x axis, counterclockwise; elevation
//! from the horizontal plane toward +z.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};

pub const DEFAULT_SOUND_SPEED: f64 = 343.0;

pub type Position = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    /// Degrees in `[0, 360)`.
    pub azimuth: f64,
    /// Degrees in `[-90, 90]`.
    pub elevation: f64,
}

impl Direction {
    pub fn new(azimuth: f64, elevation: f64) -> Self {
        Direction {
            azimuth: azimuth.rem_euclid(360.0),
            elevation,
        }
    }

    pub fn azimuth(azimuth: f64) -> Self {
        Self::new(azimuth, 0.0)
    }

    /// Unit vector pointing from the array toward the source.
    pub fn unit_vector(&self) -> Position {
        let (ca, sa) = cos_sin_deg(self.azimuth);
        let (ce, se) = cos_sin_deg(self.elevation);
        [ce * ca, ce * sa, se]
    }

    pub fn is_valid(&self) -> bool {
        self.azimuth.is_finite()
            && self.elevation.is_finite()
            && (-90.0..=90.0).contains(&self.elevation)
    }
}

/// Cosine and sine of an angle in degrees, exact at multiples of 90.
fn cos_sin_deg(deg: f64) -> (f64, f64) {
    let q = deg / 90.0;
    if q == q.round() {
        match (q as i64).rem_euclid(4) {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        }
    } else {
        let r = deg.to_radians();
        (r.cos(), r.sin())
    }
}

fn sub(a: &Position, b: &Position) -> Position {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: &Position, b: &Position) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn distance(a: &Position, b: &Position) -> f64 {
    let d = sub(a, b);
    dot(&d, &d).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    positions: Vec<Position>,
    reference: usize,
    sound_speed: f64,
}

impl ArrayGeometry {
    pub fn new(positions: Vec<Position>, reference: usize, sound_speed: f64) -> Result<Self> {
        if positions.len() < 2 {
            return Err(CoreError::Geometry(format!(
                "need at least 2 microphones, got {}",
                positions.len()
            )));
        }
        if reference >= positions.len() {
            return Err(CoreError::MicOutOfRange {
                index: reference,
                count: positions.len(),
            });
        }
        if !(sound_speed.is_finite() && sound_speed > 0.0) {
            return Err(CoreError::Geometry(format!("sound speed {sound_speed} must be positive")));
        }
        if positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CoreError::Geometry("non-finite coordinate".into()));
        }
        for i in 0..positions.len() {
            for j in i + 1..positions.len() {
                if distance(&positions[i], &positions[j]) <= 0.0 {
                    return Err(CoreError::Geometry(format!(
                        "microphones {i} and {j} coincide"
                    )));
                }
            }
        }
        Ok(ArrayGeometry {
            positions,
            reference,
            sound_speed,
        })
    }

    /// Two microphones on the x axis, `spacing` apart, reference at `+x`.
    ///
    /// With this layout the reference-to-other delay for azimuth `az` is
    /// `spacing * cos(az) / c`.
    pub fn two_mic(spacing: f64) -> Result<Self> {
        Self::new(
            vec![[spacing / 2.0, 0.0, 0.0], [-spacing / 2.0, 0.0, 0.0]],
            0,
            DEFAULT_SOUND_SPEED,
        )
    }

    /// `m` microphones on the x axis with uniform `spacing`, reference first (largest x).
    pub fn uniform_linear(m: usize, spacing: f64) -> Result<Self> {
        let half = (m as f64 - 1.0) * spacing / 2.0;
        Self::new(
            (0..m).map(|i| [half - i as f64 * spacing, 0.0, 0.0]).collect(),
            0,
            DEFAULT_SOUND_SPEED,
        )
    }

    /// `m` microphones on a horizontal circle, the reference at azimuth 0.
    pub fn circular(m: usize, radius: f64) -> Result<Self> {
        Self::new(
            (0..m)
                .map(|i| {
                    let a = 2.0 * std::f64::consts::PI * i as f64 / m as f64;
                    [radius * a.cos(), radius * a.sin(), 0.0]
                })
                .collect(),
            0,
            DEFAULT_SOUND_SPEED,
        )
    }

    pub fn with_sound_speed(mut self, c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(CoreError::Geometry(format!("sound speed {c} must be positive")));
        }
        self.sound_speed = c;
        Ok(self)
    }

    pub fn num_mics(&self) -> usize {
        self.positions.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.positions.len() - 1
    }

    pub fn reference(&self) -> usize {
        self.reference
    }

    pub fn sound_speed(&self) -> f64 {
        self.sound_speed
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    /// Non-reference microphones in index order; pair `p` is `(reference, pair_mics()[p])`.
    pub fn pair_mics(&self) -> Vec<usize> {
        (0..self.num_mics()).filter(|&m| m != self.reference).collect()
    }

    pub fn centroid(&self) -> Position {
        let n = self.positions.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.positions {
            for k in 0..3 {
                c[k] += p[k] / n;
            }
        }
        c
    }

    /// Largest inter-microphone distance.
    pub fn aperture(&self) -> f64 {
        let mut best: f64 = 0.0;
        for (i, a) in self.positions.iter().enumerate() {
            for b in &self.positions[i + 1..] {
                best = best.max(distance(a, b));
            }
        }
        best
    }

    fn check_pair(&self, m: usize) -> Result<()> {
        if m >= self.num_mics() {
            return Err(CoreError::MicOutOfRange {
                index: m,
                count: self.num_mics(),
            });
        }
        if m == self.reference {
            return Err(CoreError::ReferencePair(m));
        }
        Ok(())
    }

    pub fn pair_distance(&self, m: usize) -> Result<f64> {
        self.check_pair(m)?;
        Ok(distance(&self.positions[self.reference], &self.positions[m]))
    }

    /// Every reference-pair distance lies in `[lo, hi]` meters.
    pub fn pair_distances_within(&self, lo: f64, hi: f64) -> bool {
        self.pair_mics()
            .iter()
            .all(|&m| (lo..=hi).contains(&self.pair_distance(m).unwrap_or(0.0)))
    }

    /// Canonical text form; see [`ArrayGeometry::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mics {}", self.num_mics());
        let _ = writeln!(s, "reference {}", self.reference);
        let _ = writeln!(s, "sound_speed {}", self.sound_speed);
        for p in &self.positions {
            let _ = writeln!(s, "{} {} {}", p[0], p[1], p[2]);
        }
        s
    }

    /// Parses the geometry text format:
    ///
    /// ```text
    /// # comments and blank lines are ignored
    /// mics 4
    /// reference 0        # zero-based microphone index
    /// sound_speed 343
    /// 0.02 0.0 0.0       # one "x y z" row per microphone, meters
    /// ...
    /// ```
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let mut header = |key: &str| -> Result<(usize, String)> {
            let (line, l) = lines.next().ok_or(CoreError::Parse {
                line: 0,
                msg: format!("missing `{key}` record"),
            })?;
            let mut it = l.split_whitespace();
            if it.next() != Some(key) {
                return Err(CoreError::Parse {
                    line,
                    msg: format!("expected `{key} <value>`"),
                });
            }
            let v = it.next().ok_or(CoreError::Parse {
                line,
                msg: format!("`{key}` needs a value"),
            })?;
            Ok((line, v.to_string()))
        };
        let num = |line: usize, v: &str| -> Result<f64> {
            v.parse::<f64>().map_err(|_| CoreError::Parse {
                line,
                msg: format!("`{v}` is not a number"),
            })
        };
        let (l1, m) = header("mics")?;
        let m = num(l1, &m)? as usize;
        let (l2, r) = header("reference")?;
        let r = num(l2, &r)? as usize;
        let (l3, c) = header("sound_speed")?;
        let c = num(l3, &c)?;
        let mut positions = Vec::with_capacity(m);
        for (line, l) in lines {
            let v: Vec<&str> = l.split_whitespace().collect();
            if v.len() != 3 {
                return Err(CoreError::Parse {
                    line,
                    msg: "expected `x y z`".into(),
                });
            }
            positions.push([num(line, v[0])?, num(line, v[1])?, num(line, v[2])?]);
        }
        if positions.len() != m {
            return Err(CoreError::Parse {
                line: 0,
                msg: format!("declared {m} microphones, found {} rows", positions.len()),
            });
        }
        Self::new(positions, r, c)
    }

    /// SHA-256 of the canonical text form, hex encoded.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Far-field delay of microphone `m` relative to the reference, in seconds.
///
/// `tau = (p_r - p_m) . u / c` with `u` pointing toward the source: positive
/// when the wavefront reaches the reference first. The direct-path
/// inter-channel phase of bin frequency `v` is then `exp(-j 2 pi v tau)`.
pub fn pair_tdoa(geometry: &ArrayGeometry, m: usize, dir: &Direction) -> Result<f64> {
    geometry.check_pair(m)?;
    if !dir.is_valid() {
        return Err(CoreError::Geometry(format!("invalid direction {dir:?}")));
    }
    Ok(tdoa_between(geometry, geometry.reference, m, dir))
}

/// Arrival delay at `b` relative to `a` for a far-field source in `dir`.
pub fn tdoa_between(geometry: &ArrayGeometry, a: usize, b: usize, dir: &Direction) -> f64 {
    let u = dir.unit_vector();
    dot(&sub(&geometry.positions[a], &geometry.positions[b]), &u) / geometry.sound_speed
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    /// Azimuths `0..=180` (linear arrays, front-back ambiguous).
    HalfAzimuth,
    /// Azimuths `0..360`.
    FullAzimuth,
    /// Azimuths `0..360` times elevations `-90..=90`.
    Joint,
}

/// How angular errors are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleMetric {
    /// Circular azimuth difference; elevation ignored.
    Azimuth,
    /// Great-circle angle between unit vectors.
    GreatCircle,
}

impl GridKind {
    pub fn metric(self) -> AngleMetric {
        match self {
            GridKind::Joint => AngleMetric::GreatCircle,
            _ => AngleMetric::Azimuth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateGrid {
    pub kind: GridKind,
    pub resolution: f64,
    pub directions: Vec<Direction>,
}

impl CandidateGrid {
    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

fn steps(span: f64, resolution: f64) -> Result<usize> {
    let n = span / resolution;
    if !(resolution > 0.0) || (n - n.round()).abs() > 1e-9 || n.round() < 1.0 {
        return Err(CoreError::GridResolution { resolution, span });
    }
    Ok(n.round() as usize)
}

pub fn make_grid(kind: GridKind, resolution: f64) -> Result<CandidateGrid> {
    let directions = match kind {
        GridKind::HalfAzimuth => {
            let n = steps(180.0, resolution)?;
            (0..=n).map(|i| Direction::azimuth(i as f64 * resolution)).collect()
        }
        GridKind::FullAzimuth => {
            let n = steps(360.0, resolution)?;
            (0..n).map(|i| Direction::azimuth(i as f64 * resolution)).collect()
        }
        GridKind::Joint => {
            let na = steps(360.0, resolution)?;
            let ne = steps(180.0, resolution)?;
            let mut d = Vec::with_capacity(na * (ne + 1));
            for e in 0..=ne {
                for a in 0..na {
                    d.push(Direction::new(a as f64 * resolution, -90.0 + e as f64 * resolution));
                }
            }
            d
        }
    };
    Ok(CandidateGrid {
        kind,
        resolution,
        directions,
    })
}

/// Angular distance in degrees.
pub fn angular_error(a: &Direction, b: &Direction, metric: AngleMetric) -> f64 {
    match metric {
        AngleMetric::Azimuth => {
            let d = (a.azimuth - b.azimuth).abs().rem_euclid(360.0);
            d.min(360.0 - d)
        }
        AngleMetric::GreatCircle => {
            let c = dot(&a.unit_vector(), &b.unit_vector()).clamp(-1.0, 1.0);
            c.acos().to_degrees()
        }
    }
}

/// Topology families for randomly generated training arrays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrayCategory {
    UniformLinear,
    NonUniformLinear,
    Circular,
    CircularWithCenter,
    AdHoc2d,
    AdHoc3d,
}

impl ArrayCategory {
    pub const ALL: [ArrayCategory; 6] = [
        ArrayCategory::UniformLinear,
        ArrayCategory::NonUniformLinear,
        ArrayCategory::Circular,
        ArrayCategory::CircularWithCenter,
        ArrayCategory::AdHoc2d,
        ArrayCategory::AdHoc3d,
    ];
}

/// Minimum/maximum distance between any two microphones of a generated array.
pub const TRAINING_PAIR_RANGE: (f64, f64) = (0.03, 0.25);

/// Draws an `m`-microphone array of the given category whose every pairwise
/// distance lies in [`TRAINING_PAIR_RANGE`]; microphone 0 is the reference.
pub fn random_array<R: Rng + ?Sized>(rng: &mut R, category: ArrayCategory, m: usize) -> Result<ArrayGeometry> {
    let (lo, hi) = TRAINING_PAIR_RANGE;
    if m < 2 {
        return Err(CoreError::Geometry("need at least 2 microphones".into()));
    }
    let circular_min = match category {
        ArrayCategory::Circular => 2,
        ArrayCategory::CircularWithCenter => 3,
        _ => 2,
    };
    if m < circular_min {
        return Err(CoreError::Geometry(format!("{category:?} needs at least {circular_min} microphones")));
    }
    for _ in 0..10_000 {
        let pos: Vec<Position> = match category {
            ArrayCategory::UniformLinear => {
                let s = rng.gen_range(lo..=hi / (m as f64 - 1.0));
                (0..m).map(|i| [i as f64 * s, 0.0, 0.0]).collect()
            }
            ArrayCategory::NonUniformLinear => {
                let mut x = 0.0;
                let mut v = vec![[0.0, 0.0, 0.0]];
                for _ in 1..m {
                    x += rng.gen_range(lo..=hi / (m as f64 - 1.0).max(1.0) * 1.5);
                    v.push([x, 0.0, 0.0]);
                }
                v
            }
            ArrayCategory::Circular | ArrayCategory::CircularWithCenter => {
                let ring = if category == ArrayCategory::Circular { m } else { m - 1 };
                let r = rng.gen_range(lo..=hi / 2.0);
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                let mut v: Vec<Position> = (0..ring)
                    .map(|i| {
                        let a = phase + std::f64::consts::TAU * i as f64 / ring as f64;
                        [r * a.cos(), r * a.sin(), 0.0]
                    })
                    .collect();
                if category == ArrayCategory::CircularWithCenter {
                    v.insert(0, [0.0, 0.0, 0.0]);
                }
                v
            }
            ArrayCategory::AdHoc2d | ArrayCategory::AdHoc3d => {
                let zs = if category == ArrayCategory::AdHoc3d { hi / 2.0 } else { 0.0 };
                (0..m)
                    .map(|_| {
                        [
                            rng.gen_range(-hi / 2.0..=hi / 2.0),
                            rng.gen_range(-hi / 2.0..=hi / 2.0),
                            if zs > 0.0 { rng.gen_range(-zs..=zs) } else { 0.0 },
                        ]
                    })
                    .collect()
            }
        };
        let ok = (0..m).all(|i| {
            (i + 1..m).all(|j| (lo..=hi).contains(&distance(&pos[i], &pos[j])))
        });
        if ok {
            return ArrayGeometry::new(pos, 0, DEFAULT_SOUND_SPEED);
        }
    }
    Err(CoreError::Geometry(format!(
        "could not draw a {category:?} array with {m} microphones within [{lo}, {hi}] m"
    )))
}
