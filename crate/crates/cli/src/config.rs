//! Declarative run configuration (JSON). Every range is checked before a run starts.

use std::path::{Path, PathBuf};

use ipdnet_core::geometry::{ArrayCategory, ArrayGeometry, GridKind, DEFAULT_SOUND_SPEED};
use ipdnet_core::localize::DETECTION_THRESHOLD;
use ipdnet_core::metrics::{FarDenominator, ScoreConfig, DEFAULT_TOLERANCE};
use ipdnet_core::simulate::{
    room::{DIMENSION_MIN, RT60_RANGE},
    ACTIVITY_THRESHOLD, DEFAULT_SOURCE_DISTANCE, MAX_ACTIVE_SOURCES, SNR_RANGE,
};
use ipdnet_core::targets::{NonSourceMode, OUTPUT_STRIDE};
use ipdnet_model::train::TrainConfig;
use ipdnet_model::ModelConfig;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result, WithPath};

/// A fixed value or an inclusive `[lo, hi]` range sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Span {
    Fixed(f64),
    Range([f64; 2]),
}

impl Span {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            Span::Fixed(v) => (v, v),
            Span::Range([lo, hi]) => (lo, hi),
        }
    }

    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        let (lo, hi) = self.bounds();
        if lo == hi {
            lo
        } else {
            rng.gen_range(lo..=hi)
        }
    }

    fn check(self, field: &str, min: f64, max: f64) -> Result<()> {
        let (lo, hi) = self.bounds();
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(CliError::invalid(format!("{field}: [{lo}, {hi}] is not a valid range")));
        }
        if lo < min || hi > max {
            return Err(CliError::invalid(format!(
                "{field}: [{lo}, {hi}] outside the allowed range [{min}, {max}]"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArrayConfig {
    TwoMic {
        spacing: f64,
    },
    UniformLinear {
        mics: usize,
        spacing: f64,
    },
    Circular {
        mics: usize,
        radius: f64,
    },
    Positions {
        positions: Vec<[f64; 3]>,
        #[serde(default)]
        reference: usize,
    },
    /// Geometry text file, relative to the config file.
    File {
        path: PathBuf,
    },
    /// A fresh random array per utterance.
    Random {
        mics: [usize; 2],
        #[serde(default = "all_categories")]
        categories: Vec<ArrayCategory>,
    },
}

fn all_categories() -> Vec<ArrayCategory> {
    ArrayCategory::ALL.to_vec()
}

impl ArrayConfig {
    /// The fixed geometry, or `None` for random arrays.
    pub fn fixed(&self, base: &Path) -> Result<Option<ArrayGeometry>> {
        let g = match self {
            ArrayConfig::TwoMic { spacing } => ArrayGeometry::two_mic(*spacing)?,
            ArrayConfig::UniformLinear { mics, spacing } => ArrayGeometry::uniform_linear(*mics, *spacing)?,
            ArrayConfig::Circular { mics, radius } => ArrayGeometry::circular(*mics, *radius)?,
            ArrayConfig::Positions { positions, reference } => {
                ArrayGeometry::new(positions.clone(), *reference, DEFAULT_SOUND_SPEED)?
            }
            ArrayConfig::File { path } => {
                let path = base.join(path);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| CliError::invalid(e.to_string()))
                    .at(&path)?;
                ArrayGeometry::parse(&text).at(&path)?
            }
            ArrayConfig::Random { .. } => return Ok(None),
        };
        Ok(Some(g))
    }

    fn validate(&self, base: &Path) -> Result<()> {
        if let ArrayConfig::Random { mics, categories } = self {
            if mics[0] < 2 || mics[0] > mics[1] {
                return Err(CliError::invalid(format!(
                    "scene.array.mics: [{}, {}] must satisfy 2 <= lo <= hi",
                    mics[0], mics[1]
                )));
            }
            if categories.is_empty() {
                return Err(CliError::invalid("scene.array.categories: empty"));
            }
        }
        self.fixed(base).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub array: ArrayConfig,
    /// Seconds per utterance.
    #[serde(default = "default_duration")]
    pub duration: f64,
    /// Number of sources, `[lo, hi]`.
    #[serde(default = "default_sources")]
    pub sources: [usize; 2],
    #[serde(default = "default_snr")]
    pub snr_db: Span,
    /// Degrees.
    #[serde(default = "default_azimuth")]
    pub azimuth: Span,
    /// Degrees.
    #[serde(default = "zero_span")]
    pub elevation: Span,
    /// Minimum angle between simultaneous sources at onset, degrees.
    #[serde(default)]
    pub min_separation: f64,
    /// Fraction of sources that move.
    #[serde(default)]
    pub moving_fraction: f64,
    /// Fraction of utterances rendered in a reverberant room.
    #[serde(default)]
    pub reverb_fraction: f64,
    #[serde(default = "default_rt60")]
    pub rt60: Span,
    /// Latest source onset, seconds; onsets are uniform in `[0, onset_max]`.
    #[serde(default)]
    pub onset_max: f64,
    /// Per-source gain, dB.
    #[serde(default = "zero_span")]
    pub gain_db: Span,
    #[serde(default = "default_sensor_noise")]
    pub sensor_noise_db: f64,
    #[serde(default = "default_distance")]
    pub source_distance: f64,
    /// Directory of mono WAV files used as source signals instead of noise bursts.
    #[serde(default)]
    pub signal_dir: Option<PathBuf>,
}

fn default_duration() -> f64 {
    1.0
}
fn default_sources() -> [usize; 2] {
    [1, 2]
}
fn default_snr() -> Span {
    Span::Range([SNR_RANGE.0, SNR_RANGE.1])
}
fn default_azimuth() -> Span {
    Span::Range([0.0, 180.0])
}
fn zero_span() -> Span {
    Span::Fixed(0.0)
}
fn default_rt60() -> Span {
    Span::Range([RT60_RANGE.0, RT60_RANGE.1])
}
fn default_sensor_noise() -> f64 {
    -30.0
}
fn default_distance() -> f64 {
    DEFAULT_SOURCE_DISTANCE
}

impl SceneConfig {
    pub fn new(array: ArrayConfig) -> Self {
        SceneConfig {
            array,
            duration: default_duration(),
            sources: default_sources(),
            snr_db: default_snr(),
            azimuth: default_azimuth(),
            elevation: zero_span(),
            min_separation: 0.0,
            moving_fraction: 0.0,
            reverb_fraction: 0.0,
            rt60: default_rt60(),
            onset_max: 0.0,
            gain_db: zero_span(),
            sensor_noise_db: default_sensor_noise(),
            source_distance: default_distance(),
            signal_dir: None,
        }
    }

    pub fn validate(&self, base: &Path) -> Result<()> {
        self.array.validate(base)?;
        if !(self.duration.is_finite() && (0.1..=600.0).contains(&self.duration)) {
            return Err(CliError::invalid(format!(
                "scene.duration: {} s outside [0.1, 600] s",
                self.duration
            )));
        }
        let [lo, hi] = self.sources;
        if lo > hi || hi > MAX_ACTIVE_SOURCES {
            return Err(CliError::invalid(format!(
                "scene.sources: [{lo}, {hi}] must satisfy lo <= hi <= {MAX_ACTIVE_SOURCES}"
            )));
        }
        self.snr_db.check("scene.snr_db", SNR_RANGE.0, SNR_RANGE.1)?;
        self.azimuth.check("scene.azimuth", 0.0, 360.0)?;
        self.elevation.check("scene.elevation", -90.0, 90.0)?;
        self.rt60.check("scene.rt60", RT60_RANGE.0, RT60_RANGE.1)?;
        self.gain_db.check("scene.gain_db", -40.0, 40.0)?;
        for (name, v) in [
            ("scene.moving_fraction", self.moving_fraction),
            ("scene.reverb_fraction", self.reverb_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CliError::invalid(format!("{name}: {v} outside [0, 1]")));
            }
        }
        if !(0.0..=180.0).contains(&self.min_separation) {
            return Err(CliError::invalid(format!(
                "scene.min_separation: {} outside [0, 180] degrees",
                self.min_separation
            )));
        }
        if !(self.onset_max >= 0.0 && self.onset_max < self.duration) {
            return Err(CliError::invalid(format!(
                "scene.onset_max: {} must lie in [0, duration)",
                self.onset_max
            )));
        }
        if !self.sensor_noise_db.is_finite() || self.sensor_noise_db > 0.0 {
            return Err(CliError::invalid(format!(
                "scene.sensor_noise_db: {} must be at most 0 dB",
                self.sensor_noise_db
            )));
        }
        // Room placement needs the source circle to fit inside the smallest room.
        let fits = self.source_distance + 0.5 <= DIMENSION_MIN[0] / 2.0;
        if !(self.source_distance.is_finite() && self.source_distance > 0.0) || (self.reverb_fraction > 0.0 && !fits) {
            return Err(CliError::invalid(format!(
                "scene.source_distance: {} m does not fit rooms of at least {:?} m",
                self.source_distance, DIMENSION_MIN
            )));
        }
        if let Some(dir) = &self.signal_dir {
            if !base.join(dir).is_dir() {
                return Err(CliError::invalid(format!("scene.signal_dir: {} is not a directory", dir.display())));
            }
        }
        Ok(())
    }
}

/// Template grid, detection and scoring settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizeConfig {
    #[serde(default = "default_grid")]
    pub grid: GridKind,
    /// Degrees.
    #[serde(default = "default_resolution")]
    pub resolution: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Degrees.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_activity")]
    pub activity_threshold: f64,
    /// STFT frames per output frame.
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub far_denominator: FarDenominator,
    #[serde(default)]
    pub fold_front_back: bool,
}

fn default_grid() -> GridKind {
    GridKind::HalfAzimuth
}
fn default_resolution() -> f64 {
    1.0
}
fn default_threshold() -> f64 {
    DETECTION_THRESHOLD
}
fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}
fn default_activity() -> f64 {
    ACTIVITY_THRESHOLD
}
fn default_stride() -> usize {
    OUTPUT_STRIDE
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        LocalizeConfig {
            grid: default_grid(),
            resolution: default_resolution(),
            threshold: default_threshold(),
            tolerance: default_tolerance(),
            activity_threshold: default_activity(),
            stride: default_stride(),
            far_denominator: FarDenominator::default(),
            fold_front_back: false,
        }
    }
}

impl LocalizeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0 && self.resolution <= 90.0) {
            return Err(CliError::invalid(format!(
                "localize.resolution: {} outside (0, 90] degrees",
                self.resolution
            )));
        }
        if !(-1.0..=1.0).contains(&self.threshold) {
            return Err(CliError::invalid(format!(
                "localize.threshold: {} outside [-1, 1]",
                self.threshold
            )));
        }
        if !(0.0..=180.0).contains(&self.tolerance) {
            return Err(CliError::invalid(format!(
                "localize.tolerance: {} outside [0, 180] degrees",
                self.tolerance
            )));
        }
        if !(self.activity_threshold >= 0.0 && self.activity_threshold.is_finite()) {
            return Err(CliError::invalid(format!(
                "localize.activity_threshold: {} must be non-negative",
                self.activity_threshold
            )));
        }
        if self.stride == 0 {
            return Err(CliError::invalid("localize.stride: must be positive"));
        }
        Ok(())
    }

    pub fn score_config(&self) -> ScoreConfig {
        ScoreConfig {
            tolerance: self.tolerance,
            metric: self.grid.metric(),
            far_denominator: self.far_denominator,
            fold_front_back: self.fold_front_back,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub scene: SceneConfig,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    /// Share of a training set held out for validation when no separate set is given.
    #[serde(default = "default_validation")]
    pub validation_fraction: f64,
    #[serde(default)]
    pub localize: LocalizeConfig,
    /// Directory that relative paths resolve against; the config file's directory.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_validation() -> f64 {
    0.1
}

impl RunConfig {
    pub fn new(scene: SceneConfig) -> Self {
        RunConfig {
            seed: 0,
            scene,
            model: None,
            train: TrainConfig::default(),
            validation_fraction: default_validation(),
            localize: LocalizeConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut c: RunConfig = serde_json::from_str(text).map_err(|e| CliError::invalid(e.to_string()))?;
        c.base_dir = base_dir.to_path_buf();
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::invalid(e.to_string()))
            .at(path)?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&text, &base).at(path)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate(&self.base_dir)?;
        self.localize.validate()?;
        self.train.validate().map_err(|e| CliError::invalid(format!("train: {e}")))?;
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(CliError::invalid(format!(
                "validation_fraction: {} outside [0, 1)",
                self.validation_fraction
            )));
        }
        if let Some(m) = &self.model {
            m.validate().map_err(|e| CliError::invalid(format!("model: {e}")))?;
            if m.stride() != self.localize.stride {
                return Err(CliError::invalid(format!(
                    "model pools give {} frames per output frame but localize.stride is {}",
                    m.stride(),
                    self.localize.stride
                )));
            }
            if let (ipdnet_model::Variant::Fixed, Some(g)) = (m.variant, self.scene.array.fixed(&self.base_dir)?) {
                if g.num_mics() != m.mics {
                    return Err(CliError::invalid(format!(
                        "model.mics: {} but the array has {} microphones",
                        m.mics,
                        g.num_mics()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn non_source(&self) -> NonSourceMode {
        self.train.non_source
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
