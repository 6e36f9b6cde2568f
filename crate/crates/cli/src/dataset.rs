//! Simulated datasets on disk.
//!
//! Layout: `manifest.json`, `config.json` and one directory per utterance
//! holding `mixture.wav` (all microphones), `direct_ref_{k}.wav` (source `k`
//! at the reference microphone, direct path only) and `meta.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ipdnet_core::container::write_atomic;
use ipdnet_core::dsp::StftConfig;
use ipdnet_core::geometry::{angular_error, random_array, AngleMetric, ArrayGeometry, Direction};
use ipdnet_core::simulate::room::{DIMENSION_MAX, DIMENSION_MIN};
use ipdnet_core::simulate::{
    render_scene, FrameTruth, Room, SceneSpec, SourceSignal, SourceSpec, Trajectory, Waypoint, MAX_SOURCE_SPEED,
};
use ipdnet_core::wav::{read_wav, write_wav, Audio};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, SceneConfig};
use crate::error::{CliError, Result, WithPath};
use crate::lock::{DirLock, LOCK_FILE};

pub const MANIFEST: &str = "manifest.json";
pub const DATASET_FORMAT: &str = "ipdnet-dataset";
pub const DATASET_VERSION: u32 = 1;
const MAX_DRAWS: usize = 100;

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).at(path)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub geometry_hash: String,
    /// File name to SHA-256.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config_sha256: String,
    pub utterances: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceMeta {
    pub id: String,
    pub index: usize,
    pub scene: SceneSpec,
    pub geometry_hash: String,
    /// `None` when the scene is noise-free.
    pub measured_snr_db: Option<f64>,
    pub direct_power: f64,
    pub stft: StftConfig,
    /// One entry per STFT frame.
    pub frame_truth: Vec<FrameTruth>,
}

pub fn utterance_id(index: usize) -> String {
    format!("utt{index:05}")
}

fn utterance_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn signal_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .at(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::invalid(format!("{}: no WAV files", dir.display())));
    }
    Ok(files)
}

/// A random excerpt of a mono file, looped when shorter than `len`.
fn excerpt<R: Rng + ?Sized>(rng: &mut R, path: &Path, len: usize, fs: u32) -> Result<(String, Vec<f64>)> {
    let Audio { sample_rate, channels } = read_wav(path).at(path)?;
    if sample_rate != fs || channels.is_empty() || channels[0].is_empty() {
        return Err(CliError::invalid(format!(
            "{}: need non-empty audio at {fs} Hz, found {sample_rate} Hz",
            path.display()
        )));
    }
    let x = &channels[0];
    let start = rng.gen_range(0..x.len());
    let samples = (0..len).map(|i| x[(start + i) % x.len()]).collect();
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    Ok((format!("{name}@{start}"), samples))
}

fn draw_direction<R: Rng + ?Sized>(rng: &mut R, cfg: &SceneConfig) -> Direction {
    Direction::new(cfg.azimuth.sample(rng), cfg.elevation.sample(rng))
}

fn draw_room<R: Rng + ?Sized>(rng: &mut R, cfg: &SceneConfig) -> Room {
    if cfg.reverb_fraction == 0.0 || rng.gen::<f64>() >= cfg.reverb_fraction {
        return Room::anechoic();
    }
    let dims: [f64; 3] = std::array::from_fn(|k| rng.gen_range(DIMENSION_MIN[k]..=DIMENSION_MAX[k]));
    let r = cfg.source_distance + 0.5;
    let center = [
        rng.gen_range(r..=dims[0] - r),
        rng.gen_range(r..=dims[1] - r),
        rng.gen_range(1.0..=(dims[2] - 0.5).min(2.0)),
    ];
    Room {
        dimensions: dims,
        rt60: cfg.rt60.sample(rng),
        enabled: true,
        array_center: center,
        max_order: 2,
    }
}

fn draw_trajectory<R: Rng + ?Sized>(rng: &mut R, cfg: &SceneConfig, start: Direction, onset: f64) -> Trajectory {
    if cfg.moving_fraction == 0.0 || rng.gen::<f64>() >= cfg.moving_fraction {
        return Trajectory::Static { direction: start };
    }
    // Stay a little under the speed limit so the check never trips on rounding.
    let span = cfg.duration - onset;
    let max_deg = (0.95 * MAX_SOURCE_SPEED / cfg.source_distance * span).to_degrees();
    let (lo, hi) = cfg.azimuth.bounds();
    let end_az = (start.azimuth + rng.gen_range(-max_deg..=max_deg)).clamp(lo, hi.min(359.999));
    Trajectory::Waypoints {
        points: vec![
            Waypoint {
                time: onset,
                direction: start,
            },
            Waypoint {
                time: cfg.duration,
                direction: Direction::new(end_az, start.elevation),
            },
        ],
    }
}

fn draw_scene(
    rng: &mut ChaCha8Rng,
    cfg: &SceneConfig,
    base: &Path,
    geometry: Option<&ArrayGeometry>,
    seed: u64,
) -> Result<SceneSpec> {
    let geometry = match (geometry, &cfg.array) {
        (Some(g), _) => g.clone(),
        (None, crate::config::ArrayConfig::Random { mics, categories }) => {
            let m = rng.gen_range(mics[0]..=mics[1]);
            let category = *categories.choose(rng).expect("validated non-empty");
            random_array(rng, category, m)?
        }
        (None, _) => unreachable!("fixed arrays are resolved by the caller"),
    };
    let mut spec = SceneSpec::new(geometry, cfg.duration, seed);
    spec.room = draw_room(rng, cfg);
    spec.snr_db = Some(cfg.snr_db.sample(rng));
    spec.sensor_noise_db = cfg.sensor_noise_db;
    spec.source_distance = cfg.source_distance;
    let count = rng.gen_range(cfg.sources[0]..=cfg.sources[1]);
    let files = cfg.signal_dir.as_ref().map(|d| signal_files(&base.join(d))).transpose()?;
    let mut starts: Vec<Direction> = Vec::new();
    for _ in 0..count {
        let onset = if cfg.onset_max > 0.0 {
            rng.gen_range(0.0..=cfg.onset_max)
        } else {
            0.0
        };
        let mut dir = draw_direction(rng, cfg);
        for _ in 0..MAX_DRAWS {
            if starts
                .iter()
                .all(|s| angular_error(s, &dir, AngleMetric::GreatCircle) >= cfg.min_separation)
            {
                break;
            }
            dir = draw_direction(rng, cfg);
        }
        starts.push(dir);
        let signal = match &files {
            None => SourceSignal::Burst { seed: rng.gen() },
            Some(files) => {
                let path = files.choose(rng).expect("non-empty");
                let len = ((cfg.duration - onset) * spec.sample_rate as f64).ceil() as usize;
                let (label, samples) = excerpt(rng, path, len, spec.sample_rate)?;
                SourceSignal::Samples { label, samples }
            }
        };
        spec.sources.push(SourceSpec {
            signal,
            trajectory: draw_trajectory(rng, cfg, dir, onset),
            onset,
            offset: cfg.duration,
            gain: 10f64.powf(cfg.gain_db.sample(rng) / 20.0),
        });
    }
    Ok(spec)
}

/// Scene of utterance `index`; depends only on `(config, seed, index)`.
pub fn sample_scene(config: &RunConfig, geometry: Option<&ArrayGeometry>, index: usize) -> Result<SceneSpec> {
    let mut rng = utterance_rng(config.seed, index);
    let mut last = None;
    for _ in 0..MAX_DRAWS {
        let scene_seed = rng.gen();
        let spec = draw_scene(&mut rng, &config.scene, &config.base_dir, geometry, scene_seed)?;
        match spec.validate() {
            Ok(()) => return Ok(spec),
            Err(e) => last = Some(e),
        }
    }
    Err(CliError::invalid(format!(
        "no valid scene for utterance {index} after {MAX_DRAWS} draws: {}",
        last.map(|e| e.to_string()).unwrap_or_default()
    )))
}

fn write_utterance(dir: &Path, id: &str, index: usize, spec: SceneSpec) -> Result<ManifestEntry> {
    let audio = render_scene(&spec)?;
    let udir = dir.join(id);
    std::fs::create_dir_all(&udir).at(&udir)?;
    let fs = spec.sample_rate;
    let mut names = vec!["mixture.wav".to_string()];
    write_wav(&udir.join("mixture.wav"), fs, &audio.mixture).at(&udir)?;
    for (k, d) in audio.direct_ref.iter().enumerate() {
        let name = format!("direct_ref_{k}.wav");
        write_wav(&udir.join(&name), fs, std::slice::from_ref(d)).at(&udir)?;
        names.push(name);
    }
    let geometry_hash = spec.geometry.content_hash();
    let measured = audio.measured_snr_db();
    let meta = UtteranceMeta {
        id: id.to_string(),
        index,
        geometry_hash: geometry_hash.clone(),
        measured_snr_db: measured.is_finite().then_some(measured),
        direct_power: audio.direct_power,
        stft: audio.stft,
        frame_truth: audio.frame_truth,
        scene: spec,
    };
    let json = serde_json::to_vec_pretty(&meta).map_err(|e| CliError::runtime(e.to_string()))?;
    write_atomic(&udir.join("meta.json"), &json).at(&udir)?;
    names.push("meta.json".into());
    let mut files = BTreeMap::new();
    for n in names {
        files.insert(n.clone(), sha256_file(&udir.join(&n))?);
    }
    Ok(ManifestEntry {
        id: id.to_string(),
        geometry_hash,
        files,
    })
}

/// Renders `count` utterances into the empty (or new) directory `out`.
pub fn simulate(config: &RunConfig, out: &Path, count: usize) -> Result<Manifest> {
    config.validate()?;
    if out.is_dir() {
        let busy = std::fs::read_dir(out)
            .at(out)?
            .filter_map(|e| e.ok())
            .any(|e| e.file_name() != LOCK_FILE);
        if busy {
            return Err(CliError::invalid(format!("{} is not empty", out.display())));
        }
    }
    let _lock = DirLock::acquire(out)?;
    let geometry = config.scene.array.fixed(&config.base_dir)?;
    let utterances = (0..count)
        .into_par_iter()
        .map(|i| {
            let spec = sample_scene(config, geometry.as_ref(), i)?;
            write_utterance(out, &utterance_id(i), i, spec)
        })
        .collect::<Result<Vec<_>>>()?;
    let config_json = config.to_json();
    write_atomic(&out.join("config.json"), config_json.as_bytes()).at(out)?;
    let manifest = Manifest {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        seed: config.seed,
        config_sha256: sha256_hex(config_json.as_bytes()),
        utterances,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::runtime(e.to_string()))?;
    write_atomic(&out.join(MANIFEST), &json).at(out)?;
    Ok(manifest)
}

/// A dataset directory and its manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

/// One utterance loaded from disk.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub meta: UtteranceMeta,
    pub mixture: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let bytes = std::fs::read(&path).map_err(|e| CliError::invalid(e.to_string())).at(&path)?;
        let manifest: Manifest = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::invalid(e.to_string()))
            .at(&path)?;
        if manifest.format != DATASET_FORMAT || manifest.version != DATASET_VERSION {
            return Err(CliError::invalid(format!(
                "{}: format {} v{} is not {DATASET_FORMAT} v{DATASET_VERSION}",
                path.display(),
                manifest.format,
                manifest.version
            )));
        }
        Ok(Dataset {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.utterances.is_empty()
    }

    pub fn entry(&self, id: &str) -> Result<&ManifestEntry> {
        self.manifest
            .utterances
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| CliError::invalid(format!("{}: no utterance {id}", self.dir.display())))
    }

    fn checked_read(&self, entry: &ManifestEntry, name: &str) -> Result<Vec<u8>> {
        let path = self.dir.join(&entry.id).join(name);
        let bytes = std::fs::read(&path).map_err(|e| CliError::invalid(e.to_string())).at(&path)?;
        match entry.files.get(name) {
            Some(h) if *h == sha256_hex(&bytes) => Ok(bytes),
            Some(_) => Err(CliError::invalid(format!("{}: content hash differs from the manifest", path.display()))),
            None => Err(CliError::invalid(format!("{}: not listed in the manifest", path.display()))),
        }
    }

    pub fn meta(&self, entry: &ManifestEntry) -> Result<UtteranceMeta> {
        let bytes = self.checked_read(entry, "meta.json")?;
        let meta: UtteranceMeta = serde_json::from_slice(&bytes).map_err(|e| CliError::invalid(e.to_string()))?;
        if meta.geometry_hash != entry.geometry_hash || meta.scene.geometry.content_hash() != meta.geometry_hash {
            return Err(CliError::invalid(format!("{}: geometry hash mismatch", entry.id)));
        }
        Ok(meta)
    }

    pub fn load(&self, entry: &ManifestEntry) -> Result<Utterance> {
        let meta = self.meta(entry)?;
        self.checked_read(entry, "mixture.wav")?;
        let path = self.dir.join(&entry.id).join("mixture.wav");
        let audio = read_wav(&path).at(&path)?;
        if audio.channels.len() != meta.scene.geometry.num_mics() {
            return Err(CliError::invalid(format!(
                "{}: {} channels for a {}-microphone array",
                path.display(),
                audio.channels.len(),
                meta.scene.geometry.num_mics()
            )));
        }
        Ok(Utterance {
            meta,
            mixture: audio.channels,
        })
    }
}
