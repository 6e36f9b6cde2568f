//! Shared steps of the train, infer and eval commands.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use ipdnet_core::container::{NamedTensor, WeightContainer};
use ipdnet_core::dsp::{stft, StftConfig, StftTensor};
use ipdnet_core::geometry::{make_grid, ArrayGeometry, Direction, GridKind};
use ipdnet_core::localize::{localize, Detection, TrackedEstimate};
use ipdnet_core::metrics::FrameResult;
use ipdnet_core::simulate::FrameTruth;
use ipdnet_core::targets::{assemble_training_target, build_templates_with, output_truth, NonSourceMode, TemplateBank};
use ipdnet_model::train::Example;
use ipdnet_model::IpdNet;
use rayon::prelude::*;

use crate::dataset::{Dataset, ManifestEntry, UtteranceMeta};
use crate::error::{CliError, Result, WithPath};

/// STFT of a multichannel recording; only the model's sample rate is accepted.
pub fn analyze(channels: &[Vec<f64>], sample_rate: u32) -> Result<StftTensor> {
    let cfg = StftConfig::default();
    if sample_rate != cfg.sample_rate {
        return Err(CliError::invalid(format!(
            "sample rate {sample_rate} Hz, expected {} Hz",
            cfg.sample_rate
        )));
    }
    Ok(stft(channels, &cfg)?)
}

/// Source activity re-derived from the stored direct-to-mixture ratios.
pub fn with_activity(frame_truth: &[FrameTruth], threshold: f64) -> Vec<FrameTruth> {
    frame_truth
        .iter()
        .map(|f| {
            let mut f = f.clone();
            for s in &mut f.sources {
                s.active = s.ratio > threshold;
            }
            f
        })
        .collect()
}

/// Active source directions of every output frame.
pub fn truth_directions(frame_truth: &[FrameTruth], threshold: f64, stride: usize) -> Vec<Vec<Direction>> {
    output_truth(&with_activity(frame_truth, threshold), stride)
        .iter()
        .map(FrameTruth::active_directions)
        .collect()
}

/// Network input and PIT targets of one utterance.
pub fn example(
    net: &IpdNet<f32>,
    meta: &UtteranceMeta,
    mixture: &[Vec<f64>],
    activity: f64,
    mode: NonSourceMode,
) -> Result<Example> {
    let geometry = &meta.scene.geometry;
    let x = analyze(mixture, meta.scene.sample_rate)?;
    let features = net.features(&net.normalize(&x)?, geometry.reference())?;
    let target = assemble_training_target(
        &with_activity(&meta.frame_truth, activity),
        geometry,
        net.config.tracks,
        mode,
        &meta.stft,
        net.config.stride(),
    )?;
    Ok(Example { features, target })
}

/// Examples for `entries`, in order, built in parallel.
pub fn examples(
    net: &IpdNet<f32>,
    dataset: &Dataset,
    entries: &[ManifestEntry],
    activity: f64,
    mode: NonSourceMode,
) -> Result<Vec<Example>> {
    entries
        .par_iter()
        .map(|e| {
            let u = dataset.load(e)?;
            example(net, &u.meta, &u.mixture, activity, mode).map_err(|err| CliError::File {
                path: dataset.dir.join(&e.id),
                source: Box::new(err),
            })
        })
        .collect()
}

/// Estimate equal to the training target: what a perfect network would output.
pub fn oracle_estimate(
    meta: &UtteranceMeta,
    tracks: usize,
    stride: usize,
    activity: f64,
    mode: NonSourceMode,
) -> Result<TrackedEstimate> {
    let t = assemble_training_target(
        &with_activity(&meta.frame_truth, activity),
        &meta.scene.geometry,
        tracks,
        mode,
        &meta.stft,
        stride,
    )?;
    Ok(TrackedEstimate {
        frames: t.frames,
        tracks: t.tracks,
        pairs: t.pairs,
        dim: t.dim,
        values: t.values,
    })
}

/// Template banks keyed by geometry and grid, cached in memory and on disk
/// under `<dir>/<geometry hash>_<grid>_<resolution>.ipdw`.
pub struct TemplateCache {
    dir: Option<PathBuf>,
    grid: GridKind,
    resolution: f64,
    banks: Mutex<HashMap<String, std::sync::Arc<TemplateBank>>>,
}

impl TemplateCache {
    pub fn new(dir: Option<PathBuf>, grid: GridKind, resolution: f64) -> Result<Self> {
        make_grid(grid, resolution)?;
        Ok(TemplateCache {
            dir,
            grid,
            resolution,
            banks: Mutex::new(HashMap::new()),
        })
    }

    fn file_name(&self, hash: &str) -> String {
        let kind = serde_json::to_value(self.grid)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        format!("{hash}_{kind}_{}.ipdw", self.resolution)
    }

    pub fn bank(&self, geometry: &ArrayGeometry) -> Result<std::sync::Arc<TemplateBank>> {
        let hash = geometry.content_hash();
        if let Some(b) = self.banks.lock().expect("cache lock").get(&hash) {
            return Ok(b.clone());
        }
        let stft = StftConfig::default();
        let path = self.dir.as_ref().map(|d| d.join(self.file_name(&hash)));
        let bank = match &path {
            Some(p) if p.exists() => {
                let c = WeightContainer::load(p).at(p)?;
                let bank = TemplateBank::from_container(&c, &stft).at(p)?;
                if bank.geometry.content_hash() != hash || bank.grid.kind != self.grid {
                    return Err(CliError::invalid(format!("{}: cached templates do not match", p.display())));
                }
                bank
            }
            _ => {
                let bank = build_templates_with(geometry, &make_grid(self.grid, self.resolution)?, &stft)?;
                if let Some(p) = &path {
                    std::fs::create_dir_all(p.parent().expect("cache dir")).at(p)?;
                    bank.to_container()?.save(p).at(p)?;
                }
                bank
            }
        };
        let bank = std::sync::Arc::new(bank);
        self.banks.lock().expect("cache lock").insert(hash, bank.clone());
        Ok(bank)
    }
}

pub const ESTIMATE_FILE: &str = "estimate.ipdw";
pub const DETECTIONS_FILE: &str = "detections.csv";

/// Stores `[frames, tracks, pairs, 2F]` as f32 with the geometry hash.
pub fn save_estimate(path: &Path, est: &TrackedEstimate, geometry_hash: &str) -> Result<()> {
    let mut c = WeightContainer::new();
    c.push(NamedTensor::text("meta/geometry_hash", geometry_hash))?;
    c.push(NamedTensor::new(
        "estimate",
        vec![est.frames, est.tracks, est.pairs, est.dim],
        est.values.iter().map(|&v| v as f32).collect(),
    )?)?;
    c.save(path).at(path)
}

pub fn load_estimate(path: &Path) -> Result<(TrackedEstimate, String)> {
    let c = WeightContainer::load(path).at(path)?;
    let hash = c.require("meta/geometry_hash").and_then(|t| t.as_text()).at(path)?;
    let t = c.require("estimate").at(path)?;
    let [frames, tracks, pairs, dim] = t.dims[..] else {
        return Err(CliError::invalid(format!("{}: estimate has dims {:?}", path.display(), t.dims)));
    };
    Ok((
        TrackedEstimate {
            frames,
            tracks,
            pairs,
            dim,
            values: t.data.iter().map(|&v| v as f64).collect(),
        },
        hash,
    ))
}

#[derive(Debug, serde::Serialize)]
struct DetectionRow {
    frame: usize,
    time_s: f64,
    track: usize,
    azimuth: f64,
    elevation: f64,
    peak: f64,
}

/// Output frame `g` to seconds, at the center of its frame group.
pub fn frame_time(g: usize, stft_frames: usize, stride: usize) -> f64 {
    let cfg = StftConfig::default();
    let n = ipdnet_core::targets::group_center(g, stft_frames, stride);
    cfg.frame_center(n) as f64 / cfg.sample_rate as f64
}

pub fn write_detections(path: &Path, detections: &[Vec<Detection>], stft_frames: usize, stride: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::runtime(e.to_string())).at(path)?;
    for (g, ds) in detections.iter().enumerate() {
        for d in ds {
            w.serialize(DetectionRow {
                frame: g,
                time_s: frame_time(g, stft_frames, stride),
                track: d.track,
                azimuth: d.direction.azimuth,
                elevation: d.direction.elevation,
                peak: d.peak,
            })
            .map_err(|e| CliError::runtime(e.to_string()))
            .at(path)?;
        }
    }
    w.flush().at(path)
}

/// Frame results of one utterance from its stored estimate.
pub fn utterance_results(
    est: &TrackedEstimate,
    bank: &TemplateBank,
    threshold: f64,
    truth: Vec<Vec<Direction>>,
) -> Result<Vec<FrameResult>> {
    if est.frames != truth.len() {
        return Err(CliError::invalid(format!(
            "estimate has {} output frames, the utterance {}",
            est.frames,
            truth.len()
        )));
    }
    let detections = localize(est, bank, threshold)?;
    Ok(ipdnet_core::metrics::frame_results(detections, truth)?)
}
