//! Subcommand arguments and their implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ipdnet_core::container::{write_atomic, WeightContainer};
use ipdnet_core::geometry::{AngleMetric, ArrayGeometry, GridKind};
use ipdnet_core::localize::{localize, TrackedEstimate};
use ipdnet_core::metrics::{match_frame, score, FarDenominator, FrameResult, Metrics, ScoreConfig};
use ipdnet_core::targets::{num_output_frames, NonSourceMode};
use ipdnet_core::wav::read_wav;
use ipdnet_model::checkpoint::{from_container, meta_text};
use ipdnet_model::train::{train, TrainOutput};
use ipdnet_model::{IpdNet, Variant};
use log::info;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{LocalizeConfig, RunConfig};
use crate::dataset::{self, sha256_file, Dataset, ManifestEntry};
use crate::error::{CliError, Result, WithPath};
use crate::lock::{DirLock, LOCK_FILE};
use crate::pipeline::{self, TemplateCache, DETECTIONS_FILE, ESTIMATE_FILE};
use crate::plot;

/// Parses a snake_case enum value the same way the JSON config does.
fn parse_enum<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "ipdnet", version, about = "Multi-source sound localization with DP-IPD regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a simulated dataset.
    Simulate(SimulateArgs),
    /// Train a model on a simulated dataset.
    Train(TrainArgs),
    /// Estimate DP-IPD vectors and detect sources.
    Infer(InferArgs),
    /// Score estimates against ground truth.
    Eval(EvalArgs),
    /// Draw SVG figures.
    #[command(subcommand)]
    Plot(PlotCommand),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: usize,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Validation dataset; without it the trailing share of `--data` is held out.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seconds.
    #[arg(long)]
    pub time_budget: Option<f64>,
    #[arg(long)]
    pub activity_threshold: Option<f64>,
    #[arg(long, value_parser = parse_enum::<NonSourceMode>)]
    pub non_source: Option<NonSourceMode>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long, conflicts_with = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Use the ground-truth targets of `--data` as the estimate.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long, conflicts_with = "wav")]
    pub data: Option<PathBuf>,
    /// A multichannel 16 kHz recording; needs `--geometry`.
    #[arg(long, requires = "geometry")]
    pub wav: Option<PathBuf>,
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Run config supplying localization and target settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_parser = parse_enum::<GridKind>)]
    pub grid: Option<GridKind>,
    #[arg(long)]
    pub resolution: Option<f64>,
    /// Oracle only; a checkpoint fixes its own stride.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Oracle only.
    #[arg(long, default_value_t = 2)]
    pub tracks: usize,
    #[arg(long)]
    pub activity_threshold: Option<f64>,
    #[arg(long, value_parser = parse_enum::<NonSourceMode>)]
    pub non_source: Option<NonSourceMode>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub estimates: PathBuf,
    /// Defaults to the estimates directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Degrees.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_parser = parse_enum::<FarDenominator>)]
    pub far_denominator: Option<FarDenominator>,
    #[arg(long)]
    pub fold_front_back: bool,
    #[arg(long, value_parser = parse_enum::<AngleMetric>)]
    pub metric: Option<AngleMetric>,
    #[arg(long)]
    pub activity_threshold: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum PlotCommand {
    /// Training and validation loss per epoch.
    Loss {
        /// Training output directory (holds loss.csv).
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Spatial spectrum over time of one utterance, with the true directions.
    Spectrum {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        estimates: PathBuf,
        #[arg(long)]
        utterance: String,
        /// Plot one track; default is the maximum over tracks.
        #[arg(long)]
        track: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detected and true azimuths over time.
    Trajectory {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        estimates: PathBuf,
        #[arg(long)]
        utterance: String,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Infer(a) => infer(&a),
        Command::Eval(a) => eval(&a).map(|_| ()),
        Command::Plot(p) => plot_cmd(&p),
    }
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let m = dataset::simulate(&cfg, &a.out, a.count)?;
    info!("wrote {} utterances to {}", m.utterances.len(), a.out.display());
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    serde_json::to_vec_pretty(v).map_err(|e| CliError::runtime(e.to_string()))
}

fn ensure_empty(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        let busy = std::fs::read_dir(dir)
            .at(dir)?
            .filter_map(|e| e.ok())
            .any(|e| e.file_name() != LOCK_FILE);
        if busy {
            return Err(CliError::invalid(format!("{} is not empty", dir.display())));
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub train_utterances: usize,
    pub valid_utterances: usize,
    pub weights: usize,
    pub best_epoch: usize,
    pub best_valid: f64,
    pub seconds: f64,
    pub history: Vec<ipdnet_model::train::EpochLog>,
}

pub fn train_cmd(a: &TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    if let Some(t) = a.time_budget {
        cfg.train.time_budget = Some(t);
    }
    if let Some(t) = a.activity_threshold {
        cfg.localize.activity_threshold = t;
    }
    if let Some(m) = a.non_source {
        cfg.train.non_source = m;
    }
    cfg.validate()?;
    let model = cfg
        .model
        .clone()
        .ok_or_else(|| CliError::invalid(format!("{}: no model section", a.config.display())))?;
    let data = Dataset::open(&a.data)?;
    if data.is_empty() {
        return Err(CliError::invalid(format!("{}: no utterances", a.data.display())));
    }
    let (train_entries, valid, valid_entries) = match &a.valid {
        Some(v) => {
            let v = Dataset::open(v)?;
            let entries = v.manifest.utterances.clone();
            (data.manifest.utterances.clone(), Some(v), entries)
        }
        None => {
            let n = data.len();
            let held = ((n as f64 * cfg.validation_fraction).round() as usize).min(n - 1);
            let (t, v) = data.manifest.utterances.split_at(n - held);
            (t.to_vec(), None, v.to_vec())
        }
    };

    // A fixed model only serves the geometry it was trained on.
    let mut meta = vec![
        ("dataset".to_string(), data.manifest.config_sha256.clone()),
        ("non_source".to_string(), format!("{:?}", cfg.train.non_source).to_lowercase()),
        ("activity_threshold".to_string(), cfg.localize.activity_threshold.to_string()),
    ];
    if model.variant == Variant::Fixed {
        let hash = &data.manifest.utterances[0].geometry_hash;
        let mixed = data
            .manifest
            .utterances
            .iter()
            .chain(&valid_entries)
            .any(|e| e.geometry_hash != *hash);
        if mixed {
            return Err(CliError::invalid("a fixed-array model needs one array geometry across all utterances"));
        }
        let first = data.meta(&data.manifest.utterances[0])?;
        meta.push(("geometry_hash".into(), hash.clone()));
        meta.push(("geometry".into(), first.scene.geometry.to_text()));
    }

    ensure_empty(&a.out)?;
    let _lock = DirLock::acquire(&a.out)?;
    let mut net = IpdNet::<f32>::new(model, cfg.seed)?;
    info!("model with {} weights", net.num_weights());
    let activity = cfg.localize.activity_threshold;
    let mode = cfg.train.non_source;
    let train_set = pipeline::examples(&net, &data, &train_entries, activity, mode)?;
    let valid_set = pipeline::examples(&net, valid.as_ref().unwrap_or(&data), &valid_entries, activity, mode)?;
    info!("{} training and {} validation utterances", train_set.len(), valid_set.len());
    write_atomic(&a.out.join("config.json"), cfg.to_json().as_bytes()).at(&a.out)?;
    let outcome = train(
        &mut net,
        &train_set,
        &valid_set,
        &cfg.train,
        Some(&TrainOutput {
            dir: a.out.clone(),
            meta,
        }),
    )?;
    let summary = TrainSummary {
        train_utterances: train_set.len(),
        valid_utterances: valid_set.len(),
        weights: net.num_weights(),
        best_epoch: outcome.best_epoch,
        best_valid: outcome.best_valid,
        seconds: outcome.seconds,
        history: outcome.history,
    };
    write_atomic(&a.out.join("summary.json"), &to_json(&summary)?).at(&a.out)?;
    Ok(())
}

pub const ESTIMATES_FORMAT: &str = "ipdnet-estimates";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateEntry {
    pub id: String,
    pub geometry_hash: String,
    pub stft_frames: usize,
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatesManifest {
    pub format: String,
    pub version: u32,
    /// `oracle` or the SHA-256 of the checkpoint file.
    pub source: String,
    pub dataset: Option<String>,
    pub stride: usize,
    pub tracks: usize,
    pub grid: GridKind,
    pub resolution: f64,
    pub threshold: f64,
    pub activity_threshold: f64,
    pub utterances: Vec<EstimateEntry>,
}

impl EstimatesManifest {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(dataset::MANIFEST);
        let bytes = std::fs::read(&path).map_err(|e| CliError::invalid(e.to_string())).at(&path)?;
        let m: EstimatesManifest = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::invalid(e.to_string()))
            .at(&path)?;
        if m.format != ESTIMATES_FORMAT {
            return Err(CliError::invalid(format!("{}: not an estimates manifest", path.display())));
        }
        Ok(m)
    }

    pub fn entry(&self, id: &str) -> Result<&EstimateEntry> {
        self.utterances
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| CliError::invalid(format!("no estimate for utterance {id}")))
    }

    /// The stored estimate of `id`, checked against the manifest hash.
    pub fn load(&self, dir: &Path, id: &str) -> Result<(TrackedEstimate, String)> {
        let e = self.entry(id)?;
        let path = dir.join(id).join(ESTIMATE_FILE);
        if e.files.get(ESTIMATE_FILE) != Some(&sha256_file(&path)?) {
            return Err(CliError::invalid(format!("{}: content hash differs from the manifest", path.display())));
        }
        pipeline::load_estimate(&path)
    }
}

enum Estimator {
    Oracle { mode: NonSourceMode },
    Network { net: IpdNet<f32>, geometry_hash: Option<String> },
}

/// One recording to localize.
struct Job {
    id: String,
    geometry: ArrayGeometry,
    sample_rate: u32,
    mixture: Vec<Vec<f64>>,
    meta: Option<dataset::UtteranceMeta>,
}

fn load_localize(config: &Option<PathBuf>) -> Result<(LocalizeConfig, NonSourceMode)> {
    match config {
        Some(p) => {
            let c = RunConfig::load(p)?;
            Ok((c.localize.clone(), c.non_source()))
        }
        None => Ok((LocalizeConfig::default(), NonSourceMode::default())),
    }
}

pub fn infer(a: &InferArgs) -> Result<()> {
    let (mut loc, mut mode) = load_localize(&a.config)?;
    if let Some(t) = a.threshold {
        loc.threshold = t;
    }
    if let Some(g) = a.grid {
        loc.grid = g;
    }
    if let Some(r) = a.resolution {
        loc.resolution = r;
    }
    if let Some(t) = a.activity_threshold {
        loc.activity_threshold = t;
    }
    if let Some(m) = a.non_source {
        mode = m;
    }
    if let Some(s) = a.stride {
        loc.stride = s;
    }
    loc.validate()?;

    let (estimator, source, tracks) = match (&a.checkpoint, a.oracle) {
        (Some(p), false) => {
            let c = WeightContainer::load(p).at(p)?;
            let net: IpdNet<f32> = from_container(&c).at(p)?;
            let geometry_hash = match net.config.variant {
                Variant::Fixed => meta_text(&c, "geometry_hash").at(p)?,
                Variant::Variable => None,
            };
            loc.stride = net.config.stride();
            let tracks = net.config.tracks;
            (Estimator::Network { net, geometry_hash }, sha256_file(p)?, tracks)
        }
        (None, true) => (Estimator::Oracle { mode }, "oracle".to_string(), a.tracks),
        _ => return Err(CliError::invalid("give exactly one of --checkpoint and --oracle")),
    };
    if tracks == 0 {
        return Err(CliError::invalid("--tracks must be positive"));
    }

    let (dataset, ids) = match (&a.data, &a.wav) {
        (Some(d), None) => {
            let ds = Dataset::open(d)?;
            let ids: Vec<String> = ds.manifest.utterances.iter().map(|e| e.id.clone()).collect();
            (Some(ds), ids)
        }
        (None, Some(w)) => {
            if matches!(estimator, Estimator::Oracle { .. }) {
                return Err(CliError::invalid("--oracle needs --data (ground truth)"));
            }
            let stem = w.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or("input".into());
            (None, vec![stem])
        }
        _ => return Err(CliError::invalid("give exactly one of --data and --wav")),
    };

    ensure_empty(&a.out)?;
    let _lock = DirLock::acquire(&a.out)?;
    let cache = TemplateCache::new(Some(a.out.join("templates")), loc.grid, loc.resolution)?;

    let load_job = |id: &str| -> Result<Job> {
        match (&dataset, &a.wav) {
            (Some(ds), _) => {
                let u = ds.load(ds.entry(id)?)?;
                Ok(Job {
                    id: id.to_string(),
                    geometry: u.meta.scene.geometry.clone(),
                    sample_rate: u.meta.scene.sample_rate,
                    mixture: u.mixture,
                    meta: Some(u.meta),
                })
            }
            (None, Some(w)) => {
                let gpath = a.geometry.as_ref().expect("clap requires --geometry");
                let text = std::fs::read_to_string(gpath)
                    .map_err(|e| CliError::invalid(e.to_string()))
                    .at(gpath)?;
                let geometry = ArrayGeometry::parse(&text).at(gpath)?;
                let audio = read_wav(w).at(w)?;
                if audio.channels.len() != geometry.num_mics() {
                    return Err(CliError::invalid(format!(
                        "{}: {} channels but the geometry has {} microphones",
                        w.display(),
                        audio.channels.len(),
                        geometry.num_mics()
                    )));
                }
                Ok(Job {
                    id: id.to_string(),
                    geometry,
                    sample_rate: audio.sample_rate,
                    mixture: audio.channels,
                    meta: None,
                })
            }
            (None, None) => unreachable!(),
        }
    };

    let run_job = |id: &String| -> Result<EstimateEntry> {
        let job = load_job(id)?;
        let hash = job.geometry.content_hash();
        let x = pipeline::analyze(&job.mixture, job.sample_rate)?;
        let est = match &estimator {
            Estimator::Oracle { mode } => pipeline::oracle_estimate(
                job.meta.as_ref().expect("oracle runs on datasets"),
                tracks,
                loc.stride,
                loc.activity_threshold,
                *mode,
            )?,
            Estimator::Network { net, geometry_hash } => {
                if let Some(h) = geometry_hash {
                    if *h != hash {
                        return Err(CliError::invalid(format!(
                            "{}: array geometry {hash} differs from the checkpoint's {h}",
                            job.id
                        )));
                    }
                }
                net.infer(&x, job.geometry.reference())?
            }
        };
        let bank = cache.bank(&job.geometry)?;
        let detections = localize(&est, &bank, loc.threshold)?;
        let dir = a.out.join(&job.id);
        std::fs::create_dir_all(&dir).at(&dir)?;
        pipeline::save_estimate(&dir.join(ESTIMATE_FILE), &est, &hash)?;
        pipeline::write_detections(&dir.join(DETECTIONS_FILE), &detections, x.frames, loc.stride)?;
        let mut files = BTreeMap::new();
        for f in [ESTIMATE_FILE, DETECTIONS_FILE] {
            files.insert(f.to_string(), sha256_file(&dir.join(f))?);
        }
        Ok(EstimateEntry {
            id: job.id,
            geometry_hash: hash,
            stft_frames: x.frames,
            files,
        })
    };
    let utterances = ids.par_iter().map(run_job).collect::<Result<Vec<_>>>()?;

    let manifest = EstimatesManifest {
        format: ESTIMATES_FORMAT.into(),
        version: 1,
        source,
        dataset: dataset.as_ref().map(|d| d.manifest.config_sha256.clone()),
        stride: loc.stride,
        tracks,
        grid: loc.grid,
        resolution: loc.resolution,
        threshold: loc.threshold,
        activity_threshold: loc.activity_threshold,
        utterances,
    };
    write_atomic(&a.out.join(dataset::MANIFEST), &to_json(&manifest)?).at(&a.out)?;
    info!("localized {} recordings into {}", manifest.utterances.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct ResultRow {
    utterance: String,
    frame: usize,
    time_s: f64,
    track: Option<usize>,
    azimuth: Option<f64>,
    elevation: Option<f64>,
    peak: Option<f64>,
    truth_azimuth: Option<f64>,
    truth_elevation: Option<f64>,
    error_deg: Option<f64>,
    outcome: &'static str,
}

fn result_rows(id: &str, results: &[FrameResult], stft_frames: usize, stride: usize, cfg: &ScoreConfig) -> Vec<ResultRow> {
    let mut rows = Vec::new();
    for (g, r) in results.iter().enumerate() {
        let time_s = pipeline::frame_time(g, stft_frames, stride);
        let m = match_frame(&r.detections, &r.truth, cfg);
        let mut truth_used = vec![false; r.truth.len()];
        for (i, d) in r.detections.iter().enumerate() {
            let pair = m.pairs.iter().find(|p| p.0 == i);
            if let Some(p) = pair {
                truth_used[p.1] = true;
            }
            rows.push(ResultRow {
                utterance: id.to_string(),
                frame: g,
                time_s,
                track: Some(d.track),
                azimuth: Some(d.direction.azimuth),
                elevation: Some(d.direction.elevation),
                peak: Some(d.peak),
                truth_azimuth: pair.map(|p| r.truth[p.1].azimuth),
                truth_elevation: pair.map(|p| r.truth[p.1].elevation),
                error_deg: pair.map(|p| p.2),
                outcome: match (pair, r.truth.is_empty()) {
                    (Some(_), _) => "hit",
                    (None, true) => "silent_frame",
                    (None, false) => "false_alarm",
                },
            });
        }
        for (t, _) in r.truth.iter().zip(&truth_used).filter(|(_, used)| !**used) {
            rows.push(ResultRow {
                utterance: id.to_string(),
                frame: g,
                time_s,
                track: None,
                azimuth: None,
                elevation: None,
                peak: None,
                truth_azimuth: Some(t.azimuth),
                truth_elevation: Some(t.elevation),
                error_deg: None,
                outcome: "miss",
            });
        }
    }
    rows
}

/// Scores every utterance of `--data` and writes `metrics.txt`, `metrics.json`
/// and `results.csv`.
pub fn eval(a: &EvalArgs) -> Result<Metrics> {
    let (mut loc, _) = load_localize(&a.config)?;
    let manifest = EstimatesManifest::open(&a.estimates)?;
    if a.config.is_none() {
        loc.threshold = manifest.threshold;
        loc.activity_threshold = manifest.activity_threshold;
    }
    loc.grid = manifest.grid;
    loc.resolution = manifest.resolution;
    loc.stride = manifest.stride;
    if let Some(t) = a.tolerance {
        loc.tolerance = t;
    }
    if let Some(t) = a.threshold {
        loc.threshold = t;
    }
    if let Some(f) = a.far_denominator {
        loc.far_denominator = f;
    }
    if a.fold_front_back {
        loc.fold_front_back = true;
    }
    if let Some(t) = a.activity_threshold {
        loc.activity_threshold = t;
    }
    loc.validate()?;
    let mut cfg = loc.score_config();
    if let Some(m) = a.metric {
        cfg.metric = m;
    }

    let data = Dataset::open(&a.data)?;
    let cache = TemplateCache::new(None, loc.grid, loc.resolution)?;
    let per_utt = data
        .manifest
        .utterances
        .par_iter()
        .map(|e: &ManifestEntry| -> Result<(Vec<FrameResult>, Vec<ResultRow>)> {
            let meta = data.meta(e)?;
            let (est, hash) = manifest.load(&a.estimates, &e.id)?;
            if hash != e.geometry_hash {
                return Err(CliError::invalid(format!("{}: estimate is for another array geometry", e.id)));
            }
            let stft_frames = meta.frame_truth.len();
            if est.frames != num_output_frames(stft_frames, loc.stride) {
                return Err(CliError::invalid(format!(
                    "{}: {} estimate frames for {stft_frames} STFT frames at stride {}",
                    e.id, est.frames, loc.stride
                )));
            }
            let truth = pipeline::truth_directions(&meta.frame_truth, loc.activity_threshold, loc.stride);
            let bank = cache.bank(&meta.scene.geometry)?;
            let results = pipeline::utterance_results(&est, &bank, loc.threshold, truth)?;
            let rows = result_rows(&e.id, &results, stft_frames, loc.stride, &cfg);
            Ok((results, rows))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut all = Vec::new();
    let mut rows = Vec::new();
    for (r, w) in per_utt {
        all.extend(r);
        rows.extend(w);
    }
    let metrics = score(&all, &cfg)?;

    let out = a.out.clone().unwrap_or_else(|| a.estimates.clone());
    let _lock = DirLock::acquire(&out)?;
    write_atomic(&out.join("metrics.txt"), metrics.report().as_bytes()).at(&out)?;
    write_atomic(&out.join("metrics.json"), &to_json(&metrics)?).at(&out)?;
    let path = out.join("results.csv");
    let mut w = csv::Writer::from_path(&path)
        .map_err(|e| CliError::runtime(e.to_string()))
        .at(&path)?;
    for r in &rows {
        w.serialize(r).map_err(|e| CliError::runtime(e.to_string())).at(&path)?;
    }
    w.flush().at(&path)?;
    print!("{}", metrics.report());
    Ok(metrics)
}

pub fn plot_cmd(p: &PlotCommand) -> Result<()> {
    match p {
        PlotCommand::Loss { run, out } => plot::loss(&run.join("loss.csv"), out),
        PlotCommand::Spectrum {
            data,
            estimates,
            utterance,
            track,
            out,
        } => {
            let v = plot::UtteranceView::load(data, estimates, utterance)?;
            plot::spectrum(&v, *track, out)
        }
        PlotCommand::Trajectory {
            data,
            estimates,
            utterance,
            out,
        } => {
            let v = plot::UtteranceView::load(data, estimates, utterance)?;
            plot::trajectory(&v, out)
        }
    }
}
