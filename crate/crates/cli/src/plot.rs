//! SVG figures: loss curves, spatial spectra and trajectories.

use std::path::Path;

use ipdnet_core::localize::{localize, spectra, Detection, TrackedEstimate};
use ipdnet_core::simulate::FrameTruth;
use ipdnet_core::targets::{output_truth, TemplateBank};
use plotters::prelude::*;

use crate::commands::EstimatesManifest;
use crate::dataset::{Dataset, UtteranceMeta};
use crate::error::{CliError, Result};
use crate::pipeline::{self, TemplateCache};

const SIZE: (u32, u32) = (960, 540);

fn draw_err<E: std::fmt::Debug>(path: &Path) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::runtime(format!("{}: {e:?}", path.display()))
}

#[derive(Debug, serde::Deserialize)]
struct LossRow {
    epoch: usize,
    train_loss: f64,
    valid_loss: f64,
}

pub fn loss(csv_path: &Path, out: &Path) -> Result<()> {
    let mut r = csv::Reader::from_path(csv_path).map_err(|e| CliError::invalid(format!("{}: {e}", csv_path.display())))?;
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<LossRow>, _>>()
        .map_err(|e| CliError::invalid(format!("{}: {e}", csv_path.display())))?;
    if rows.is_empty() {
        return Err(CliError::invalid(format!("{}: no epochs", csv_path.display())));
    }
    let finite = rows
        .iter()
        .flat_map(|r| [r.train_loss, r.valid_loss])
        .filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo < hi { (lo, hi) } else { (lo - 1.0, lo + 1.0) };
    let last = rows.last().map_or(1, |r| r.epoch).max(1);
    let e = draw_err(out);
    let root = SVGBackend::new(out, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(&e)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("PIT loss", ("sans-serif", 24))
        .margin(16)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(0.0..last as f64, lo..hi + 0.05 * (hi - lo))
        .map_err(&e)?;
    chart
        .configure_mesh()
        .x_desc("epoch")
        .y_desc("loss")
        .draw()
        .map_err(&e)?;
    let series = [("train", BLUE, rows.iter().map(|r| r.train_loss).collect::<Vec<_>>()), ("valid", RED, rows.iter().map(|r| r.valid_loss).collect())];
    for (name, color, values) in series {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .zip(values)
            .filter(|(_, v)| v.is_finite())
            .map(|(r, v)| (r.epoch as f64, v))
            .collect();
        chart
            .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
            .map_err(&e)?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
        chart.draw_series(pts.into_iter().map(|p| Circle::new(p, 3, color.filled()))).map_err(&e)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(&e)?;
    root.present().map_err(&e)?;
    Ok(())
}

/// One utterance with its stored estimate, ready to draw.
pub struct UtteranceView {
    pub meta: UtteranceMeta,
    pub estimate: TrackedEstimate,
    pub bank: std::sync::Arc<TemplateBank>,
    pub stride: usize,
    pub detections: Vec<Vec<Detection>>,
    /// Truth at output frames, activity re-derived with the estimate's threshold.
    pub truth: Vec<FrameTruth>,
}

impl UtteranceView {
    pub fn load(data: &Path, estimates: &Path, id: &str) -> Result<Self> {
        let ds = Dataset::open(data)?;
        let meta = ds.meta(ds.entry(id)?)?;
        let manifest = EstimatesManifest::open(estimates)?;
        let (estimate, hash) = manifest.load(estimates, id)?;
        if hash != meta.geometry_hash {
            return Err(CliError::invalid(format!("{id}: estimate is for another array geometry")));
        }
        let cache = TemplateCache::new(None, manifest.grid, manifest.resolution)?;
        let bank = cache.bank(&meta.scene.geometry)?;
        let detections = localize(&estimate, &bank, manifest.threshold)?;
        let truth = output_truth(
            &pipeline::with_activity(&meta.frame_truth, manifest.activity_threshold),
            manifest.stride,
        );
        if truth.len() != estimate.frames {
            return Err(CliError::invalid(format!("{id}: estimate and truth frame counts differ")));
        }
        Ok(UtteranceView {
            meta,
            estimate,
            bank,
            stride: manifest.stride,
            detections,
            truth,
        })
    }

    fn time(&self, g: usize) -> f64 {
        pipeline::frame_time(g, self.meta.frame_truth.len(), self.stride)
    }

    fn time_range(&self) -> std::ops::Range<f64> {
        0.0..self.meta.scene.duration
    }

    fn azimuth_range(&self) -> std::ops::Range<f64> {
        let max = self
            .bank
            .grid
            .directions
            .iter()
            .map(|d| d.azimuth)
            .fold(0.0, f64::max);
        0.0..max.max(1.0)
    }

    fn truth_points(&self) -> Vec<Vec<(f64, f64)>> {
        let n = self.meta.scene.sources.len();
        (0..n)
            .map(|k| {
                self.truth
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| t.sources[k].active)
                    .map(|(g, t)| (self.time(g), t.sources[k].direction.azimuth))
                    .collect()
            })
            .collect()
    }
}

/// Heat map of the spatial spectrum (time by azimuth) with true directions overlaid.
/// Joint grids are shown at the grid elevation with the highest value per azimuth.
pub fn spectrum(v: &UtteranceView, track: Option<usize>, out: &Path) -> Result<()> {
    if let Some(k) = track {
        if k >= v.estimate.tracks {
            return Err(CliError::invalid(format!("track {k} out of {}", v.estimate.tracks)));
        }
    }
    let s = spectra(&v.estimate, &v.bank)?;
    let e = draw_err(out);
    let root = SVGBackend::new(out, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(&e)?;
    let caption = match track {
        Some(k) => format!("spatial spectrum, track {k}"),
        None => "spatial spectrum, max over tracks".to_string(),
    };
    let mut chart = ChartBuilder::on(&root)
        .caption(caption, ("sans-serif", 24))
        .margin(16)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(v.time_range(), v.azimuth_range())
        .map_err(&e)?;
    chart
        .configure_mesh()
        .x_desc("time (s)")
        .y_desc("azimuth (deg)")
        .disable_mesh()
        .draw()
        .map_err(&e)?;
    let half_t = v.stride as f64 * v.meta.stft.frame_shift as f64 / v.meta.stft.sample_rate as f64 / 2.0;
    let half_a = v.bank.grid.resolution / 2.0;
    let mut cells = Vec::new();
    for (g, frame) in s.iter().enumerate() {
        let t = v.time(g);
        let mut best: std::collections::BTreeMap<i64, f64> = std::collections::BTreeMap::new();
        for (i, d) in v.bank.grid.directions.iter().enumerate() {
            let value = match track {
                Some(k) => frame[k][i],
                None => frame.iter().map(|x| x[i]).fold(f64::NEG_INFINITY, f64::max),
            };
            let key = (d.azimuth * 1e6).round() as i64;
            let slot = best.entry(key).or_insert(f64::NEG_INFINITY);
            *slot = slot.max(value);
        }
        for (key, value) in best {
            let az = key as f64 / 1e6;
            let c = value.clamp(0.0, 1.0);
            let color = HSLColor(0.66 * (1.0 - c), 0.9, 0.2 + 0.5 * c);
            cells.push(Rectangle::new([(t - half_t, az - half_a), (t + half_t, az + half_a)], color.filled()));
        }
    }
    chart.draw_series(cells).map_err(&e)?;
    for pts in v.truth_points() {
        chart
            .draw_series(pts.into_iter().map(|p| Cross::new(p, 4, WHITE.stroke_width(2))))
            .map_err(&e)?;
    }
    root.present().map_err(&e)?;
    Ok(())
}

/// Detected azimuths per track (dots) against the true source azimuths (lines).
pub fn trajectory(v: &UtteranceView, out: &Path) -> Result<()> {
    let e = draw_err(out);
    let root = SVGBackend::new(out, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(&e)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("source trajectories", ("sans-serif", 24))
        .margin(16)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(v.time_range(), v.azimuth_range())
        .map_err(&e)?;
    chart
        .configure_mesh()
        .x_desc("time (s)")
        .y_desc("azimuth (deg)")
        .draw()
        .map_err(&e)?;
    for (k, pts) in v.truth_points().into_iter().enumerate() {
        let color = Palette99::pick(k);
        chart
            .draw_series(LineSeries::new(pts, color.stroke_width(2)))
            .map_err(&e)?
            .label(format!("source {k}"))
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], Palette99::pick(k).stroke_width(2)));
    }
    for k in 0..v.estimate.tracks {
        let pts: Vec<(f64, f64)> = v
            .detections
            .iter()
            .enumerate()
            .flat_map(|(g, ds)| {
                ds.iter()
                    .filter(|d| d.track == k)
                    .map(move |d| (g, d.direction.azimuth))
            })
            .map(|(g, az)| (v.time(g), az))
            .collect();
        let color = Palette99::pick(k + 4);
        chart
            .draw_series(pts.into_iter().map(|p| Circle::new(p, 4, color.filled())))
            .map_err(&e)?
            .label(format!("track {k}"))
            .legend(move |(x, y)| Circle::new((x + 10, y), 4, Palette99::pick(k + 4).filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(&e)?;
    root.present().map_err(&e)?;
    Ok(())
}
