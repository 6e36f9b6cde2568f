//! MDR / FAR / MAE scoring of per-frame detections.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::{angular_error, AngleMetric, Direction};
use crate::localize::Detection;

pub const DEFAULT_TOLERANCE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FarDenominator {
    /// Total active source-frames, the same denominator as MDR.
    #[default]
    SourceFrames,
    /// Voice-active frames.
    ActiveFrames,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub tolerance: f64,
    pub metric: AngleMetric,
    pub far_denominator: FarDenominator,
    /// Map azimuths into `[0, 180]` before comparing (front-back ambiguous linear arrays).
    pub fold_front_back: bool,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            tolerance: DEFAULT_TOLERANCE,
            metric: AngleMetric::Azimuth,
            far_denominator: FarDenominator::SourceFrames,
            fold_front_back: false,
        }
    }
}

/// Detections and ground-truth source directions of one output frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub detections: Vec<Detection>,
    pub truth: Vec<Direction>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    /// Percent.
    pub mdr: f64,
    /// Percent.
    pub far: f64,
    /// Degrees, over successes only; 0 when there are none.
    pub mae: f64,
    pub tolerance: f64,
    pub active_source_frames: usize,
    pub active_frames: usize,
    pub misses: usize,
    pub false_alarms: usize,
    pub matched: usize,
}

/// `(detection, truth, error)` triples accepted for one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMatch {
    pub pairs: Vec<(usize, usize, f64)>,
    pub misses: usize,
    pub false_alarms: usize,
}

fn fold(d: &Direction) -> Direction {
    if d.azimuth > 180.0 {
        Direction::new(360.0 - d.azimuth, d.elevation)
    } else {
        *d
    }
}

pub fn error_between(a: &Direction, b: &Direction, cfg: &ScoreConfig) -> f64 {
    if cfg.fold_front_back {
        angular_error(&fold(a), &fold(b), cfg.metric)
    } else {
        angular_error(a, b, cfg.metric)
    }
}

/// Exhaustive assignment: most successes first, then least total error.
/// Detections left over are false alarms; sources left over are misses.
pub fn match_frame(detections: &[Detection], truth: &[Direction], cfg: &ScoreConfig) -> FrameMatch {
    let err: Vec<Vec<f64>> = detections
        .iter()
        .map(|d| truth.iter().map(|t| error_between(&d.direction, t, cfg)).collect())
        .collect();
    let mut best: (usize, f64, Vec<(usize, usize, f64)>) = (0, 0.0, Vec::new());
    let mut current = Vec::new();
    let mut used = vec![false; truth.len()];
    fn search(
        i: usize,
        err: &[Vec<f64>],
        tol: f64,
        used: &mut [bool],
        current: &mut Vec<(usize, usize, f64)>,
        best: &mut (usize, f64, Vec<(usize, usize, f64)>),
    ) {
        if i == err.len() {
            let total: f64 = current.iter().map(|p| p.2).sum();
            if current.len() > best.0 || (current.len() == best.0 && total < best.1) {
                *best = (current.len(), total, current.clone());
            }
            return;
        }
        search(i + 1, err, tol, used, current, best);
        for j in 0..used.len() {
            if !used[j] && err[i][j] <= tol {
                used[j] = true;
                current.push((i, j, err[i][j]));
                search(i + 1, err, tol, used, current, best);
                current.pop();
                used[j] = false;
            }
        }
    }
    search(0, &err, cfg.tolerance, &mut used, &mut current, &mut best);
    let matched = best.2.len();
    FrameMatch {
        pairs: best.2,
        misses: truth.len() - matched,
        false_alarms: detections.len() - matched,
    }
}

/// Scores voice-active frames (at least one true source) only.
pub fn score(results: &[FrameResult], cfg: &ScoreConfig) -> Result<Metrics> {
    if !(cfg.tolerance.is_finite() && cfg.tolerance >= 0.0) {
        return Err(CoreError::Shape(format!("tolerance {} must be non-negative", cfg.tolerance)));
    }
    let mut m = Metrics {
        tolerance: cfg.tolerance,
        ..Metrics::default()
    };
    let mut error_sum = 0.0;
    for r in results.iter().filter(|r| !r.truth.is_empty()) {
        let fm = match_frame(&r.detections, &r.truth, cfg);
        m.active_frames += 1;
        m.active_source_frames += r.truth.len();
        m.misses += fm.misses;
        m.false_alarms += fm.false_alarms;
        m.matched += fm.pairs.len();
        error_sum += fm.pairs.iter().map(|p| p.2).sum::<f64>();
    }
    let pct = |n: usize, d: usize| if d == 0 { 0.0 } else { 100.0 * n as f64 / d as f64 };
    m.mdr = pct(m.misses, m.active_source_frames);
    m.far = pct(
        m.false_alarms,
        match cfg.far_denominator {
            FarDenominator::SourceFrames => m.active_source_frames,
            FarDenominator::ActiveFrames => m.active_frames,
        },
    );
    m.mae = if m.matched == 0 { 0.0 } else { error_sum / m.matched as f64 };
    Ok(m)
}

/// Pairs results with truth frame by frame.
pub fn frame_results(detections: Vec<Vec<Detection>>, truth: Vec<Vec<Direction>>) -> Result<Vec<FrameResult>> {
    if detections.len() != truth.len() {
        return Err(CoreError::Shape(format!(
            "{} result frames but {} truth frames",
            detections.len(),
            truth.len()
        )));
    }
    Ok(detections
        .into_iter()
        .zip(truth)
        .map(|(detections, truth)| FrameResult { detections, truth })
        .collect())
}

impl Metrics {
    /// `key = value` lines.
    pub fn report(&self) -> String {
        format!(
            "mdr_percent = {:.4}\nfar_percent = {:.4}\nmae_deg = {:.4}\ntolerance_deg = {}\nactive_source_frames = {}\nactive_frames = {}\nmisses = {}\nfalse_alarms = {}\nmatched = {}\nmae_defined = {}\n",
            self.mdr,
            self.far,
            self.mae,
            self.tolerance,
            self.active_source_frames,
            self.active_frames,
            self.misses,
            self.false_alarms,
            self.matched,
            self.matched > 0
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(track: usize, az: f64) -> Detection {
        Detection {
            track,
            grid_index: az as usize,
            direction: Direction::azimuth(az),
            peak: 0.9,
        }
    }

    #[test]
    fn perfect_and_silent() {
        let cfg = ScoreConfig::default();
        let perfect = vec![FrameResult {
            detections: vec![det(0, 20.0)],
            truth: vec![Direction::azimuth(20.0)],
        }];
        let m = score(&perfect, &cfg).unwrap();
        assert_eq!((m.mdr, m.far, m.mae), (0.0, 0.0, 0.0));
        let none = vec![FrameResult {
            detections: vec![],
            truth: vec![Direction::azimuth(20.0)],
        }];
        let m = score(&none, &cfg).unwrap();
        assert_eq!((m.mdr, m.far, m.mae, m.matched), (100.0, 0.0, 0.0, 0));
    }

    #[test]
    fn prefers_more_successes() {
        // Min total error would pair 0->10 (err 5) and leave 1 unmatched with a
        // 40-degree mismatch; counting successes pairs both.
        let cfg = ScoreConfig::default();
        let fm = match_frame(
            &[det(0, 12.0), det(1, 5.0)],
            &[Direction::azimuth(3.0), Direction::azimuth(14.0)],
            &cfg,
        );
        assert_eq!(fm.pairs.len(), 2);
        assert_eq!(fm.misses + fm.false_alarms, 0);
    }

    #[test]
    fn misaligned_frames() {
        assert!(frame_results(vec![vec![]], vec![]).is_err());
    }
}
