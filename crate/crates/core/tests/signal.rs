//! STFT, normalization, diffuse noise and scene rendering.

use ipdnet_core::bessel::j0;
use ipdnet_core::dsp::{normalize_offline, normalize_online, stft, StftConfig, C64};
use ipdnet_core::geometry::{pair_tdoa, ArrayGeometry, Direction};
use ipdnet_core::simulate::{
    activity_ratio, diffuse_noise, render_scene, Room, SceneSpec, SourceSignal, SourceSpec, Trajectory, Waypoint,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

fn white(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn wrap(x: f64) -> f64 {
    (x + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI
}

#[test]
fn integer_delay_cross_phase() {
    let x = white(1, 32000);
    let mut y = vec![0.0; 4];
    y.extend_from_slice(&x[..x.len() - 4]);
    let s = stft(&[x, y], &StftConfig::default()).unwrap();
    for f in (0..256).step_by(8) {
        let mut cross = C64::new(0.0, 0.0);
        for n in 0..s.frames {
            cross += s.at(1, n, f) * s.at(0, n, f).conj();
        }
        let v = s.config.bin_frequency(f);
        let want = -2.0 * std::f64::consts::PI * v * 4.0 / 16000.0;
        assert!(wrap(cross.arg() - want).abs() < 0.02, "bin {f}: {} vs {want}", cross.arg());
    }
}

#[test]
fn normalization_scale_invariance_and_mean() {
    let x = white(2, 8000);
    let scaled: Vec<f64> = x.iter().map(|v| v * 10.0).collect();
    let cfg = StftConfig::default();
    let (a, b) = (stft(&[x.clone(), x.clone()], &cfg).unwrap(), stft(&[scaled.clone(), scaled], &cfg).unwrap());
    for (p, q) in normalize_offline(&a).values.iter().zip(&normalize_offline(&b).values) {
        assert!((p - q).norm() <= 1e-6 * p.norm().max(1e-30));
    }
    for (p, q) in normalize_online(&a, 125).unwrap().values.iter().zip(&normalize_online(&b, 125).unwrap().values) {
        assert!((p - q).norm() <= 1e-6 * p.norm().max(1e-30));
    }
    let n = normalize_offline(&a);
    let mean = n.values.iter().map(|v| v.norm()).sum::<f64>() / n.values.len() as f64;
    assert!((mean - 1.0).abs() < 1e-9);
}

#[test]
fn online_normalization_is_causal() {
    let cfg = StftConfig::default();
    let x = white(3, 16000);
    let mut y = x.clone();
    for v in &mut y[9000..] {
        *v *= -3.0;
    }
    let (a, b) = (stft(&[x], &cfg).unwrap(), stft(&[y], &cfg).unwrap());
    let (na, nb) = (normalize_online(&a, 125).unwrap(), normalize_online(&b, 125).unwrap());
    // Frames ending before sample 9000 are untouched.
    let clean = (9000 - 512) / 256 + 1;
    for n in 0..clean {
        assert_eq!(na.frame(0, n), nb.frame(0, n));
    }
    assert_ne!(na.frame(0, clean + 2), nb.frame(0, clean + 2));
}

#[test]
fn online_normalization_converges() {
    let mut x = ipdnet_core::dsp::StftTensor::zeros(1, 1000, StftConfig::default());
    for (i, v) in x.values.iter_mut().enumerate() {
        let n = i / 256;
        *v = C64::from_polar(if n == 0 { 1.0 } else { 3.0 }, 0.3);
    }
    let y = normalize_online(&x, 125).unwrap();
    assert!((y.at(0, 999, 10).norm() - 1.0).abs() < 1e-3);
}

/// Welch estimate of the real-valued spatial coherence at FFT bin `k` of a 512-point Hann analysis.
fn welch_coherence(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = 512;
    let win: Vec<f64> = (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let (mut saa, mut sbb, mut sab) = (vec![0.0; n / 2 + 1], vec![0.0; n / 2 + 1], vec![C64::new(0.0, 0.0); n / 2 + 1]);
    let mut start = 0;
    while start + n <= a.len() {
        let mut fa: Vec<C64> = (0..n).map(|i| C64::new(a[start + i] * win[i], 0.0)).collect();
        let mut fb: Vec<C64> = (0..n).map(|i| C64::new(b[start + i] * win[i], 0.0)).collect();
        fft.process(&mut fa);
        fft.process(&mut fb);
        for k in 0..=n / 2 {
            saa[k] += fa[k].norm_sqr();
            sbb[k] += fb[k].norm_sqr();
            sab[k] += fa[k] * fb[k].conj();
        }
        start += n / 2;
    }
    (0..=n / 2).map(|k| sab[k].re / (saa[k] * sbb[k]).sqrt()).collect()
}

#[test]
fn diffuse_noise_coherence_follows_bessel() {
    let g = ArrayGeometry::two_mic(0.04).unwrap();
    let noise = diffuse_noise(&g, 60 * 16000, 16000, 5).unwrap();
    let coh = welch_coherence(&noise[0], &noise[1]);
    let mut worst: f64 = 0.0;
    for (k, c) in coh.iter().enumerate().skip(1) {
        let v = k as f64 * 16000.0 / 512.0;
        if v >= 4000.0 {
            break;
        }
        worst = worst.max((c - j0(2.0 * std::f64::consts::PI * v * 0.04 / 343.0)).abs());
    }
    assert!(worst < 0.1, "{worst}");
}

#[test]
fn coincident_mics_fully_coherent() {
    let g = ArrayGeometry::new(vec![[0.0; 3], [1e-7, 0.0, 0.0]], 0, 343.0).unwrap();
    let noise = diffuse_noise(&g, 4 * 16000, 16000, 6).unwrap();
    let coh = welch_coherence(&noise[0], &noise[1]);
    assert!(coh[1..].iter().all(|&c| c > 0.99));
}

fn burst_source(seed: u64, az: f64) -> SourceSpec {
    SourceSpec {
        signal: SourceSignal::Burst { seed },
        trajectory: Trajectory::Static {
            direction: Direction::azimuth(az),
        },
        onset: 0.0,
        offset: 10.0,
        gain: 1.0,
    }
}

fn scene(sources: Vec<SourceSpec>) -> SceneSpec {
    let mut s = SceneSpec::new(ArrayGeometry::two_mic(0.04).unwrap(), 1.5, 21);
    s.sources = sources;
    s
}

#[test]
fn rendered_phase_matches_dp_ipd() {
    let spec = scene(vec![burst_source(1, 60.0)]);
    let audio = render_scene(&spec).unwrap();
    let cfg = StftConfig::default();
    let x = stft(&audio.mixture, &cfg).unwrap();
    let tau = pair_tdoa(&spec.geometry, 1, &Direction::azimuth(60.0)).unwrap();
    let peak = x.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut errs = Vec::new();
    for n in 0..x.frames {
        for f in 0..x.bins {
            if x.at(0, n, f).norm() > 1e-3 * peak {
                let measured = (x.at(1, n, f) * x.at(0, n, f).conj()).arg();
                let want = -2.0 * std::f64::consts::PI * cfg.bin_frequency(f) * tau;
                errs.push(wrap(measured - want).abs());
            }
        }
    }
    errs.sort_by(f64::total_cmp);
    let median = errs[errs.len() / 2];
    assert!(median < 0.05, "median phase error {median}");
}

#[test]
fn determinism_and_superposition() {
    let mut both = scene(vec![burst_source(1, 30.0), burst_source(2, 120.0)]);
    both.room = Room {
        enabled: true,
        rt60: 0.4,
        ..Room::anechoic()
    };
    let mut a = both.clone();
    a.sources.truncate(1);
    let mut b = both.clone();
    b.sources.remove(0);
    let ab = render_scene(&both).unwrap();
    assert_eq!(ab, render_scene(&both).unwrap());
    let (ra, rb) = (render_scene(&a).unwrap(), render_scene(&b).unwrap());
    for m in 0..2 {
        for t in 0..ab.mixture[m].len() {
            assert_eq!(ra.mixture[m][t] + rb.mixture[m][t], ab.mixture[m][t]);
        }
    }
}

#[test]
fn silent_source_is_noise_only() {
    let mut s = scene(vec![burst_source(1, 30.0)]);
    s.sources[0].gain = 0.0;
    s.snr_db = Some(5.0);
    let audio = render_scene(&s).unwrap();
    assert_eq!(audio.mixture, audio.noise);
    assert!(audio.frame_truth.iter().all(|f| f.num_active() == 0));
}

#[test]
fn snr_audit_with_reverb() {
    let mut s = scene(vec![burst_source(1, 30.0)]);
    s.room = Room {
        enabled: true,
        rt60: 0.8,
        ..Room::anechoic()
    };
    for snr in [-5.0, 0.0, 15.0] {
        s.snr_db = Some(snr);
        assert!((render_scene(&s).unwrap().measured_snr_db() - snr).abs() < 0.5);
    }
}

#[test]
fn activity_single_source_is_one() {
    let audio = render_scene(&scene(vec![burst_source(4, 10.0)])).unwrap();
    for f in &audio.frame_truth {
        let s = f.sources[0];
        if s.active {
            assert!((s.ratio - 1.0).abs() < 1e-12, "{}", s.ratio);
        }
    }
    assert!(audio.frame_truth.iter().filter(|f| f.sources[0].active).count() > audio.frame_truth.len() / 2);
}

#[test]
fn activity_two_sources_against_bin_oracle() {
    let audio = render_scene(&scene(vec![burst_source(5, 10.0), burst_source(6, 100.0)])).unwrap();
    let cfg = StftConfig::default();
    let d = stft(&audio.direct_ref, &cfg).unwrap();
    let x = stft(&audio.mixture[..1], &cfg).unwrap();
    for n in 0..x.frames {
        let v = activity_ratio(&d, &x, n).unwrap();
        for k in 0..2 {
            let mut sum = 0.0;
            for f in 0..256 {
                let den = x.at(0, n, f).norm();
                if den > 0.0 {
                    sum += d.at(k, n, f).norm() / den;
                }
            }
            assert!((v[k] - sum / 256.0).abs() < 1e-12);
        }
    }
    assert!(matches!(
        activity_ratio(&d, &x, x.frames),
        Err(ipdnet_core::CoreError::FrameOutOfRange { .. })
    ));
}

#[test]
fn onset_gates_activity_and_truth_follows_trajectory() {
    let mut s = scene(vec![burst_source(7, 10.0)]);
    s.sources[0].onset = 0.5;
    s.sources[0].trajectory = Trajectory::Waypoints {
        points: vec![
            Waypoint { time: 0.0, direction: Direction::azimuth(10.0) },
            Waypoint { time: 1.5, direction: Direction::azimuth(40.0) },
        ],
    };
    let audio = render_scene(&s).unwrap();
    let cfg = StftConfig::default();
    for (n, f) in audio.frame_truth.iter().enumerate() {
        let t = cfg.frame_center(n) as f64 / 16000.0;
        assert_eq!(f.sources[0].direction, s.sources[0].trajectory.at(t));
        // Frames that end before the onset hear nothing.
        if n * 256 + 512 < 8000 {
            assert!(!f.sources[0].active);
        }
    }
}
