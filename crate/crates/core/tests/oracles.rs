//! Targets and Bessel values against independent high-precision evaluations.

use ipdnet_core::bessel::j0;
use ipdnet_core::dsp::StftConfig;
use ipdnet_core::geometry::{pair_tdoa, ArrayGeometry, Direction};
use ipdnet_core::targets::{dp_ipd_vector, non_source_vector};
use num_bigint::BigInt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BITS: u32 = 400;

/// J0 of the dyadic rational `a / 2^s` by its power series in 400-bit fixed point.
fn j0_bigint(a: i64, s: u32) -> f64 {
    let one = BigInt::from(1) << BITS;
    let a2 = BigInt::from(a) * BigInt::from(a);
    let den_base = BigInt::from(4) << (2 * s);
    let mut term = one.clone();
    let mut sum = one;
    let mut k: i64 = 1;
    loop {
        term = -(term * &a2) / (&den_base * BigInt::from(k * k));
        if term == BigInt::from(0) {
            break;
        }
        sum += &term;
        k += 1;
    }
    let top = i128::try_from(&(sum >> (BITS - 100))).unwrap();
    top as f64 / 2f64.powi(100)
}

#[test]
fn j0_matches_high_precision_series() {
    let mut worst: f64 = 0.0;
    // 0 .. 30 in steps of 1/64, plus odd dyadic points.
    for i in 0..=30 * 64 {
        let x = i as f64 / 64.0;
        worst = worst.max((j0(x) - j0_bigint(i, 6)).abs());
    }
    for i in (1..30 * 1024).step_by(97) {
        let x = i as f64 / 1024.0;
        worst = worst.max((j0(x) - j0_bigint(i, 10)).abs());
    }
    assert!(worst < 1e-9, "max abs error {worst:e}");
}

#[test]
fn j0_first_root() {
    let (mut lo, mut hi) = (2.0, 3.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if j0(mid) > 0.0 {
            lo = mid
        } else {
            hi = mid
        }
    }
    assert!((lo - 2.40483).abs() < 1e-4);
    // The non-source target of a 4 cm pair crosses zero near 3282 Hz.
    let v = lo * 343.0 / (2.0 * std::f64::consts::PI * 0.04);
    assert!((v - 3282.0).abs() < 1.0, "{v}");
}

#[test]
fn non_source_is_manifold_mean() {
    let g = ArrayGeometry::two_mic(0.04).unwrap();
    let target = non_source_vector(&g, 1).unwrap();
    let f = target.bins();
    let n = 10_000;
    let mut mean = vec![0.0; 2 * f];
    for i in 0..n {
        let theta = 360.0 * (i as f64 + 0.5) / n as f64;
        let v = dp_ipd_vector(&g, 1, &Direction::azimuth(theta)).unwrap();
        for (m, x) in mean.iter_mut().zip(&v.values) {
            *m += x / n as f64;
        }
    }
    let worst = mean.iter().zip(&target.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-3, "{worst}");
}

#[test]
fn non_source_limits_and_shape() {
    let tiny = ArrayGeometry::new(vec![[0.0; 3], [1e-6, 0.0, 0.0]], 0, 343.0).unwrap();
    let v = non_source_vector(&tiny, 1).unwrap();
    assert!((v.real()[0] - 1.0).abs() < 1e-9);
    assert!(v.imag().iter().all(|&x| x == 0.0));
    // Smaller spacing: first zero crossing at a higher frequency.
    let first_zero = |d: f64| {
        let g = ArrayGeometry::two_mic(d).unwrap();
        let v = non_source_vector(&g, 1).unwrap();
        v.real().iter().position(|&x| x < 0.0).unwrap()
    };
    assert!(first_zero(0.04) > first_zero(0.08));
}

#[test]
fn dp_ipd_matches_complex_exponential() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = StftConfig::default();
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let m = rng.gen_range(2..7);
        let pos: Vec<[f64; 3]> = (0..m)
            .map(|_| [rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.05..0.05)])
            .collect();
        let g = ArrayGeometry::new(pos.clone(), 0, 343.0).unwrap();
        let pair = rng.gen_range(1..m);
        let (az, el) = (rng.gen_range(0.0..360.0f64), rng.gen_range(-90.0..90.0f64));
        let bin = rng.gen_range(0..256);
        let v = dp_ipd_vector(&g, pair, &Direction::new(az, el)).unwrap();
        // Independent: delay from explicit coordinates, phase through a complex exponential.
        let (a, e) = (az.to_radians(), el.to_radians());
        let u = [e.cos() * a.cos(), e.cos() * a.sin(), e.sin()];
        let tau: f64 = (0..3).map(|k| (pos[0][k] - pos[pair][k]) * u[k]).sum::<f64>() / 343.0;
        let freq = (bin + 1) as f64 * 16000.0 / 512.0;
        let z = num_complex_exp(-2.0 * std::f64::consts::PI * freq * tau);
        worst = worst.max((v.real()[bin] - z.0).abs()).max((v.imag()[bin] - z.1).abs());
        assert!((cfg.bin_frequency(bin) - freq).abs() == 0.0);
    }
    assert!(worst < 1e-12, "{worst:e}");
}

fn num_complex_exp(phase: f64) -> (f64, f64) {
    let z = rustfft::num_complex::Complex::new(0.0, phase).exp();
    (z.re, z.im)
}

#[test]
fn unit_modulus_and_square_array() {
    let s = 0.05;
    let pos = vec![[s, s, 0.0], [-s, s, 0.0], [-s, -s, 0.0], [s, -s, 0.0]];
    let g = ArrayGeometry::new(pos.clone(), 0, 343.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let d = Direction::new(rng.gen_range(0.0..360.0), rng.gen_range(-90.0..90.0));
        for m in 1..4 {
            let u = d.unit_vector();
            let brute = ((pos[0][0] - pos[m][0]) * u[0] + (pos[0][1] - pos[m][1]) * u[1] + (pos[0][2] - pos[m][2]) * u[2]) / 343.0;
            assert!((pair_tdoa(&g, m, &d).unwrap() - brute).abs() < 1e-18);
            let v = dp_ipd_vector(&g, m, &d).unwrap();
            for f in 0..v.bins() {
                assert!((v.real()[f].powi(2) + v.imag()[f].powi(2) - 1.0).abs() < 1e-12);
            }
        }
    }
}
