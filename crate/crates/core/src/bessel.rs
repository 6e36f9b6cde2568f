//! Zero-order Bessel function of the first kind.

use std::f64::consts::{FRAC_PI_4, PI};

/// Crossover between the power series and the Hankel asymptotic expansion.
const SERIES_LIMIT: f64 = 12.0;

/// `J0(x)`: power series below 12, Hankel asymptotic expansion above.
pub fn j0(x: f64) -> f64 {
    let x = x.abs();
    if x < SERIES_LIMIT {
        series(x)
    } else {
        asymptotic(x)
    }
}

fn series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= -q / (k * k);
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-300) && k > q.sqrt() {
            return sum;
        }
        k += 1.0;
        if k > 200.0 {
            return sum;
        }
    }
}

fn asymptotic(x: f64) -> f64 {
    // a_k = prod_{j<=k} (-(2j-1)^2) / (k! 8^k)
    let mut p = 0.0;
    let mut q = 0.0;
    let mut a = 1.0;
    let mut prev = f64::INFINITY;
    for k in 0..60 {
        if k > 0 {
            let odd = (2 * k - 1) as f64;
            a *= -(odd * odd) / (k as f64 * 8.0 * x);
        }
        if a.abs() > prev {
            break;
        }
        prev = a.abs();
        // P gets the even terms with alternating sign, Q the odd ones.
        match k % 4 {
            0 => p += a,
            1 => q += a,
            2 => p -= a,
            _ => q -= a,
        }
        if a.abs() < 1e-17 {
            break;
        }
    }
    let w = x - FRAC_PI_4;
    (2.0 / (PI * x)).sqrt() * (p * w.cos() - q * w.sin())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_at_zero() {
        assert_eq!(j0(0.0), 1.0);
    }

    #[test]
    fn branches_agree_at_crossover() {
        for x in [11.5, 12.0, 12.5, 14.0] {
            assert!((series(x) - asymptotic(x)).abs() < 1e-9, "x = {x}");
        }
    }

    #[test]
    fn known_values() {
        // Abramowitz & Stegun table 9.1
        assert!((j0(1.0) - 0.765_197_686_557_966_6).abs() < 1e-14);
        assert!((j0(5.0) + 0.177_596_771_314_338_3).abs() < 1e-13);
        assert!((j0(20.0) - 0.167_024_664_340_583_1).abs() < 1e-12);
    }
}
