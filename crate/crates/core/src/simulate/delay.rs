//! Windowed-sinc fractional delay.

/// Taps run over `k in [-HALF+1, HALF]`.
pub const TAPS: usize = 32;
const HALF: i64 = (TAPS / 2) as i64;

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Filter for a delay of `frac` in `[0, 1)` samples; tap `i` applies to lag `i - HALF + 1`.
/// A zero fraction yields an exact unit impulse.
pub fn kernel(frac: f64) -> [f64; TAPS] {
    let mut h = [0.0; TAPS];
    if frac == 0.0 {
        h[(HALF - 1) as usize] = 1.0;
        return h;
    }
    for (i, v) in h.iter_mut().enumerate() {
        let x = (i as i64 - HALF + 1) as f64 - frac;
        let w = 0.5 * (1.0 + (std::f64::consts::PI * x / HALF as f64).cos());
        *v = sinc(x) * w;
    }
    h
}

/// Adds `gain * x` delayed by `delay` samples into `out`; `x[0]` sits at
/// output index `offset`. Samples falling outside `out` are dropped.
pub fn add_delayed(out: &mut [f64], x: &[f64], offset: i64, delay: f64, gain: f64) {
    if x.is_empty() || gain == 0.0 {
        return;
    }
    let whole = delay.floor();
    let h = kernel(delay - whole);
    let base = offset + whole as i64;
    let len = out.len() as i64;
    for (i, &tap) in h.iter().enumerate() {
        if tap == 0.0 {
            continue;
        }
        let shift = base + i as i64 - HALF + 1;
        let g = gain * tap;
        let lo = (-shift).max(0);
        let hi = (len - shift).min(x.len() as i64);
        if lo >= hi {
            continue;
        }
        let dst = &mut out[(lo + shift) as usize..(hi + shift) as usize];
        for (o, &s) in dst.iter_mut().zip(&x[lo as usize..hi as usize]) {
            *o += g * s;
        }
    }
}
