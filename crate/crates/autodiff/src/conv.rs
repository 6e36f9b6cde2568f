//! 2-D convolution over `(time, frequency)` and temporal average pooling.
//!
//! Activations are laid out `[batch, time, freq, channels]`; kernels are
//! `[kt, kf, c_in, c_out]`.

use crate::scalar::{gemm, Mat, Scalar};

/// Time-axis padding of a convolution. Frequency padding is always "same".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimePadding {
    /// `kt - 1` frames of zeros before the sequence, none after.
    Causal,
    /// `(kt - 1) / 2` frames on each side.
    Centered,
}

impl TimePadding {
    pub(crate) fn amounts(self, kt: usize) -> (usize, usize) {
        match self {
            TimePadding::Causal => (kt - 1, 0),
            TimePadding::Centered => ((kt - 1) / 2, kt - 1 - (kt - 1) / 2),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub time: usize,
    pub freq: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kt: usize,
    pub kf: usize,
    pub pad_before: usize,
    pub pad_after: usize,
}

impl ConvDims {
    pub fn time_out(&self) -> usize {
        self.time + self.pad_before + self.pad_after + 1 - self.kt
    }
    fn patch(&self) -> usize {
        self.kt * self.kf * self.c_in
    }
    fn pad_f(&self) -> usize {
        (self.kf - 1) / 2
    }
}

fn im2col<T: Scalar>(d: &ConvDims, x: &[T], col: &mut [T]) {
    let to = d.time_out();
    let patch = d.patch();
    let pf = d.pad_f() as isize;
    for t in 0..to {
        for f in 0..d.freq {
            let base = (t * d.freq + f) * patch;
            for a in 0..d.kt {
                let ts = t as isize + a as isize - d.pad_before as isize;
                let t_ok = ts >= 0 && ts < d.time as isize;
                for c in 0..d.kf {
                    let fs = f as isize + c as isize - pf;
                    let dst = base + (a * d.kf + c) * d.c_in;
                    let slot = &mut col[dst..dst + d.c_in];
                    if t_ok && fs >= 0 && fs < d.freq as isize {
                        let src = (ts as usize * d.freq + fs as usize) * d.c_in;
                        slot.copy_from_slice(&x[src..src + d.c_in]);
                    } else {
                        slot.fill(T::zero());
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(d: &ConvDims, col: &[T], dx: &mut [T]) {
    let to = d.time_out();
    let patch = d.patch();
    let pf = d.pad_f() as isize;
    for t in 0..to {
        for f in 0..d.freq {
            let base = (t * d.freq + f) * patch;
            for a in 0..d.kt {
                let ts = t as isize + a as isize - d.pad_before as isize;
                if ts < 0 || ts >= d.time as isize {
                    continue;
                }
                for c in 0..d.kf {
                    let fs = f as isize + c as isize - pf;
                    if fs < 0 || fs >= d.freq as isize {
                        continue;
                    }
                    let dst = (ts as usize * d.freq + fs as usize) * d.c_in;
                    let src = base + (a * d.kf + c) * d.c_in;
                    for k in 0..d.c_in {
                        dx[dst + k] = dx[dst + k] + col[src + k];
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward<T: Scalar>(d: &ConvDims, x: &[T], w: &[T], bias: &[T]) -> Vec<T> {
    let to = d.time_out();
    let rows = to * d.freq;
    let in_item = d.time * d.freq * d.c_in;
    let out_item = rows * d.c_out;
    let mut out = Vec::with_capacity(d.batch * out_item);
    for _ in 0..d.batch * rows {
        out.extend_from_slice(bias);
    }
    let mut col = vec![T::zero(); rows * d.patch()];
    for b in 0..d.batch {
        im2col(d, &x[b * in_item..(b + 1) * in_item], &mut col);
        gemm(
            rows,
            d.patch(),
            d.c_out,
            T::one(),
            &col,
            Mat::row_major(0, d.patch()),
            w,
            Mat::row_major(0, d.c_out),
            T::one(),
            &mut out,
            Mat::row_major(b * out_item, d.c_out),
        );
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Vec<T>,
    pub dbias: Vec<T>,
}

pub(crate) fn conv_backward<T: Scalar>(
    d: &ConvDims,
    x: &[T],
    w: &[T],
    dy: &[T],
    need_dx: bool,
) -> ConvGrads<T> {
    let to = d.time_out();
    let rows = to * d.freq;
    let patch = d.patch();
    let in_item = d.time * d.freq * d.c_in;
    let out_item = rows * d.c_out;
    let mut dw = vec![T::zero(); patch * d.c_out];
    let mut dbias = vec![T::zero(); d.c_out];
    let mut dx = need_dx.then(|| vec![T::zero(); d.batch * in_item]);
    let mut col = vec![T::zero(); rows * patch];
    let mut dcol = vec![T::zero(); if need_dx { rows * patch } else { 0 }];
    for b in 0..d.batch {
        im2col(d, &x[b * in_item..(b + 1) * in_item], &mut col);
        gemm(
            patch,
            rows,
            d.c_out,
            T::one(),
            &col,
            Mat::transposed(0, patch),
            dy,
            Mat::row_major(b * out_item, d.c_out),
            T::one(),
            &mut dw,
            Mat::row_major(0, d.c_out),
        );
        for r in 0..rows {
            let off = b * out_item + r * d.c_out;
            for (acc, &v) in dbias.iter_mut().zip(&dy[off..off + d.c_out]) {
                *acc = *acc + v;
            }
        }
        if let Some(dx) = dx.as_mut() {
            gemm(
                rows,
                d.c_out,
                patch,
                T::one(),
                dy,
                Mat::row_major(b * out_item, d.c_out),
                w,
                Mat::transposed(0, d.c_out),
                T::zero(),
                &mut dcol,
                Mat::row_major(0, patch),
            );
            col2im_add(d, &dcol, &mut dx[b * in_item..(b + 1) * in_item]);
        }
    }
    ConvGrads { dx, dw, dbias }
}

/// Output frame count of non-overlapping temporal pooling (partial last group kept).
pub(crate) fn pooled_len(time: usize, stride: usize) -> usize {
    time.div_ceil(stride)
}

pub(crate) fn pool_forward<T: Scalar>(
    shape: &[usize],
    stride: usize,
    x: &[T],
) -> Vec<T> {
    let (b_n, t_n, inner) = (shape[0], shape[1], shape[2..].iter().product::<usize>());
    let g_n = pooled_len(t_n, stride);
    let mut out = vec![T::zero(); b_n * g_n * inner];
    for b in 0..b_n {
        for g in 0..g_n {
            let t0 = g * stride;
            let t1 = (t0 + stride).min(t_n);
            let scale = T::one() / T::from_f64((t1 - t0) as f64);
            let dst = &mut out[(b * g_n + g) * inner..(b * g_n + g + 1) * inner];
            for t in t0..t1 {
                let src = &x[(b * t_n + t) * inner..(b * t_n + t + 1) * inner];
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o = *o + v;
                }
            }
            dst.iter_mut().for_each(|v| *v = *v * scale);
        }
    }
    out
}

pub(crate) fn pool_backward<T: Scalar>(shape: &[usize], stride: usize, dy: &[T]) -> Vec<T> {
    let (b_n, t_n, inner) = (shape[0], shape[1], shape[2..].iter().product::<usize>());
    let g_n = pooled_len(t_n, stride);
    let mut dx = vec![T::zero(); b_n * t_n * inner];
    for b in 0..b_n {
        for g in 0..g_n {
            let t0 = g * stride;
            let t1 = (t0 + stride).min(t_n);
            let scale = T::one() / T::from_f64((t1 - t0) as f64);
            let src = &dy[(b * g_n + g) * inner..(b * g_n + g + 1) * inner];
            for t in t0..t1 {
                let dst = &mut dx[(b * t_n + t) * inner..(b * t_n + t + 1) * inner];
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o = v * scale;
                }
            }
        }
    }
    dx
}
