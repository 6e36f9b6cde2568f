//! Batched LSTM recurrence with backpropagation through time.
//!
//! Layout: input `[batch, len, in]`, output `[batch, len, hidden]`, gate
//! order `(input, forget, cell, output)` in `w_ih: [in, 4H]`,
//! `w_hh: [H, 4H]`, `bias: [4H]`.

use crate::scalar::{gemm, Mat, Scalar};

#[derive(Debug, Clone)]
pub(crate) struct LstmDims {
    pub batch: usize,
    pub len: usize,
    pub input: usize,
    pub hidden: usize,
    pub reverse: bool,
}

impl LstmDims {
    /// Time index visited at processing step `s`.
    fn time(&self, s: usize) -> usize {
        if self.reverse {
            self.len - 1 - s
        } else {
            s
        }
    }
}

/// Activated gates and cell states saved for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct LstmCache<T> {
    gates: Vec<T>,
    cells: Vec<T>,
    /// `tanh` of `cells`.
    cells_tanh: Vec<T>,
}

#[inline]
fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp_fast())
}

/// `tanh` through a single `exp`; cheaper than the libm routine and exact
/// to a few ulps away from zero. Saturates correctly for large `|v|`.
#[inline]
fn tanh<T: Scalar>(v: T) -> T {
    let two = T::one() + T::one();
    T::one() - two / ((v + v).exp_fast() + T::one())
}

pub(crate) fn forward<T: Scalar>(
    d: &LstmDims,
    x: &[T],
    w_ih: &[T],
    w_hh: &[T],
    bias: &[T],
) -> (Vec<T>, LstmCache<T>) {
    let (b_n, l, h) = (d.batch, d.len, d.hidden);
    let g4 = 4 * h;
    let rows = b_n * l;
    let mut gates = Vec::with_capacity(rows * g4);
    for _ in 0..rows {
        gates.extend_from_slice(bias);
    }
    gemm(
        rows,
        d.input,
        g4,
        T::one(),
        x,
        Mat::row_major(0, d.input),
        w_ih,
        Mat::row_major(0, g4),
        T::one(),
        &mut gates,
        Mat::row_major(0, g4),
    );
    let mut out = vec![T::zero(); rows * h];
    let mut cells = vec![T::zero(); rows * h];
    let mut cells_tanh = vec![T::zero(); rows * h];
    for s in 0..l {
        let t = d.time(s);
        if s > 0 {
            let tp = d.time(s - 1);
            gemm(
                b_n,
                h,
                g4,
                T::one(),
                &out,
                Mat { offset: tp * h, rs: l * h, cs: 1 },
                w_hh,
                Mat::row_major(0, g4),
                T::one(),
                &mut gates,
                Mat { offset: t * g4, rs: l * g4, cs: 1 },
            );
        }
        for b in 0..b_n {
            let row = b * l + t;
            let gr = &mut gates[row * g4..(row + 1) * g4];
            let (sig, rest) = gr.split_at_mut(2 * h);
            let (cand, outg) = rest.split_at_mut(h);
            sig.iter_mut().for_each(|v| *v = sigmoid(*v));
            outg.iter_mut().for_each(|v| *v = sigmoid(*v));
            cand.iter_mut().for_each(|v| *v = tanh(*v));
            let gr = &gates[row * g4..(row + 1) * g4];
            let (ig, fg, gg, og) = (&gr[..h], &gr[h..2 * h], &gr[2 * h..3 * h], &gr[3 * h..]);
            if s > 0 {
                let p = b * l + d.time(s - 1);
                let (c_prev, c_now): (&[T], &mut [T]) = if p < row {
                    let (before, from_row) = cells.split_at_mut(row * h);
                    (&before[p * h..(p + 1) * h], &mut from_row[..h])
                } else {
                    let (before, from_prev) = cells.split_at_mut(p * h);
                    (&from_prev[..h], &mut before[row * h..(row + 1) * h])
                };
                for j in 0..h {
                    c_now[j] = fg[j] * c_prev[j] + ig[j] * gg[j];
                }
            } else {
                for j in 0..h {
                    cells[row * h + j] = ig[j] * gg[j];
                }
            }
            for j in 0..h {
                let tc = tanh(cells[row * h + j]);
                cells_tanh[row * h + j] = tc;
                out[row * h + j] = og[j] * tc;
            }
        }
    }
    (
        out,
        LstmCache {
            gates,
            cells,
            cells_tanh,
        },
    )
}

pub(crate) struct LstmGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw_ih: Vec<T>,
    pub dw_hh: Vec<T>,
    pub dbias: Vec<T>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Scalar>(
    d: &LstmDims,
    x: &[T],
    w_ih: &[T],
    w_hh: &[T],
    out: &[T],
    cache: &LstmCache<T>,
    dy: &[T],
    need_dx: bool,
) -> LstmGrads<T> {
    let (b_n, l, h) = (d.batch, d.len, d.hidden);
    let g4 = 4 * h;
    let rows = b_n * l;
    let mut dgates = vec![T::zero(); rows * g4];
    let mut dh_next = vec![T::zero(); b_n * h];
    let mut dc_next = vec![T::zero(); b_n * h];
    let mut dw_hh = vec![T::zero(); h * g4];
    let one = T::one();
    for s in (0..l).rev() {
        let t = d.time(s);
        for b in 0..b_n {
            let row = b * l + t;
            let prev = (s > 0).then(|| b * l + d.time(s - 1));
            let gr = &cache.gates[row * g4..(row + 1) * g4];
            let dg_row = &mut dgates[row * g4..(row + 1) * g4];
            for j in 0..h {
                let (i, f, g, o) = (gr[j], gr[h + j], gr[2 * h + j], gr[3 * h + j]);
                let c_prev = prev.map_or(T::zero(), |p| cache.cells[p * h + j]);
                let tc = cache.cells_tanh[row * h + j];
                let dh = dy[row * h + j] + dh_next[b * h + j];
                let dc = dh * o * (one - tc * tc) + dc_next[b * h + j];
                let d_o = dh * tc;
                dc_next[b * h + j] = dc * f;
                dg_row[j] = dc * g * i * (one - i);
                dg_row[h + j] = dc * c_prev * f * (one - f);
                dg_row[2 * h + j] = dc * i * (one - g * g);
                dg_row[3 * h + j] = d_o * o * (one - o);
            }
        }
        if s > 0 {
            let tp = d.time(s - 1);
            gemm(
                b_n,
                g4,
                h,
                one,
                &dgates,
                Mat { offset: t * g4, rs: l * g4, cs: 1 },
                w_hh,
                Mat::transposed(0, g4),
                T::zero(),
                &mut dh_next,
                Mat::row_major(0, h),
            );
            gemm(
                h,
                b_n,
                g4,
                one,
                out,
                Mat { offset: tp * h, rs: 1, cs: l * h },
                &dgates,
                Mat { offset: t * g4, rs: l * g4, cs: 1 },
                one,
                &mut dw_hh,
                Mat::row_major(0, g4),
            );
        }
    }
    let mut dw_ih = vec![T::zero(); d.input * g4];
    gemm(
        d.input,
        rows,
        g4,
        one,
        x,
        Mat::transposed(0, d.input),
        &dgates,
        Mat::row_major(0, g4),
        T::zero(),
        &mut dw_ih,
        Mat::row_major(0, g4),
    );
    let mut dbias = vec![T::zero(); g4];
    for r in 0..rows {
        for (acc, &v) in dbias.iter_mut().zip(&dgates[r * g4..(r + 1) * g4]) {
            *acc = *acc + v;
        }
    }
    let dx = need_dx.then(|| {
        let mut dx = vec![T::zero(); rows * d.input];
        gemm(
            rows,
            g4,
            d.input,
            one,
            &dgates,
            Mat::row_major(0, g4),
            w_ih,
            Mat::transposed(0, g4),
            T::zero(),
            &mut dx,
            Mat::row_major(0, d.input),
        );
        dx
    });
    LstmGrads {
        dx,
        dw_ih,
        dw_hh,
        dbias,
    }
}
