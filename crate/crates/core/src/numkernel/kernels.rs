//! Dense matrix products used by the forward and backward passes.
//!
//! Every output element is reduced in a fixed order, so the row-parallel
//! path produces the same bits as the sequential one.

use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;

use super::tensor::Real;

static PARALLEL: AtomicBool = AtomicBool::new(true);

/// Below this many multiply-adds a product always runs on the calling thread.
const PAR_THRESHOLD: usize = 1 << 16;

/// Enables or disables row-parallel kernels. Results are identical either way.
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled, Ordering::Relaxed);
}

pub fn parallel_enabled() -> bool {
    PARALLEL.load(Ordering::Relaxed)
}

fn go_parallel(work: usize) -> bool {
    work >= PAR_THRESHOLD && parallel_enabled()
}

/// `out[m×n] = a[m×k] · b[k×n]`
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    let row = |(i, out_row): (usize, &mut [T])| {
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    };
    if go_parallel(m * k * n) && m > 1 {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
    out
}

/// `out[m×k] = g[m×n] · b[k×n]ᵀ`
pub fn matmul_bt<T: Real>(g: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    let row = |(i, out_row): (usize, &mut [T])| {
        let g_row = &g[i * n..(i + 1) * n];
        for (p, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&x, &y) in g_row.iter().zip(b_row) {
                acc += x * y;
            }
            *o = acc;
        }
    };
    if go_parallel(m * k * n) && m > 1 {
        out.par_chunks_mut(k).enumerate().for_each(row);
    } else {
        out.chunks_mut(k).enumerate().for_each(row);
    }
    out
}

/// `out[k×n] = a[m×k]ᵀ · g[m×n]`
pub fn matmul_at<T: Real>(a: &[T], g: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    let row = |(p, out_row): (usize, &mut [T])| {
        for i in 0..m {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let g_row = &g[i * n..(i + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += aip * gv;
            }
        }
    };
    if go_parallel(m * k * n) && k > 1 {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
    out
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Real>(x: &[T], cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        let mut total = T::zero();
        for &v in row {
            let e = (v - max).exp();
            total += e;
            out.push(e);
        }
        for o in &mut out[start..] {
            *o /= total;
        }
    }
    out
}

/// Row-wise log-softmax.
pub fn log_softmax_rows<T: Real>(x: &[T], cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        out.extend(row.iter().map(|&v| v - lse));
    }
    out
}
