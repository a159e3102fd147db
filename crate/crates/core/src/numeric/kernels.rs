//! Dense loops behind the graph operations. All buffers are row-major.

use super::array::Element;

/// `out[m,n] = a[m,k] · b[k,n]`
pub fn gemm<T: Element>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
}

/// `out[m,k] += g[m,n] · b[k,n]ᵀ`
pub fn gemm_nt_acc<T: Element>(g: &[T], b: &[T], out: &mut [T], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot: T = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
            out[i * k + p] = out[i * k + p] + dot;
        }
    }
}

/// `out[k,n] += a[m,k]ᵀ · g[m,n]`
pub fn gemm_tn_acc<T: Element>(a: &[T], g: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o = *o + aip * gv;
            }
        }
    }
}

pub fn transpose<T: Element>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// Input row feeding output `t` through kernel tap `k`, if inside the unpadded input.
#[inline]
fn tap(t: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
    (t * stride + k).checked_sub(pad).filter(|&i| i < len)
}

#[allow(clippy::too_many_arguments)]
pub fn conv1d_forward<T: Element>(
    x: &[T],
    w: &[T],
    len: usize,
    k: usize,
    cin: usize,
    cout: usize,
    stride: usize,
    pad: usize,
    out_len: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); out_len * cout];
    for t in 0..out_len {
        let orow = &mut out[t * cout..(t + 1) * cout];
        for kk in 0..k {
            let Some(i) = tap(t, kk, stride, pad, len) else {
                continue;
            };
            let xrow = &x[i * cin..(i + 1) * cin];
            let wk = &w[kk * cin * cout..(kk + 1) * cin * cout];
            for (c, &xv) in xrow.iter().enumerate() {
                if xv == T::zero() {
                    continue;
                }
                for (o, &wv) in orow.iter_mut().zip(&wk[c * cout..(c + 1) * cout]) {
                    *o = *o + xv * wv;
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv1d_grad_input<T: Element>(
    g: &[T],
    w: &[T],
    dx: &mut [T],
    len: usize,
    k: usize,
    cin: usize,
    cout: usize,
    stride: usize,
    pad: usize,
    out_len: usize,
) {
    for t in 0..out_len {
        let grow = &g[t * cout..(t + 1) * cout];
        for kk in 0..k {
            let Some(i) = tap(t, kk, stride, pad, len) else {
                continue;
            };
            let wk = &w[kk * cin * cout..(kk + 1) * cin * cout];
            for c in 0..cin {
                let dot: T = grow
                    .iter()
                    .zip(&wk[c * cout..(c + 1) * cout])
                    .map(|(&a, &b)| a * b)
                    .sum();
                dx[i * cin + c] = dx[i * cin + c] + dot;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv1d_grad_kernel<T: Element>(
    g: &[T],
    x: &[T],
    dw: &mut [T],
    len: usize,
    k: usize,
    cin: usize,
    cout: usize,
    stride: usize,
    pad: usize,
    out_len: usize,
) {
    for t in 0..out_len {
        let grow = &g[t * cout..(t + 1) * cout];
        for kk in 0..k {
            let Some(i) = tap(t, kk, stride, pad, len) else {
                continue;
            };
            for c in 0..cin {
                let xv = x[i * cin + c];
                if xv == T::zero() {
                    continue;
                }
                let base = kk * cin * cout + c * cout;
                for (o, &gv) in dw[base..base + cout].iter_mut().zip(grow) {
                    *o = *o + xv * gv;
                }
            }
        }
    }
}
