//! Convolution kernels: im2col + GEMM for dense convolution, direct loops for
//! depthwise. All buffers are NHWC activations and HWIO kernels.

use std::borrow::Cow;

use rayon::prelude::*;

use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub k: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.k * self.k * self.cin
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn flops(&self) -> u64 {
        2 * (self.k * self.k * self.cin * self.cout * self.oh * self.ow * self.n) as u64
    }
}

fn im2col<'a, T: Scalar>(x: &'a [T], g: &ConvGeom) -> Cow<'a, [T]> {
    if g.is_pointwise() {
        return Cow::Borrowed(x);
    }
    let patch = g.patch();
    let mut col = vec![T::zero(); g.positions() * patch];
    let (k, cin, pad) = (g.k as isize, g.cin, g.pad as isize);
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = &mut col[(oy * g.ow + ox) * patch..][..patch];
            // taps of one kernel row are contiguous in both buffers
            let x0 = (ox * g.stride) as isize - pad;
            let kx0 = (-x0).clamp(0, k);
            let kx1 = (g.w as isize - x0).clamp(kx0, k);
            if kx0 == kx1 {
                continue;
            }
            let run = (kx1 - kx0) as usize * cin;
            for ky in 0..g.k {
                let iy = (oy * g.stride + ky) as isize - pad;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                let src = (iy as usize * g.w + (x0 + kx0) as usize) * cin;
                let dst = (ky * g.k + kx0 as usize) * cin;
                row[dst..dst + run].copy_from_slice(&x[src..src + run]);
            }
        }
    }
    Cow::Owned(col)
}

fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let patch = g.patch();
    let (k, cin, pad) = (g.k as isize, g.cin, g.pad as isize);
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = &col[(oy * g.ow + ox) * patch..][..patch];
            let x0 = (ox * g.stride) as isize - pad;
            let kx0 = (-x0).clamp(0, k);
            let kx1 = (g.w as isize - x0).clamp(kx0, k);
            let run = (kx1 - kx0) as usize * cin;
            for ky in 0..g.k {
                let iy = (oy * g.stride + ky) as isize - pad;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                let dst = (iy as usize * g.w + (x0 + kx0) as usize) * cin;
                let src = (ky * g.k + kx0 as usize) * cin;
                for (d, s) in dx[dst..dst + run].iter_mut().zip(&row[src..src + run]) {
                    *d += *s;
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(x: &[T], kernel: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let in_len = g.h * g.w * g.cin;
    let out_len = g.positions() * g.cout;
    let mut out = vec![T::zero(); g.n * out_len];
    out.par_chunks_mut(out_len)
        .zip(x.par_chunks(in_len))
        .for_each(|(y, xs)| {
            let col = im2col(xs, g);
            T::gemm(g.positions(), g.patch(), g.cout, &col, false, kernel, false, y, false);
            if let Some(b) = bias {
                for row in y.chunks_mut(g.cout) {
                    for (v, &bb) in row.iter_mut().zip(b) {
                        *v += bb;
                    }
                }
            }
        });
    out
}

/// Gradients of a dense convolution. Returns `(dx, dkernel, dbias)`; each is
/// computed only when requested.
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    kernel: &[T],
    dy: &[T],
    g: &ConvGeom,
    want_dx: bool,
    want_dk: bool,
    want_db: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let in_len = g.h * g.w * g.cin;
    let out_len = g.positions() * g.cout;
    let patch = g.patch();

    let dx = want_dx.then(|| {
        let mut dx = vec![T::zero(); g.n * in_len];
        dx.par_chunks_mut(in_len)
            .zip(dy.par_chunks(out_len))
            .for_each(|(dxs, dys)| {
                if g.is_pointwise() {
                    T::gemm(g.positions(), g.cout, g.cin, dys, false, kernel, true, dxs, false);
                } else {
                    let mut dcol = vec![T::zero(); g.positions() * patch];
                    T::gemm(g.positions(), g.cout, patch, dys, false, kernel, true, &mut dcol, false);
                    col2im(&dcol, g, dxs);
                }
            });
        dx
    });

    let dk = want_dk.then(|| {
        let partials: Vec<Vec<T>> = x
            .par_chunks(in_len)
            .zip(dy.par_chunks(out_len))
            .map(|(xs, dys)| {
                let col = im2col(xs, g);
                let mut dk = vec![T::zero(); patch * g.cout];
                T::gemm(patch, g.positions(), g.cout, &col, true, dys, false, &mut dk, false);
                dk
            })
            .collect();
        let mut dk = vec![T::zero(); patch * g.cout];
        for p in partials {
            for (a, b) in dk.iter_mut().zip(p) {
                *a += b;
            }
        }
        dk
    });

    let db = want_db.then(|| {
        let mut db = vec![T::zero(); g.cout];
        for row in dy.chunks(g.cout) {
            for (a, &b) in db.iter_mut().zip(row) {
                *a += b;
            }
        }
        db
    });

    (dx, dk, db)
}

/// Depthwise stride-1 same-padded convolution, kernel `[k, k, C]`.
pub fn depthwise_forward<T: Scalar>(x: &[T], kernel: &[T], dims: [usize; 4], k: usize) -> Vec<T> {
    let [n, h, w, c] = dims;
    let pad = (k / 2) as isize;
    let mut out = vec![T::zero(); x.len()];
    let plane = h * w * c;
    out.par_chunks_mut(plane)
        .zip(x.par_chunks(plane))
        .take(n)
        .for_each(|(ys, xs)| {
            for y in 0..h {
                for xx in 0..w {
                    let o = &mut ys[(y * w + xx) * c..][..c];
                    for ky in 0..k {
                        let iy = y as isize + ky as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = xx as isize + kx as isize - pad;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let src = &xs[(iy as usize * w + ix as usize) * c..][..c];
                            let kw = &kernel[(ky * k + kx) * c..][..c];
                            for ((ov, &sv), &kv) in o.iter_mut().zip(src).zip(kw) {
                                *ov += sv * kv;
                            }
                        }
                    }
                }
            }
        });
    out
}

pub fn depthwise_backward<T: Scalar>(
    x: &[T],
    kernel: &[T],
    dy: &[T],
    dims: [usize; 4],
    k: usize,
) -> (Vec<T>, Vec<T>) {
    let [n, h, w, c] = dims;
    let pad = (k / 2) as isize;
    let mut dx = vec![T::zero(); x.len()];
    let mut dk = vec![T::zero(); kernel.len()];
    let plane = h * w * c;
    for b in 0..n {
        let xs = &x[b * plane..][..plane];
        let dys = &dy[b * plane..][..plane];
        let dxs = &mut dx[b * plane..][..plane];
        for y in 0..h {
            for xx in 0..w {
                let g = &dys[(y * w + xx) * c..][..c];
                for ky in 0..k {
                    let iy = y as isize + ky as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = xx as isize + kx as isize - pad;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let off = (iy as usize * w + ix as usize) * c;
                        let kw = (ky * k + kx) * c;
                        for ch in 0..c {
                            dxs[off + ch] += g[ch] * kernel[kw + ch];
                            dk[kw + ch] += g[ch] * xs[off + ch];
                        }
                    }
                }
            }
        }
    }
    (dx, dk)
}
