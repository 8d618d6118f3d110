//! Slice-level compute kernels shared by the plain signal API in
//! [`crate::transformer`] and the autodiff ops in [`crate::nn`].
//!
//! All kernels work on one sample, channels-last, and use a fixed
//! summation order per output element so results never depend on the
//! caller's iteration schedule.

use crate::scalar::Real;

/// Index of the row-major 3x3 slot (`[NW N NE; W C E; SW S SE]`) that holds
/// each HEALPix neighbour direction (SW, W, NW, N, NE, E, SE, S).
pub const SLOT_OF_DIRECTION: [usize; 8] = [6, 3, 0, 1, 2, 5, 8, 7];
pub const CENTER_SLOT: usize = 4;

/// Offset of slot `s` of pixel `p` in a `3 x 3n x c` patch buffer.
#[inline]
pub fn patch_offset(n: usize, c: usize, p: usize, slot: usize) -> usize {
    let (row, col) = (slot / 3, slot % 3);
    (row * 3 * n + 3 * p + col) * c
}

/// Materialises the `3 x 3n x c` patch layout. `-1` slots become zeros.
pub fn gather_forward<T: Real>(src: &[T], c: usize, rows: &[[i32; 9]], dst: &mut [T]) {
    let n = rows.len();
    debug_assert_eq!(src.len(), n * c);
    debug_assert_eq!(dst.len(), 9 * n * c);
    for (p, row) in rows.iter().enumerate() {
        for (slot, &q) in row.iter().enumerate() {
            let off = patch_offset(n, c, p, slot);
            let out = &mut dst[off..off + c];
            if q < 0 {
                out.fill(T::zero());
            } else {
                let q = q as usize;
                out.copy_from_slice(&src[q * c..(q + 1) * c]);
            }
        }
    }
}

/// Adjoint of [`gather_forward`]: scatter-adds patch gradients back.
pub fn gather_backward<T: Real>(dpatch: &[T], c: usize, rows: &[[i32; 9]], dsrc: &mut [T]) {
    let n = rows.len();
    for (p, row) in rows.iter().enumerate() {
        for (slot, &q) in row.iter().enumerate() {
            if q < 0 {
                continue;
            }
            let off = patch_offset(n, c, p, slot);
            let q = q as usize;
            for (d, &g) in dsrc[q * c..(q + 1) * c].iter_mut().zip(&dpatch[off..off + c]) {
                *d += g;
            }
        }
    }
}

/// Geometry of a valid (unpadded) 2D convolution over an `h x w x cin`
/// input with a `kh x kw x cin x cout` kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dShape {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub stride_h: usize,
    pub stride_w: usize,
}

impl Conv2dShape {
    pub fn out_h(&self) -> usize {
        (self.h - self.kh) / self.stride_h + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w - self.kw) / self.stride_w + 1
    }

    pub fn input_len(&self) -> usize {
        self.h * self.w * self.cin
    }

    pub fn output_len(&self) -> usize {
        self.out_h() * self.out_w() * self.cout
    }

    pub fn weight_len(&self) -> usize {
        self.kh * self.kw * self.cin * self.cout
    }
}

pub fn conv2d_forward<T: Real>(s: &Conv2dShape, x: &[T], wts: &[T], bias: Option<&[T]>, out: &mut [T]) {
    let (oh, ow) = (s.out_h(), s.out_w());
    for i in 0..oh {
        for j in 0..ow {
            let o = &mut out[(i * ow + j) * s.cout..(i * ow + j + 1) * s.cout];
            match bias {
                Some(b) => o.copy_from_slice(b),
                None => o.fill(T::zero()),
            }
            for a in 0..s.kh {
                let row = i * s.stride_h + a;
                for b in 0..s.kw {
                    let col = j * s.stride_w + b;
                    let xv = &x[(row * s.w + col) * s.cin..(row * s.w + col + 1) * s.cin];
                    let wbase = (a * s.kw + b) * s.cin * s.cout;
                    for (ci, &xc) in xv.iter().enumerate() {
                        if xc == T::zero() {
                            continue;
                        }
                        let wrow = &wts[wbase + ci * s.cout..wbase + (ci + 1) * s.cout];
                        for (ov, &wv) in o.iter_mut().zip(wrow) {
                            *ov += xc * wv;
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates input, weight and bias gradients of [`conv2d_forward`].
pub fn conv2d_backward<T: Real>(
    s: &Conv2dShape,
    x: &[T],
    wts: &[T],
    dy: &[T],
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let (oh, ow) = (s.out_h(), s.out_w());
    if let Some(db) = db {
        for g in dy.chunks_exact(s.cout) {
            for (d, &v) in db.iter_mut().zip(g) {
                *d += v;
            }
        }
    }
    if let Some(dw) = dw {
        for i in 0..oh {
            for j in 0..ow {
                let g = &dy[(i * ow + j) * s.cout..(i * ow + j + 1) * s.cout];
                for a in 0..s.kh {
                    let row = i * s.stride_h + a;
                    for b in 0..s.kw {
                        let col = j * s.stride_w + b;
                        let xv = &x[(row * s.w + col) * s.cin..(row * s.w + col + 1) * s.cin];
                        let wbase = (a * s.kw + b) * s.cin * s.cout;
                        for (ci, &xc) in xv.iter().enumerate() {
                            if xc == T::zero() {
                                continue;
                            }
                            let drow = &mut dw[wbase + ci * s.cout..wbase + (ci + 1) * s.cout];
                            for (d, &gv) in drow.iter_mut().zip(g) {
                                *d += xc * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(dx) = dx {
        for i in 0..oh {
            for j in 0..ow {
                let g = &dy[(i * ow + j) * s.cout..(i * ow + j + 1) * s.cout];
                for a in 0..s.kh {
                    let row = i * s.stride_h + a;
                    for b in 0..s.kw {
                        let col = j * s.stride_w + b;
                        let dxv = &mut dx[(row * s.w + col) * s.cin..(row * s.w + col + 1) * s.cin];
                        let wbase = (a * s.kw + b) * s.cin * s.cout;
                        for (ci, d) in dxv.iter_mut().enumerate() {
                            let wrow = &wts[wbase + ci * s.cout..wbase + (ci + 1) * s.cout];
                            let mut acc = T::zero();
                            for (&wv, &gv) in wrow.iter().zip(g) {
                                acc += wv * gv;
                            }
                            *d += acc;
                        }
                    }
                }
            }
        }
    }
}

/// `out[m, :] = x[m, :] * w + b` for `x: m x k`, `w: k x n`.
pub fn affine_forward<T: Real>(x: &[T], k: usize, w: &[T], n: usize, bias: Option<&[T]>, out: &mut [T]) {
    for (xr, o) in x.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        match bias {
            Some(b) => o.copy_from_slice(b),
            None => o.fill(T::zero()),
        }
        for (ki, &xv) in xr.iter().enumerate() {
            if xv == T::zero() {
                continue;
            }
            for (ov, &wv) in o.iter_mut().zip(&w[ki * n..(ki + 1) * n]) {
                *ov += xv * wv;
            }
        }
    }
}

pub fn affine_backward<T: Real>(
    x: &[T],
    k: usize,
    w: &[T],
    n: usize,
    dy: &[T],
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    if let Some(db) = db {
        for g in dy.chunks_exact(n) {
            for (d, &v) in db.iter_mut().zip(g) {
                *d += v;
            }
        }
    }
    if let Some(dw) = dw {
        for (xr, g) in x.chunks_exact(k).zip(dy.chunks_exact(n)) {
            for (ki, &xv) in xr.iter().enumerate() {
                if xv == T::zero() {
                    continue;
                }
                for (d, &gv) in dw[ki * n..(ki + 1) * n].iter_mut().zip(g) {
                    *d += xv * gv;
                }
            }
        }
    }
    if let Some(dx) = dx {
        for (dxr, g) in dx.chunks_exact_mut(k).zip(dy.chunks_exact(n)) {
            for (ki, d) in dxr.iter_mut().enumerate() {
                let mut acc = T::zero();
                for (&wv, &gv) in w[ki * n..(ki + 1) * n].iter().zip(g) {
                    acc += wv * gv;
                }
                *d += acc;
            }
        }
    }
}

/// Max over each run of four consecutive pixels. `argmax` stores the winning
/// source pixel per output element; ties go to the lowest child.
pub fn pool1x4_forward<T: Real>(x: &[T], c: usize, out: &mut [T], argmax: &mut [u32]) {
    let n_out = out.len() / c;
    for p in 0..n_out {
        for ch in 0..c {
            let mut best = 4 * p;
            let mut best_v = x[best * c + ch];
            for k in 1..4 {
                let q = 4 * p + k;
                let v = x[q * c + ch];
                if v > best_v {
                    best = q;
                    best_v = v;
                }
            }
            out[p * c + ch] = best_v;
            argmax[p * c + ch] = best as u32;
        }
    }
}

pub fn pool1x4_backward<T: Real>(dy: &[T], c: usize, argmax: &[u32], dx: &mut [T]) {
    for (i, (&g, &src)) in dy.iter().zip(argmax).enumerate() {
        dx[src as usize * c + i % c] += g;
    }
}

/// Transposed 1x4 convolution along the nested pixel axis: child `4p + k`
/// receives `x[p] * w[k] + b`, with `w: 4 x cin x cout`.
pub fn unpool_forward<T: Real>(x: &[T], cin: usize, w: &[T], cout: usize, bias: Option<&[T]>, out: &mut [T]) {
    let n = x.len() / cin;
    for p in 0..n {
        let xr = &x[p * cin..(p + 1) * cin];
        for k in 0..4 {
            let child = 4 * p + k;
            let o = &mut out[child * cout..(child + 1) * cout];
            let wk = &w[k * cin * cout..(k + 1) * cin * cout];
            affine_forward(xr, cin, wk, cout, bias, o);
        }
    }
}

pub fn unpool_backward<T: Real>(
    x: &[T],
    cin: usize,
    w: &[T],
    cout: usize,
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let n = x.len() / cin;
    for p in 0..n {
        let xr = &x[p * cin..(p + 1) * cin];
        for k in 0..4 {
            let child = 4 * p + k;
            let g = &dy[child * cout..(child + 1) * cout];
            let wk = &w[k * cin * cout..(k + 1) * cin * cout];
            affine_backward(
                xr,
                cin,
                wk,
                cout,
                g,
                dx.as_deref_mut().map(|d| &mut d[p * cin..(p + 1) * cin]),
                dw.as_deref_mut().map(|d| &mut d[k * cin * cout..(k + 1) * cin * cout]),
                db.as_deref_mut(),
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_all_ones_window_sums() {
        // 3x6x1 input, all-ones 3x3 kernel, stride (1, 3): two window sums
        let x: Vec<f64> = (1..=18).map(|v| v as f64).collect();
        let s = Conv2dShape { h: 3, w: 6, cin: 1, kh: 3, kw: 3, cout: 1, stride_h: 1, stride_w: 3 };
        let mut out = vec![0.0; s.output_len()];
        conv2d_forward(&s, &x, &[1.0; 9], None, &mut out);
        // window 0: columns 0..3 of each row -> 1+2+3 + 7+8+9 + 13+14+15 = 72
        // window 1: columns 3..6 -> 4+5+6 + 10+11+12 + 16+17+18 = 99
        assert_eq!(out, vec![72.0, 99.0]);
    }

    #[test]
    fn conv_unit_stride_general_case() {
        // 4x4 input, all-ones kernel, stride 1: 2x2 output of window sums
        let x: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let s = Conv2dShape { h: 4, w: 4, cin: 1, kh: 3, kw: 3, cout: 1, stride_h: 1, stride_w: 1 };
        let mut out = vec![0.0; s.output_len()];
        conv2d_forward(&s, &x, &[1.0; 9], None, &mut out);
        assert_eq!(out, vec![45.0, 54.0, 81.0, 90.0]);
    }

    #[test]
    fn pool_ties_pick_lowest_child() {
        let x = [1.0f32, 3.0, 3.0, 2.0];
        let mut out = [0.0f32];
        let mut arg = [0u32];
        pool1x4_forward(&x, 1, &mut out, &mut arg);
        assert_eq!(out[0], 3.0);
        assert_eq!(arg[0], 1);
    }

    #[test]
    fn pool_gradient_is_one_hot() {
        let x = [0.5f64, -1.0, 2.0, 0.0, 7.0, 6.0, 5.0, 4.0];
        let mut out = [0.0; 2];
        let mut arg = [0u32; 2];
        pool1x4_forward(&x, 1, &mut out, &mut arg);
        let mut dx = [0.0; 8];
        pool1x4_backward(&[1.5, -2.0], 1, &arg, &mut dx);
        assert_eq!(dx, [0.0, 0.0, 1.5, 0.0, -2.0, 0.0, 0.0, 0.0]);
        assert_eq!(dx.iter().sum::<f64>(), 1.5 - 2.0);
    }
}
