//! Slice-level numeric kernels shared by the tape's forward and backward passes.

use super::Real;

#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] += xa[j] * xb[j];
        }
    }
    let mut tail = F::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<F: Real>(alpha: F, x: &[F], y: &mut [F]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = W x` for row-major `W` of shape `[out.len(), x.len()]`.
pub fn matvec<F: Real>(w: &[F], x: &[F], out: &mut [F]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o = dot(row, x);
    }
}

/// `out += W^T g`
pub fn matvec_t_acc<F: Real>(w: &[F], g: &[F], out: &mut [F]) {
    let cols = out.len();
    for (&gi, row) in g.iter().zip(w.chunks_exact(cols)) {
        if gi != F::zero() {
            axpy(gi, row, out);
        }
    }
}

/// `W += g x^T`
pub fn outer_acc<F: Real>(g: &[F], x: &[F], w: &mut [F]) {
    let cols = x.len();
    for (&gi, row) in g.iter().zip(w.chunks_exact_mut(cols)) {
        if gi != F::zero() {
            axpy(gi, x, row);
        }
    }
}

#[inline]
pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Numerically stable `ln(1 + exp(x))`.
#[inline]
pub fn softplus<F: Real>(x: F) -> F {
    if x > F::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(c_in: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || k == 0 || k > h + 2 * pad || k > w + 2 * pad {
            return None;
        }
        Some(Self {
            c_in,
            h,
            w,
            k,
            stride,
            pad,
            h_out: (h + 2 * pad - k) / stride + 1,
            w_out: (w + 2 * pad - k) / stride + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    pub fn out_positions(&self) -> usize {
        self.h_out * self.w_out
    }
}

/// Unfold `x` (`[c_in, h, w]`) into `[c_in*k*k, h_out*w_out]`.
pub fn im2col<F: Real>(x: &[F], g: &ConvGeom, col: &mut [F]) {
    let p = g.out_positions();
    let mut r = 0;
    for ci in 0..g.c_in {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let dst = &mut col[r * p..(r + 1) * p];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let row = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                    if iy < 0 || iy >= g.h as isize {
                        row.iter_mut().for_each(|v| *v = F::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            F::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                r += 1;
            }
        }
    }
}

/// Scatter-add the inverse of [`im2col`].
pub fn col2im_acc<F: Real>(col: &[F], g: &ConvGeom, dx: &mut [F]) {
    let p = g.out_positions();
    let mut r = 0;
    for ci in 0..g.c_in {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let src = &col[r * p..(r + 1) * p];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.w_out {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] += src[oy * g.w_out + ox];
                        }
                    }
                }
                r += 1;
            }
        }
    }
}

/// Cross-correlation `out[co] = b[co] + sum_r w[co, r] * col[r]`.
pub fn conv2d_forward<F: Real>(
    x: &[F],
    w: &[F],
    b: Option<&[F]>,
    c_out: usize,
    g: &ConvGeom,
    out: &mut [F],
) {
    let p = g.out_positions();
    let pl = g.patch_len();
    let mut col = vec![F::zero(); pl * p];
    im2col(x, g, &mut col);
    for co in 0..c_out {
        let dst = &mut out[co * p..(co + 1) * p];
        let bias = b.map_or(F::zero(), |b| b[co]);
        dst.iter_mut().for_each(|v| *v = bias);
        let wrow = &w[co * pl..(co + 1) * pl];
        for (r, &wv) in wrow.iter().enumerate() {
            if wv != F::zero() {
                axpy(wv, &col[r * p..(r + 1) * p], dst);
            }
        }
    }
}

/// Accumulates input, kernel and bias gradients given the output gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<F: Real>(
    x: &[F],
    w: &[F],
    gout: &[F],
    c_out: usize,
    g: &ConvGeom,
    dx: Option<&mut [F]>,
    dw: Option<&mut [F]>,
    db: Option<&mut [F]>,
) {
    let p = g.out_positions();
    let pl = g.patch_len();
    if let Some(db) = db {
        for co in 0..c_out {
            db[co] += gout[co * p..(co + 1) * p].iter().copied().sum::<F>();
        }
    }
    if let Some(dw) = dw {
        let mut col = vec![F::zero(); pl * p];
        im2col(x, g, &mut col);
        for co in 0..c_out {
            let gr = &gout[co * p..(co + 1) * p];
            let dwr = &mut dw[co * pl..(co + 1) * pl];
            for r in 0..pl {
                dwr[r] += dot(gr, &col[r * p..(r + 1) * p]);
            }
        }
    }
    if let Some(dx) = dx {
        let mut dcol = vec![F::zero(); pl * p];
        for co in 0..c_out {
            let gr = &gout[co * p..(co + 1) * p];
            let wrow = &w[co * pl..(co + 1) * pl];
            for (r, &wv) in wrow.iter().enumerate() {
                if wv != F::zero() {
                    axpy(wv, gr, &mut dcol[r * p..(r + 1) * p]);
                }
            }
        }
        col2im_acc(&dcol, g, dx);
    }
}
