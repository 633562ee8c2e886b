//! im2col convolution kernels (forward and backward) on NCHW tensors.

use crate::tensor::{gemm, MatRef, Real, Tensor};

/// Upper bound on the number of elements in one im2col buffer; larger convolutions are
/// processed in bands of output rows.
const COLS_BUDGET: usize = 1 << 23;

#[derive(Clone, Copy, Debug)]
struct Geom {
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn new(x: [usize; 4], w: [usize; 4], stride: usize, pad: usize) -> Self {
        let [_, cin, h, wd] = x;
        let [cout, wcin, k, k2] = w;
        assert_eq!(cin, wcin, "conv input channels {cin} != weight channels {wcin}");
        assert_eq!(k, k2, "only square kernels are supported");
        assert!(stride >= 1);
        assert!(h + 2 * pad >= k && wd + 2 * pad >= k, "input smaller than kernel");
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        Self {
            cin,
            cout,
            k,
            stride,
            pad,
            h,
            w: wd,
            ho,
            wo,
        }
    }

    fn kdim(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn rows_per_band(&self) -> usize {
        (COLS_BUDGET / (self.kdim() * self.wo).max(1)).clamp(1, self.ho)
    }

    /// Range of output columns whose input column `ox*stride + kx - pad` lies inside the image.
    fn valid_ox(&self, kx: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if self.pad > kx {
            (self.pad - kx).div_ceil(s)
        } else {
            0
        };
        let hi = if self.w + self.pad > kx {
            (self.w + self.pad - kx).div_ceil(s).min(self.wo)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

#[cfg(test)]
fn output_hw(h: usize, w: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    ((h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1)
}

fn im2col<T: Real>(g: &Geom, x: &[T], r0: usize, r1: usize, cols: &mut [T]) {
    let p = (r1 - r0) * g.wo;
    let kk = g.k * g.k;
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ci * kk + ky * g.k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = g.valid_ox(kx);
                for (band_row, oy) in (r0..r1).enumerate() {
                    let out = &mut dst[band_row * g.wo..(band_row + 1) * g.wo];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out[..lo].fill(T::zero());
                    out[hi..].fill(T::zero());
                    if g.stride == 1 {
                        let ix0 = lo + kx - g.pad;
                        out[lo..hi].copy_from_slice(&src[ix0..ix0 + (hi - lo)]);
                    } else {
                        for ox in lo..hi {
                            out[ox] = src[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(g: &Geom, cols: &[T], r0: usize, r1: usize, dx: &mut [T]) {
    let p = (r1 - r0) * g.wo;
    let kk = g.k * g.k;
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ci * kk + ky * g.k + kx;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = g.valid_ox(kx);
                for (band_row, oy) in (r0..r1).enumerate() {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let s = &src[band_row * g.wo..(band_row + 1) * g.wo];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in lo..hi {
                        dst[ox * g.stride + kx - g.pad] += s[ox];
                    }
                }
            }
        }
    }
}

/// 2-d convolution. `weight` is `[C_out, C_in, k, k]`, `bias` is `[1, C_out, 1, 1]`.
pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let g = Geom::new(x.shape(), weight.shape(), stride, pad);
    let n = x.batch();
    let hw_out = g.ho * g.wo;
    let mut y = Tensor::zeros([n, g.cout, g.ho, g.wo]);
    let wmat = MatRef::new(weight.data(), g.cout, g.kdim());
    let band = g.rows_per_band();
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.kdim() * band * g.wo]
    };
    for s in 0..n {
        let xs = x.sample(s);
        let ys = y.sample_mut(s);
        if g.is_pointwise() {
            gemm(T::one(), wmat, MatRef::new(xs, g.cin, hw_out), T::zero(), ys, hw_out);
        } else {
            let mut r0 = 0;
            while r0 < g.ho {
                let r1 = (r0 + band).min(g.ho);
                let p = (r1 - r0) * g.wo;
                let buf = &mut cols[..g.kdim() * p];
                im2col(&g, xs, r0, r1, buf);
                gemm(
                    T::one(),
                    wmat,
                    MatRef::new(buf, g.kdim(), p),
                    T::zero(),
                    &mut ys[r0 * g.wo..],
                    hw_out,
                );
                r0 = r1;
            }
        }
        if let Some(b) = bias {
            for (co, plane) in ys.chunks_mut(hw_out).enumerate() {
                let bv = b.data()[co];
                for v in plane {
                    *v += bv;
                }
            }
        }
    }
    y
}

/// Gradients of a convolution. Each output is computed only when requested.
pub struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Option<Tensor<T>>,
    pub db: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    pad: usize,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (need_dx, need_dw, need_db) = need;
    let g = Geom::new(x.shape(), weight.shape(), stride, pad);
    let n = x.batch();
    let hw_out = g.ho * g.wo;
    assert_eq!(dy.shape(), [n, g.cout, g.ho, g.wo], "conv output gradient shape");

    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut dw = need_dw.then(|| Tensor::zeros(weight.shape()));
    let db = need_db.then(|| {
        let mut db = Tensor::zeros([1, g.cout, 1, 1]);
        for s in 0..n {
            for (co, plane) in dy.sample(s).chunks(hw_out).enumerate() {
                db.data_mut()[co] += plane.iter().copied().sum::<T>();
            }
        }
        db
    });
    if !need_dx && !need_dw {
        return ConvGrads { dx, dw, db };
    }

    let kdim = g.kdim();
    let wmat = MatRef::new(weight.data(), g.cout, kdim);
    let band = g.rows_per_band();
    let pointwise = g.is_pointwise();
    let mut cols = if pointwise {
        Vec::new()
    } else {
        vec![T::zero(); kdim * band * g.wo]
    };
    let mut dcols = if pointwise || !need_dx {
        Vec::new()
    } else {
        vec![T::zero(); kdim * band * g.wo]
    };

    for s in 0..n {
        let xs = x.sample(s);
        let dys = dy.sample(s);
        if pointwise {
            if let Some(dw) = dw.as_mut() {
                gemm(
                    T::one(),
                    MatRef::new(dys, g.cout, hw_out),
                    MatRef::new(xs, g.cin, hw_out).t(),
                    T::one(),
                    dw.data_mut(),
                    kdim,
                );
            }
            if let Some(dx) = dx.as_mut() {
                gemm(
                    T::one(),
                    wmat.t(),
                    MatRef::new(dys, g.cout, hw_out),
                    T::zero(),
                    dx.sample_mut(s),
                    hw_out,
                );
            }
            continue;
        }
        let mut r0 = 0;
        while r0 < g.ho {
            let r1 = (r0 + band).min(g.ho);
            let p = (r1 - r0) * g.wo;
            let dy_band = MatRef::with_ld(&dys[r0 * g.wo..], g.cout, p, hw_out);
            if let Some(dw) = dw.as_mut() {
                let buf = &mut cols[..kdim * p];
                im2col(&g, xs, r0, r1, buf);
                gemm(
                    T::one(),
                    dy_band,
                    MatRef::new(buf, kdim, p).t(),
                    T::one(),
                    dw.data_mut(),
                    kdim,
                );
            }
            if let Some(dx) = dx.as_mut() {
                let buf = &mut dcols[..kdim * p];
                gemm(T::one(), wmat.t(), dy_band, T::zero(), buf, p);
                col2im(&g, buf, r0, r1, dx.sample_mut(s));
            }
            r0 = r1;
        }
    }
    ConvGrads { dx, dw, db }
}
