//! 2-D convolution (cross-correlation) kernels over NCHW buffers.
//!
//! General groups go through im2col + GEMM; 1×1 stride-1 convolutions skip
//! the column buffer and depthwise convolutions use a direct loop.

use crate::error::{config_err, dim_err, Result};
use crate::linalg::{gemm, MatRef};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(
        input: &[usize],
        weight: &[usize],
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Self> {
        if input.len() != 4 {
            return Err(dim_err!("conv2d input must be NCHW, got {:?}", input));
        }
        if weight.len() != 4 {
            return Err(dim_err!("conv2d weight must be 4-D, got {:?}", weight));
        }
        if groups == 0 || stride == 0 {
            return Err(config_err!("conv2d stride and groups must be positive"));
        }
        let (n, cin, h, w) = (input[0], input[1], input[2], input[3]);
        let (cout, cin_g, kh, kw) = (weight[0], weight[1], weight[2], weight[3]);
        if cin % groups != 0 || cout % groups != 0 {
            return Err(config_err!(
                "groups {} must divide input channels {} and output channels {}",
                groups,
                cin,
                cout
            ));
        }
        if cin_g != cin / groups {
            return Err(dim_err!(
                "weight expects {} channels per group, input provides {}",
                cin_g,
                cin / groups
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(config_err!("conv2d kernel {}x{} must have odd extents", kh, kw));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(dim_err!(
                "kernel {}x{} larger than padded input {}x{}",
                kh,
                kw,
                h + 2 * pad,
                w + 2 * pad
            ));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        Ok(Self {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad,
            groups,
            oh,
            ow,
        })
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.n, self.cout, self.oh, self.ow]
    }

    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn is_depthwise(&self) -> bool {
        self.cin_g() == 1 && self.cout_g() == 1
    }

    /// Input coordinate hit by output `o` and kernel tap `k`, if inside the image.
    #[inline]
    fn src(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let p = (o * self.stride + k) as isize - self.pad as isize;
        (p >= 0 && (p as usize) < extent).then_some(p as usize)
    }
}

/// Fill `cols` ([cin_g·kh·kw, oh·ow]) from one group of one image.
fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let p = g.oh * g.ow;
    let mut row = 0;
    for c in 0..g.cin_g() {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let dst = &mut cols[row * p..(row + 1) * p];
                for oi in 0..g.oh {
                    let line = &mut dst[oi * g.ow..(oi + 1) * g.ow];
                    match g.src(oi, ki, g.h) {
                        None => line.fill(T::zero()),
                        Some(si) => {
                            for (oj, v) in line.iter_mut().enumerate() {
                                *v = match g.src(oj, kj, g.w) {
                                    Some(sj) => plane[si * g.w + sj],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-add `cols` back into one group of one image gradient.
fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let p = g.oh * g.ow;
    let mut row = 0;
    for c in 0..g.cin_g() {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let src = &cols[row * p..(row + 1) * p];
                for oi in 0..g.oh {
                    if let Some(si) = g.src(oi, ki, g.h) {
                        for oj in 0..g.ow {
                            if let Some(sj) = g.src(oj, kj, g.w) {
                                plane[si * g.w + sj] += src[oi * g.ow + oj];
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

pub(crate) fn forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], b: Option<&[T]>) -> Vec<T> {
    let p = g.oh * g.ow;
    let mut y = vec![T::zero(); g.n * g.cout * p];
    if g.is_depthwise() {
        depthwise_forward(g, x, w, &mut y);
    } else {
        let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
        let kdim = cin_g * g.kh * g.kw;
        let mut cols = if g.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); kdim * p]
        };
        for n in 0..g.n {
            for grp in 0..g.groups {
                let xs = &x[(n * g.cin + grp * cin_g) * g.h * g.w..][..cin_g * g.h * g.w];
                let ws = &w[grp * cout_g * kdim..(grp + 1) * cout_g * kdim];
                let ys = &mut y[(n * g.cout + grp * cout_g) * p..][..cout_g * p];
                let col_view = if g.is_pointwise() {
                    MatRef::row_major(xs, kdim, p)
                } else {
                    im2col(g, xs, &mut cols);
                    MatRef::row_major(&cols, kdim, p)
                };
                gemm(MatRef::row_major(ws, cout_g, kdim), col_view, ys, false);
            }
        }
    }
    if let Some(b) = b {
        for n in 0..g.n {
            for c in 0..g.cout {
                let bias = b[c];
                for v in &mut y[(n * g.cout + c) * p..][..p] {
                    *v += bias;
                }
            }
        }
    }
    y
}

fn depthwise_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], y: &mut [T]) {
    let ksz = g.kh * g.kw;
    for n in 0..g.n {
        for c in 0..g.cout {
            let plane = &x[(n * g.cin + c) * g.h * g.w..][..g.h * g.w];
            let taps = &w[c * ksz..(c + 1) * ksz];
            let out = &mut y[(n * g.cout + c) * g.oh * g.ow..][..g.oh * g.ow];
            for oi in 0..g.oh {
                for oj in 0..g.ow {
                    let mut acc = T::zero();
                    for ki in 0..g.kh {
                        let Some(si) = g.src(oi, ki, g.h) else { continue };
                        for kj in 0..g.kw {
                            if let Some(sj) = g.src(oj, kj, g.w) {
                                acc += taps[ki * g.kw + kj] * plane[si * g.w + sj];
                            }
                        }
                    }
                    out[oi * g.ow + oj] = acc;
                }
            }
        }
    }
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (need_x, need_w, need_b) = need;
    let p = g.oh * g.ow;
    let mut dx = need_x.then(|| vec![T::zero(); x.len()]);
    let mut dw = need_w.then(|| vec![T::zero(); w.len()]);
    let db = need_b.then(|| {
        let mut db = vec![T::zero(); g.cout];
        for n in 0..g.n {
            for (c, acc) in db.iter_mut().enumerate() {
                *acc += dy[(n * g.cout + c) * p..][..p].iter().copied().sum::<T>();
            }
        }
        db
    });
    if g.is_depthwise() {
        depthwise_backward(g, x, w, dy, dx.as_deref_mut(), dw.as_deref_mut());
        return ConvGrads {
            input: dx,
            weight: dw,
            bias: db,
        };
    }
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    let kdim = cin_g * g.kh * g.kw;
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { kdim * p }];
    let mut dcols = vec![T::zero(); kdim * p];
    for n in 0..g.n {
        for grp in 0..g.groups {
            let x_off = (n * g.cin + grp * cin_g) * g.h * g.w;
            let xs = &x[x_off..][..cin_g * g.h * g.w];
            let ws = &w[grp * cout_g * kdim..(grp + 1) * cout_g * kdim];
            let dys = &dy[(n * g.cout + grp * cout_g) * p..][..cout_g * p];
            if let Some(dw) = dw.as_deref_mut() {
                let col_view = if g.is_pointwise() {
                    MatRef::row_major(xs, kdim, p)
                } else {
                    im2col(g, xs, &mut cols);
                    MatRef::row_major(&cols, kdim, p)
                };
                gemm(
                    MatRef::row_major(dys, cout_g, p),
                    col_view.t(),
                    &mut dw[grp * cout_g * kdim..(grp + 1) * cout_g * kdim],
                    true,
                );
            }
            if let Some(dx) = dx.as_deref_mut() {
                let dxs = &mut dx[x_off..][..cin_g * g.h * g.w];
                if g.is_pointwise() {
                    gemm(
                        MatRef::row_major(ws, cout_g, kdim).t(),
                        MatRef::row_major(dys, cout_g, p),
                        dxs,
                        true,
                    );
                } else {
                    gemm(
                        MatRef::row_major(ws, cout_g, kdim).t(),
                        MatRef::row_major(dys, cout_g, p),
                        &mut dcols,
                        false,
                    );
                    col2im(g, &dcols, dxs);
                }
            }
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

fn depthwise_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let ksz = g.kh * g.kw;
    for n in 0..g.n {
        for c in 0..g.cout {
            let base = (n * g.cin + c) * g.h * g.w;
            let plane = &x[base..][..g.h * g.w];
            let taps = &w[c * ksz..(c + 1) * ksz];
            let grad = &dy[(n * g.cout + c) * g.oh * g.ow..][..g.oh * g.ow];
            for oi in 0..g.oh {
                for oj in 0..g.ow {
                    let d = grad[oi * g.ow + oj];
                    for ki in 0..g.kh {
                        let Some(si) = g.src(oi, ki, g.h) else { continue };
                        for kj in 0..g.kw {
                            if let Some(sj) = g.src(oj, kj, g.w) {
                                let t = ki * g.kw + kj;
                                if let Some(dw) = dw.as_deref_mut() {
                                    dw[c * ksz + t] += d * plane[si * g.w + sj];
                                }
                                if let Some(dx) = dx.as_deref_mut() {
                                    dx[base + si * g.w + sj] += d * taps[t];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}
