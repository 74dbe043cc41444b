use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, shape_err, Result};
use crate::{Graph, Real, Tensor, Var};

pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let span = input + 2 * padding;
    (span >= kernel && stride > 0).then(|| (span - kernel) / stride + 1)
}

#[derive(Clone, Copy)]
struct Geom {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn n(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Real>(x: &[T], g: &Geom, cols: &mut [T]) {
    let n = g.n();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &mut cols[((ci * g.kh + ky) * g.kw + kx) * n..][..n];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let dst = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], g: &Geom, dx: &mut [T]) {
    let n = g.n();
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &cols[((ci * g.kh + ky) * g.kw + kx) * n..][..n];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += row[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn geometry(xs: [usize; 4], ws: &[usize], stride: usize, pad: usize) -> Result<(Geom, usize)> {
    let [_, cin, h, w] = xs;
    let [cout, wcin, kh, kw] = *ws else {
        return Err(shape_err!("conv2d weight must be [Cout,Cin,kh,kw], got {:?}", ws));
    };
    if wcin != cin {
        return Err(shape_err!(
            "conv2d: input has {} channels but weight {:?} expects {}",
            cin,
            ws,
            wcin
        ));
    }
    if stride == 0 {
        return Err(invalid!("conv2d stride must be positive"));
    }
    let ho = conv_output_size(h, kh, stride, pad)
        .ok_or_else(|| shape_err!("conv2d: kernel {}x{} larger than padded input {}x{}", kh, kw, h, w))?;
    let wo = conv_output_size(w, kw, stride, pad)
        .ok_or_else(|| shape_err!("conv2d: kernel {}x{} larger than padded input {}x{}", kh, kw, h, w))?;
    Ok((Geom { cin, h, w, kh, kw, stride, pad, ho, wo }, cout))
}

/// Plain forward convolution (zero padding).
pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let xs = x.dims4()?;
    let (g, cout) = geometry(xs, weight.shape(), stride, pad)?;
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(shape_err!("conv2d bias {:?} does not match {} outputs", b.shape(), cout));
        }
    }
    let b = xs[0];
    let (k, n) = (g.k(), g.n());
    let mut out = vec![T::zero(); b * cout * n];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * n] };
    let in_stride = g.cin * g.h * g.w;
    for bi in 0..b {
        let xb = &x.data()[bi * in_stride..(bi + 1) * in_stride];
        let cols_ref: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, &g, &mut cols);
            &cols
        };
        let ob = &mut out[bi * cout * n..(bi + 1) * cout * n];
        if let Some(bias) = bias {
            for (co, row) in ob.chunks_mut(n).enumerate() {
                row.iter_mut().for_each(|v| *v = bias.data()[co]);
            }
        }
        T::gemm(cout, k, n, T::one(), weight.data(), k, 1, cols_ref, n, 1, T::one(), ob, n, 1);
    }
    Ok(Tensor::from_parts(vec![b, cout, g.ho, g.wo], out))
}

impl<T: Real> Graph<T> {
    /// 2-D convolution (cross-correlation) with zero padding.
    pub fn conv2d(
        &self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(weight));
        let bv = bias.map(|b| self.value(b));
        let y = conv2d_forward(&xv, &wv, bv.as_ref(), stride, pad)?;
        let (g, cout) = geometry(xv.dims4()?, wv.shape(), stride, pad)?;
        let batch = xv.shape()[0];
        let mut parents = vec![x, weight];
        parents.extend(bias);
        Ok(self.push(y, &parents, move |gy, need| {
            let (k, n) = (g.k(), g.n());
            let in_stride = g.cin * g.h * g.w;
            let mut dx = need[0].then(|| vec![T::zero(); xv.numel()]);
            let mut dw = need[1].then(|| vec![T::zero(); wv.numel()]);
            let mut db = need.get(2).copied().unwrap_or(false).then(|| vec![T::zero(); cout]);
            let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { k * n }];
            let mut dcols = vec![T::zero(); if dx.is_some() { k * n } else { 0 }];
            for bi in 0..batch {
                let gyb = &gy[bi * cout * n..(bi + 1) * cout * n];
                if let Some(db) = db.as_mut() {
                    for (co, row) in gyb.chunks(n).enumerate() {
                        db[co] += row.iter().copied().sum::<T>();
                    }
                }
                if let Some(dw) = dw.as_mut() {
                    let xb = &xv.data()[bi * in_stride..(bi + 1) * in_stride];
                    let cols_ref: &[T] = if g.is_pointwise() {
                        xb
                    } else {
                        im2col(xb, &g, &mut cols);
                        &cols
                    };
                    // dW (cout x k) += dY (cout x n) * cols^T (n x k)
                    T::gemm(cout, n, k, T::one(), gyb, n, 1, cols_ref, 1, n, T::one(), dw, k, 1);
                }
                if let Some(dx) = dx.as_mut() {
                    let dxb = &mut dx[bi * in_stride..(bi + 1) * in_stride];
                    if g.is_pointwise() {
                        T::gemm(k, cout, n, T::one(), wv.data(), 1, k, gyb, n, 1, T::one(), dxb, n, 1);
                    } else {
                        // dcols (k x n) = W^T (k x cout) * dY (cout x n)
                        T::gemm(k, cout, n, T::one(), wv.data(), 1, k, gyb, n, 1, T::zero(), &mut dcols, n, 1);
                        col2im(&dcols, &g, dxb);
                    }
                }
            }
            let mut out = vec![dx, dw];
            if need.len() > 2 {
                out.push(db);
            }
            out
        }))
    }

    /// 2x2 max pooling with stride 2 (odd trailing rows/columns dropped).
    pub fn max_pool2d(&self, x: Var) -> Result<Var> {
        let [b, c, h, w] = self.dims4(x)?;
        let (ho, wo) = (h / 2, w / 2);
        if ho == 0 || wo == 0 {
            return Err(shape_err!("max_pool2d needs at least 2x2 input, got {}x{}", h, w));
        }
        let xv = self.value(x);
        let src = xv.data();
        let mut out = vec![T::zero(); b * c * ho * wo];
        let mut arg = vec![0usize; out.len()];
        for p in 0..b * c {
            let base = p * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if src[i] > src[best] {
                            best = i;
                        }
                    }
                    let o = (p * ho + oy) * wo + ox;
                    out[o] = src[best];
                    arg[o] = best;
                }
            }
        }
        self.note_branches(arg.iter().map(|&a| a as u64));
        let n_in = xv.numel();
        Ok(self.push(Tensor::from_parts(vec![b, c, ho, wo], out), &[x], move |g, _| {
            let mut d = vec![T::zero(); n_in];
            for (o, &a) in arg.iter().enumerate() {
                d[a] += g[o];
            }
            vec![Some(d)]
        }))
    }
}
