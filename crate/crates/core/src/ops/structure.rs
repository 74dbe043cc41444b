use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::{Graph, Real, Tensor, Var};

impl<T: Real> Graph<T> {
    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).reshape(shape)?;
        Ok(self.push(y, &[x], |g, _| vec![Some(g.to_vec())]))
    }

    /// Concatenation along the channel axis of `[B, C_i, H, W]` tensors.
    pub fn concat_channels(&self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| shape_err!("concat of zero tensors"))?;
        let [b, _, h, w] = self.dims4(first)?;
        let mut chans = Vec::with_capacity(xs.len());
        for &x in xs {
            let [bi, ci, hi, wi] = self.dims4(x)?;
            if (bi, hi, wi) != (b, h, w) {
                return Err(shape_err!(
                    "concat: [{b},_,{h},{w}] vs [{bi},{ci},{hi},{wi}]"
                ));
            }
            chans.push(ci);
        }
        let ctot: usize = chans.iter().sum();
        let hw = h * w;
        let mut out = Vec::with_capacity(b * ctot * hw);
        let vals: Vec<Tensor<T>> = xs.iter().map(|&x| self.value(x)).collect();
        for bi in 0..b {
            for (v, &c) in vals.iter().zip(&chans) {
                out.extend_from_slice(&v.data()[bi * c * hw..(bi + 1) * c * hw]);
            }
        }
        let y = Tensor::from_parts(vec![b, ctot, h, w], out);
        Ok(self.push(y, xs, move |g, need| {
            let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(chans.len());
            let mut off = 0;
            for (i, &c) in chans.iter().enumerate() {
                if need[i] {
                    let mut d = Vec::with_capacity(b * c * hw);
                    for bi in 0..b {
                        let s = bi * ctot * hw + off * hw;
                        d.extend_from_slice(&g[s..s + c * hw]);
                    }
                    grads.push(Some(d));
                } else {
                    grads.push(None);
                }
                off += c;
            }
            grads
        }))
    }

    /// `x[B,C,H,W] + f[B,1,H,W]`, the field broadcast over channels.
    pub fn add_channel_broadcast(&self, x: Var, f: Var) -> Result<Var> {
        let [b, c, h, w] = self.dims4(x)?;
        let fs = self.dims4(f)?;
        if fs != [b, 1, h, w] {
            return Err(shape_err!("broadcast field {:?} does not match [{b},1,{h},{w}]", fs));
        }
        let (xv, fv) = (self.value(x), self.value(f));
        let hw = h * w;
        let mut out = xv.data().to_vec();
        for bi in 0..b {
            let fp = &fv.data()[bi * hw..(bi + 1) * hw];
            for ci in 0..c {
                let o = &mut out[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
                o.iter_mut().zip(fp).for_each(|(o, &f)| *o += f);
            }
        }
        Ok(self.push(Tensor::from_parts(vec![b, c, h, w], out), &[x, f], move |g, need| {
            let gf = need[1].then(|| {
                let mut d = vec![T::zero(); b * hw];
                for bi in 0..b {
                    for ci in 0..c {
                        let s = &g[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
                        d[bi * hw..(bi + 1) * hw].iter_mut().zip(s).for_each(|(d, &s)| *d += s);
                    }
                }
                d
            });
            vec![need[0].then(|| g.to_vec()), gf]
        }))
    }

    /// Mean over the channel axis, `[B,C,H,W] -> [B,1,H,W]`.
    pub fn channel_mean(&self, x: Var) -> Result<Var> {
        let [b, c, h, w] = self.dims4(x)?;
        let xv = self.value(x);
        let hw = h * w;
        let inv = T::one() / T::lit(c as f64);
        let mut out = vec![T::zero(); b * hw];
        for bi in 0..b {
            for ci in 0..c {
                let s = &xv.data()[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
                out[bi * hw..(bi + 1) * hw].iter_mut().zip(s).for_each(|(o, &s)| *o += s);
            }
        }
        out.iter_mut().for_each(|o| *o *= inv);
        Ok(self.push(Tensor::from_parts(vec![b, 1, h, w], out), &[x], move |g, _| {
            let mut d = vec![T::zero(); b * c * hw];
            for bi in 0..b {
                for ci in 0..c {
                    let o = &mut d[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
                    o.iter_mut().zip(&g[bi * hw..(bi + 1) * hw]).for_each(|(o, &g)| *o = g * inv);
                }
            }
            vec![Some(d)]
        }))
    }

    /// Max over the channel axis, `[B,C,H,W] -> [B,1,H,W]`; the gradient goes
    /// to the first maximal channel.
    pub fn channel_max(&self, x: Var) -> Result<Var> {
        let [b, c, h, w] = self.dims4(x)?;
        let xv = self.value(x);
        let hw = h * w;
        let mut out = vec![T::zero(); b * hw];
        let mut arg = vec![0usize; b * hw];
        for bi in 0..b {
            for p in 0..hw {
                let mut best = xv.data()[bi * c * hw + p];
                let mut bc = 0;
                for ci in 1..c {
                    let v = xv.data()[(bi * c + ci) * hw + p];
                    if v > best {
                        best = v;
                        bc = ci;
                    }
                }
                out[bi * hw + p] = best;
                arg[bi * hw + p] = (bi * c + bc) * hw + p;
            }
        }
        self.note_branches(arg.iter().map(|&a| a as u64));
        Ok(self.push(Tensor::from_parts(vec![b, 1, h, w], out), &[x], move |g, _| {
            let mut d = vec![T::zero(); b * c * hw];
            for (i, &a) in arg.iter().enumerate() {
                d[a] += g[i];
            }
            vec![Some(d)]
        }))
    }

    /// `[B,C,H,W] -> [B,H*W,C]`, row-major over the spatial grid.
    pub fn to_tokens(&self, x: Var) -> Result<Var> {
        let [b, c, h, w] = self.dims4(x)?;
        let y = permute_bcn(&self.value(x), b, c, h * w);
        Ok(self.push(
            Tensor::from_parts(vec![b, h * w, c], y),
            &[x],
            move |g, _| vec![Some(permute_bnc(g, b, c, h * w))],
        ))
    }

    /// `[B,H*W,C] -> [B,C,H,W]`.
    pub fn from_tokens(&self, x: Var, h: usize, w: usize) -> Result<Var> {
        let s = self.shape(x);
        let [b, n, c] = *s.as_slice() else {
            return Err(shape_err!("expected tokens [B,N,C], got {:?}", s));
        };
        if n != h * w {
            return Err(shape_err!("{} tokens cannot form a {}x{} grid", n, h, w));
        }
        let y = permute_bnc(self.value(x).data(), b, c, n);
        Ok(self.push(Tensor::from_parts(vec![b, c, h, w], y), &[x], move |g, _| {
            vec![Some(permute_bcn(&Tensor::from_parts(vec![b, c, n], g.to_vec()), b, c, n))]
        }))
    }
}

fn permute_bcn<T: Real>(x: &Tensor<T>, b: usize, c: usize, n: usize) -> Vec<T> {
    let src = x.data();
    let mut out = vec![T::zero(); b * c * n];
    for bi in 0..b {
        for ci in 0..c {
            for p in 0..n {
                out[(bi * n + p) * c + ci] = src[(bi * c + ci) * n + p];
            }
        }
    }
    out
}

fn permute_bnc<T: Real>(src: &[T], b: usize, c: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); b * c * n];
    for bi in 0..b {
        for p in 0..n {
            for ci in 0..c {
                out[(bi * c + ci) * n + p] = src[(bi * n + p) * c + ci];
            }
        }
    }
    out
}
