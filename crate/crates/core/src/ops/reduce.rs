use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::{Graph, Real, Tensor, Var};

impl<T: Real> Graph<T> {
    pub fn sum(&self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.numel();
        let s: T = xv.data().iter().copied().sum();
        self.push(Tensor::scalar(s), &[x], move |g, _| vec![Some(vec![g[0]; n])])
    }

    pub fn mean(&self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.numel();
        let s: T = xv.data().iter().copied().sum();
        let inv = T::one() / T::lit(n as f64);
        self.push(Tensor::scalar(s * inv), &[x], move |g, _| vec![Some(vec![g[0] * inv; n])])
    }

    /// Mean absolute difference, the L1 distance used by every pixel loss.
    pub fn l1(&self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let d = self.abs(d);
        Ok(self.mean(d))
    }

    /// Softmax along `axis`.
    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        if axis >= shape.len() {
            return Err(invalid!("softmax axis {} out of range for {:?}", axis, shape));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = xv.data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut m = T::neg_infinity();
                for k in 0..len {
                    m = m.max(src[base + k * inner]);
                }
                let mut z = T::zero();
                for k in 0..len {
                    let e = (src[base + k * inner] - m).exp();
                    out[base + k * inner] = e;
                    z += e;
                }
                for k in 0..len {
                    out[base + k * inner] /= z;
                }
            }
        }
        let y = Tensor::from_parts(shape, out);
        let yc = y.clone();
        Ok(self.push(y, &[x], move |g, _| {
            let y = yc.data();
            let mut d = vec![T::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut dot = T::zero();
                    for k in 0..len {
                        let j = base + k * inner;
                        dot += g[j] * y[j];
                    }
                    for k in 0..len {
                        let j = base + k * inner;
                        d[j] = y[j] * (g[j] - dot);
                    }
                }
            }
            vec![Some(d)]
        }))
    }

    /// Mean over every axis except the leading one: `[B, ...] -> [B]`.
    pub fn mean_per_item(&self, x: Var) -> Var {
        let xv = self.value(x);
        let b = xv.shape()[0];
        let per = xv.numel() / b;
        let inv = T::one() / T::lit(per as f64);
        let out: Vec<T> =
            xv.data().chunks(per).map(|c| c.iter().copied().sum::<T>() * inv).collect();
        self.push(Tensor::from_parts(vec![b], out), &[x], move |g, _| {
            let mut d = Vec::with_capacity(b * per);
            for &gi in g {
                d.extend(core::iter::repeat_n(gi * inv, per));
            }
            vec![Some(d)]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one() {
        let g = Graph::<f32>::new();
        let x = g.input(Tensor::from_fn(&[2, 5, 3], |i| (i as f32 * 0.37).sin() * 4.0));
        let y = g.value(g.softmax(x, 1).unwrap());
        for o in 0..2 {
            for i in 0..3 {
                let s: f32 = (0..5).map(|k| y.data()[o * 15 + k * 3 + i]).sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }
}
