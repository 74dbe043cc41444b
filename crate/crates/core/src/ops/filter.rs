use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::{Graph, Real, Tensor, Var};

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

fn kernel_size<T: Real>(kernel: &Tensor<T>) -> Result<usize> {
    match *kernel.shape() {
        [k, k2] if k == k2 && k % 2 == 1 => Ok(k),
        _ => Err(shape_err!("filter kernel must be square and odd, got {:?}", kernel.shape())),
    }
}

/// Per-channel correlation of `[B,C,H,W]` with a fixed odd `k x k` kernel,
/// replicating border pixels.
pub fn filter2d_replicate<T: Real>(x: &Tensor<T>, kernel: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c, h, w] = x.dims4()?;
    let k = kernel_size(kernel)?;
    let r = (k / 2) as isize;
    let kd = kernel.data();
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    // column indices are shared by every row
    let cols: Vec<Vec<usize>> = (0..w)
        .map(|xx| (0..k).map(|j| clamp_index(xx as isize + j as isize - r, w)).collect())
        .collect();
    for plane in 0..b * c {
        let s = &src[plane * h * w..(plane + 1) * h * w];
        let o = &mut out[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            for i in 0..k {
                let sy = clamp_index(y as isize + i as isize - r, h);
                let srow = &s[sy * w..(sy + 1) * w];
                let krow = &kd[i * k..(i + 1) * k];
                for (xx, cx) in cols.iter().enumerate() {
                    let mut acc = T::zero();
                    for (&kv, &ci) in krow.iter().zip(cx) {
                        acc += kv * srow[ci];
                    }
                    o[y * w + xx] += acc;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![b, c, h, w], out))
}

impl<T: Real> Graph<T> {
    /// Differentiable [`filter2d_replicate`]; the kernel is a constant.
    pub fn filter2d(&self, x: Var, kernel: &Tensor<T>) -> Result<Var> {
        let xv = self.value(x);
        let y = filter2d_replicate(&xv, kernel)?;
        let [b, c, h, w] = xv.dims4()?;
        let kernel = kernel.clone();
        Ok(self.push(y, &[x], move |g, _| {
            let k = kernel.shape()[0];
            let r = (k / 2) as isize;
            let kd = kernel.data();
            let mut d = vec![T::zero(); b * c * h * w];
            for plane in 0..b * c {
                let gp = &g[plane * h * w..(plane + 1) * h * w];
                let dp = &mut d[plane * h * w..(plane + 1) * h * w];
                for y in 0..h {
                    for i in 0..k {
                        let sy = clamp_index(y as isize + i as isize - r, h);
                        for xx in 0..w {
                            let gv = gp[y * w + xx];
                            for j in 0..k {
                                let sx = clamp_index(xx as isize + j as isize - r, w);
                                dp[sy * w + sx] += kd[i * k + j] * gv;
                            }
                        }
                    }
                }
            }
            vec![Some(d)]
        }))
    }
}
