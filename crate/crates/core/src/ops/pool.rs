use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::{Graph, Real, Tensor, Var};

/// Input range `[start, end)` covered by output bin `b` of `p` over `n`
/// inputs: `start = floor(b*n/p)`, `end = ceil((b+1)*n/p)`. Bins never come
/// out empty, also when `n < p`.
pub fn adaptive_bin(b: usize, n: usize, p: usize) -> (usize, usize) {
    let start = b * n / p;
    let end = ((b + 1) * n).div_ceil(p);
    (start, end)
}

fn bins(n: usize, p: usize) -> Vec<(usize, usize)> {
    (0..p).map(|b| adaptive_bin(b, n, p)).collect()
}

pub fn adaptive_avg_pool2d_forward<T: Real>(x: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    if p == 0 {
        return Err(invalid!("adaptive pool size must be positive"));
    }
    let [b, c, h, w] = x.dims4()?;
    let (rows, cols) = (bins(h, p), bins(w, p));
    let src = x.data();
    let mut out = vec![T::zero(); b * c * p * p];
    for plane in 0..b * c {
        let base = plane * h * w;
        for (oy, &(y0, y1)) in rows.iter().enumerate() {
            for (ox, &(x0, x1)) in cols.iter().enumerate() {
                let mut s = T::zero();
                for y in y0..y1 {
                    s += src[base + y * w + x0..base + y * w + x1].iter().copied().sum::<T>();
                }
                out[(plane * p + oy) * p + ox] = s / T::lit(((y1 - y0) * (x1 - x0)) as f64);
            }
        }
    }
    Ok(Tensor::from_parts(vec![b, c, p, p], out))
}

impl<T: Real> Graph<T> {
    /// Adaptive average pooling to a `p x p` grid.
    pub fn adaptive_avg_pool2d(&self, x: Var, p: usize) -> Result<Var> {
        let xv = self.value(x);
        let y = adaptive_avg_pool2d_forward(&xv, p)?;
        let [b, c, h, w] = xv.dims4()?;
        Ok(self.push(y, &[x], move |g, _| {
            let (rows, cols) = (bins(h, p), bins(w, p));
            let mut d = vec![T::zero(); b * c * h * w];
            for plane in 0..b * c {
                let base = plane * h * w;
                for (oy, &(y0, y1)) in rows.iter().enumerate() {
                    for (ox, &(x0, x1)) in cols.iter().enumerate() {
                        let share = g[(plane * p + oy) * p + ox]
                            / T::lit(((y1 - y0) * (x1 - x0)) as f64);
                        for y in y0..y1 {
                            d[base + y * w + x0..base + y * w + x1]
                                .iter_mut()
                                .for_each(|v| *v += share);
                        }
                    }
                }
            }
            vec![Some(d)]
        }))
    }
}
