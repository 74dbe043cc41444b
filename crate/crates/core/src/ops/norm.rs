use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::{Graph, Real, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
pub const LN_EPS: f64 = 1e-5;

/// Which statistics a batch-norm call normalizes with.
#[derive(Clone, Debug)]
pub enum BatchNormMode<T> {
    /// Batch statistics.
    Train,
    /// Frozen running statistics `(mean, var)`.
    Eval(Tensor<T>, Tensor<T>),
}

/// Batch statistics of a training-mode call: per-channel mean and the
/// unbiased variance used for running-average updates.
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub unbiased_var: Vec<T>,
}

impl<T: Real> Graph<T> {
    /// Batch normalization over `(B, H, W)` per channel of `[B,C,H,W]`.
    pub fn batch_norm(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let [b, c, h, w] = self.dims4(x)?;
        for (name, p) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(p) != [c] {
                return Err(shape_err!("batch_norm {} must be [{}], got {:?}", name, c, self.shape(p)));
            }
        }
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let hw = h * w;
        let count = b * hw;
        let eps = T::lit(BN_EPS);
        let train = matches!(mode, BatchNormMode::Train);
        let (mean, var) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ci in 0..c {
                    let mut s = T::zero();
                    for bi in 0..b {
                        s += xv.data()[(bi * c + ci) * hw..][..hw].iter().copied().sum::<T>();
                    }
                    let m = s / T::lit(count as f64);
                    let mut v = T::zero();
                    for bi in 0..b {
                        for &e in &xv.data()[(bi * c + ci) * hw..][..hw] {
                            v += (e - m) * (e - m);
                        }
                    }
                    mean[ci] = m;
                    var[ci] = v / T::lit(count as f64);
                }
                (mean, var)
            }
            BatchNormMode::Eval(m, v) => {
                if m.shape() != [c] || v.shape() != [c] {
                    return Err(shape_err!("batch_norm running stats must be [{}]", c));
                }
                (m.data().to_vec(), v.data().to_vec())
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); xv.numel()];
        let mut out = vec![T::zero(); xv.numel()];
        for bi in 0..b {
            for ci in 0..c {
                let off = (bi * c + ci) * hw;
                for i in off..off + hw {
                    let xh = (xv.data()[i] - mean[ci]) * inv_std[ci];
                    xhat[i] = xh;
                    out[i] = gv.data()[ci] * xh + bv.data()[ci];
                }
            }
        }
        let stats = train.then(|| {
            let corr = if count > 1 { T::lit(count as f64 / (count - 1) as f64) } else { T::one() };
            BatchStats { mean: mean.clone(), unbiased_var: var.iter().map(|&v| v * corr).collect() }
        });
        let y = Tensor::from_parts(vec![b, c, h, w], out);
        let var_node = self.push(y, &[x, gamma, beta], move |g, need| {
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for bi in 0..b {
                for ci in 0..c {
                    let off = (bi * c + ci) * hw;
                    for i in off..off + hw {
                        dgamma[ci] += g[i] * xhat[i];
                        dbeta[ci] += g[i];
                    }
                }
            }
            let dx = need[0].then(|| {
                let mut dx = vec![T::zero(); b * c * hw];
                let n = T::lit(count as f64);
                for ci in 0..c {
                    let gam = gv.data()[ci];
                    for bi in 0..b {
                        let off = (bi * c + ci) * hw;
                        for i in off..off + hw {
                            dx[i] = if train {
                                // dxhat = g * gamma; sums of dxhat and dxhat * xhat are
                                // gamma * dbeta and gamma * dgamma
                                gam * inv_std[ci] / n
                                    * (n * g[i] - dbeta[ci] - xhat[i] * dgamma[ci])
                            } else {
                                g[i] * gam * inv_std[ci]
                            };
                        }
                    }
                }
                dx
            });
            vec![dx, need[1].then_some(dgamma), need[2].then_some(dbeta)]
        });
        Ok((var_node, stats))
    }

    /// Layer normalization over the last axis with affine gain and bias.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape(x);
        let c = *shape.last().ok_or_else(|| shape_err!("layer_norm of a scalar"))?;
        for (name, p) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(p) != [c] {
                return Err(shape_err!("layer_norm {} must be [{}], got {:?}", name, c, self.shape(p)));
            }
        }
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let rows = xv.numel() / c;
        let eps = T::lit(LN_EPS);
        let cn = T::lit(c as f64);
        let mut xhat = vec![T::zero(); xv.numel()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.numel()];
        for r in 0..rows {
            let row = &xv.data()[r * c..(r + 1) * c];
            let m = row.iter().copied().sum::<T>() / cn;
            let v = row.iter().map(|&e| (e - m) * (e - m)).sum::<T>() / cn;
            let is = T::one() / (v + eps).sqrt();
            inv_std[r] = is;
            for j in 0..c {
                let xh = (row[j] - m) * is;
                xhat[r * c + j] = xh;
                out[r * c + j] = gv.data()[j] * xh + bv.data()[j];
            }
        }
        let y = Tensor::from_parts(shape, out);
        Ok(self.push(y, &[x, gamma, beta], move |g, need| {
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            let mut dx = vec![T::zero(); rows * c];
            for r in 0..rows {
                let mut s1 = T::zero();
                let mut s2 = T::zero();
                for j in 0..c {
                    let i = r * c + j;
                    dgamma[j] += g[i] * xhat[i];
                    dbeta[j] += g[i];
                    let dxh = g[i] * gv.data()[j];
                    s1 += dxh;
                    s2 += dxh * xhat[i];
                }
                for j in 0..c {
                    let i = r * c + j;
                    let dxh = g[i] * gv.data()[j];
                    dx[i] = inv_std[r] / cn * (cn * dxh - s1 - xhat[i] * s2);
                }
            }
            vec![need[0].then_some(dx), need[1].then_some(dgamma), need[2].then_some(dbeta)]
        }))
    }
}
