use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::{Graph, Real, Tensor, Var};

/// Half-pixel source coordinate for output index `o` when resampling `n`
/// inputs to `m` outputs: `src = (o + 0.5) * n / m - 0.5`, clamped below at 0.
/// Returns the two taps and the weight of the upper one.
pub fn source_index(o: usize, n: usize, m: usize) -> (usize, usize, f64) {
    let src = ((o as f64 + 0.5) * n as f64 / m as f64 - 0.5).max(0.0);
    let i0 = (libm::floor(src) as usize).min(n - 1);
    let i1 = if i0 + 1 < n { i0 + 1 } else { i0 };
    (i0, i1, src - i0 as f64)
}

fn taps(n: usize, m: usize) -> Vec<(usize, usize, f64)> {
    (0..m).map(|o| source_index(o, n, m)).collect()
}

/// Bilinear resize of `[B,C,H,W]` to `[B,C,h2,w2]`, half-pixel centers
/// (not corner-aligned). Works for both up- and down-sampling.
pub fn bilinear_resize_forward<T: Real>(x: &Tensor<T>, h2: usize, w2: usize) -> Result<Tensor<T>> {
    if h2 == 0 || w2 == 0 {
        return Err(invalid!("bilinear target size must be positive, got {}x{}", h2, w2));
    }
    let [b, c, h, w] = x.dims4()?;
    let (ty, tx) = (taps(h, h2), taps(w, w2));
    let src = x.data();
    let mut out = vec![T::zero(); b * c * h2 * w2];
    for plane in 0..b * c {
        let s = &src[plane * h * w..(plane + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let ly = T::lit(ly);
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let lx = T::lit(lx);
                let top = s[y0 * w + x0] * (T::one() - lx) + s[y0 * w + x1] * lx;
                let bot = s[y1 * w + x0] * (T::one() - lx) + s[y1 * w + x1] * lx;
                out[(plane * h2 + oy) * w2 + ox] = top * (T::one() - ly) + bot * ly;
            }
        }
    }
    Ok(Tensor::from_parts(vec![b, c, h2, w2], out))
}

impl<T: Real> Graph<T> {
    pub fn bilinear_resize(&self, x: Var, h2: usize, w2: usize) -> Result<Var> {
        let xv = self.value(x);
        let [b, c, h, w] = xv.dims4()?;
        if (h, w) == (h2, w2) {
            return Ok(self.push(xv, &[x], |g, _| vec![Some(g.to_vec())]));
        }
        let y = bilinear_resize_forward(&xv, h2, w2)?;
        Ok(self.push(y, &[x], move |g, _| {
            let (ty, tx) = (taps(h, h2), taps(w, w2));
            let mut d = vec![T::zero(); b * c * h * w];
            for plane in 0..b * c {
                let dp = &mut d[plane * h * w..(plane + 1) * h * w];
                for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                    let ly = T::lit(ly);
                    for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                        let lx = T::lit(lx);
                        let gv = g[(plane * h2 + oy) * w2 + ox];
                        let (gt, gb) = (gv * (T::one() - ly), gv * ly);
                        dp[y0 * w + x0] += gt * (T::one() - lx);
                        dp[y0 * w + x1] += gt * lx;
                        dp[y1 * w + x0] += gb * (T::one() - lx);
                        dp[y1 * w + x1] += gb * lx;
                    }
                }
            }
            vec![Some(d)]
        }))
    }

    /// 2x bilinear upsampling.
    pub fn upsample2x(&self, x: Var) -> Result<Var> {
        let [_, _, h, w] = self.dims4(x)?;
        self.bilinear_resize(x, 2 * h, 2 * w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_pixel_two_to_four() {
        let x = Tensor::<f64>::new(&[1, 1, 2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let y = bilinear_resize_forward(&x, 2, 4).unwrap();
        assert_eq!(y.data(), &[0.0, 0.25, 0.75, 1.0, 0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::<f32>::full(&[1, 2, 3, 5], 0.7);
        let y = bilinear_resize_forward(&x, 7, 11).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-6));
    }

    #[test]
    fn same_size_is_identity() {
        let x = Tensor::<f32>::from_fn(&[1, 1, 4, 6], |i| i as f32);
        let y = bilinear_resize_forward(&x, 4, 6).unwrap();
        assert!(x.bit_eq(&y));
    }

    #[test]
    fn zero_target_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        assert!(bilinear_resize_forward(&x, 0, 2).is_err());
    }
}
