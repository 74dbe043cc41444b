use crate::error::Result;
use crate::{Graph, Real, Tensor, Var};

/// 11x11 Gaussian window (sigma 1.5, sum 1) and the stability constants.
pub struct SsimConstants<T> {
    pub window: Tensor<T>,
    pub c1: T,
    pub c2: T,
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

impl<T: Real> Default for SsimConstants<T> {
    fn default() -> Self {
        let r = (SSIM_WINDOW / 2) as f64;
        let g: alloc::vec::Vec<f64> = (0..SSIM_WINDOW)
            .map(|i| {
                let d = i as f64 - r;
                libm::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
            })
            .collect();
        let z: f64 = g.iter().sum();
        let window = Tensor::from_fn(&[SSIM_WINDOW, SSIM_WINDOW], |i| {
            T::lit(g[i / SSIM_WINDOW] * g[i % SSIM_WINDOW] / (z * z))
        });
        SsimConstants { window, c1: T::lit(0.01 * 0.01), c2: T::lit(0.03 * 0.03) }
    }
}

impl<T: Real> Graph<T> {
    /// Mean SSIM over pixels, channels and batch. Local statistics use the
    /// Gaussian window per channel with replicated borders.
    pub fn ssim(&self, x: Var, y: Var) -> Result<Var> {
        self.same_shape(x, y, "ssim")?;
        self.dims4(x)?;
        let k = SsimConstants::<T>::default();
        let two = T::lit(2.0);
        let mx = self.filter2d(x, &k.window)?;
        let my = self.filter2d(y, &k.window)?;
        let xx = self.mul(x, x)?;
        let yy = self.mul(y, y)?;
        let xy = self.mul(x, y)?;
        let exx = self.filter2d(xx, &k.window)?;
        let eyy = self.filter2d(yy, &k.window)?;
        let exy = self.filter2d(xy, &k.window)?;
        let mxx = self.mul(mx, mx)?;
        let myy = self.mul(my, my)?;
        let mxy = self.mul(mx, my)?;
        let vx = self.sub(exx, mxx)?;
        let vy = self.sub(eyy, myy)?;
        let cxy = self.sub(exy, mxy)?;
        let n1 = self.add_scalar(self.scale(mxy, two), k.c1);
        let n2 = self.add_scalar(self.scale(cxy, two), k.c2);
        let d1 = self.add_scalar(self.add(mxx, myy)?, k.c1);
        let d2 = self.add_scalar(self.add(vx, vy)?, k.c2);
        let num = self.mul(n1, n2)?;
        let den = self.mul(d1, d2)?;
        let map = self.div(num, den)?;
        Ok(self.mean(map))
    }
}

/// SSIM of two `[C,H,W]` or `[B,C,H,W]` images.
pub fn ssim<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> Result<T> {
    let lift = |t: &Tensor<T>| match *t.shape() {
        [c, h, w] => t.reshape(&[1, c, h, w]),
        _ => Ok(t.clone()),
    };
    let g = Graph::inference();
    let (a, b) = (g.input(lift(x)?), g.input(lift(y)?));
    Ok(g.value(g.ssim(a, b)?).item())
}
