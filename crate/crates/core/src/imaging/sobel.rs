use crate::error::Result;
use crate::{Graph, Real, Tensor, Var};

/// Stability constant under the gradient-magnitude square root.
pub const EDGE_EPS: f64 = 1e-6;

/// Horizontal and vertical Sobel kernels (`S_y = S_x^T`).
pub struct SobelKernels<T> {
    pub sx: Tensor<T>,
    pub sy: Tensor<T>,
    pub eps: T,
}

impl<T: Real> Default for SobelKernels<T> {
    fn default() -> Self {
        let sx = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
        let sy = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];
        SobelKernels {
            sx: Tensor::from_fn(&[3, 3], |i| T::lit(sx[i])),
            sy: Tensor::from_fn(&[3, 3], |i| T::lit(sy[i])),
            eps: T::lit(EDGE_EPS),
        }
    }
}

impl<T: Real> Graph<T> {
    /// `sqrt((I*S_x)^2 + (I*S_y)^2 + eps)` per channel, replicate borders.
    pub fn sobel_grad_mag(&self, x: Var) -> Result<Var> {
        let k = SobelKernels::<T>::default();
        let gx = self.filter2d(x, &k.sx)?;
        let gy = self.filter2d(x, &k.sy)?;
        let gx2 = self.square(gx);
        let gy2 = self.square(gy);
        let s = self.add(gx2, gy2)?;
        let s = self.add_scalar(s, k.eps);
        Ok(self.sqrt(s))
    }
}

/// Sobel gradient magnitude of a `[C,H,W]` or `[B,C,H,W]` tensor.
pub fn sobel_grad_mag<T: Real>(image: &Tensor<T>) -> Result<Tensor<T>> {
    let x = match *image.shape() {
        [c, h, w] => image.reshape(&[1, c, h, w])?,
        _ => image.clone(),
    };
    let g = Graph::inference();
    let v = g.input(x);
    g.value(g.sobel_grad_mag(v)?).reshape(image.shape())
}
