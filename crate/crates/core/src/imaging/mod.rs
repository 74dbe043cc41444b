//! Color science, gradient operators and image quality metrics.
//!
//! Every differentiable piece is a [`Graph`](crate::Graph) method so the
//! losses can reuse it; the free functions here evaluate the same code on
//! plain tensors.

mod color;
mod metrics;
mod sobel;
mod ssim;

pub use color::{rgb_to_lab, srgb_to_linear, D65_WHITE, SRGB_TO_XYZ};
pub use metrics::{mae, psnr, psnr_for_aggregation, PSNR_INFINITE_SENTINEL_DB};
pub use sobel::{sobel_grad_mag, SobelKernels, EDGE_EPS};
pub use ssim::{ssim, SsimConstants};

use crate::error::{shape_err, Result};
use crate::{Error, Real, Tensor};

/// RGB image `[3, H, W]` with values in `[0, 1]` (sRGB encoded).
#[derive(Clone, Debug)]
pub struct ImageRgb<T>(Tensor<T>);

/// Depth map `[1, H, W]` with values in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct DepthMap<T>(Tensor<T>);

fn check_range<T: Real>(t: &Tensor<T>, what: &str) -> Result<()> {
    let (lo, hi) = t.min_max();
    if !(lo >= T::zero() && hi <= T::one()) {
        return Err(Error::Precondition(alloc::format!(
            "{what} values must lie in [0, 1], found [{lo}, {hi}]"
        )));
    }
    Ok(())
}

macro_rules! image_type {
    ($ty:ident, $channels:expr, $what:expr) => {
        impl<T: Real> $ty<T> {
            pub fn new(t: Tensor<T>) -> Result<Self> {
                match *t.shape() {
                    [c, _, _] if c == $channels => {}
                    _ => return Err(shape_err!("{} must be [{},H,W], got {:?}", $what, $channels, t.shape())),
                }
                check_range(&t, $what)?;
                Ok($ty(t))
            }

            pub fn tensor(&self) -> &Tensor<T> {
                &self.0
            }

            pub fn into_tensor(self) -> Tensor<T> {
                self.0
            }

            pub fn height(&self) -> usize {
                self.0.shape()[1]
            }

            pub fn width(&self) -> usize {
                self.0.shape()[2]
            }

            /// `[1, C, H, W]` view for the networks.
            pub fn to_batch(&self) -> Tensor<T> {
                let s = self.0.shape();
                self.0.reshape(&[1, s[0], s[1], s[2]]).expect("same element count")
            }

            /// Batch item `b` of a `[B, C, H, W]` tensor.
            pub fn from_batch(t: &Tensor<T>, b: usize) -> Result<Self> {
                let item = t.batch_item(b)?;
                let s = item.shape().to_vec();
                if s.len() != 4 {
                    return Err(shape_err!("expected [B,C,H,W], got {:?}", t.shape()));
                }
                Self::new(item.reshape(&s[1..])?)
            }

            /// Center crop to `h x w`.
            pub fn center_crop(&self, h: usize, w: usize) -> Result<Self> {
                let [c, ih, iw] = [self.0.shape()[0], self.height(), self.width()];
                if h > ih || w > iw || h == 0 || w == 0 {
                    return Err(shape_err!("cannot crop {}x{} to {}x{}", ih, iw, h, w));
                }
                let (oy, ox) = ((ih - h) / 2, (iw - w) / 2);
                Ok($ty(self.crop_at(c, oy, ox, h, w)))
            }

            /// Crop of size `h x w` at offset `(oy, ox)`.
            pub fn crop(&self, oy: usize, ox: usize, h: usize, w: usize) -> Result<Self> {
                if oy + h > self.height() || ox + w > self.width() || h == 0 || w == 0 {
                    return Err(shape_err!("crop {}x{}+{}+{} exceeds {}x{}", h, w, oy, ox, self.height(), self.width()));
                }
                Ok($ty(self.crop_at(self.0.shape()[0], oy, ox, h, w)))
            }

            fn crop_at(&self, c: usize, oy: usize, ox: usize, h: usize, w: usize) -> Tensor<T> {
                let (ih, iw) = (self.height(), self.width());
                let d = self.0.data();
                let mut out = alloc::vec::Vec::with_capacity(c * h * w);
                for ci in 0..c {
                    for y in oy..oy + h {
                        out.extend_from_slice(&d[(ci * ih + y) * iw + ox..(ci * ih + y) * iw + ox + w]);
                    }
                }
                Tensor::from_parts(alloc::vec![c, h, w], out)
            }

            /// Bilinear resize (half-pixel centers).
            pub fn resize(&self, h: usize, w: usize) -> Result<Self> {
                let r = crate::ops::bilinear_resize_forward(&self.to_batch(), h, w)?;
                let c = self.0.shape()[0];
                // convex combinations of in-range values stay in range up to rounding
                let r = r.map(|v| v.max(T::zero()).min(T::one()));
                Ok($ty(r.reshape(&[c, h, w])?))
            }

            /// Largest center crop whose sides are multiples of `m`.
            pub fn crop_to_multiple(&self, m: usize) -> Result<Self> {
                let (h, w) = (self.height() / m * m, self.width() / m * m);
                if h == 0 || w == 0 {
                    return Err(Error::Precondition(alloc::format!(
                        "image {}x{} is smaller than {m}x{m}",
                        self.height(),
                        self.width()
                    )));
                }
                self.center_crop(h, w)
            }
        }
    };
}

image_type!(ImageRgb, 3, "RGB image");
image_type!(DepthMap, 1, "depth map");

impl<T: Real> DepthMap<T> {
    /// Per-image min-max normalization to `[0, 1]`. A constant map becomes
    /// all zeros.
    pub fn min_max_normalized(t: &Tensor<T>) -> Result<Self> {
        let (lo, hi) = t.min_max();
        let span = hi - lo;
        let n = if span > T::zero() {
            t.map(|v| ((v - lo) / span).max(T::zero()).min(T::one()))
        } else {
            t.map(|_| T::zero())
        };
        Self::new(n)
    }
}
