use alloc::vec;

use crate::error::Result;
use crate::{Error, Graph, Real, Tensor, Var};

/// Linear sRGB (D65) to CIE XYZ.
pub const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

/// D65 reference white, taken as the image of linear `(1, 1, 1)` under
/// [`SRGB_TO_XYZ`] so that sRGB white lands exactly on `L* = 100`.
pub const D65_WHITE: [f64; 3] = [
    SRGB_TO_XYZ[0][0] + SRGB_TO_XYZ[0][1] + SRGB_TO_XYZ[0][2],
    SRGB_TO_XYZ[1][0] + SRGB_TO_XYZ[1][1] + SRGB_TO_XYZ[1][2],
    SRGB_TO_XYZ[2][0] + SRGB_TO_XYZ[2][1] + SRGB_TO_XYZ[2][2],
];

const DELTA: f64 = 6.0 / 29.0;

/// sRGB transfer function inverse, returning the value and its derivative.
pub fn srgb_to_linear(c: f64) -> (f64, f64) {
    if c <= 0.040_45 {
        (c / 12.92, 1.0 / 12.92)
    } else {
        let base = (c + 0.055) / 1.055;
        (libm::pow(base, 2.4), 2.4 / 1.055 * libm::pow(base, 1.4))
    }
}

fn lab_f(t: f64) -> (f64, f64) {
    if t > DELTA * DELTA * DELTA {
        let r = libm::cbrt(t);
        (r, 1.0 / (3.0 * r * r))
    } else {
        let s = 1.0 / (3.0 * DELTA * DELTA);
        (t * s + 4.0 / 29.0, s)
    }
}

/// Lab of one pixel and the 3x3 Jacobian `d(L,a,b)/d(r,g,b)`.
fn pixel(rgb: [f64; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut lin = [0.0; 3];
    let mut dlin = [0.0; 3];
    for i in 0..3 {
        (lin[i], dlin[i]) = srgb_to_linear(rgb[i]);
    }
    let mut f = [0.0; 3];
    let mut df_drgb = [[0.0; 3]; 3];
    for r in 0..3 {
        let m = SRGB_TO_XYZ[r];
        let xyz = m[0] * lin[0] + m[1] * lin[1] + m[2] * lin[2];
        let white = m[0] + m[1] + m[2];
        let (fv, fd) = lab_f(xyz / white);
        f[r] = fv;
        for c in 0..3 {
            df_drgb[r][c] = fd / white * m[c] * dlin[c];
        }
    }
    // clamp L* against rounding at the white/black ends, derivative unchanged
    let l = (116.0 * f[1] - 16.0).clamp(0.0, 100.0);
    let lab = [l, 500.0 * (f[0] - f[1]), 200.0 * (f[1] - f[2])];
    let mut jac = [[0.0; 3]; 3];
    for c in 0..3 {
        jac[0][c] = 116.0 * df_drgb[1][c];
        jac[1][c] = 500.0 * (df_drgb[0][c] - df_drgb[1][c]);
        jac[2][c] = 200.0 * (df_drgb[1][c] - df_drgb[2][c]);
    }
    (lab, jac)
}

impl<T: Real> Graph<T> {
    /// sRGB `[B,3,H,W]` in `[0,1]` to CIELAB (D65): channel 0 is `L*` in
    /// `[0,100]`, channels 1-2 are `a*`, `b*`.
    pub fn rgb_to_lab(&self, x: Var) -> Result<Var> {
        let [b, c, h, w] = self.dims4(x)?;
        if c != 3 {
            return Err(crate::error::shape_err!("rgb_to_lab needs 3 channels, got {}", c));
        }
        let xv = self.value(x);
        let (lo, hi) = xv.min_max();
        if !(lo >= T::zero() && hi <= T::one()) {
            return Err(Error::Precondition(alloc::format!(
                "rgb_to_lab input must lie in [0, 1], found [{lo}, {hi}]"
            )));
        }
        let hw = h * w;
        let mut out = vec![T::zero(); xv.numel()];
        let mut jac = vec![[[0.0f64; 3]; 3]; b * hw];
        let src = xv.data();
        for bi in 0..b {
            for p in 0..hw {
                let at = |ch: usize| src[(bi * 3 + ch) * hw + p].as_f64();
                let (lab, j) = pixel([at(0), at(1), at(2)]);
                for ch in 0..3 {
                    out[(bi * 3 + ch) * hw + p] = T::lit(lab[ch]);
                }
                jac[bi * hw + p] = j;
            }
        }
        let y = Tensor::from_parts(vec![b, 3, h, w], out);
        Ok(self.push(y, &[x], move |g, _| {
            let mut d = vec![T::zero(); b * 3 * hw];
            for bi in 0..b {
                for p in 0..hw {
                    let j = &jac[bi * hw + p];
                    for c in 0..3 {
                        let mut acc = 0.0;
                        for r in 0..3 {
                            acc += g[(bi * 3 + r) * hw + p].as_f64() * j[r][c];
                        }
                        d[(bi * 3 + c) * hw + p] = T::lit(acc);
                    }
                }
            }
            vec![Some(d)]
        }))
    }
}

/// CIELAB conversion of a `[B,3,H,W]` or `[3,H,W]` tensor.
pub fn rgb_to_lab<T: Real>(image: &Tensor<T>) -> Result<Tensor<T>> {
    let batched = image.rank() == 4;
    let x = if batched {
        image.clone()
    } else {
        let s = image.shape();
        image.reshape(&[1, s[0], s.get(1).copied().unwrap_or(1), s.get(2).copied().unwrap_or(1)])?
    };
    let g = Graph::inference();
    let v = g.input(x);
    let lab = g.value(g.rgb_to_lab(v)?);
    if batched {
        Ok(lab)
    } else {
        lab.reshape(image.shape())
    }
}
