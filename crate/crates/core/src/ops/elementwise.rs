use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::{Graph, Real, Tensor, Var};

impl<T: Real> Graph<T> {
    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    fn unary(&self, x: Var, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var {
        let xv = self.value(x);
        let y = xv.map(f);
        let yc = y.clone();
        self.push(y, &[x], move |g, _| {
            let d = g
                .iter()
                .zip(xv.data().iter().zip(yc.data()))
                .map(|(&g, (&x, &y))| g * df(x, y))
                .collect();
            vec![Some(d)]
        })
    }

    fn note_pieces(&self, x: Var, piece: impl Fn(T) -> u64) {
        if self.branch_signature().is_some() {
            self.with_value(x, |t| self.note_branches(t.data().iter().map(|&v| piece(v))));
        }
    }

    fn binary(
        &self,
        a: Var,
        b: Var,
        op: &str,
        f: impl Fn(T, T) -> T,
        da: impl Fn(T, T) -> T + 'static,
        db: impl Fn(T, T) -> T + 'static,
    ) -> Result<Var> {
        self.same_shape(a, b, op)?;
        let (av, bv) = (self.value(a), self.value(b));
        let out: Vec<T> = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let y = Tensor::from_parts(av.shape().to_vec(), out);
        Ok(self.push(y, &[a, b], move |g, need| {
            let pair = |d: &dyn Fn(T, T) -> T| -> Vec<T> {
                g.iter()
                    .zip(av.data().iter().zip(bv.data()))
                    .map(|(&g, (&x, &y))| g * d(x, y))
                    .collect()
            };
            vec![need[0].then(|| pair(&da)), need[1].then(|| pair(&db))]
        }))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, |_, _| T::one(), |_, _| T::one())
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, |_, _| T::one(), |_, _| -T::one())
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, |_, y| y, |x, _| x)
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, |_, y| T::one() / y, |x, y| -x / (y * y))
    }

    pub fn scale(&self, x: Var, s: T) -> Var {
        self.unary(x, |v| v * s, move |_, _| s)
    }

    pub fn add_scalar(&self, x: Var, s: T) -> Var {
        self.unary(x, |v| v + s, |_, _| T::one())
    }

    pub fn square(&self, x: Var) -> Var {
        self.unary(x, |v| v * v, |x, _| x + x)
    }

    pub fn sqrt(&self, x: Var) -> Var {
        self.unary(x, |v| v.sqrt(), |_, y| T::lit(0.5) / y)
    }

    /// `|x|` with derivative `sign(x)` (zero at the kink).
    pub fn abs(&self, x: Var) -> Var {
        self.note_pieces(x, |v| (v > T::zero()) as u64 + 2 * (v < T::zero()) as u64);
        self.unary(x, |v| v.abs(), |x, _| {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, |v| T::one() / (T::one() + (-v).exp()), |_, y| y * (T::one() - y))
    }

    pub fn relu(&self, x: Var) -> Var {
        self.note_pieces(x, |v| (v > T::zero()) as u64);
        self.unary(x, |v| v.max(T::zero()), |x, _| if x > T::zero() { T::one() } else { T::zero() })
    }

    pub fn leaky_relu(&self, x: Var, slope: T) -> Var {
        self.note_pieces(x, |v| (v > T::zero()) as u64);
        self.unary(
            x,
            move |v| if v > T::zero() { v } else { v * slope },
            move |x, _| if x > T::zero() { T::one() } else { slope },
        )
    }

    /// Exact GELU, `x * Phi(x)`.
    pub fn gelu(&self, x: Var) -> Var {
        let half = T::lit(0.5);
        let inv_sqrt2 = T::lit(core::f64::consts::FRAC_1_SQRT_2);
        let inv_sqrt_2pi = T::lit(0.398_942_280_401_432_7);
        self.unary(
            x,
            move |v| half * v * (T::one() + (v * inv_sqrt2).erf()),
            move |x, _| {
                let cdf = half * (T::one() + (x * inv_sqrt2).erf());
                cdf + x * inv_sqrt_2pi * (-half * x * x).exp()
            },
        )
    }

    /// Clamp to `[lo, hi]`; the gradient passes where `lo <= x <= hi`.
    pub fn clamp(&self, x: Var, lo: T, hi: T) -> Result<Var> {
        if lo > hi {
            return Err(invalid!("clamp bounds reversed"));
        }
        self.note_pieces(x, |v| (v < lo) as u64 + 2 * (v > hi) as u64);
        Ok(self.unary(
            x,
            move |v| v.max(lo).min(hi),
            move |x, _| if x >= lo && x <= hi { T::one() } else { T::zero() },
        ))
    }

    pub fn clamp01(&self, x: Var) -> Var {
        self.note_pieces(x, |v| (v < T::zero()) as u64 + 2 * (v > T::one()) as u64);
        self.unary(
            x,
            |v| v.max(T::zero()).min(T::one()),
            |x, _| if x >= T::zero() && x <= T::one() { T::one() } else { T::zero() },
        )
    }

    /// Multiplies by a fixed mask (no gradient into the mask).
    pub fn mul_const(&self, x: Var, mask: &Tensor<T>) -> Result<Var> {
        let m = self.input(mask.clone());
        self.mul(x, m)
    }
}
