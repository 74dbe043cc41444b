//! Depth clustering and virtual flash simulation.
//!
//! Pixels are softly assigned to `K` learnable depth centers
//! (`A_k = softmax_k(-|d - mu_k| / tau)`); each cluster gets a flash
//! intensity `phi_k = alpha (1 - mean_k) + beta max_k + gamma n_k` from its
//! weighted mean intensity and maximum channel response, and the flash field
//! `sum_k phi_k A_k` is added to every channel before clamping to `[0, 1]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::depthnet::Encoder;
use crate::error::{shape_err, Result};
use crate::imaging::{DepthMap, ImageRgb};
use crate::nn::Session;
use crate::{Graph, Mode, ParamId, ParamKind, ParamStore, Real, RngStream, Tensor, Var};

pub const DEFAULT_CLUSTERS: usize = 8;
pub const DEFAULT_TAU: f64 = 0.1;
/// Centers are clamped to this interval after every optimizer step.
pub const CENTER_RANGE: (f64, f64) = (-0.5, 1.5);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlashParams {
    /// Base intensity.
    pub alpha: f64,
    /// Highlight preservation.
    pub beta: f64,
    /// Noise scale, used in training mode only.
    pub gamma: f64,
    /// Stabilizer of the cluster-weighted means.
    pub eps: f64,
}

impl Default for FlashParams {
    fn default() -> Self {
        FlashParams { alpha: 1.5, beta: 0.3, gamma: 0.1, eps: 1e-8 }
    }
}

/// `K` learnable scalar centers, stored as the parameter `centers`.
#[derive(Clone, Debug)]
pub struct ClusterCenters {
    pub id: ParamId,
    pub k: usize,
    pub tau: f64,
}

impl ClusterCenters {
    /// Centers evenly spaced over `[0, 1]` (both ends included).
    pub fn new<T: Real>(store: &mut ParamStore<T>, k: usize, tau: f64) -> Result<Self> {
        if k == 0 || tau <= 0.0 {
            return Err(crate::error::invalid!("need k > 0 and tau > 0, got k={k}, tau={tau}"));
        }
        let init = initial_centers::<T>(k);
        let id = store.add("centers", init, ParamKind::Trainable)?;
        Ok(ClusterCenters { id, k, tau })
    }

    pub fn clamp(&self, store: &mut ParamStore<impl Real>) {
        clamp_centers(store, self.id);
    }
}

fn clamp_centers<T: Real>(store: &mut ParamStore<T>, id: ParamId) {
    let (lo, hi) = (T::lit(CENTER_RANGE.0), T::lit(CENTER_RANGE.1));
    let p = store.get_mut(id);
    p.value = p.value.map(|v| v.max(lo).min(hi));
}

pub fn initial_centers<T: Real>(k: usize) -> Tensor<T> {
    Tensor::from_fn(&[k], |i| if k == 1 { T::lit(0.5) } else { T::lit(i as f64 / (k - 1) as f64) })
}

/// Products of one flash simulation.
#[derive(Clone, Debug)]
pub struct FlashOutput {
    /// `[B,K,H,W]` soft assignment.
    pub assignment: Var,
    /// `[B,K]` weighted mean intensity per cluster.
    pub mean_intensity: Var,
    /// `[B,K]` weighted maximum channel response per cluster.
    pub max_response: Var,
    /// `[B,K]` flash intensity per cluster.
    pub intensity: Var,
    /// `[B,3,H,W]` flashed image.
    pub image: Var,
}

impl<T: Real> Graph<T> {
    /// Soft K-means assignment `softmax_k(-|d - mu_k| / tau)` of a
    /// `[B,1,H,W]` depth map against `[K]` centers.
    pub fn soft_assign(&self, depth: Var, centers: Var, tau: T) -> Result<Var> {
        let [b, c, h, w] = self.dims4(depth)?;
        if c != 1 {
            return Err(shape_err!("depth must have one channel, got {}", c));
        }
        let cs = self.shape(centers);
        let [k] = *cs.as_slice() else {
            return Err(shape_err!("centers must be [K], got {:?}", cs));
        };
        let (dv, mv) = (self.value(depth), self.value(centers));
        let hw = h * w;
        let mut logits = vec![T::zero(); b * k * hw];
        for bi in 0..b {
            for ki in 0..k {
                let mu = mv.data()[ki];
                let o = &mut logits[(bi * k + ki) * hw..(bi * k + ki + 1) * hw];
                let dp = &dv.data()[bi * hw..(bi + 1) * hw];
                for (l, &d) in o.iter_mut().zip(dp) {
                    *l = -(d - mu).abs() / tau;
                }
                self.note_branches(dp.iter().map(|&d| (d > mu) as u64 + 2 * (d < mu) as u64));
            }
        }
        let dist = self.push(Tensor::from_parts(vec![b, k, h, w], logits), &[depth, centers], move |g, need| {
            let mut dd = vec![T::zero(); b * hw];
            let mut dm = vec![T::zero(); k];
            for bi in 0..b {
                for ki in 0..k {
                    let mu = mv.data()[ki];
                    for p in 0..hw {
                        let diff = dv.data()[bi * hw + p] - mu;
                        let sign = if diff > T::zero() {
                            T::one()
                        } else if diff < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        };
                        let gv = g[(bi * k + ki) * hw + p] * (-sign / tau);
                        dd[bi * hw + p] += gv;
                        dm[ki] -= gv;
                    }
                }
            }
            vec![need[0].then_some(dd), need[1].then_some(dm)]
        });
        self.softmax(dist, 1)
    }

    /// `sum_ij A_k v / (sum_ij A_k + eps)` for `A: [B,K,H,W]`, `v: [B,1,H,W]`.
    pub fn cluster_weighted_mean(&self, a: Var, v: Var, eps: T) -> Result<Var> {
        let [b, k, h, w] = self.dims4(a)?;
        if self.dims4(v)? != [b, 1, h, w] {
            return Err(shape_err!("cluster statistic input {:?} does not match [{b},1,{h},{w}]", self.shape(v)));
        }
        let (av, vv) = (self.value(a), self.value(v));
        let hw = h * w;
        let mut num = vec![T::zero(); b * k];
        let mut den = vec![T::zero(); b * k];
        for bi in 0..b {
            let vp = &vv.data()[bi * hw..(bi + 1) * hw];
            for ki in 0..k {
                let ap = &av.data()[(bi * k + ki) * hw..(bi * k + ki + 1) * hw];
                num[bi * k + ki] = ap.iter().zip(vp).map(|(&a, &v)| a * v).sum();
                den[bi * k + ki] = ap.iter().copied().sum::<T>() + eps;
            }
        }
        let out: Vec<T> = num.iter().zip(&den).map(|(&n, &d)| n / d).collect();
        let outc = out.clone();
        Ok(self.push(Tensor::from_parts(vec![b, k], out), &[a, v], move |g, need| {
            let da = need[0].then(|| {
                let mut da = vec![T::zero(); b * k * hw];
                for bi in 0..b {
                    for ki in 0..k {
                        let j = bi * k + ki;
                        let (gd, r) = (g[j] / den[j], outc[j]);
                        let vp = &vv.data()[bi * hw..(bi + 1) * hw];
                        let o = &mut da[j * hw..(j + 1) * hw];
                        o.iter_mut().zip(vp).for_each(|(o, &v)| *o = gd * (v - r));
                    }
                }
                da
            });
            let dv = need[1].then(|| {
                let mut dv = vec![T::zero(); b * hw];
                for bi in 0..b {
                    for ki in 0..k {
                        let j = bi * k + ki;
                        let gd = g[j] / den[j];
                        let ap = &av.data()[j * hw..(j + 1) * hw];
                        dv[bi * hw..(bi + 1) * hw].iter_mut().zip(ap).for_each(|(o, &a)| *o += gd * a);
                    }
                }
                dv
            });
            vec![da, dv]
        }))
    }

    /// Flash field `sum_k phi_k A_k`: `[B,K] x [B,K,H,W] -> [B,1,H,W]`.
    pub fn cluster_combine(&self, phi: Var, a: Var) -> Result<Var> {
        let [b, k, h, w] = self.dims4(a)?;
        if self.shape(phi) != [b, k] {
            return Err(shape_err!("phi {:?} does not match [{b},{k}]", self.shape(phi)));
        }
        let (pv, av) = (self.value(phi), self.value(a));
        let hw = h * w;
        let mut out = vec![T::zero(); b * hw];
        for bi in 0..b {
            let o = &mut out[bi * hw..(bi + 1) * hw];
            for ki in 0..k {
                let p = pv.data()[bi * k + ki];
                let ap = &av.data()[(bi * k + ki) * hw..(bi * k + ki + 1) * hw];
                o.iter_mut().zip(ap).for_each(|(o, &a)| *o += p * a);
            }
        }
        Ok(self.push(Tensor::from_parts(vec![b, 1, h, w], out), &[phi, a], move |g, need| {
            let dphi = need[0].then(|| {
                let mut d = vec![T::zero(); b * k];
                for bi in 0..b {
                    let gp = &g[bi * hw..(bi + 1) * hw];
                    for ki in 0..k {
                        let ap = &av.data()[(bi * k + ki) * hw..(bi * k + ki + 1) * hw];
                        d[bi * k + ki] = gp.iter().zip(ap).map(|(&g, &a)| g * a).sum();
                    }
                }
                d
            });
            let da = need[1].then(|| {
                let mut d = vec![T::zero(); b * k * hw];
                for bi in 0..b {
                    let gp = &g[bi * hw..(bi + 1) * hw];
                    for ki in 0..k {
                        let p = pv.data()[bi * k + ki];
                        d[(bi * k + ki) * hw..(bi * k + ki + 1) * hw]
                            .iter_mut()
                            .zip(gp)
                            .for_each(|(o, &g)| *o = p * g);
                    }
                }
                d
            });
            vec![dphi, da]
        }))
    }

    /// Weighted mean intensity and maximum channel response per cluster.
    pub fn cluster_stats(&self, image: Var, a: Var, params: &FlashParams) -> Result<(Var, Var)> {
        let eps = T::lit(params.eps);
        let mean_c = self.channel_mean(image)?;
        let max_c = self.channel_max(image)?;
        Ok((self.cluster_weighted_mean(a, mean_c, eps)?, self.cluster_weighted_mean(a, max_c, eps)?))
    }

    /// `phi = alpha (1 - mean) + beta max + gamma n`, with `noise` the
    /// `[B,K]` standard normal draws (absent in evaluation).
    pub fn flash_intensity(
        &self,
        mean_intensity: Var,
        max_response: Var,
        params: &FlashParams,
        noise: Option<&Tensor<T>>,
    ) -> Result<Var> {
        let base = self.add_scalar(self.scale(mean_intensity, T::lit(-params.alpha)), T::lit(params.alpha));
        let hl = self.scale(max_response, T::lit(params.beta));
        let phi = self.add(base, hl)?;
        match noise {
            Some(n) => {
                let n = self.input(n.map(|v| v * T::lit(params.gamma)));
                self.add(phi, n)
            }
            None => Ok(phi),
        }
    }

    /// `clamp(I + sum_k phi_k A_k, 0, 1)`, the field added to every channel.
    pub fn apply_flash(&self, image: Var, phi: Var, a: Var) -> Result<Var> {
        let field = self.cluster_combine(phi, a)?;
        let lit = self.add_channel_broadcast(image, field)?;
        Ok(self.clamp01(lit))
    }
}

/// Per-cluster standard normal draws, one scalar per cluster per image.
pub fn flash_noise<T: Real>(rng: &mut RngStream, batch: usize, k: usize) -> Tensor<T> {
    Tensor::from_parts(vec![batch, k], rng.normal_vec(batch * k, 1.0))
}

/// Full flash chain from a depth map: assignment, statistics, intensity,
/// flashed image. Noise is drawn from the session stream in training mode.
pub fn simulate<T: Real>(
    s: &mut Session<'_, T>,
    image: Var,
    depth: Var,
    centers: Var,
    tau: f64,
    params: &FlashParams,
) -> Result<FlashOutput> {
    let g = &s.graph;
    let assignment = g.soft_assign(depth, centers, T::lit(tau))?;
    let (mean_intensity, max_response) = g.cluster_stats(image, assignment, params)?;
    let noise = if s.mode == Mode::Train && params.gamma != 0.0 {
        let [b, k] = *s.graph.shape(mean_intensity).as_slice() else { unreachable!() };
        Some(flash_noise::<T>(&mut s.rng, b, k))
    } else {
        None
    };
    let g = &s.graph;
    let intensity = g.flash_intensity(mean_intensity, max_response, params, noise.as_ref())?;
    let image = g.apply_flash(image, intensity, assignment)?;
    Ok(FlashOutput { assignment, mean_intensity, max_response, intensity, image })
}

/// Standalone flash simulation with evenly spaced centers.
pub fn simulate_flash<T: Real>(
    image: &ImageRgb<T>,
    depth: &DepthMap<T>,
    k: usize,
    mode: Mode,
    seed: u64,
) -> Result<ImageRgb<T>> {
    if (image.height(), image.width()) != (depth.height(), depth.width()) {
        return Err(shape_err!(
            "image {}x{} and depth {}x{} differ",
            image.height(),
            image.width(),
            depth.height(),
            depth.width()
        ));
    }
    let store = ParamStore::<T>::new();
    let mut s = Session::inference(&store, mode, RngStream::new(seed));
    let x = s.input(image.to_batch());
    let d = s.input(depth.to_batch());
    let c = s.input(initial_centers(k));
    let out = simulate(&mut s, x, d, c, DEFAULT_TAU, &FlashParams::default())?;
    ImageRgb::from_batch(&s.value(out.image), 0)
}

/// Flash feature encoder: same shape as the depth encoder, own weights
/// under `flashenc.`.
#[derive(Clone, Debug)]
pub struct FlashEncoder {
    pub encoder: Encoder,
}

impl FlashEncoder {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut RngStream, base: usize) -> Result<Self> {
        Ok(FlashEncoder { encoder: Encoder::new(store, rng, "flashenc", 3, base)? })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, flash_image: Var) -> Result<Vec<Var>> {
        self.encoder.forward(s, flash_image)
    }
}
