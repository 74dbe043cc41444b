//! AdamW with decoupled weight decay, and the cosine learning-rate schedule.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, ParamId, ParamKind, ParamStore, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

/// One AdamW update of a flat parameter slice. `t` is the 1-based step
/// number used for bias correction.
pub fn adamw_step<T: Real>(
    p: &mut [T],
    g: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    lr: f64,
    cfg: &AdamWConfig,
) {
    assert!(p.len() == g.len() && p.len() == m.len() && p.len() == v.len(), "adamw_step: length mismatch");
    assert!(t >= 1, "adamw_step: step numbers start at 1");
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let bc1 = 1.0 - libm::pow(b1, t as f64);
    let bc2 = 1.0 - libm::pow(b2, t as f64);
    let decay = T::lit(1.0 - lr * cfg.weight_decay);
    for i in 0..p.len() {
        let gi = g[i].as_f64();
        let mi = b1 * m[i].as_f64() + (1.0 - b1) * gi;
        let vi = b2 * v[i].as_f64() + (1.0 - b2) * gi * gi;
        m[i] = T::lit(mi);
        v[i] = T::lit(vi);
        let update = lr * (mi / bc1) / (libm::sqrt(vi / bc2) + cfg.eps);
        p[i] = p[i] * decay - T::lit(update);
    }
}

/// Optimizer state over every trainable parameter of a store.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub cfg: AdamWConfig,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(store: &ParamStore<T>, cfg: AdamWConfig) -> Self {
        let zeros = |_: ()| -> Vec<Vec<T>> { store.iter().map(|(_, p)| vec![T::zero(); p.value.numel()]).collect() };
        AdamW { cfg, step: 0, m: zeros(()), v: zeros(()) }
    }

    /// Applies one update. Parameters without an entry in `grads` are
    /// treated as having zero gradient; buffers are never touched. A
    /// non-finite gradient aborts before anything is modified.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Vec<T>)], lr: f64) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::Config("optimizer state does not match the parameter set".into()));
        }
        let mut by_id: Vec<Option<&[T]>> = vec![None; store.len()];
        for (id, g) in grads {
            let p = store.get(*id);
            if g.len() != p.value.numel() {
                return Err(Error::Shape(format!("gradient of {} has {} entries, expected {}", p.name, g.len(), p.value.numel())));
            }
            if let Some(bad) = g.iter().find(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {} contains {}", p.name, bad.as_f64())));
            }
            by_id[id.index()] = Some(g);
        }
        self.step += 1;
        let t = self.step;
        let cfg = self.cfg;
        for (i, p) in store.iter_mut().enumerate() {
            if p.kind != ParamKind::Trainable {
                continue;
            }
            let n = p.value.numel();
            let zero;
            let g = match by_id[i] {
                Some(g) => g,
                None => {
                    zero = vec![T::zero(); n];
                    &zero
                }
            };
            let mut data = p.value.data().to_vec();
            adamw_step(&mut data, g, &mut self.m[i], &mut self.v[i], t, lr, &cfg);
            p.value = crate::Tensor::new(p.value.shape(), data)?;
        }
        Ok(())
    }
}

/// `lr_min + (lr_max - lr_min) (1 + cos(pi step / total)) / 2`.
pub fn cosine_lr(step: u64, total_steps: u64, lr_max: f64, lr_min: f64) -> Result<f64> {
    if step > total_steps {
        return Err(Error::InvalidArgument(format!("step {step} outside [0, {total_steps}]")));
    }
    if total_steps == 0 {
        return Ok(lr_max);
    }
    let phase = core::f64::consts::PI * step as f64 / total_steps as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + libm::cos(phase)))
}
