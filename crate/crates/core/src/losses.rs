//! The six-term training objective. Every term is a mean, so the weights do
//! not depend on resolution.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::{Error, Graph, Real, Result, RngStream, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub recon: f64,
    pub ssim: f64,
    pub perceptual: f64,
    pub depth: f64,
    pub color: f64,
    pub edge: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { recon: 1.0, ssim: 0.5, perceptual: 0.1, depth: 0.5, color: 0.3, edge: 0.2 }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights { recon: 0.0, ssim: 0.0, perceptual: 0.0, depth: 0.0, color: 0.0, edge: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in self.named() {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} = {w} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("depth", self.depth),
            ("recon", self.recon),
            ("perceptual", self.perceptual),
            ("ssim", self.ssim),
            ("color", self.color),
            ("edge", self.edge),
        ]
    }
}

/// Layer indices of the perceptual feature set.
pub const PERCEPTUAL_LAYERS: [usize; 5] = [3, 8, 17, 26, 35];
/// ImageNet channel statistics applied before feature extraction.
pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Produces the feature maps compared by the perceptual loss.
pub trait FeatureExtractor<T: Real> {
    /// Declared layer indices, one per returned feature map.
    fn layers(&self) -> &[usize];
    /// Features of a `[B,3,H,W]` image in `[0,1]`, differentiable w.r.t. it.
    fn extract(&self, g: &Graph<T>, image: Var) -> Result<Vec<Var>>;
}

/// Five fixed convolution stages drawn from a seeded stream: one 3x3 conv +
/// ReLU per stage, a 2x max-pool between stages, so the stage scales are
/// 1, 1/2, 1/4, 1/8, 1/16. Maps already down to a single row or column are
/// not pooled further.
#[derive(Clone, Debug)]
pub struct FrozenRandom<T> {
    pub seed: u64,
    weights: Vec<Tensor<T>>,
}

pub const FROZEN_RANDOM_WIDTHS: [usize; 5] = [8, 16, 32, 64, 64];

impl<T: Real> FrozenRandom<T> {
    pub fn new(seed: u64) -> Self {
        Self::with_widths(seed, &FROZEN_RANDOM_WIDTHS)
    }

    pub fn with_widths(seed: u64, widths: &[usize; 5]) -> Self {
        let mut rng = RngStream::new(seed);
        let mut cin = 3;
        let weights = widths
            .iter()
            .map(|&c| {
                let fan_in = cin * 9;
                let w = rng.normal_vec(c * fan_in, libm::sqrt(2.0 / fan_in as f64));
                let t = Tensor::from_parts(alloc::vec![c, cin, 3, 3], w);
                cin = c;
                t
            })
            .collect();
        FrozenRandom { seed, weights }
    }

    /// Stage kernels, `[Cout, Cin, 3, 3]` each.
    pub fn weights(&self) -> &[Tensor<T>] {
        &self.weights
    }

    fn normalize(g: &Graph<T>, image: Var) -> Result<Var> {
        let [b, c, h, w] = g.dims4(image)?;
        if c != 3 {
            return Err(Error::Shape(format!("feature extractor expects 3 channels, got {c}")));
        }
        let hw = h * w;
        let scale = Tensor::from_fn(&[b, c, h, w], |i| T::lit(1.0 / IMAGENET_STD[(i / hw) % 3]));
        let shift = Tensor::from_fn(&[b, c, h, w], |i| {
            let ch = (i / hw) % 3;
            T::lit(-IMAGENET_MEAN[ch] / IMAGENET_STD[ch])
        });
        let scaled = g.mul_const(image, &scale)?;
        g.add(scaled, g.input(shift))
    }
}

impl<T: Real> FeatureExtractor<T> for FrozenRandom<T> {
    fn layers(&self) -> &[usize] {
        &PERCEPTUAL_LAYERS
    }

    fn extract(&self, g: &Graph<T>, image: Var) -> Result<Vec<Var>> {
        let mut x = Self::normalize(g, image)?;
        let mut out = Vec::with_capacity(self.weights.len());
        for (i, wt) in self.weights.iter().enumerate() {
            let [_, _, h, w] = g.dims4(x)?;
            if i > 0 && h >= 2 && w >= 2 {
                x = g.max_pool2d(x)?;
            }
            let wv = g.input(wt.clone());
            x = g.relu(g.conv2d(x, wv, None, 1, 1)?);
            out.push(x);
        }
        Ok(out)
    }
}

/// Mean L1 between two `[B,1,H,W]` depth maps.
pub fn depth_loss<T: Real>(g: &Graph<T>, d_pred: Var, d_pseudo: Var) -> Result<Var> {
    g.l1(d_pred, d_pseudo)
}

pub fn recon_loss<T: Real>(g: &Graph<T>, i_enh: Var, i_high: Var) -> Result<Var> {
    g.l1(i_enh, i_high)
}

/// Sum over layers of the mean L1 feature distance.
pub fn perceptual_loss<T: Real>(
    g: &Graph<T>,
    i_enh: Var,
    i_high: Var,
    extractor: &dyn FeatureExtractor<T>,
) -> Result<Var> {
    let fa = extractor.extract(g, i_enh)?;
    let fb = extractor.extract(g, i_high)?;
    if fa.len() != extractor.layers().len() || fb.len() != fa.len() {
        return Err(Error::Config(format!(
            "extractor declared {} layers but produced {} and {}",
            extractor.layers().len(),
            fa.len(),
            fb.len()
        )));
    }
    let mut total: Option<Var> = None;
    for (a, b) in fa.into_iter().zip(fb) {
        let d = g.l1(a, b)?;
        total = Some(match total {
            Some(t) => g.add(t, d)?,
            None => d,
        });
    }
    total.ok_or_else(|| Error::Config("extractor produced no features".into()))
}

/// Perceptual distance between precomputed feature sets, each a list of
/// `(layer index, features)`.
pub fn perceptual_from_features<T: Real>(a: &[(usize, Tensor<T>)], b: &[(usize, Tensor<T>)]) -> Result<T> {
    let la: Vec<usize> = a.iter().map(|(l, _)| *l).collect();
    let lb: Vec<usize> = b.iter().map(|(l, _)| *l).collect();
    if la != lb {
        return Err(Error::Config(format!("feature layer sets differ: {la:?} vs {lb:?}")));
    }
    let mut total = T::zero();
    for ((l, x), (_, y)) in a.iter().zip(b) {
        if x.shape() != y.shape() {
            return Err(Error::Shape(format!("layer {l}: {:?} vs {:?}", x.shape(), y.shape())));
        }
        if x.numel() == 0 {
            continue;
        }
        let s: T = x.data().iter().zip(y.data()).map(|(&p, &q)| (p - q).abs()).sum();
        total += s / T::lit(x.numel() as f64);
    }
    Ok(total)
}

/// `1 - SSIM`.
pub fn ssim_loss<T: Real>(g: &Graph<T>, i_enh: Var, i_high: Var) -> Result<Var> {
    let s = g.ssim(i_enh, i_high)?;
    Ok(g.add_scalar(g.scale(s, -T::one()), T::one()))
}

/// Mean L1 in CIELAB units.
pub fn color_loss<T: Real>(g: &Graph<T>, i_enh: Var, i_high: Var) -> Result<Var> {
    let a = g.rgb_to_lab(i_enh)?;
    let b = g.rgb_to_lab(i_high)?;
    g.l1(a, b)
}

/// Mean L1 between Sobel gradient magnitudes.
pub fn edge_loss<T: Real>(g: &Graph<T>, i_enh: Var, i_high: Var) -> Result<Var> {
    if g.shape(i_enh) != g.shape(i_high) {
        return Err(Error::Shape(format!("{:?} vs {:?}", g.shape(i_enh), g.shape(i_high))));
    }
    let a = g.sobel_grad_mag(i_enh)?;
    let b = g.sobel_grad_mag(i_high)?;
    g.l1(a, b)
}

/// Graph handles of the weighted total and each component.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub depth: Var,
    pub recon: Var,
    pub perceptual: Var,
    pub ssim: Var,
    pub color: Var,
    pub edge: Var,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub depth: f64,
    pub recon: f64,
    pub perceptual: f64,
    pub ssim: f64,
    pub color: f64,
    pub edge: f64,
}

impl LossReport {
    pub fn components(&self) -> [(&'static str, f64); 6] {
        [
            ("depth", self.depth),
            ("recon", self.recon),
            ("perceptual", self.perceptual),
            ("ssim", self.ssim),
            ("color", self.color),
            ("edge", self.edge),
        ]
    }

    /// `sum_i w_i * component_i`, recomputed from the report.
    pub fn weighted_sum(&self, w: &LossWeights) -> f64 {
        self.components().iter().zip(w.named()).map(|((_, c), (_, w))| c * w).sum()
    }

    /// Human-readable component breakdown.
    pub fn breakdown(&self) -> String {
        let mut s = format!("total={}", self.total);
        for (n, v) in self.components() {
            s.push_str(&format!(" {n}={v}"));
        }
        s
    }
}

/// Inputs of the objective, all on the same graph.
#[derive(Clone, Copy, Debug)]
pub struct LossInputs {
    pub i_enh: Var,
    pub i_high: Var,
    pub d_pred: Var,
    pub d_pseudo: Var,
}

/// Builds the weighted objective. Components are always evaluated so the
/// report is complete; the total is built from the weighted terms.
pub fn total_loss<T: Real>(
    g: &Graph<T>,
    inputs: &LossInputs,
    weights: &LossWeights,
    extractor: &dyn FeatureExtractor<T>,
) -> Result<(LossVars, LossReport)> {
    weights.validate()?;
    let LossInputs { i_enh, i_high, d_pred, d_pseudo } = *inputs;
    let depth = depth_loss(g, d_pred, d_pseudo)?;
    let recon = recon_loss(g, i_enh, i_high)?;
    let perceptual = perceptual_loss(g, i_enh, i_high, extractor)?;
    let ssim = ssim_loss(g, i_enh, i_high)?;
    let color = color_loss(g, i_enh, i_high)?;
    let edge = edge_loss(g, i_enh, i_high)?;
    let terms = [depth, recon, perceptual, ssim, color, edge];
    let mut total = g.input(Tensor::scalar(T::zero()));
    for ((name, w), &v) in weights.named().iter().zip(&terms) {
        let value = g.value(v).item().as_f64();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss component {name} is {value}")));
        }
        if *w != 0.0 {
            total = g.add(total, g.scale(v, T::lit(*w)))?;
        }
    }
    let vars = LossVars { total, depth, recon, perceptual, ssim, color, edge };
    let item = |v: Var| g.value(v).item().as_f64();
    let report = LossReport {
        total: item(total),
        depth: item(depth),
        recon: item(recon),
        perceptual: item(perceptual),
        ssim: item(ssim),
        color: item(color),
        edge: item(edge),
    };
    if !report.total.is_finite() {
        return Err(Error::NonFinite(format!("total loss is not finite: {}", report.breakdown())));
    }
    Ok((vars, report))
}

/// Evaluates the objective on plain tensors (no gradients).
pub fn evaluate_loss<T: Real>(
    i_enh: &Tensor<T>,
    i_high: &Tensor<T>,
    d_pred: &Tensor<T>,
    d_pseudo: &Tensor<T>,
    weights: &LossWeights,
    extractor: &dyn FeatureExtractor<T>,
) -> Result<LossReport> {
    let g = Graph::inference();
    let inputs = LossInputs {
        i_enh: g.input(i_enh.clone()),
        i_high: g.input(i_high.clone()),
        d_pred: g.input(d_pred.clone()),
        d_pseudo: g.input(d_pseudo.clone()),
    };
    Ok(total_loss(&g, &inputs, weights, extractor)?.1)
}

/// Features of a plain `[B,3,H,W]` image tensor.
pub fn extract_features<T: Real>(extractor: &dyn FeatureExtractor<T>, image: &Tensor<T>) -> Result<Vec<(usize, Tensor<T>)>> {
    let g = Graph::inference();
    let x = g.input(image.clone());
    let feats = extractor.extract(&g, x)?;
    Ok(extractor.layers().iter().copied().zip(feats.into_iter().map(|f| g.value(f))).collect())
}
