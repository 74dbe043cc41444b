//! The full LUMEN forward pass: depth estimation, depth clustering, virtual
//! flash, flash encoding, a five-level main encoder with one fusion block per
//! level, a skip-connected decoder, and a residual output head.

use alloc::format;
use alloc::vec::Vec;

use crate::depthnet::{check_divisible, ladder, Decoder, DepthNet, Encoder, DEFAULT_DEPTH_BASE, LEVELS};
use crate::flash::{self, ClusterCenters, FlashEncoder, FlashParams, DEFAULT_CLUSTERS, DEFAULT_TAU};
use crate::fusion::{Efb, EfbConfig};
use crate::nn::{Conv2d, Init, Session};
use crate::param::ParamCounts;
use crate::{Error, Mode, ParamStore, Real, Result, RngStream, Tensor, Var};

pub const DEFAULT_MAIN_BASE: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct LumenConfig {
    /// Main ladder base `C`.
    pub main_base: usize,
    /// Depth and flash encoder ladder base.
    pub depth_base: usize,
    pub clusters: usize,
    pub tau: f64,
    pub flash: FlashParams,
    pub efb: EfbConfig,
    /// Stop image-loss gradients at the depth prediction and features.
    pub depth_detach: bool,
}

impl Default for LumenConfig {
    fn default() -> Self {
        LumenConfig {
            main_base: DEFAULT_MAIN_BASE,
            depth_base: DEFAULT_DEPTH_BASE,
            clusters: DEFAULT_CLUSTERS,
            tau: DEFAULT_TAU,
            flash: FlashParams::default(),
            efb: EfbConfig::default(),
            depth_detach: false,
        }
    }
}

impl LumenConfig {
    /// Reads the ladder widths and cluster count back from parameter
    /// shapes; everything else keeps its default. Heads are halved until
    /// they divide the main width.
    pub fn infer(shape_of: impl Fn(&str) -> Option<Vec<usize>>) -> Result<Self> {
        let dim0 = |name: &str| -> Result<usize> {
            shape_of(name)
                .and_then(|s| s.first().copied())
                .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
        };
        let mut cfg = LumenConfig {
            main_base: dim0("main.enc1.conv1.weight")?,
            depth_base: dim0("depth.enc1.conv1.weight")?,
            clusters: dim0("centers")?,
            ..LumenConfig::default()
        };
        while cfg.efb.heads > 1 && cfg.main_base % cfg.efb.heads != 0 {
            cfg.efb.heads /= 2;
        }
        Ok(cfg)
    }

    pub fn infer_from<T: Real>(store: &ParamStore<T>) -> Result<Self> {
        Self::infer(|name| store.by_name(name).ok().map(|p| p.value.shape().to_vec()))
    }
}

#[derive(Clone, Debug)]
pub struct LumenModel {
    pub cfg: LumenConfig,
    pub depth: DepthNet,
    pub centers: ClusterCenters,
    pub flash_encoder: FlashEncoder,
    pub encoder: Encoder,
    pub efbs: Vec<Efb>,
    pub decoder: Decoder,
    /// Zero-initialized 1x1 head; a fresh model returns its input.
    pub head: Conv2d,
}

/// Graph handles for every intermediate product of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub i_low: Var,
    pub d_pred: Var,
    pub depth_features: Vec<Var>,
    pub assignment: Var,
    pub mean_intensity: Var,
    pub max_response: Var,
    pub intensity: Var,
    pub i_flash: Var,
    pub flash_features: Vec<Var>,
    /// Fused encoder outputs `E1..E5`.
    pub encoder_features: Vec<Var>,
    /// Decoder outputs `D1..D4`.
    pub decoder_features: Vec<Var>,
    pub i_enh: Var,
}

/// Materialized forward products.
#[derive(Clone, Debug)]
pub struct ForwardArtifacts<T> {
    pub i_enh: Tensor<T>,
    pub d_pred: Tensor<T>,
    pub i_flash: Tensor<T>,
    pub assignment: Tensor<T>,
    /// `[B,K]` flash intensities.
    pub intensity: Tensor<T>,
}

impl ForwardVars {
    pub fn artifacts<T: Real>(&self, g: &crate::Graph<T>) -> ForwardArtifacts<T> {
        ForwardArtifacts {
            i_enh: g.value(self.i_enh),
            d_pred: g.value(self.d_pred),
            i_flash: g.value(self.i_flash),
            assignment: g.value(self.assignment),
            intensity: g.value(self.intensity),
        }
    }
}

impl LumenModel {
    /// Registers all parameters (`depth.`, `centers`, `flashenc.`, `main.`)
    /// in `store`, drawing initial weights from `rng`.
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut RngStream, cfg: LumenConfig) -> Result<Self> {
        if cfg.main_base == 0 || cfg.depth_base == 0 {
            return Err(Error::Config("ladder bases must be positive".into()));
        }
        let depth = DepthNet::new(store, rng, cfg.depth_base)?;
        let centers = ClusterCenters::new(store, cfg.clusters, cfg.tau)?;
        let flash_encoder = FlashEncoder::new(store, rng, cfg.depth_base)?;
        let encoder = Encoder::new(store, rng, "main", 3, cfg.main_base)?;
        let aux = ladder(cfg.depth_base);
        let efbs = encoder
            .channels
            .iter()
            .zip(aux)
            .enumerate()
            .map(|(l, (&c, a))| Efb::new(store, rng, &format!("main.efb{}", l + 1), c, 2 * a, cfg.efb))
            .collect::<Result<Vec<_>>>()?;
        let decoder = Decoder::new(store, rng, "main", encoder.channels)?;
        let head = Conv2d::new(store, rng, "main.head", cfg.main_base, 3, 1, Init::Zero)?;
        Ok(LumenModel { cfg, depth, centers, flash_encoder, encoder, efbs, decoder, head })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, i_low: Var) -> Result<ForwardVars> {
        let [_, c, h, w] = s.graph.dims4(i_low)?;
        if c != 3 {
            return Err(Error::Config(format!("model expects 3 input channels, got {c}")));
        }
        check_divisible(h, w)?;

        let depth = self.depth.forward(s, i_low)?;
        let (d_used, fd_used): (Var, Vec<Var>) = if self.cfg.depth_detach {
            (s.graph.detach(depth.d_pred), depth.features.iter().map(|&f| s.graph.detach(f)).collect())
        } else {
            (depth.d_pred, depth.features.clone())
        };

        let centers = s.param(self.centers.id);
        let fl = flash::simulate(s, i_low, d_used, centers, self.cfg.tau, &self.cfg.flash)?;
        let flash_features = self.flash_encoder.forward(s, fl.image)?;

        let mut encoder_features = Vec::with_capacity(LEVELS);
        let mut cur = i_low;
        for l in 0..LEVELS {
            let e = self.encoder.level(s, l, cur)?;
            cur = self.efbs[l].forward(s, e, fd_used[l], flash_features[l])?;
            encoder_features.push(cur);
        }
        let decoder_features = self.decoder.forward(s, &encoder_features)?;
        let residual = self.head.forward(s, decoder_features[0])?;
        let sum = s.graph.add(residual, i_low)?;
        let i_enh = s.graph.clamp01(sum);

        Ok(ForwardVars {
            i_low,
            d_pred: depth.d_pred,
            depth_features: depth.features,
            assignment: fl.assignment,
            mean_intensity: fl.mean_intensity,
            max_response: fl.max_response,
            intensity: fl.intensity,
            i_flash: fl.image,
            flash_features,
            encoder_features,
            decoder_features,
            i_enh,
        })
    }

    /// One forward pass without gradient recording; parameters are not
    /// touched (running statistics are discarded).
    pub fn infer<T: Real>(
        &self,
        store: &ParamStore<T>,
        i_low: &Tensor<T>,
        mode: Mode,
        rng: RngStream,
    ) -> Result<ForwardArtifacts<T>> {
        let mut s = Session::inference(store, mode, rng);
        let x = s.input(i_low.clone());
        let vars = self.forward(&mut s, x)?;
        Ok(vars.artifacts(&s.graph))
    }

    pub fn clamp_centers<T: Real>(&self, store: &mut ParamStore<T>) {
        self.centers.clamp(store);
    }
}

/// Trainable element counts per name prefix.
pub fn count_parameters<T: Real>(store: &ParamStore<T>) -> ParamCounts {
    store.count_by_prefix()
}
