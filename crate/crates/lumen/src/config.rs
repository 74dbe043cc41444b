//! Training configuration as flat `key = value` text. `#` starts a comment;
//! unknown or repeated keys are errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lumen_core::enhancer::{LumenConfig, DEFAULT_MAIN_BASE};
use lumen_core::depthnet::{DEFAULT_DEPTH_BASE, SIZE_MULTIPLE};
use lumen_core::flash::{DEFAULT_CLUSTERS, DEFAULT_TAU};
use lumen_core::fusion::{EfbConfig, NormPlacement};
use lumen_core::losses::LossWeights;
use lumen_core::optim::AdamWConfig;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CropMode {
    /// Bilinear resize of the whole image to `crop x crop`.
    Resize,
    /// Random `crop x crop` window, the same for low, high and depth.
    Crop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtractorKind {
    FrozenRandom,
    External,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub crop: usize,
    pub crop_mode: CropMode,
    pub batch_size: usize,
    pub epochs: usize,
    /// Overrides `epochs` when positive.
    pub steps: u64,
    pub lr_max: f64,
    pub lr_min: f64,
    pub adamw: AdamWConfig,
    pub weights: LossWeights,
    pub seed: u64,
    pub depth_detach: bool,
    pub extractor: ExtractorKind,
    pub extractor_seed: u64,
    pub main_base: usize,
    pub depth_base: usize,
    pub clusters: usize,
    pub tau: f64,
    pub heads: usize,
    pub pool: usize,
    pub dropout: f64,
    pub fuse_gamma: f64,
    pub norm: NormPlacement,
    /// Intermediate checkpoint interval in steps; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub resume: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let efb = EfbConfig::default();
        TrainConfig {
            crop: 128,
            crop_mode: CropMode::Resize,
            batch_size: 8,
            epochs: 100,
            steps: 0,
            lr_max: 1e-4,
            lr_min: 1e-6,
            adamw: AdamWConfig::default(),
            weights: LossWeights::default(),
            seed: 0,
            depth_detach: false,
            extractor: ExtractorKind::FrozenRandom,
            extractor_seed: 0,
            main_base: DEFAULT_MAIN_BASE,
            depth_base: DEFAULT_DEPTH_BASE,
            clusters: DEFAULT_CLUSTERS,
            tau: DEFAULT_TAU,
            heads: efb.heads,
            pool: efb.pool,
            dropout: efb.dropout,
            fuse_gamma: efb.gamma,
            norm: efb.norm,
            checkpoint_every: 0,
            resume: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "crop", "crop_mode", "batch_size", "epochs", "steps", "lr_max", "lr_min", "beta1", "beta2", "eps",
        "weight_decay", "seed", "lambda_recon", "lambda_ssim", "lambda_perceptual", "lambda_depth",
        "lambda_color", "lambda_edge", "depth_detach", "extractor", "extractor_seed", "main_base", "depth_base",
        "clusters", "tau", "heads", "pool", "dropout", "fuse_gamma", "norm", "checkpoint_every", "resume",
    ];

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "crop" => self.crop = parse(key, v)?,
            "crop_mode" => {
                self.crop_mode = match v {
                    "resize" => CropMode::Resize,
                    "crop" => CropMode::Crop,
                    _ => return Err(Error::Config(format!("`crop_mode`: expected resize or crop, got `{v}`"))),
                }
            }
            "batch_size" => self.batch_size = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "steps" => self.steps = parse(key, v)?,
            "lr_max" => self.lr_max = parse(key, v)?,
            "lr_min" => self.lr_min = parse(key, v)?,
            "beta1" => self.adamw.beta1 = parse(key, v)?,
            "beta2" => self.adamw.beta2 = parse(key, v)?,
            "eps" => self.adamw.eps = parse(key, v)?,
            "weight_decay" => self.adamw.weight_decay = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "lambda_recon" => self.weights.recon = parse(key, v)?,
            "lambda_ssim" => self.weights.ssim = parse(key, v)?,
            "lambda_perceptual" => self.weights.perceptual = parse(key, v)?,
            "lambda_depth" => self.weights.depth = parse(key, v)?,
            "lambda_color" => self.weights.color = parse(key, v)?,
            "lambda_edge" => self.weights.edge = parse(key, v)?,
            "depth_detach" => self.depth_detach = parse_bool(key, v)?,
            "extractor" => {
                self.extractor = match v {
                    "frozen-random" => ExtractorKind::FrozenRandom,
                    "external" => ExtractorKind::External,
                    _ => {
                        return Err(Error::Config(format!("`extractor`: expected frozen-random or external, got `{v}`")))
                    }
                }
            }
            "extractor_seed" => self.extractor_seed = parse(key, v)?,
            "main_base" => self.main_base = parse(key, v)?,
            "depth_base" => self.depth_base = parse(key, v)?,
            "clusters" => self.clusters = parse(key, v)?,
            "tau" => self.tau = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "pool" => self.pool = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "fuse_gamma" => self.fuse_gamma = parse(key, v)?,
            "norm" => {
                self.norm = match v {
                    "literal" => NormPlacement::Literal,
                    "pre-norm" => NormPlacement::PreNorm,
                    _ => return Err(Error::Config(format!("`norm`: expected literal or pre-norm, got `{v}`"))),
                }
            }
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "resume" => self.resume = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{raw}`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: key `{key}` given twice", n + 1)));
            }
            cfg.set(key, value).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.crop == 0 || self.crop % SIZE_MULTIPLE != 0 {
            return bad(format!("crop {} must be a positive multiple of {SIZE_MULTIPLE}", self.crop));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.steps == 0 && self.epochs == 0 {
            return bad("either steps or epochs must be positive".into());
        }
        if !(self.lr_max > 0.0 && self.lr_min > 0.0 && self.lr_min <= self.lr_max) {
            return bad(format!("need 0 < lr_min <= lr_max, got {} and {}", self.lr_min, self.lr_max));
        }
        let a = &self.adamw;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0 && a.weight_decay >= 0.0) {
            return bad("AdamW needs betas in [0, 1), eps > 0 and weight_decay >= 0".into());
        }
        self.weights.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.main_base == 0 || self.depth_base == 0 || self.clusters == 0 || self.pool == 0 {
            return bad("main_base, depth_base, clusters and pool must be positive".into());
        }
        if self.heads == 0 || self.main_base % self.heads != 0 {
            return bad(format!("heads {} must divide main_base {}", self.heads, self.main_base));
        }
        if !(self.tau > 0.0) || !(0.0..1.0).contains(&self.dropout) || !(self.fuse_gamma >= 0.0) {
            return bad("need tau > 0, dropout in [0, 1) and fuse_gamma >= 0".into());
        }
        Ok(())
    }

    pub fn model_config(&self) -> LumenConfig {
        let mut cfg = LumenConfig {
            main_base: self.main_base,
            depth_base: self.depth_base,
            clusters: self.clusters,
            ..LumenConfig::default()
        };
        self.apply_runtime(&mut cfg);
        cfg
    }

    /// Settings not recoverable from parameter shapes.
    pub fn apply_runtime(&self, cfg: &mut LumenConfig) {
        cfg.tau = self.tau;
        cfg.depth_detach = self.depth_detach;
        cfg.efb = EfbConfig {
            pool: self.pool,
            heads: self.heads,
            dropout: self.dropout,
            gamma: self.fuse_gamma,
            norm: self.norm,
        };
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let w = &self.weights;
        let mode = match self.crop_mode {
            CropMode::Resize => "resize",
            CropMode::Crop => "crop",
        };
        let extractor = match self.extractor {
            ExtractorKind::FrozenRandom => "frozen-random",
            ExtractorKind::External => "external",
        };
        let norm = match self.norm {
            NormPlacement::Literal => "literal",
            NormPlacement::PreNorm => "pre-norm",
        };
        let resume = self.resume.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let pairs: Vec<(&str, String)> = vec![
            ("crop", self.crop.to_string()),
            ("crop_mode", mode.into()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("steps", self.steps.to_string()),
            ("lr_max", format!("{:e}", self.lr_max)),
            ("lr_min", format!("{:e}", self.lr_min)),
            ("beta1", self.adamw.beta1.to_string()),
            ("beta2", self.adamw.beta2.to_string()),
            ("eps", format!("{:e}", self.adamw.eps)),
            ("weight_decay", format!("{:e}", self.adamw.weight_decay)),
            ("seed", self.seed.to_string()),
            ("lambda_recon", w.recon.to_string()),
            ("lambda_ssim", w.ssim.to_string()),
            ("lambda_perceptual", w.perceptual.to_string()),
            ("lambda_depth", w.depth.to_string()),
            ("lambda_color", w.color.to_string()),
            ("lambda_edge", w.edge.to_string()),
            ("depth_detach", self.depth_detach.to_string()),
            ("extractor", extractor.into()),
            ("extractor_seed", self.extractor_seed.to_string()),
            ("main_base", self.main_base.to_string()),
            ("depth_base", self.depth_base.to_string()),
            ("clusters", self.clusters.to_string()),
            ("tau", self.tau.to_string()),
            ("heads", self.heads.to_string()),
            ("pool", self.pool.to_string()),
            ("dropout", self.dropout.to_string()),
            ("fuse_gamma", self.fuse_gamma.to_string()),
            ("norm", norm.into()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("resume", resume),
        ];
        for (k, v) in pairs {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
