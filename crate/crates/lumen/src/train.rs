//! Seeded end-to-end training.
//!
//! Random streams are forked from `RngStream::new(seed)`: fork 0 draws the
//! initial weights, fork 1 the per-epoch sample order (sub-fork per epoch),
//! fork `2 + step` the crops, dropout masks and flash noise of that step.
//! Batch composition depends only on the step number, so a resumed run sees
//! the same batches as an uninterrupted one.

use std::io::Write;
use std::path::{Path, PathBuf};

use lumen_core::depthnet::SIZE_MULTIPLE;
use lumen_core::enhancer::LumenModel;
use lumen_core::imaging::{DepthMap, ImageRgb};
use lumen_core::losses::{total_loss, FeatureExtractor, FrozenRandom, LossInputs, LossReport, PERCEPTUAL_LAYERS};
use lumen_core::nn::Session;
use lumen_core::optim::{cosine_lr, AdamW};
use lumen_core::{Mode, ParamStore, RngStream, Tensor};
use serde::Serialize;

use crate::checkpoint::{load_model, save_checkpoint, Header};
use crate::config::{CropMode, ExtractorKind, TrainConfig};
use crate::dataset::{DatasetIndex, Record};
use crate::error::{Error, Result};
use crate::features::ExternalExtractor;
use crate::io::{load_depth, load_image};

/// One line of the loss log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub total: f64,
    pub depth: f64,
    pub recon: f64,
    pub perceptual: f64,
    pub ssim: f64,
    pub color: f64,
    pub edge: f64,
}

impl StepLog {
    fn new(step: u64, lr: f64, r: &LossReport) -> Self {
        StepLog {
            step,
            lr,
            total: r.total,
            depth: r.depth,
            recon: r.recon,
            perceptual: r.perceptual,
            ssim: r.ssim,
            color: r.color,
            edge: r.edge,
        }
    }
}

pub struct TrainOutcome {
    pub model: LumenModel,
    pub store: ParamStore<f32>,
    pub log: Vec<StepLog>,
    pub first_step: u64,
    pub total_steps: u64,
    pub checkpoints: Vec<PathBuf>,
}

/// A training example after cropping; depth is min-max normalized.
pub struct Sample {
    pub low: ImageRgb<f32>,
    pub high: ImageRgb<f32>,
    pub depth: Option<DepthMap<f32>>,
}

pub fn extractor_for(cfg: &TrainConfig) -> Box<dyn FeatureExtractor<f32>> {
    match cfg.extractor {
        ExtractorKind::FrozenRandom => Box::new(FrozenRandom::new(cfg.extractor_seed)),
        ExtractorKind::External => Box::new(ExternalExtractor { layers: PERCEPTUAL_LAYERS.to_vec() }),
    }
}

pub fn total_steps(cfg: &TrainConfig, n: usize) -> u64 {
    if cfg.steps > 0 {
        cfg.steps
    } else {
        cfg.epochs as u64 * n.div_ceil(cfg.batch_size) as u64
    }
}

/// Dataset indices of the batch trained at `step`.
pub fn batch_indices(seed: u64, step: u64, batch: usize, n: usize) -> Vec<usize> {
    let order_root = RngStream::new(seed).fork(1);
    let mut cached: Option<(u64, Vec<usize>)> = None;
    (0..batch as u64)
        .map(|j| {
            let global = step * batch as u64 + j;
            let (epoch, pos) = (global / n as u64, (global % n as u64) as usize);
            if cached.as_ref().map(|c| c.0) != Some(epoch) {
                let mut perm: Vec<usize> = (0..n).collect();
                order_root.fork(epoch).shuffle(&mut perm);
                cached = Some((epoch, perm));
            }
            cached.as_ref().expect("filled above").1[pos]
        })
        .collect()
}

fn fit<I>(img: I, offset: Option<(usize, usize)>, crop_fn: impl Fn(&I, usize, usize) -> lumen_core::Result<I>, resize: impl Fn(&I) -> lumen_core::Result<I>) -> Result<I> {
    Ok(match offset {
        Some((oy, ox)) => crop_fn(&img, oy, ox)?,
        None => resize(&img)?,
    })
}

pub fn load_sample(rec: &Record, crop: usize, mode: CropMode, rng: &mut RngStream, need_depth: bool) -> Result<Sample> {
    let low = load_image::<f32>(&rec.low)?;
    let high = load_image::<f32>(&rec.high)?;
    if (low.height(), low.width()) != (high.height(), high.width()) {
        return Err(Error::Dataset(format!("{}: low and high images differ in size", rec.stem)));
    }
    let depth = match (&rec.depth, need_depth) {
        (Some(p), true) => {
            let d = load_depth::<f32>(p)?;
            if (d.height(), d.width()) != (low.height(), low.width()) {
                return Err(Error::Dataset(format!("{}: depth map and images differ in size", rec.stem)));
            }
            Some(DepthMap::min_max_normalized(d.tensor())?)
        }
        _ => None,
    };
    let (h, w) = (low.height(), low.width());
    let offset = match mode {
        CropMode::Crop if h >= crop && w >= crop => Some((rng.below(h - crop + 1), rng.below(w - crop + 1))),
        _ => None,
    };
    let low = fit(low, offset, |i, y, x| i.crop(y, x, crop, crop), |i| i.resize(crop, crop))?;
    let high = fit(high, offset, |i, y, x| i.crop(y, x, crop, crop), |i| i.resize(crop, crop))?;
    let depth = match depth {
        Some(d) => Some(fit(d, offset, |i, y, x| i.crop(y, x, crop, crop), |i| i.resize(crop, crop))?),
        None => None,
    };
    Ok(Sample { low, high, depth })
}

fn stack(items: impl Iterator<Item = Tensor<f32>>) -> Result<Tensor<f32>> {
    Ok(Tensor::stack(&items.collect::<Vec<_>>())?)
}

fn step_checkpoint_path(out: &Path, step: u64) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(format!(".step{step}"));
    PathBuf::from(s)
}

/// Path of the JSON-lines loss log written next to checkpoint `out`.
pub fn loss_log_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(".loss.jsonl");
    PathBuf::from(s)
}

/// Trains from scratch (or from `cfg.resume`) and writes the final
/// checkpoint to `out` plus the loss log beside it.
pub fn train(cfg: &TrainConfig, data: &DatasetIndex, out: &Path, mut on_step: impl FnMut(&StepLog)) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.extractor == ExtractorKind::External && cfg.weights.perceptual > 0.0 {
        return Err(Error::Config(
            "extractor = external cannot drive training (features of the output are not on disk); set \
             lambda_perceptual = 0 or use frozen-random"
                .into(),
        ));
    }
    let need_depth = cfg.weights.depth > 0.0;
    if need_depth {
        data.require_depth()?;
    }
    let root = RngStream::new(cfg.seed);
    let (model, mut store, first_step) = match &cfg.resume {
        Some(path) => {
            let loaded = load_model::<f32>(path, |m| cfg.apply_runtime(m))?;
            (loaded.model, loaded.store, loaded.header.step)
        }
        None => {
            let mut store = ParamStore::new();
            let model = LumenModel::new(&mut store, &mut root.fork(0), cfg.model_config())?;
            (model, store, 0)
        }
    };
    let extractor = extractor_for(cfg);
    let total = total_steps(cfg, data.len());
    let mut opt = AdamW::new(&store, cfg.adamw);
    let log_path = loss_log_path(out);
    if let Some(dir) = log_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let log_file = std::fs::OpenOptions::new()
        .create(true)
        .append(first_step > 0)
        .write(true)
        .truncate(first_step == 0)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut log_writer = std::io::BufWriter::new(log_file);
    let mut log = Vec::new();
    let mut checkpoints = Vec::new();
    let crop = cfg.crop;
    debug_assert_eq!(crop % SIZE_MULTIPLE, 0);

    for step in first_step..total {
        let mut rng = root.fork(2 + step);
        let samples = batch_indices(cfg.seed, step, cfg.batch_size, data.len())
            .into_iter()
            .map(|i| load_sample(&data.records[i], crop, cfg.crop_mode, &mut rng, need_depth))
            .collect::<Result<Vec<_>>>()?;
        let low = stack(samples.iter().map(|s| s.low.to_batch()))?;
        let high = stack(samples.iter().map(|s| s.high.to_batch()))?;
        let lr = cosine_lr(step, total, cfg.lr_max, cfg.lr_min)?;

        let mut s = Session::new(&store, Mode::Train, rng);
        let x = s.input(low);
        let fwd = model.forward(&mut s, x)?;
        let d_pseudo = match need_depth {
            true => s.input(stack(samples.iter().map(|s| s.depth.as_ref().expect("checked").to_batch()))?),
            false => s.graph.detach(fwd.d_pred),
        };
        let inputs = LossInputs { i_enh: fwd.i_enh, i_high: s.input(high), d_pred: fwd.d_pred, d_pseudo };
        let (vars, report) = total_loss(&s.graph, &inputs, &cfg.weights, extractor.as_ref()).map_err(|e| match e {
            lumen_core::Error::NonFinite(m) => Error::Core(lumen_core::Error::NonFinite(format!("step {step}: {m}"))),
            other => other.into(),
        })?;
        let grads = s.graph.backward(vars.total)?;
        let result = s.finish(Some(&grads));
        for (id, v) in result.buffer_updates {
            store.get_mut(id).value = v;
        }
        opt.step(&mut store, &result.param_grads, lr)?;
        model.clamp_centers(&mut store);

        let entry = StepLog::new(step, lr, &report);
        serde_json::to_writer(&mut log_writer, &entry)?;
        writeln!(log_writer).map_err(|e| Error::io(&log_path, e))?;
        on_step(&entry);
        log.push(entry);

        let done = step + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < total {
            let p = step_checkpoint_path(out, done);
            save_checkpoint(&p, Header { step: done, seed: cfg.seed }, &model.cfg, &store)?;
            checkpoints.push(p);
        }
    }
    log_writer.flush().map_err(|e| Error::io(&log_path, e))?;
    save_checkpoint(out, Header { step: total.max(first_step), seed: cfg.seed }, &model.cfg, &store)?;
    checkpoints.push(out.to_path_buf());
    Ok(TrainOutcome { model, store, log, first_step, total_steps: total, checkpoints })
}
