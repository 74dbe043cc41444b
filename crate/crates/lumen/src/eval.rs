//! Evaluation, single-image inference and image metrics.

use std::path::{Path, PathBuf};
use std::time::Instant;

use lumen_core::depthnet::SIZE_MULTIPLE;
use lumen_core::enhancer::{ForwardArtifacts, LumenModel};
use lumen_core::graph::AttentionCall;
use lumen_core::imaging::{mae, psnr, psnr_for_aggregation, ssim, DepthMap, ImageRgb};
use lumen_core::losses::{evaluate_loss, FeatureExtractor, FrozenRandom, LossReport, LossWeights};
use lumen_core::nn::Session;
use lumen_core::{Mode, ParamStore, RngStream, Tensor};
use serde_json::{json, Map, Value};

use crate::checkpoint::{load_model, Loaded};
use crate::dataset::{DatasetIndex, Split};
use crate::error::Result;
use crate::io::{load_depth, load_image, save_depth, save_image};

/// Report key stripped before comparing two reports.
pub const RUNTIME_KEY: &str = "runtime_seconds";

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub weights: LossWeights,
    pub extractor_seed: u64,
    pub write_images: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { weights: LossWeights::default(), extractor_seed: 0, write_images: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageMetrics {
    /// dB; `+inf` for identical images.
    pub psnr: f64,
    pub ssim: f64,
    pub mae: f64,
}

pub fn image_metrics(a: &ImageRgb<f32>, b: &ImageRgb<f32>) -> Result<ImageMetrics> {
    let (a64, b64) = (a.to_batch().cast::<f64>(), b.to_batch().cast::<f64>());
    Ok(ImageMetrics { psnr: psnr(&a64, &b64)?, ssim: ssim(&a64, &b64)?, mae: mae(&a64, &b64)? })
}

/// Finite PSNR as a number, infinite PSNR as the string `"inf"`.
pub fn psnr_json(db: f64) -> Value {
    if db.is_finite() {
        json!(db)
    } else {
        json!("inf")
    }
}

pub fn metrics_json(m: &ImageMetrics) -> Value {
    json!({ "psnr": psnr_json(m.psnr), "ssim": m.ssim, "mae": m.mae })
}

fn loss_json(r: &LossReport) -> Value {
    let mut m = Map::new();
    m.insert("total".into(), json!(r.total));
    for (name, v) in r.components() {
        m.insert(name.into(), json!(v));
    }
    Value::Object(m)
}

/// Eval-mode forward pass; also returns every attention kernel call.
pub fn run_inference(
    model: &LumenModel,
    store: &ParamStore<f32>,
    image: &ImageRgb<f32>,
    seed: u64,
) -> Result<(ForwardArtifacts<f32>, Vec<AttentionCall>)> {
    let mut s = Session::inference(store, Mode::Eval, RngStream::new(seed));
    let x = s.input(image.to_batch());
    let vars = model.forward(&mut s, x)?;
    let artifacts = vars.artifacts(&s.graph);
    let log = s.graph.attention_log().clone();
    Ok((artifacts, log))
}

/// Largest centered crop with sides divisible by the network multiple.
pub fn network_crop(img: &ImageRgb<f32>) -> Result<ImageRgb<f32>> {
    Ok(img.crop_to_multiple(SIZE_MULTIPLE)?)
}

fn stem_path(dir: &Path, stem: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{stem}_{suffix}.png"))
}

/// Evaluates `loaded` on the test split under `data_root`, writing
/// enhanced, depth and flash images to `out_dir`. Returns the JSON report.
pub fn evaluate(loaded: &Loaded<f32>, data_root: &Path, out_dir: Option<&Path>, opts: &EvalOptions) -> Result<Value> {
    let started = Instant::now();
    let data = DatasetIndex::load(data_root, Split::Test)?;
    let extractor: FrozenRandom<f32> = FrozenRandom::new(opts.extractor_seed);
    let extractor: &dyn FeatureExtractor<f32> = &extractor;
    let Loaded { header, model, store } = loaded;

    let mut rows = Vec::new();
    let mut sums = (0.0, 0.0, 0.0);
    let mut loss_sum = LossReport { total: 0.0, depth: 0.0, recon: 0.0, perceptual: 0.0, ssim: 0.0, color: 0.0, edge: 0.0 };
    let mut probe: Option<Vec<AttentionCall>> = None;
    for rec in &data.records {
        let low = network_crop(&load_image::<f32>(&rec.low)?)?;
        let high = network_crop(&load_image::<f32>(&rec.high)?)?;
        let (out, calls) = run_inference(model, store, &low, header.seed)?;
        probe.get_or_insert(calls);
        let enh = ImageRgb::from_batch(&out.i_enh, 0)?;
        let m = image_metrics(&enh, &high)?;
        let d_pseudo = match &rec.depth {
            Some(p) => {
                let d = load_depth::<f32>(p)?;
                let d = if (d.height(), d.width()) == (low.height(), low.width()) {
                    d
                } else {
                    d.center_crop(low.height(), low.width())?
                };
                DepthMap::min_max_normalized(d.tensor())?.to_batch()
            }
            None => out.d_pred.clone(),
        };
        let loss = evaluate_loss(&out.i_enh, &high.to_batch(), &out.d_pred, &d_pseudo, &opts.weights, extractor)?;
        if let (Some(dir), true) = (out_dir, opts.write_images) {
            save_image(&enh, &stem_path(dir, &rec.stem, "enhanced"))?;
            save_depth(&DepthMap::from_batch(&out.d_pred, 0)?, &stem_path(dir, &rec.stem, "depth"))?;
            save_image(&ImageRgb::from_batch(&out.i_flash, 0)?, &stem_path(dir, &rec.stem, "flash"))?;
        }
        sums.0 += psnr_for_aggregation(m.psnr);
        sums.1 += m.ssim;
        sums.2 += m.mae;
        accumulate(&mut loss_sum, &loss);
        let mut row = metrics_json(&m);
        row["stem"] = json!(rec.stem);
        row["loss"] = loss_json(&loss);
        rows.push(row);
    }
    let n = rows.len() as f64;
    scale(&mut loss_sum, 1.0 / n);
    let calls = probe.unwrap_or_default();
    Ok(json!({
        "step": header.step,
        "seed": header.seed,
        "split": Split::Test.to_string(),
        "count": rows.len(),
        "images": rows,
        "mean": {
            "psnr": sums.0 / n,
            "ssim": sums.1 / n,
            "mae": sums.2 / n,
            "loss": loss_json(&loss_sum),
        },
        "attention_probe": probe_json(&calls),
        RUNTIME_KEY: started.elapsed().as_secs_f64(),
    }))
}

fn accumulate(acc: &mut LossReport, r: &LossReport) {
    acc.total += r.total;
    acc.depth += r.depth;
    acc.recon += r.recon;
    acc.perceptual += r.perceptual;
    acc.ssim += r.ssim;
    acc.color += r.color;
    acc.edge += r.edge;
}

fn scale(acc: &mut LossReport, s: f64) {
    for v in [&mut acc.total, &mut acc.depth, &mut acc.recon, &mut acc.perceptual, &mut acc.ssim, &mut acc.color, &mut acc.edge] {
        *v *= s;
    }
}

/// Attention calls of the first evaluated image.
pub fn probe_json(calls: &[AttentionCall]) -> Value {
    json!({
        "calls": calls.len(),
        "max_query_tokens": calls.iter().map(|c| c.query_tokens).max().unwrap_or(0),
        "max_key_tokens": calls.iter().map(|c| c.key_tokens).max().unwrap_or(0),
        "total_macs": calls.iter().map(|c| c.macs).sum::<u64>(),
        "per_call": calls.iter().map(|c| json!({
            "heads": c.heads,
            "channels": c.channels,
            "query_tokens": c.query_tokens,
            "key_tokens": c.key_tokens,
            "macs": c.macs,
        })).collect::<Vec<_>>(),
    })
}

/// Copy of a report without the wall-clock field.
pub fn strip_runtime(report: &Value) -> Value {
    let mut r = report.clone();
    if let Some(m) = r.as_object_mut() {
        m.remove(RUNTIME_KEY);
    }
    r
}

pub fn evaluate_checkpoint(ckpt: &Path, data_root: &Path, out_dir: Option<&Path>, opts: &EvalOptions) -> Result<Value> {
    let loaded = load_model::<f32>(ckpt, |_| {})?;
    evaluate(&loaded, data_root, out_dir, opts)
}

/// Outputs of [`enhance_file`].
pub struct Enhanced {
    pub enhanced: ImageRgb<f32>,
    pub depth: DepthMap<f32>,
    pub flash: ImageRgb<f32>,
}

pub fn enhance_image(loaded: &Loaded<f32>, image: &ImageRgb<f32>) -> Result<Enhanced> {
    let image = network_crop(image)?;
    let (out, _) = run_inference(&loaded.model, &loaded.store, &image, loaded.header.seed)?;
    Ok(Enhanced {
        enhanced: ImageRgb::from_batch(&out.i_enh, 0)?,
        depth: DepthMap::from_batch(&out.d_pred, 0)?,
        flash: ImageRgb::from_batch(&out.i_flash, 0)?,
    })
}

pub fn enhance_file(ckpt: &Path, input: &Path) -> Result<Enhanced> {
    let loaded = load_model::<f32>(ckpt, |_| {})?;
    enhance_image(&loaded, &load_image(input)?)
}

/// Depth estimate only.
pub fn depth_file(ckpt: &Path, input: &Path, output: &Path) -> Result<()> {
    let loaded = load_model::<f32>(ckpt, |_| {})?;
    let image = network_crop(&load_image(input)?)?;
    let mut s = Session::inference(&loaded.store, Mode::Eval, RngStream::new(loaded.header.seed));
    let x = s.input(image.to_batch());
    let d = loaded.model.depth.forward(&mut s, x)?;
    let d: Tensor<f32> = s.value(d.d_pred);
    save_depth(&DepthMap::from_batch(&d, 0)?, output)
}

pub fn metrics_files(a: &Path, b: &Path) -> Result<ImageMetrics> {
    let (a, b) = (load_image::<f32>(a)?, load_image::<f32>(b)?);
    image_metrics(&a, &b)
}

/// Mean PSNR over a split, enhanced versus reference and input versus
/// reference, infinite values replaced by the sentinel.
pub fn split_psnr(loaded: &Loaded<f32>, data_root: &Path, split: Split) -> Result<(f64, f64)> {
    let data = DatasetIndex::load(data_root, split)?;
    let (mut enh, mut low) = (0.0, 0.0);
    for rec in &data.records {
        let l = network_crop(&load_image::<f32>(&rec.low)?)?;
        let h = network_crop(&load_image::<f32>(&rec.high)?)?;
        let (out, _) = run_inference(&loaded.model, &loaded.store, &l, loaded.header.seed)?;
        enh += psnr_for_aggregation(psnr(&out.i_enh.cast::<f64>(), &h.to_batch().cast::<f64>())?);
        low += psnr_for_aggregation(psnr(&l.tensor().cast::<f64>(), &h.tensor().cast::<f64>())?);
    }
    let n = data.len() as f64;
    Ok((enh / n, low / n))
}
