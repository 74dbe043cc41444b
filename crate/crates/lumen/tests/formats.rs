use std::path::Path;

use lumen::checkpoint::{load_model, meta_values, read_checkpoint, save_checkpoint, write_checkpoint, Header, MAGIC};
use lumen::config::{CropMode, ExtractorKind, TrainConfig};
use lumen::dataset::{DatasetIndex, Split};
use lumen::features::{perceptual_between_files, read_features, write_features};
use lumen::io::{load_depth, load_image, save_depth, save_image};
use lumen::Error;
use lumen_core::enhancer::{LumenConfig, LumenModel};
use lumen_core::fusion::{EfbConfig, NormPlacement};
use lumen_core::gradcheck::randomize_zero_params;
use lumen_core::imaging::{DepthMap, ImageRgb};
use lumen_core::losses::{extract_features, perceptual_from_features, FrozenRandom};
use lumen_core::{ParamStore, Real, RngStream, Tensor};

fn small_config() -> LumenConfig {
    LumenConfig {
        main_base: 8,
        depth_base: 4,
        clusters: 3,
        tau: 0.2,
        efb: EfbConfig { heads: 2, pool: 4, norm: NormPlacement::PreNorm, ..EfbConfig::default() },
        ..LumenConfig::default()
    }
}

fn small_model<T: Real>(seed: u64) -> (ParamStore<T>, LumenModel) {
    let mut store = ParamStore::new();
    let model = LumenModel::new(&mut store, &mut RngStream::new(seed), small_config()).unwrap();
    randomize_zero_params(&mut store, &mut RngStream::new(seed + 1), 0.1);
    (store, model)
}

fn random_image(seed: u64, h: usize, w: usize) -> ImageRgb<f64> {
    let mut r = RngStream::new(seed);
    ImageRgb::new(Tensor::from_fn(&[3, h, w], |_| r.uniform::<f64>())).unwrap()
}

#[test]
fn png_round_trip_is_within_half_a_code() {
    let dir = tempfile::tempdir().unwrap();
    let img = random_image(1, 9, 13);
    save_image(&img, &dir.path().join("a/b.png")).unwrap();
    let back = load_image::<f64>(&dir.path().join("a/b.png")).unwrap();
    let worst = img.tensor().data().iter().zip(back.tensor().data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst <= 1.0 / 510.0 + 1e-12, "{worst}");

    let mut r = RngStream::new(2);
    let depth = DepthMap::new(Tensor::from_fn(&[1, 7, 5], |_| r.uniform::<f64>())).unwrap();
    save_depth(&depth, &dir.path().join("d.png")).unwrap();
    let back = load_depth::<f64>(&dir.path().join("d.png")).unwrap();
    let worst = depth.tensor().data().iter().zip(back.tensor().data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst <= 1.0 / 131070.0 + 1e-12, "{worst}");
}

#[test]
fn png_codes_are_exact_and_wrong_kinds_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let codes: Vec<f64> = (0..12).map(|i| (i * 23) as f64 / 255.0).collect();
    let img = ImageRgb::new(Tensor::new(&[3, 2, 2], codes.clone()).unwrap()).unwrap();
    let p = dir.path().join("c.png");
    save_image(&img, &p).unwrap();
    assert_eq!(load_image::<f64>(&p).unwrap().tensor().data(), &codes[..]);
    // an RGB file is not a depth map
    assert!(matches!(load_depth::<f64>(&p), Err(Error::Image { .. })));
    let q = dir.path().join("not.png");
    std::fs::write(&q, b"definitely not a png").unwrap();
    let err = load_image::<f32>(&q).unwrap_err().to_string();
    assert!(err.contains("not.png"), "{err}");
}

fn touch_pair(root: &Path, split: &str, stem: &str, parts: &[&str]) {
    let img = random_image(stem.len() as u64, 4, 4);
    for part in parts {
        let p = root.join(split).join(part).join(format!("{stem}.png"));
        if *part == "depth" {
            save_depth(&DepthMap::new(Tensor::<f64>::full(&[1, 4, 4], 0.5)).unwrap(), &p).unwrap();
        } else {
            save_image(&img, &p).unwrap();
        }
    }
}

#[test]
fn dataset_is_sorted_by_stem() {
    let dir = tempfile::tempdir().unwrap();
    for stem in ["b", "10", "a", "2"] {
        touch_pair(dir.path(), "train", stem, &["low", "high", "depth"]);
    }
    let idx = DatasetIndex::load(dir.path(), Split::Train).unwrap();
    let stems: Vec<&str> = idx.records.iter().map(|r| r.stem.as_str()).collect();
    assert_eq!(stems, ["10", "2", "a", "b"]);
    assert!(idx.records.iter().all(|r| r.depth.is_some()));
    idx.require_depth().unwrap();
}

#[test]
fn dataset_orphans_are_reported_together() {
    let dir = tempfile::tempdir().unwrap();
    touch_pair(dir.path(), "test", "ok", &["low", "high"]);
    touch_pair(dir.path(), "test", "lonely_low", &["low"]);
    touch_pair(dir.path(), "test", "lonely_high", &["high"]);
    let err = DatasetIndex::load(dir.path(), Split::Test).unwrap_err().to_string();
    assert!(err.contains("lonely_low") && err.contains("lonely_high"), "{err}");
    assert!(err.contains("2 orphan"), "{err}");
}

#[test]
fn missing_depth_is_an_error_only_when_required() {
    let dir = tempfile::tempdir().unwrap();
    touch_pair(dir.path(), "train", "x", &["low", "high"]);
    touch_pair(dir.path(), "train", "y", &["low", "high", "depth"]);
    let idx = DatasetIndex::load(dir.path(), Split::Train).unwrap();
    let err = idx.require_depth().unwrap_err().to_string();
    assert!(err.contains('x') && !err.contains(", y"), "{err}");
    assert!(DatasetIndex::load(dir.path(), Split::Test).is_err());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (store, model) = small_model::<f32>(3);
    let header = Header { step: 77, seed: 0xDEAD_BEEF };
    let p = dir.path().join("m.lumn");
    save_checkpoint(&p, header, &model.cfg, &store).unwrap();
    let loaded = load_model::<f32>(&p, |_| {}).unwrap();
    assert_eq!(loaded.header, header);
    assert_eq!(loaded.model.cfg, model.cfg);
    assert_eq!(loaded.store.len(), store.len());
    for ((_, a), (_, b)) in store.iter().zip(loaded.store.iter()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.kind, b.kind);
        assert!(a.value.bit_eq(&b.value), "{}", a.name);
    }
    assert_eq!(loaded.store.checksum(), store.checksum());
    let q = dir.path().join("again.lumn");
    save_checkpoint(&q, loaded.header, &loaded.model.cfg, &loaded.store).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
}

#[test]
fn f64_checkpoints_keep_double_precision() {
    let dir = tempfile::tempdir().unwrap();
    let (store, model) = small_model::<f64>(4);
    let p = dir.path().join("m64.lumn");
    save_checkpoint(&p, Header { step: 1, seed: 2 }, &model.cfg, &store).unwrap();
    let loaded = load_model::<f64>(&p, |_| {}).unwrap();
    for ((_, a), (_, b)) in store.iter().zip(loaded.store.iter()) {
        assert!(a.value.bit_eq(&b.value), "{}", a.name);
    }
}

#[test]
fn checkpoint_layout_matches_the_documented_bytes() {
    let mut store = ParamStore::<f32>::new();
    store.add("w", Tensor::new(&[2], vec![1.0, -2.5]).unwrap(), lumen_core::ParamKind::Trainable).unwrap();
    let cfg = LumenConfig::default();
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, Header { step: 5, seed: 9 }, &cfg, &store).unwrap();
    assert_eq!(&bytes[..4], MAGIC);
    assert_eq!(bytes[4..8], 1u32.to_le_bytes());
    assert_eq!(bytes[8..16], 5u64.to_le_bytes());
    assert_eq!(bytes[16..24], 9u64.to_le_bytes());
    let mut tail = Vec::new();
    tail.extend(1u32.to_le_bytes());
    tail.push(b'w');
    tail.push(1);
    tail.extend(1u32.to_le_bytes());
    tail.extend(2u64.to_le_bytes());
    tail.extend(1.0f32.to_le_bytes());
    tail.extend((-2.5f32).to_le_bytes());
    assert!(bytes.ends_with(&tail));
    let meta_len: usize = meta_values(&cfg).iter().map(|(k, _)| 4 + 5 + k.len() + 1 + 4 + 8).sum();
    assert_eq!(bytes.len(), 24 + meta_len + tail.len());
}

#[test]
fn unknown_parameter_names_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (mut store, model) = small_model::<f32>(5);
    store.add("stray.weight", Tensor::zeros(&[3]), lumen_core::ParamKind::Trainable).unwrap();
    let p = dir.path().join("m.lumn");
    save_checkpoint(&p, Header { step: 0, seed: 5 }, &model.cfg, &store).unwrap();
    let err = load_model::<f32>(&p, |_| {}).err().unwrap().to_string();
    assert!(err.contains("stray.weight"), "{err}");
}

#[test]
fn shape_mismatch_names_the_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let (store, model) = small_model::<f32>(6);
    let mut other = ParamStore::<f32>::new();
    for (_, p) in store.iter() {
        let value = if p.name == "main.head.weight" { Tensor::zeros(&[3, 8, 3, 3]) } else { p.value.clone() };
        other.add(&p.name, value, p.kind).unwrap();
    }
    let path = dir.path().join("m.lumn");
    save_checkpoint(&path, Header { step: 0, seed: 6 }, &model.cfg, &other).unwrap();
    let err = load_model::<f32>(&path, |_| {}).err().unwrap().to_string();
    assert!(err.contains("main.head.weight"), "{err}");
}

#[test]
fn truncated_and_foreign_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (store, model) = small_model::<f32>(7);
    let p = dir.path().join("m.lumn");
    save_checkpoint(&p, Header { step: 0, seed: 7 }, &model.cfg, &store).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
    assert!(read_checkpoint(&p).is_err());
    std::fs::write(&p, b"PNG\0garbage").unwrap();
    assert!(read_checkpoint(&p).unwrap_err().to_string().contains("magic"));
    std::fs::write(&p, &bytes[..100.min(bytes.len())]).unwrap();
    assert!(load_model::<f32>(&p, |_| {}).is_err());
}

#[test]
fn config_parses_documented_keys() {
    let text = "# comment\ncrop = 64  # trailing\ncrop_mode = crop\nbatch_size=4\nsteps = 300\nlambda_depth = 0\n\
                extractor = external\nnorm = pre-norm\ndepth_detach = true\nresume = a/b.lumn\n";
    let cfg = TrainConfig::parse_str(text).unwrap();
    assert_eq!((cfg.crop, cfg.crop_mode, cfg.batch_size, cfg.steps), (64, CropMode::Crop, 4, 300));
    assert_eq!(cfg.weights.depth, 0.0);
    assert_eq!(cfg.extractor, ExtractorKind::External);
    assert_eq!(cfg.norm, NormPlacement::PreNorm);
    assert!(cfg.depth_detach);
    assert_eq!(cfg.resume.as_deref(), Some(Path::new("a/b.lumn")));
    assert_eq!(TrainConfig::parse_str(&cfg.to_text()).unwrap(), cfg);
    assert_eq!(TrainConfig::parse_str(&TrainConfig::default().to_text()).unwrap(), TrainConfig::default());
    let d = TrainConfig::default();
    assert_eq!((d.crop, d.crop_mode, d.batch_size), (128, CropMode::Resize, 8));
    assert_eq!((d.lr_max, d.lr_min, d.adamw.weight_decay), (1e-4, 1e-6, 1e-4));
}

#[test]
fn config_errors_are_explicit() {
    let cases = [
        ("crop = 100\n", "multiple of 16"),
        ("colour = 3\n", "unknown key `colour`"),
        ("seed = 1\nseed = 2\n", "line 2"),
        ("lr_max = -1\n", "lr"),
        ("batch_size = many\n", "batch_size"),
        ("just text\n", "key = value"),
        ("heads = 3\n", "heads"),
        ("lambda_ssim = -0.5\n", "ssim"),
    ];
    for (text, needle) in cases {
        let err = TrainConfig::parse_str(text).unwrap_err().to_string();
        assert!(err.contains(needle), "{text:?} -> {err}");
    }
}

#[test]
fn feature_files_round_trip_and_give_the_perceptual_distance() {
    let dir = tempfile::tempdir().unwrap();
    let ext = FrozenRandom::<f32>::new(3);
    let a = random_image(10, 16, 16).tensor().cast::<f32>().reshape(&[1, 3, 16, 16]).unwrap();
    let b = random_image(11, 16, 16).tensor().cast::<f32>().reshape(&[1, 3, 16, 16]).unwrap();
    let (fa, fb) = (extract_features(&ext, &a).unwrap(), extract_features(&ext, &b).unwrap());
    let (pa, pb) = (dir.path().join("a.lfea"), dir.path().join("b.lfea"));
    write_features(&pa, &fa).unwrap();
    write_features(&pb, &fb).unwrap();
    let back = read_features(&pa).unwrap();
    assert_eq!(back.len(), fa.len());
    for ((la, ta), (lb, tb)) in fa.iter().zip(&back) {
        assert_eq!(la, lb);
        assert!(ta.bit_eq(tb));
    }
    let want = perceptual_from_features(&fa, &fb).unwrap() as f64;
    assert_eq!(perceptual_between_files(&pa, &pb).unwrap(), want);
    assert_eq!(perceptual_between_files(&pa, &pa).unwrap(), 0.0);
    std::fs::write(&pb, b"LFEA\x01\0\0\0\x03\0\0\0").unwrap();
    assert!(read_features(&pb).is_err());
}
