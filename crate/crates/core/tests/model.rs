use lumen_core::depthnet::{ladder, DepthNet};
use lumen_core::enhancer::{count_parameters, LumenConfig, LumenModel};
use lumen_core::flash::FlashEncoder;
use lumen_core::fusion::{Efb, EfbConfig, NormPlacement};
use lumen_core::gradcheck::{randomize_zero_params, reduced_model_config};
use lumen_core::losses::recon_loss;
use lumen_core::nn::{DoubleConv, Session};
use lumen_core::{Error, Mode, ParamStore, RngStream, Tensor};

fn image(seed: u64, b: usize, h: usize, w: usize) -> Tensor<f32> {
    let mut rng = RngStream::new(seed);
    Tensor::from_fn(&[b, 3, h, w], |_| rng.uniform_range::<f32>(0.0, 0.4))
}

fn reduced(seed: u64) -> (ParamStore<f32>, LumenModel) {
    let mut store = ParamStore::new();
    let model = LumenModel::new(&mut store, &mut RngStream::new(seed), reduced_model_config()).unwrap();
    (store, model)
}

#[test]
fn full_width_shape_contract() {
    let mut store = ParamStore::<f32>::new();
    let model = LumenModel::new(&mut store, &mut RngStream::new(1), LumenConfig::default()).unwrap();
    let x = image(2, 1, 64, 64);
    let mut s = Session::inference(&store, Mode::Eval, RngStream::new(0));
    let xi = s.input(x.clone());
    let v = model.forward(&mut s, xi).unwrap();
    let shape = |var| s.graph.shape(var);
    assert_eq!(shape(v.i_enh), [1, 3, 64, 64]);
    assert_eq!(shape(v.d_pred), [1, 1, 64, 64]);
    assert_eq!(shape(v.i_flash), [1, 3, 64, 64]);
    assert_eq!(shape(v.assignment), [1, 8, 64, 64]);
    let depth_ladder = [64, 128, 256, 512, 1024];
    let main_ladder = [32, 64, 128, 256, 512];
    for l in 0..5 {
        let side = 64 >> l;
        assert_eq!(shape(v.depth_features[l]), [1, depth_ladder[l], side, side]);
        assert_eq!(shape(v.flash_features[l]), [1, depth_ladder[l], side, side]);
        assert_eq!(shape(v.encoder_features[l]), [1, main_ladder[l], side, side]);
    }
    assert!(s.value(v.i_enh).bit_eq(&x));
    for prefix in ["depth.", "centers", "flashenc.", "main."] {
        assert!(store.iter().any(|(_, p)| p.name.starts_with(prefix)), "{prefix}");
    }
    assert_eq!(model.efbs[4].aux_channels, 2 * 1024);
}

#[test]
fn ladders() {
    assert_eq!(ladder(64), [64, 128, 256, 512, 1024]);
    assert_eq!(ladder(32), [32, 64, 128, 256, 512]);
}

#[test]
fn depth_prediction_in_open_unit_interval() {
    let mut store = ParamStore::<f64>::new();
    let net = DepthNet::new(&mut store, &mut RngStream::new(3), 4).unwrap();
    let mut s = Session::inference(&store, Mode::Eval, RngStream::new(0));
    let x = s.input(Tensor::from_fn(&[2, 3, 16, 16], |i| ((i * 37) % 101) as f64 / 50.0 - 1.0));
    let out = net.forward(&mut s, x).unwrap();
    let d = s.value(out.d_pred);
    assert_eq!(d.shape(), &[2, 1, 16, 16]);
    assert!(d.data().iter().all(|&v| v > 0.0 && v < 1.0));
    assert_eq!(out.features.len(), 5);
}

#[test]
fn flash_encoder_matches_depth_encoder_shapes() {
    let mut store = ParamStore::<f32>::new();
    let enc = FlashEncoder::new(&mut store, &mut RngStream::new(3), 4).unwrap();
    let mut s = Session::inference(&store, Mode::Eval, RngStream::new(0));
    let x = s.input(image(1, 1, 32, 32));
    let f = enc.forward(&mut s, x).unwrap();
    for (l, v) in f.iter().enumerate() {
        assert_eq!(s.graph.shape(*v), [1, 4 << l, 32 >> l, 32 >> l]);
    }
    assert!(store.iter().all(|(_, p)| p.name.starts_with("flashenc.")));
}

#[test]
fn indivisible_input_and_wrong_channels_are_rejected() {
    let (store, model) = reduced(1);
    let err = model.infer(&store, &image(0, 1, 24, 16), Mode::Eval, RngStream::new(0)).unwrap_err();
    assert!(matches!(err, Error::Precondition(ref m) if m.contains("16")), "{err}");
    let four = Tensor::<f32>::zeros(&[1, 4, 16, 16]);
    assert!(matches!(model.infer(&store, &four, Mode::Eval, RngStream::new(0)), Err(Error::Config(_))));
}

#[test]
fn artifacts_are_complete_and_consistent() {
    let (store, model) = reduced(4);
    let x = image(5, 2, 16, 16);
    let mut s = Session::inference(&store, Mode::Eval, RngStream::new(0));
    let xi = s.input(x.clone());
    let v = model.forward(&mut s, xi).unwrap();
    assert_eq!(v.depth_features.len(), 5);
    assert_eq!(v.flash_features.len(), 5);
    assert_eq!(v.encoder_features.len(), 5);
    assert_eq!(v.decoder_features.len(), 4);
    assert_eq!(s.graph.shape(v.mean_intensity), [2, 2]);
    assert_eq!(s.graph.shape(v.max_response), [2, 2]);
    let a = v.artifacts(&s.graph);
    assert_eq!(a.intensity.shape(), &[2, 2]);
    assert!(a.intensity.data().iter().all(|&p| p >= 0.0));
    let hw = 256;
    for b in 0..2 {
        for p in 0..hw {
            let sum: f32 = (0..2).map(|k| a.assignment.data()[(b * 2 + k) * hw + p]).sum();
            assert!((sum - 1.0).abs() < 1e-5);
        }
    }
    assert!(a.i_flash.data().iter().zip(x.data()).all(|(f, l)| f >= l));
    assert!(a.d_pred.data().iter().all(|&d| (0.0..=1.0).contains(&d)));
    assert!(a.i_enh.bit_eq(&x));
}

#[test]
fn double_conv_hand_count() {
    let (store, _) = reduced(1);
    let hand = (3 * 8 * 9 + 8) + 2 * 8 + (8 * 8 * 9 + 8) + 2 * 8;
    assert_eq!(hand, 840);
    assert_eq!(DoubleConv::parameter_count(3, 8), hand);
    assert_eq!(store.count_matching("main.enc1."), hand);
    assert_eq!(store.count_matching("depth.enc1."), hand);
    let counts = count_parameters(&store);
    assert_eq!(counts.per_prefix.values().sum::<usize>(), counts.total);
    assert_eq!(counts.per_prefix["centers"], 2);
    assert_eq!(count_parameters(&store), counts);
}

#[test]
fn full_model_count_is_stable() {
    let build = || {
        let mut store = ParamStore::<f32>::new();
        LumenModel::new(&mut store, &mut RngStream::new(9), LumenConfig::default()).unwrap();
        count_parameters(&store)
    };
    let a = build();
    assert_eq!(a, build());
    assert_eq!(a.per_prefix.len(), 4);
    assert_eq!(a.per_prefix["centers"], 8);
}

fn depth_grad_norm(detach: bool) -> f64 {
    let cfg = LumenConfig { depth_detach: detach, ..reduced_model_config() };
    let mut store = ParamStore::<f64>::new();
    let mut rng = RngStream::new(6);
    let model = LumenModel::new(&mut store, &mut rng, cfg).unwrap();
    randomize_zero_params(&mut store, &mut rng, 0.2);
    let mut s = Session::new(&store, Mode::Train, RngStream::new(1));
    let x = s.input(image(2, 2, 16, 16).cast());
    let v = model.forward(&mut s, x).unwrap();
    let target = s.input(Tensor::full(&[2, 3, 16, 16], 0.8));
    let loss = recon_loss(&s.graph, v.i_enh, target).unwrap();
    let g = s.graph.backward(loss).unwrap();
    let r = s.finish(Some(&g));
    let mut norm = 0.0;
    let mut seen = 0;
    for (id, grad) in &r.param_grads {
        if store.get(*id).name.starts_with("depth.") {
            seen += 1;
            norm += grad.iter().map(|v| v * v).sum::<f64>();
        }
    }
    assert!(detach || seen > 0);
    norm.sqrt()
}

#[test]
fn depth_detach_blocks_image_loss_gradients() {
    assert_eq!(depth_grad_norm(true), 0.0);
    assert!(depth_grad_norm(false) > 0.0);
}

fn efb_case(cfg: EfbConfig, h: usize) -> (ParamStore<f64>, Efb, [Tensor<f64>; 3]) {
    let mut store = ParamStore::new();
    let mut rng = RngStream::new(8);
    let efb = Efb::new(&mut store, &mut rng, "efb", 8, 8, cfg).unwrap();
    let mut r = RngStream::new(h as u64);
    let mut t = |c| Tensor::from_fn(&[1, c, h, h], |_| r.normal::<f64>());
    let inputs = [t(8), t(4), t(4)];
    (store, efb, inputs)
}

fn run_efb(store: &ParamStore<f64>, efb: &Efb, x: &[Tensor<f64>; 3], mode: Mode) -> (Tensor<f64>, Vec<lumen_core::graph::AttentionCall>) {
    let mut s = Session::inference(store, mode, RngStream::new(0));
    let (m, d, f) = (s.input(x[0].clone()), s.input(x[1].clone()), s.input(x[2].clone()));
    let y = efb.forward(&mut s, m, d, f).unwrap();
    let out = s.value(y);
    let log = s.graph.attention_log().clone();
    (out, log)
}

#[test]
fn efb_starts_as_identity() {
    let cfg = EfbConfig { heads: 2, ..EfbConfig::default() };
    let (store, efb, x) = efb_case(cfg, 16);
    let (y, _) = run_efb(&store, &efb, &x, Mode::Eval);
    assert!(y.bit_eq(&x[0]));
}

#[test]
fn efb_without_fusion_and_zero_ffn_tail_is_identity() {
    let cfg = EfbConfig { heads: 2, gamma: 0.0, ..EfbConfig::default() };
    let (mut store, efb, x) = efb_case(cfg, 16);
    randomize_zero_params(&mut store, &mut RngStream::new(1), 0.3);
    let (y, _) = run_efb(&store, &efb, &x, Mode::Eval);
    assert!(!y.bit_eq(&x[0]));
    let w = store.value(efb.ffn_out.weight).map(|_| 0.0);
    store.set(efb.ffn_out.weight, w).unwrap();
    let b = store.value(efb.ffn_out.bias).map(|_| 0.0);
    store.set(efb.ffn_out.bias, b).unwrap();
    let (y, _) = run_efb(&store, &efb, &x, Mode::Eval);
    assert!(y.bit_eq(&x[0]));
}

#[test]
fn efb_attention_is_over_sixty_four_tokens_at_any_size() {
    let mut macs = Vec::new();
    for h in [16, 32, 128] {
        for norm in [NormPlacement::Literal, NormPlacement::PreNorm] {
            let cfg = EfbConfig { heads: 2, norm, ..EfbConfig::default() };
            let (store, efb, x) = efb_case(cfg, h);
            let (y, log) = run_efb(&store, &efb, &x, Mode::Eval);
            assert_eq!(y.shape(), x[0].shape());
            assert_eq!(log.len(), 2);
            for call in &log {
                assert_eq!((call.query_tokens, call.key_tokens), (64, 64));
                assert_eq!(call.score_entries(), 2 * 64 * 64);
            }
            macs.push(log.iter().map(|c| c.macs).sum::<u64>());
        }
    }
    assert!(macs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn full_attention_reference_grows_with_pixels() {
    let cfg = EfbConfig { heads: 2, ..EfbConfig::default() };
    for h in [4, 8, 16] {
        let (store, efb, x) = efb_case(cfg, h);
        let mut s = Session::inference(&store, Mode::Eval, RngStream::new(0));
        let m = s.input(x[0].clone());
        let y = efb.full_attention_reference(&mut s, m).unwrap();
        assert_eq!(s.graph.shape(y), [1, 8, h, h]);
        let log = s.graph.attention_log();
        assert_eq!((log[0].query_tokens, log[0].key_tokens), (h * h, h * h));
    }
}

#[test]
fn efb_rejects_channel_mismatch() {
    let (store, efb, x) = efb_case(EfbConfig { heads: 2, ..EfbConfig::default() }, 16);
    let mut s = Session::inference(&store, Mode::Eval, RngStream::new(0));
    let m = s.input(x[0].clone());
    let d = s.input(Tensor::zeros(&[1, 5, 16, 16]));
    let f = s.input(x[2].clone());
    assert!(efb.forward(&mut s, m, d, f).is_err());
}

#[test]
fn eval_is_bit_deterministic_and_train_is_seeded() {
    let (mut store, model) = reduced(10);
    randomize_zero_params(&mut store, &mut RngStream::new(2), 0.2);
    let x = image(11, 2, 16, 16);
    let run = |mode, seed| model.infer(&store, &x, mode, RngStream::new(seed)).unwrap();
    let (a, b) = (run(Mode::Eval, 1), run(Mode::Eval, 2));
    assert!(a.i_enh.bit_eq(&b.i_enh) && a.i_flash.bit_eq(&b.i_flash) && a.d_pred.bit_eq(&b.d_pred));
    let (c, d, e) = (run(Mode::Train, 5), run(Mode::Train, 5), run(Mode::Train, 6));
    assert!(c.i_enh.bit_eq(&d.i_enh) && c.intensity.bit_eq(&d.intensity));
    assert!(!c.intensity.bit_eq(&e.intensity));
}

#[test]
fn centers_clamp_to_range() {
    let (mut store, model) = reduced(1);
    store.set(model.centers.id, Tensor::new(&[2], vec![-3.0, 7.0]).unwrap()).unwrap();
    model.clamp_centers(&mut store);
    assert_eq!(store.value(model.centers.id).data(), &[-0.5, 1.5]);
}

#[test]
fn config_is_inferred_from_shapes() {
    let (store, _) = reduced(1);
    let cfg = LumenConfig::infer_from(&store).unwrap();
    assert_eq!((cfg.main_base, cfg.depth_base, cfg.clusters, cfg.efb.heads), (8, 8, 2, 4));
    let odd = LumenConfig::infer(|n| Some(if n == "centers" { vec![8] } else { vec![6, 3, 3, 3] })).unwrap();
    assert_eq!(odd.efb.heads, 2);
}
