//! Closed-form values of the pipeline's building blocks.

use lumen_core::flash::FlashParams;
use lumen_core::imaging::{mae, psnr, rgb_to_lab, sobel_grad_mag, ssim, SsimConstants, EDGE_EPS};
use lumen_core::losses::{color_loss, edge_loss, ssim_loss};
use lumen_core::nn::{MultiHeadAttention, Session};
use lumen_core::optim::{adamw_step, cosine_lr, AdamWConfig};
use lumen_core::{Graph, Mode, ParamStore, RngStream, Tensor};

const TOL: f64 = 1e-6;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn assert_close(got: f64, want: f64, tol: f64) {
    assert!((got - want).abs() <= tol, "got {got}, want {want} (tol {tol})");
}

#[test]
fn conv_of_ones_centre_is_nine() {
    let g = Graph::inference();
    let x = g.input(Tensor::full(&[1, 1, 3, 3], 1.0));
    let w = g.input(Tensor::full(&[1, 1, 3, 3], 1.0));
    let y = g.value(g.conv2d(x, w, None, 1, 1).unwrap());
    assert_eq!(y.shape(), &[1, 1, 3, 3]);
    assert_eq!(y.data()[4], 9.0);
    assert_eq!(y.data()[0], 4.0);
}

#[test]
fn conv_rejects_channel_mismatch() {
    let g = Graph::<f64>::inference();
    let x = g.input(Tensor::zeros(&[1, 2, 3, 3]));
    let w = g.input(Tensor::zeros(&[1, 3, 3, 3]));
    assert!(g.conv2d(x, w, None, 1, 1).is_err());
}

#[test]
fn adaptive_pool_bin_means() {
    let g = Graph::inference();
    let x = g.input(Tensor::from_fn(&[1, 1, 4, 4], |i| (i + 1) as f64));
    let y = g.value(g.adaptive_avg_pool2d(x, 2).unwrap());
    assert_eq!(y.data(), &[3.5, 5.5, 11.5, 13.5]);
    assert!(g.adaptive_avg_pool2d(x, 0).is_err());
}

#[test]
fn bilinear_half_pixel_two_to_four() {
    let g = Graph::inference();
    let x = g.input(t(&[1, 1, 2, 2], &[0.0, 1.0, 0.0, 1.0]));
    let y = g.value(g.bilinear_resize(x, 2, 4).unwrap());
    assert_eq!(y.data(), &[0.0, 0.25, 0.75, 1.0, 0.0, 0.25, 0.75, 1.0]);
}

#[test]
fn attention_over_one_token_is_out_projection_of_value() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = RngStream::new(4);
    let mha = MultiHeadAttention::new(&mut store, &mut rng, "mha", 8, 2, 0.1).unwrap();
    let mut s = Session::inference(&store, Mode::Eval, RngStream::new(0));
    let xv = Tensor::from_fn(&[1, 1, 8], |i| i as f64 * 0.1 - 0.3);
    let q = s.input(Tensor::from_fn(&[1, 1, 8], |i| (i as f64).sin()));
    let kv = s.input(xv.clone());
    let y = mha.forward(&mut s, q, kv, kv).unwrap();
    let v = mha.v.forward(&mut s, kv).unwrap();
    let want = mha.out.forward(&mut s, v).unwrap();
    let (y, want) = (s.value(y), s.value(want));
    for (a, b) in y.data().iter().zip(want.data()) {
        assert_close(*a, *b, 1e-12);
    }
}

#[test]
fn attention_rejects_indivisible_heads() {
    let mut store = ParamStore::<f64>::new();
    assert!(MultiHeadAttention::new(&mut store, &mut RngStream::new(0), "m", 6, 4, 0.0).is_err());
}

#[test]
fn soft_assign_scalar_case() {
    let g = Graph::inference();
    let c = g.input(t(&[2], &[0.0, 1.0]));
    let d = g.input(t(&[1, 1, 1, 2], &[0.0, 0.5]));
    let a = g.value(g.soft_assign(d, c, 0.1).unwrap());
    let want = 1.0 / (1.0 + (-10.0f64).exp());
    assert_close(a.data()[0], want, TOL);
    assert_close(a.data()[0], 0.9999546, 1e-7);
    assert_close(a.data()[1], 0.5, TOL);
    assert_close(a.data()[3], 0.5, TOL);
}

#[test]
fn cluster_stats_of_coloured_constant() {
    let g = Graph::inference();
    let img = g.input(Tensor::from_fn(&[1, 3, 2, 2], |i| [0.2, 0.4, 0.6][i / 4]));
    let a = g.input(Tensor::from_fn(&[1, 2, 2, 2], |i| if i < 4 { 0.3 } else { 0.7 }));
    let (m, x) = g.cluster_stats(img, a, &FlashParams::default()).unwrap();
    for v in g.value(m).data() {
        assert_close(*v, 0.4, TOL);
    }
    for v in g.value(x).data() {
        assert_close(*v, 0.6, TOL);
    }
}

#[test]
fn zero_mass_cluster_has_zero_stats() {
    let g = Graph::inference();
    let img = g.input(Tensor::full(&[1, 3, 2, 2], 0.8));
    let a = g.input(Tensor::from_fn(&[1, 2, 2, 2], |i| if i < 4 { 1.0 } else { 0.0 }));
    let (m, x) = g.cluster_stats(img, a, &FlashParams::default()).unwrap();
    assert_eq!(g.value(m).data()[1], 0.0);
    assert_eq!(g.value(x).data()[1], 0.0);
}

#[test]
fn flash_intensity_substitutions() {
    let g = Graph::inference();
    let p = FlashParams::default();
    let mean = g.input(t(&[1, 2], &[0.0, 1.0]));
    let max = g.input(t(&[1, 2], &[0.0, 1.0]));
    let phi = g.value(g.flash_intensity(mean, max, &p, None).unwrap());
    assert_close(phi.data()[0], 1.5, TOL);
    assert_close(phi.data()[1], 0.3, TOL);
}

#[test]
fn one_hot_flash_on_black_saturates_to_white() {
    let g = Graph::inference();
    let img = g.input(Tensor::zeros(&[1, 3, 2, 2]));
    let a = g.input(Tensor::from_fn(&[1, 2, 2, 2], |i| if i < 4 { 1.0 } else { 0.0 }));
    let phi = g.input(t(&[1, 2], &[1.5, 0.2]));
    let out = g.value(g.apply_flash(img, phi, a).unwrap());
    assert!(out.data().iter().all(|&v| v == 1.0));
}

#[test]
fn zero_flash_is_identity() {
    let g = Graph::inference();
    let x = Tensor::from_fn(&[1, 3, 2, 2], |i| i as f64 / 12.0);
    let img = g.input(x.clone());
    let a = g.input(Tensor::full(&[1, 2, 2, 2], 0.5));
    let phi = g.input(Tensor::zeros(&[1, 2]));
    assert!(g.value(g.apply_flash(img, phi, a).unwrap()).bit_eq(&x));
}

#[test]
fn ssim_constant_pair_closed_form() {
    let x = Tensor::<f64>::zeros(&[3, 8, 8]);
    let y = Tensor::<f64>::full(&[3, 8, 8], 1.0);
    let c1 = 0.01f64 * 0.01;
    assert_close(ssim(&x, &y).unwrap(), c1 / (1.0 + c1), TOL);
    assert_close(ssim(&x, &y).unwrap(), 9.999e-5, 1e-8);
    let g = Graph::inference();
    let l = g.value(ssim_loss(&g, g.input(x.reshape(&[1, 3, 8, 8]).unwrap()), g.input(y.reshape(&[1, 3, 8, 8]).unwrap())).unwrap());
    assert_close(l.item(), 1.0 - c1 / (1.0 + c1), TOL);
}

#[test]
fn ssim_window_and_constants() {
    let k = SsimConstants::<f64>::default();
    assert_eq!(k.window.shape(), &[11, 11]);
    assert_close(k.window.data().iter().sum(), 1.0, 1e-7);
    assert_eq!((k.c1, k.c2), (1e-4, 9e-4));
}

#[test]
fn lab_reference_points() {
    let lab = |v: f64| rgb_to_lab(&Tensor::full(&[3, 1, 1], v)).unwrap().into_vec();
    let white = lab(1.0);
    assert_close(white[0], 100.0, 1e-3);
    assert_close(white[1], 0.0, 1e-3);
    assert_close(white[2], 0.0, 1e-3);
    assert_eq!(lab(0.0), vec![0.0, 0.0, 0.0]);
    let gray = lab(0.5);
    assert_close(gray[0], 53.39, 1e-2);
    assert_close(gray[1], 0.0, 1e-3);
    assert_close(gray[2], 0.0, 1e-3);
}

#[test]
fn lab_rejects_out_of_range() {
    assert!(rgb_to_lab(&Tensor::<f64>::full(&[3, 1, 1], 1.2)).is_err());
}

#[test]
fn color_loss_black_vs_white() {
    let g = Graph::inference();
    let x = g.input(Tensor::<f64>::zeros(&[1, 3, 4, 4]));
    let y = g.input(Tensor::<f64>::full(&[1, 3, 4, 4], 1.0));
    assert_close(g.value(color_loss(&g, x, y).unwrap()).item(), 100.0 / 3.0, 1e-3);
}

#[test]
fn sobel_constant_and_step() {
    let eps_root = EDGE_EPS.sqrt();
    let flat = sobel_grad_mag(&Tensor::<f64>::full(&[1, 5, 5], 0.3)).unwrap();
    assert!(flat.data().iter().all(|&v| (v - eps_root).abs() < 1e-12));
    let step = Tensor::from_fn(&[1, 5, 6], |i| if i % 6 >= 3 { 1.0 } else { 0.0 });
    let m = sobel_grad_mag(&step).unwrap();
    for y in 1..4 {
        assert_close(m.data()[y * 6 + 2], (16.0 + EDGE_EPS).sqrt(), 1e-12);
        assert_close(m.data()[y * 6 + 3], (16.0 + EDGE_EPS).sqrt(), 1e-12);
        assert_close(m.data()[y * 6], eps_root, 1e-12);
    }
}

#[test]
fn edge_loss_between_constants_is_zero() {
    let g = Graph::inference();
    let x = g.input(Tensor::<f64>::full(&[1, 3, 5, 5], 0.2));
    let y = g.input(Tensor::<f64>::full(&[1, 3, 5, 5], 0.9));
    assert_eq!(g.value(edge_loss(&g, x, y).unwrap()).item(), 0.0);
}

#[test]
fn psnr_twenty_db_and_mae() {
    let x = Tensor::<f64>::zeros(&[3, 4, 4]);
    let y = Tensor::<f64>::full(&[3, 4, 4], 0.1);
    assert_close(psnr(&x, &y).unwrap(), 20.0, TOL);
    let a = Tensor::<f64>::full(&[3, 4, 4], 0.5);
    let b = Tensor::<f64>::full(&[3, 4, 4], 0.25);
    assert_close(mae(&a, &b).unwrap(), 0.25, TOL);
    assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    assert_eq!(mae(&a, &a).unwrap(), 0.0);
}

#[test]
fn cosine_schedule_points() {
    assert_close(cosine_lr(0, 100, 1e-4, 1e-6).unwrap(), 1e-4, 1e-15);
    assert_close(cosine_lr(100, 100, 1e-4, 1e-6).unwrap(), 1e-6, 1e-15);
    assert_close(cosine_lr(50, 100, 1e-4, 1e-6).unwrap(), 5.05e-5, 1e-15);
    assert!(cosine_lr(101, 100, 1e-4, 1e-6).is_err());
}

#[test]
fn adamw_first_step_and_decay() {
    let cfg = AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() };
    let (mut p, mut m, mut v) = ([1.0f64], [0.0], [0.0]);
    adamw_step(&mut p, &[1.0], &mut m, &mut v, 1, 0.1, &cfg);
    assert_close(p[0], 0.9, 1e-7);

    let (mut p, mut m, mut v) = ([2.0f64], [0.0], [0.0]);
    adamw_step(&mut p, &[0.0], &mut m, &mut v, 1, 0.1, &cfg);
    assert_eq!(p[0], 2.0);

    let wd = AdamWConfig { weight_decay: 0.5, ..AdamWConfig::default() };
    let (mut p, mut m, mut v) = ([2.0f64], [0.0], [0.0]);
    adamw_step(&mut p, &[0.0], &mut m, &mut v, 1, 0.1, &wd);
    assert_close(p[0], 2.0 - 0.1 * 0.5 * 2.0, 1e-15);
}
