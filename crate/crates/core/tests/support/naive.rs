//! Naive per-pixel reference implementations of every loss and metric,
//! written independently of the library kernels.

#![allow(dead_code)]

use lumen_core::imaging::{mae, psnr, rgb_to_lab, sobel_grad_mag, ssim};
use lumen_core::losses::{
    color_loss, depth_loss, edge_loss, evaluate_loss, perceptual_loss, recon_loss, ssim_loss, FrozenRandom,
    LossWeights,
};
use lumen_core::{Graph, Result, RngStream, Tensor, Var};

pub fn random_image(rng: &mut RngStream, c: usize, h: usize, w: usize) -> Tensor<f64> {
    Tensor::from_fn(&[1, c, h, w], |_| rng.uniform::<f64>())
}

pub fn pair(seed: u64, c: usize) -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = RngStream::new(seed);
    (random_image(&mut rng, c, 8, 8), random_image(&mut rng, c, 8, 8))
}

pub fn loss_value(f: fn(&Graph<f64>, Var, Var) -> Result<Var>, a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let g = Graph::inference();
    let (x, y) = (g.input(a.clone()), g.input(b.clone()));
    let v = f(&g, x, y).unwrap();
    g.value(v).item()
}

pub fn naive_l1(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).abs();
    }
    s / a.len() as f64
}

/// Plane accessor with replicate borders.
pub fn at(p: &[f64], h: usize, w: usize, y: isize, x: isize) -> f64 {
    let yy = y.clamp(0, h as isize - 1) as usize;
    let xx = x.clamp(0, w as isize - 1) as usize;
    p[yy * w + xx]
}

pub fn naive_ssim(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let s = a.shape();
    let (c, h, w) = (s[1], s[2], s[3]);
    let mut win = [[0.0; 11]; 11];
    let mut z = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5)).exp();
            z += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    for ch in 0..c {
        let pa = &a.data()[ch * h * w..(ch + 1) * h * w];
        let pb = &b.data()[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (i, row) in win.iter().enumerate() {
                    for (j, &wt) in row.iter().enumerate() {
                        let (yy, xx) = (y as isize + i as isize - 5, x as isize + j as isize - 5);
                        let (u, v) = (at(pa, h, w, yy, xx), at(pb, h, w, yy, xx));
                        let wt = wt / z;
                        mx += wt * u;
                        my += wt * v;
                        sxx += wt * u * u;
                        syy += wt * v * v;
                        sxy += wt * u * v;
                    }
                }
                let (vx, vy, cxy) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
    }
    total / (c * h * w) as f64
}

pub fn naive_lab(rgb: [f64; 3]) -> [f64; 3] {
    let m = [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ];
    let lin = rgb.map(|c| if c <= 0.04045 { c / 12.92 } else { ((c + 0.055) / 1.055).powf(2.4) });
    let f = |t: f64| {
        let d: f64 = 6.0 / 29.0;
        if t > d.powi(3) {
            t.cbrt()
        } else {
            t / (3.0 * d * d) + 4.0 / 29.0
        }
    };
    let mut fx = [0.0; 3];
    for r in 0..3 {
        let xyz = m[r][0] * lin[0] + m[r][1] * lin[1] + m[r][2] * lin[2];
        fx[r] = f(xyz / (m[r][0] + m[r][1] + m[r][2]));
    }
    [(116.0 * fx[1] - 16.0).clamp(0.0, 100.0), 500.0 * (fx[0] - fx[1]), 200.0 * (fx[1] - fx[2])]
}

pub fn naive_lab_image(t: &Tensor<f64>) -> Vec<f64> {
    let hw = t.shape()[2] * t.shape()[3];
    let d = t.data();
    let mut out = vec![0.0; 3 * hw];
    for p in 0..hw {
        let lab = naive_lab([d[p], d[hw + p], d[2 * hw + p]]);
        for c in 0..3 {
            out[c * hw + p] = lab[c];
        }
    }
    out
}

pub fn naive_sobel(t: &Tensor<f64>) -> Vec<f64> {
    let s = t.shape();
    let (c, h, w) = (s[1], s[2], s[3]);
    let sx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        let p = &t.data()[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let (mut gx, mut gy) = (0.0, 0.0);
                for i in 0..3 {
                    for j in 0..3 {
                        let v = at(p, h, w, y as isize + i as isize - 1, x as isize + j as isize - 1);
                        gx += sx[i][j] * v;
                        gy += sx[j][i] * v;
                    }
                }
                out[(ch * h + y) * w + x] = (gx * gx + gy * gy + 1e-6).sqrt();
            }
        }
    }
    out
}

/// Frozen-random stack evaluated with plain loops over the same kernels.
pub fn naive_features(ext: &FrozenRandom<f64>, image: &Tensor<f64>) -> Vec<(usize, usize, usize, Vec<f64>)> {
    let mean = [0.485, 0.456, 0.406];
    let std = [0.229, 0.224, 0.225];
    let (mut c, mut h, mut w) = (3, image.shape()[2], image.shape()[3]);
    let mut x: Vec<f64> = (0..c * h * w).map(|i| (image.data()[i] - mean[i / (h * w)]) / std[i / (h * w)]).collect();
    let mut out = Vec::new();
    for (stage, k) in ext.weights().iter().enumerate() {
        if stage > 0 && h >= 2 && w >= 2 {
            let (h2, w2) = (h / 2, w / 2);
            let mut p = vec![0.0; c * h2 * w2];
            for ch in 0..c {
                for y in 0..h2 {
                    for xx in 0..w2 {
                        let mut m = f64::NEG_INFINITY;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                m = m.max(x[(ch * h + 2 * y + dy) * w + 2 * xx + dx]);
                            }
                        }
                        p[(ch * h2 + y) * w2 + xx] = m;
                    }
                }
            }
            x = p;
            h = h2;
            w = w2;
        }
        let cout = k.shape()[0];
        let kd = k.data();
        let mut y = vec![0.0; cout * h * w];
        for o in 0..cout {
            for py in 0..h {
                for px in 0..w {
                    let mut acc = 0.0;
                    for i in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (sy, sx) = (py as isize + ky as isize - 1, px as isize + kx as isize - 1);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += kd[((o * c + i) * 3 + ky) * 3 + kx] * x[(i * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    y[(o * h + py) * w + px] = acc.max(0.0);
                }
            }
        }
        x = y;
        c = cout;
        out.push((c, h, w, x.clone()));
    }
    out
}

pub fn naive_perceptual(ext: &FrozenRandom<f64>, a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    naive_features(ext, a).iter().zip(naive_features(ext, b)).map(|(fa, fb)| naive_l1(&fa.3, &fb.3)).sum()
}

/// One library value next to its oracle.
pub struct Comparison {
    pub what: &'static str,
    pub library: f64,
    pub oracle: f64,
}

impl Comparison {
    pub fn error(&self) -> f64 {
        (self.library - self.oracle).abs()
    }
}

/// Every loss term, the weighted total and every metric on `instances`
/// seeded 8x8 image pairs.
pub fn comparisons(instances: u64) -> Vec<Comparison> {
    let mut out = Vec::new();
    let mut push = |what, library, oracle| out.push(Comparison { what, library, oracle });
    let ext = FrozenRandom::<f64>::new(11);
    let w = LossWeights::default();
    for seed in 0..instances {
        let (a, b) = pair(10_000 + seed, 3);
        let (d1, d2) = pair(20_000 + seed, 1);
        let (la, lb) = (naive_lab_image(&a), naive_lab_image(&b));
        let (sa, sb) = (naive_sobel(&a), naive_sobel(&b));
        let n = a.numel() as f64;
        let mse: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
        let oracle_ssim = naive_ssim(&a, &b);
        let oracle_perceptual = naive_perceptual(&ext, &a, &b);

        push("depth loss", loss_value(depth_loss, &d1, &d2), naive_l1(d1.data(), d2.data()));
        push("recon loss", loss_value(recon_loss, &a, &b), naive_l1(a.data(), b.data()));
        let g = Graph::inference();
        let (x, y) = (g.input(a.clone()), g.input(b.clone()));
        push("perceptual loss", g.value(perceptual_loss(&g, x, y, &ext).unwrap()).item(), oracle_perceptual);
        push("ssim loss", loss_value(ssim_loss, &a, &b), 1.0 - oracle_ssim);
        push("color loss", loss_value(color_loss, &a, &b), naive_l1(&la, &lb));
        push("edge loss", loss_value(edge_loss, &a, &b), naive_l1(&sa, &sb));
        let r = evaluate_loss(&a, &b, &d1, &d2, &w, &ext).unwrap();
        let total = w.depth * naive_l1(d1.data(), d2.data())
            + w.recon * naive_l1(a.data(), b.data())
            + w.perceptual * oracle_perceptual
            + w.ssim * (1.0 - oracle_ssim)
            + w.color * naive_l1(&la, &lb)
            + w.edge * naive_l1(&sa, &sb);
        push("total loss", r.total, total);
        push("psnr", psnr(&a, &b).unwrap(), 10.0 * (1.0 / mse).log10());
        push("ssim", ssim(&a, &b).unwrap(), oracle_ssim);
        push("mae", mae(&a, &b).unwrap(), naive_l1(a.data(), b.data()));
        let lab = rgb_to_lab(&a).unwrap();
        let worst = lab.data().iter().zip(&la).map(|(g, o)| (g - o).abs()).fold(0.0, f64::max);
        push("lab (max entry error)", worst, 0.0);
        let mag = sobel_grad_mag(&a).unwrap();
        let worst = mag.data().iter().zip(&sa).map(|(g, o)| (g - o).abs()).fold(0.0, f64::max);
        push("sobel (max entry error)", worst, 0.0);
    }
    out
}
