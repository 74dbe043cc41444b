//! Procedural paired dataset: small indoor-like scenes with a known depth
//! map, rendered once well lit and once darkened.

use std::path::Path;

use lumen_core::imaging::{DepthMap, ImageRgb};
use lumen_core::{RngStream, Tensor};

use crate::dataset::{Split, ORIENTATION_FILE};
use crate::error::{Error, Result};
use crate::io::{save_depth, save_image};

#[derive(Clone, Debug)]
pub struct FixtureSpec {
    pub height: usize,
    pub width: usize,
    pub train: usize,
    pub test: usize,
    /// `low = gain * high^gamma + noise`.
    pub gain: f64,
    pub gamma: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec { height: 64, width: 64, train: 8, test: 4, gain: 0.35, gamma: 1.2, noise: 0.01, seed: 2024 }
    }
}

struct Object {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    round: bool,
    depth: f64,
    color: [f64; 3],
    stripes: f64,
}

/// One scene: `(high, depth)`, depth growing with distance.
pub fn render_scene(rng: &mut RngStream, h: usize, w: usize) -> (ImageRgb<f32>, DepthMap<f32>) {
    let mut u = |lo: f64, hi: f64| rng.uniform_range::<f64>(lo, hi);
    let horizon = u(0.35, 0.6);
    let wall = [u(0.4, 0.9), u(0.4, 0.9), u(0.4, 0.9)];
    let floor = [u(0.2, 0.7), u(0.2, 0.7), u(0.2, 0.7)];
    let light = (u(0.0, 1.0), u(0.0, 0.5));
    let checker = u(4.0, 10.0);
    let n_obj = 2 + (u(0.0, 3.0) as usize);
    let objects: Vec<Object> = (0..n_obj)
        .map(|_| Object {
            cx: u(0.1, 0.9),
            cy: u(0.3, 0.9),
            rx: u(0.08, 0.25),
            ry: u(0.08, 0.25),
            round: u(0.0, 1.0) < 0.5,
            depth: u(0.05, 0.5),
            color: [u(0.1, 1.0), u(0.1, 1.0), u(0.1, 1.0)],
            stripes: if u(0.0, 1.0) < 0.5 { u(10.0, 30.0) } else { 0.0 },
        })
        .collect();
    let mut rgb = vec![0.0f32; 3 * h * w];
    let mut depth = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let (fy, fx) = ((y as f64 + 0.5) / h as f64, (x as f64 + 0.5) / w as f64);
            let (mut d, mut albedo) = if fy < horizon {
                (1.0, wall)
            } else {
                let t = (fy - horizon) / (1.0 - horizon);
                let tile = ((fx * checker).floor() + (t * checker).floor()) as i64 % 2 == 0;
                let f = if tile { 1.0 } else { 0.6 };
                (1.0 - 0.9 * t, floor.map(|c| c * f))
            };
            for o in &objects {
                let (dx, dy) = ((fx - o.cx) / o.rx, (fy - o.cy) / o.ry);
                let inside = if o.round { dx * dx + dy * dy <= 1.0 } else { dx.abs() <= 1.0 && dy.abs() <= 1.0 };
                if inside && o.depth < d {
                    d = o.depth;
                    let s = if o.stripes > 0.0 { 0.75 + 0.25 * (fx * o.stripes).sin() } else { 1.0 };
                    albedo = o.color.map(|c| c * s);
                }
            }
            let (lx, ly) = (fx - light.0, fy - light.1);
            let shade = 0.55 + 0.45 / (1.0 + 4.0 * (lx * lx + ly * ly)) - 0.15 * d;
            for c in 0..3 {
                rgb[c * h * w + y * w + x] = (albedo[c] * shade).clamp(0.0, 1.0) as f32;
            }
            depth[y * w + x] = d as f32;
        }
    }
    let img = ImageRgb::new(Tensor::new(&[3, h, w], rgb).expect("shape")).expect("in range");
    let dm = DepthMap::new(Tensor::new(&[1, h, w], depth).expect("shape")).expect("in range");
    (img, dm)
}

/// Darkened copy of `high`.
pub fn darken(rng: &mut RngStream, high: &ImageRgb<f32>, spec: &FixtureSpec) -> ImageRgb<f32> {
    let src = high.tensor();
    let t = Tensor::from_fn(src.shape(), |i| {
        let n = spec.noise * rng.normal::<f64>();
        (spec.gain * (src.data()[i] as f64).powf(spec.gamma) + n).clamp(0.0, 1.0) as f32
    });
    ImageRgb::new(t).expect("clamped")
}

/// Writes `<root>/{train,test}/{low,high,depth}/NNN.png`.
pub fn write_fixture(root: &Path, spec: &FixtureSpec) -> Result<()> {
    let mut rng = RngStream::new(spec.seed);
    let mut index = 0;
    for (split, n) in [(Split::Train, spec.train), (Split::Test, spec.test)] {
        let base = root.join(split.dir());
        for _ in 0..n {
            let (high, depth) = render_scene(&mut rng, spec.height, spec.width);
            let low = darken(&mut rng, &high, spec);
            let name = format!("{index:03}.png");
            save_image(&high, &base.join("high").join(&name))?;
            save_image(&low, &base.join("low").join(&name))?;
            save_depth(&depth, &base.join("depth").join(&name))?;
            index += 1;
        }
        if n > 0 {
            let marker = base.join("depth").join(ORIENTATION_FILE);
            std::fs::write(&marker, "depth\n").map_err(|e| Error::io(&marker, e))?;
        }
    }
    Ok(())
}
