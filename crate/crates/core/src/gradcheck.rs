//! Central finite-difference verification of analytic gradients.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::nn::Session;
use crate::{Mode, ParamId, ParamKind, ParamStore, Result, RngStream, Var};

#[derive(Clone, Debug)]
pub struct GradcheckConfig {
    /// Finite-difference step.
    pub h: f64,
    /// Relative tolerance.
    pub tol: f64,
    /// Check at most this many entries per parameter (evenly strided).
    pub max_entries: Option<usize>,
    pub mode: Mode,
    /// Seed of the stream handed to every evaluation.
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig { h: 1e-4, tol: 1e-3, max_entries: None, mode: Mode::Eval, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    /// Entries whose stencil `x +- h` switched a piecewise operation to
    /// another branch; the central difference is meaningless there.
    pub skipped: usize,
    pub max_rel_err: f64,
    /// Set when the function was not finite at a perturbed point.
    pub failure: Option<String>,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub label: String,
    pub params: Vec<ParamCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the gradient of the scalar built by `f` against central
/// differences for every trainable parameter whose name is in `names`
/// (all trainable parameters when `names` is empty). Entries whose
/// perturbed evaluations take a different branch of any piecewise
/// operation than the base point are skipped and counted.
pub fn gradcheck<F>(
    label: &str,
    f: F,
    params: &ParamStore<f64>,
    names: &[&str],
    cfg: &GradcheckConfig,
) -> Result<GradcheckReport>
where
    F: Fn(&mut Session<'_, f64>) -> Result<Var>,
{
    let selected: Vec<ParamId> = if names.is_empty() {
        params.iter().filter(|(_, p)| p.kind == ParamKind::Trainable).map(|(id, _)| id).collect()
    } else {
        names
            .iter()
            .map(|n| params.id(n).ok_or_else(|| crate::Error::UnknownParameter(n.to_string())))
            .collect::<Result<_>>()?
    };

    let mut s = Session::new(params, cfg.mode, RngStream::new(cfg.seed));
    s.graph.track_branches();
    let loss = f(&mut s)?;
    let base_sig = s.graph.branch_signature();
    let grads = s.graph.backward(loss)?;
    let result = s.finish(Some(&grads));
    let analytic_of = |id: ParamId| -> Vec<f64> {
        result
            .param_grads
            .iter()
            .find(|(pid, _)| *pid == id)
            .map(|(_, g)| g.clone())
            .unwrap_or_else(|| alloc::vec![0.0; params.value(id).numel()])
    };

    let eval = |store: &ParamStore<f64>| -> Result<(f64, bool)> {
        let mut s = Session::inference(store, cfg.mode, RngStream::new(cfg.seed));
        s.graph.track_branches();
        let v = f(&mut s)?;
        Ok((s.value(v).item(), s.graph.branch_signature() == base_sig))
    };

    let mut work = params.clone();
    let mut out = Vec::with_capacity(selected.len());
    for id in selected {
        let analytic = analytic_of(id);
        let base = params.value(id).clone();
        let n = base.numel();
        let stride = match cfg.max_entries {
            Some(m) if m > 0 && m < n => n.div_ceil(m),
            _ => 1,
        };
        let mut check = ParamCheck {
            name: params.get(id).name.clone(),
            checked: 0,
            skipped: 0,
            max_rel_err: 0.0,
            failure: None,
            passed: true,
        };
        for i in (0..n).step_by(stride) {
            let mut plus = base.data().to_vec();
            plus[i] += cfg.h;
            work.set(id, crate::Tensor::new(base.shape(), plus)?)?;
            let (fp, same_p) = eval(&work)?;
            let mut minus = base.data().to_vec();
            minus[i] -= cfg.h;
            work.set(id, crate::Tensor::new(base.shape(), minus)?)?;
            let (fm, same_m) = eval(&work)?;
            if !(fp.is_finite() && fm.is_finite()) {
                check.failure = Some(alloc::format!("non-finite function value at entry {i}"));
                check.passed = false;
                break;
            }
            if !(same_p && same_m) {
                check.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * cfg.h);
            let err = relative_error(analytic[i], numeric);
            check.max_rel_err = check.max_rel_err.max(err);
            check.checked += 1;
        }
        work.set(id, base)?;
        if check.checked == 0 && check.skipped > 0 && check.failure.is_none() {
            check.failure = Some("every sampled entry straddles a non-differentiable point".into());
            check.passed = false;
        }
        check.passed &= check.max_rel_err <= cfg.tol;
        out.push(check);
    }
    Ok(GradcheckReport { label: label.to_string(), params: out })
}

fn random_tensor(rng: &mut RngStream, shape: &[usize], lo: f64, hi: f64) -> crate::Tensor<f64> {
    crate::Tensor::from_fn(shape, |_| rng.uniform_range(lo, hi))
}

/// `sum(v * R)` for a fixed random `R`, so every output entry gets a
/// distinct upstream gradient.
fn probe(s: &Session<'_, f64>, v: Var, seed: u64) -> Result<Var> {
    let shape = s.graph.shape(v);
    let r = random_tensor(&mut RngStream::new(seed), &shape, -1.0, 1.0);
    Ok(s.graph.sum(s.graph.mul_const(v, &r)?))
}

type CaseFn = alloc::boxed::Box<dyn Fn(&mut Session<'_, f64>) -> Result<Var>>;

struct Case {
    label: &'static str,
    store: ParamStore<f64>,
    names: Vec<&'static str>,
    mode: Mode,
    f: CaseFn,
}

fn add_input(store: &mut ParamStore<f64>, rng: &mut RngStream, name: &str, shape: &[usize], lo: f64, hi: f64) -> Result<ParamId> {
    store.add(name, random_tensor(rng, shape, lo, hi), ParamKind::Trainable)
}

/// Replaces every all-zero trainable tensor with small random values so no
/// gradient path is trivially closed.
pub fn randomize_zero_params<T: crate::Real>(store: &mut ParamStore<T>, rng: &mut RngStream, std: f64) {
    for p in store.iter_mut() {
        if p.kind == ParamKind::Trainable && p.value.data().iter().all(|&v| v == T::zero()) && p.value.rank() > 1 {
            let n = p.value.numel();
            p.value = crate::Tensor::new(p.value.shape(), rng.normal_vec(n, std)).expect("same shape");
        }
    }
}

fn op_cases(rng: &mut RngStream) -> Result<Vec<Case>> {
    use crate::ops::BatchNormMode;
    let mut cases = Vec::new();

    for (label, stride, pad) in [("conv2d", 1usize, 1usize), ("conv2d stride 2", 2, 1), ("conv2d 1x1", 1, 0)] {
        let mut st = ParamStore::new();
        let k = if pad == 0 { 1 } else { 3 };
        let x = add_input(&mut st, rng, "x", &[2, 3, 6, 5], -1.0, 1.0)?;
        let w = add_input(&mut st, rng, "w", &[4, 3, k, k], -0.5, 0.5)?;
        let b = add_input(&mut st, rng, "b", &[4], -0.5, 0.5)?;
        cases.push(Case {
            label,
            store: st,
            names: Vec::new(),
            mode: Mode::Eval,
            f: alloc::boxed::Box::new(move |s| {
                let (x, w, b) = (s.param(x), s.param(w), s.param(b));
                let y = s.graph.conv2d(x, w, Some(b), stride, pad)?;
                probe(s, y, 11)
            }),
        });
    }

    let mut st = ParamStore::new();
    let x = add_input(&mut st, rng, "x", &[2, 2, 6, 6], -1.0, 1.0)?;
    cases.push(Case {
        label: "max_pool2d",
        store: st,
        names: Vec::new(),
        mode: Mode::Eval,
        f: alloc::boxed::Box::new(move |s| {
            let x = s.param(x);
            let y = s.graph.max_pool2d(x)?;
            probe(s, y, 12)
        }),
    });

    for (label, h, w, p) in [("adaptive_avg_pool2d", 7usize, 5usize, 3usize), ("adaptive_avg_pool2d small", 4, 4, 8)] {
        let mut st = ParamStore::new();
        let x = add_input(&mut st, rng, "x", &[2, 2, h, w], -1.0, 1.0)?;
        cases.push(Case {
            label,
            store: st,
            names: Vec::new(),
            mode: Mode::Eval,
            f: alloc::boxed::Box::new(move |s| {
                let x = s.param(x);
                let y = s.graph.adaptive_avg_pool2d(x, p)?;
                probe(s, y, 13)
            }),
        });
    }

    for (label, h, w, h2, w2) in [("bilinear up", 3usize, 5usize, 7usize, 9usize), ("bilinear down", 8, 8, 3, 5)] {
        let mut st = ParamStore::new();
        let x = add_input(&mut st, rng, "x", &[1, 2, h, w], -1.0, 1.0)?;
        cases.push(Case {
            label,
            store: st,
            names: Vec::new(),
            mode: Mode::Eval,
            f: alloc::boxed::Box::new(move |s| {
                let x = s.param(x);
                let y = s.graph.bilinear_resize(x, h2, w2)?;
                probe(s, y, 14)
            }),
        });
    }

    let mut st = ParamStore::new();
    let x = add_input(&mut st, rng, "x", &[3, 4, 3, 3], -1.0, 1.0)?;
    let gm = add_input(&mut st, rng, "gamma", &[4], 0.5, 1.5)?;
    let bt = add_input(&mut st, rng, "beta", &[4], -0.5, 0.5)?;
    cases.push(Case {
        label: "batch_norm train",
        store: st,
        names: Vec::new(),
        mode: Mode::Eval,
        f: alloc::boxed::Box::new(move |s| {
            let (x, g, b) = (s.param(x), s.param(gm), s.param(bt));
            let (y, _) = s.graph.batch_norm(x, g, b, BatchNormMode::Train)?;
            probe(s, y, 15)
        }),
    });

    let mut st = ParamStore::new();
    let x = add_input(&mut st, rng, "x", &[2, 5, 6], -1.0, 1.0)?;
    let gm = add_input(&mut st, rng, "gamma", &[6], 0.5, 1.5)?;
    let bt = add_input(&mut st, rng, "beta", &[6], -0.5, 0.5)?;
    cases.push(Case {
        label: "layer_norm",
        store: st,
        names: Vec::new(),
        mode: Mode::Eval,
        f: alloc::boxed::Box::new(move |s| {
            let (x, g, b) = (s.param(x), s.param(gm), s.param(bt));
            let y = s.graph.layer_norm(x, g, b)?;
            probe(s, y, 16)
        }),
    });

    let mut st = ParamStore::new();
    let a = add_input(&mut st, rng, "a", &[2, 3, 4, 4], 0.2, 1.0)?;
    let b = add_input(&mut st, rng, "b", &[2, 3, 4, 4], 0.2, 1.0)?;
    cases.push(Case {
        label: "elementwise",
        store: st,
        names: Vec::new(),
        mode: Mode::Eval,
        f: alloc::boxed::Box::new(move |s| {
            let (a, b) = (s.param(a), s.param(b));
            let g = &s.graph;
            let t1 = g.mul(g.sigmoid(a), g.gelu(g.add_scalar(b, -0.6)))?;
            let t2 = g.div(g.sqrt(a), g.add_scalar(g.square(b), 0.5))?;
            let t3 = g.leaky_relu(g.sub(a, b)?, 0.2);
            let t4 = g.abs(g.add_scalar(a, 0.1));
            let t5 = g.relu(g.scale(b, 2.0));
            let y = g.add(g.add(g.add(t1, t2)?, g.add(t3, t4)?)?, t5)?;
            let y = g.softmax(y, 1)?;
            probe(s, y, 17)
        }),
    });

    let mut st = ParamStore::new();
    let x = add_input(&mut st, rng, "x", &[2, 3, 4, 5], 0.0, 1.0)?;
    let f = add_input(&mut st, rng, "f", &[2, 1, 4, 5], -1.0, 1.0)?;
    cases.push(Case {
        label: "structure",
        store: st,
        names: Vec::new(),
        mode: Mode::Eval,
        f: alloc::boxed::Box::new(move |s| {
            let (x, f) = (s.param(x), s.param(f));
            let g = &s.graph;
            let m = g.channel_mean(x)?;
            let mx = g.channel_max(x)?;
            let cat = g.concat_channels(&[x, m, mx, f])?;
            let tok = g.to_tokens(cat)?;
            let back = g.from_tokens(tok, 4, 5)?;
            let y = g.add_channel_broadcast(back, f)?;
            let y = g.reshape(y, &[2, 6 * 20])?;
            let y = g.mean_per_item(y);
            let l = g.l1(x, g.add_channel_broadcast(x, f)?)?;
            let y = g.add(g.sum(y), l)?;
            Ok(g.scale(y, 3.0))
        }),
    });

    let mut st = ParamStore::new();
    let x = add_input(&mut st, rng, "x", &[1, 2, 6, 7], -1.0, 1.0)?;
    let kernel = random_tensor(rng, &[3, 3], -1.0, 1.0);
    cases.push(Case {
        label: "filter2d",
        store: st,
        names: Vec::new(),
        mode: Mode::Eval,
        f: alloc::boxed::Box::new(move |s| {
            let x = s.param(x);
            let y = s.graph.filter2d(x, &kernel)?;
            probe(s, y, 18)
        }),
    });

    let mut st = ParamStore::new();
    let mha = crate::nn::MultiHeadAttention::new(&mut st, rng, "mha", 8, 2, 0.1)?;
    let q = add_input(&mut st, rng, "q", &[2, 5, 8], -1.0, 1.0)?;
    let kv = add_input(&mut st, rng, "kv", &[2, 7, 8], -1.0, 1.0)?;
    cases.push(Case {
        label: "multi_head_attention",
        store: st,
        names: Vec::new(),
        mode: Mode::Eval,
        f: alloc::boxed::Box::new(move |s| {
            let (q, kv) = (s.param(q), s.param(kv));
            let y = mha.forward(s, q, kv, kv)?;
            probe(s, y, 19)
        }),
    });

    let mut st = ParamStore::new();
    let x = add_input(&mut st, rng, "x", &[1, 3, 8, 8], 0.05, 0.95)?;
    let y = add_input(&mut st, rng, "y", &[1, 3, 8, 8], 0.05, 0.95)?;
    cases.push(Case {
        label: "imaging ops",
        store: st,
        names: Vec::new(),
        mode: Mode::Eval,
        f: alloc::boxed::Box::new(move |s| {
            let (x, y) = (s.param(x), s.param(y));
            let g = &s.graph;
            let lab = probe(s, g.rgb_to_lab(x)?, 20)?;
            let sob = probe(s, g.sobel_grad_mag(x)?, 21)?;
            let ss = g.scale(g.ssim(x, y)?, 50.0);
            let t = g.add(g.scale(lab, 0.01), sob)?;
            g.add(t, ss)
        }),
    });

    Ok(cases)
}

/// Flash parameters small enough that the flashed image stays below 1.
pub fn unsaturated_flash() -> crate::flash::FlashParams {
    crate::flash::FlashParams { alpha: 0.3, beta: 0.1, ..Default::default() }
}

fn flash_cases(rng: &mut RngStream) -> Result<Vec<Case>> {
    let mut cases = Vec::new();
    let mut st = ParamStore::new();
    let d = add_input(&mut st, rng, "depth", &[2, 1, 8, 8], 0.02, 0.98)?;
    let c = st.add("centers", crate::flash::initial_centers(4), ParamKind::Trainable)?;
    // Brightness tied to depth gives each cluster a different intensity.
    let dv = st.value(d).clone();
    let image = crate::Tensor::from_fn(&[2, 3, 8, 8], |i| {
        let p = (i / 192) * 64 + i % 64;
        0.3 * dv.data()[p] * dv.data()[p] + rng.uniform_range::<f64>(0.0, 0.02)
    });
    cases.push(Case {
        label: "soft_assign -> apply_flash",
        store: st,
        names: Vec::new(),
        mode: Mode::Eval,
        f: alloc::boxed::Box::new(move |s| {
            let (d, c) = (s.param(d), s.param(c));
            let x = s.input(image.clone());
            let out = crate::flash::simulate(s, x, d, c, 0.1, &unsaturated_flash())?;
            // The plain mean of the flashed image does not depend on the
            // assignment (its rows sum to one), so weight the pixels.
            probe(s, out.image, 31)
        }),
    });

    let mut st = ParamStore::new();
    let enc = crate::flash::FlashEncoder::new(&mut st, rng, 2)?;
    let img = add_input(&mut st, rng, "flash_image", &[1, 3, 16, 16], 0.0, 1.0)?;
    cases.push(Case {
        label: "flash encoder",
        store: st,
        names: alloc::vec!["flash_image"],
        mode: Mode::Eval,
        f: alloc::boxed::Box::new(move |s| {
            let x = s.param(img);
            let feats = enc.forward(s, x)?;
            let mut total = probe(s, feats[0], 30)?;
            for (i, &f) in feats.iter().enumerate().skip(1) {
                let p = probe(s, f, 30 + i as u64)?;
                total = s.graph.add(total, p)?;
            }
            Ok(total)
        }),
    });
    Ok(cases)
}

fn fusion_case(rng: &mut RngStream) -> Result<Case> {
    let mut st = ParamStore::new();
    let cfg = crate::fusion::EfbConfig { heads: 2, ..Default::default() };
    let efb = crate::fusion::Efb::new(&mut st, rng, "efb", 8, 8, cfg)?;
    randomize_zero_params(&mut st, rng, 0.1);
    let fm = add_input(&mut st, rng, "f_m", &[1, 8, 16, 16], -1.0, 1.0)?;
    let fd = add_input(&mut st, rng, "f_d", &[1, 4, 16, 16], -1.0, 1.0)?;
    let ff = add_input(&mut st, rng, "f_f", &[1, 4, 16, 16], -1.0, 1.0)?;
    Ok(Case {
        label: "fusion block",
        store: st,
        names: alloc::vec!["f_m", "f_d", "f_f"],
        mode: Mode::Eval,
        f: alloc::boxed::Box::new(move |s| {
            let (a, b, c) = (s.param(fm), s.param(fd), s.param(ff));
            let y = efb.forward(s, a, b, c)?;
            Ok(s.graph.scale(s.graph.mean(y), 1000.0))
        }),
    })
}

fn loss_cases(rng: &mut RngStream) -> Result<Vec<Case>> {
    use crate::losses;
    let mut cases = Vec::new();
    let target = random_tensor(rng, &[1, 3, 8, 8], 0.1, 0.9);
    let dtarget = random_tensor(rng, &[1, 1, 8, 8], 0.1, 0.9);
    // Offsets of at least 0.05 keep every L1 term away from its kink.
    let offset = |rng: &mut RngStream, t: &crate::Tensor<f64>| {
        crate::Tensor::from_fn(t.shape(), |i| {
            let (v, d) = (t.data()[i], rng.uniform_range::<f64>(0.05, 0.1));
            if v > 0.5 { v - d } else { v + d }
        })
    };
    let enh0 = offset(rng, &target);
    let d0 = offset(rng, &dtarget);

    type LossFn = fn(&crate::Graph<f64>, Var, Var) -> Result<Var>;
    let simple: [(&'static str, LossFn); 5] = [
        ("recon loss", losses::recon_loss),
        ("ssim loss", losses::ssim_loss),
        ("color loss", losses::color_loss),
        ("edge loss", losses::edge_loss),
        ("depth loss", losses::depth_loss),
    ];
    for (label, lf) in simple {
        let depth = label == "depth loss";
        let mut st = ParamStore::new();
        let x = st.add("i_enh", if depth { d0.clone() } else { enh0.clone() }, ParamKind::Trainable)?;
        let t = if depth { dtarget.clone() } else { target.clone() };
        cases.push(Case {
            label,
            store: st,
            names: Vec::new(),
            mode: Mode::Eval,
            f: alloc::boxed::Box::new(move |s| {
                let x = s.param(x);
                let t = s.input(t.clone());
                let l = lf(&s.graph, x, t)?;
                Ok(s.graph.scale(l, 100.0))
            }),
        });
    }

    let ext = losses::FrozenRandom::<f64>::with_widths(5, &[4, 4, 4, 4, 4]);
    let mut st = ParamStore::new();
    let x = st.add("i_enh", enh0.clone(), ParamKind::Trainable)?;
    let t = target.clone();
    let e = ext.clone();
    cases.push(Case {
        label: "perceptual loss",
        store: st,
        names: Vec::new(),
        mode: Mode::Eval,
        f: alloc::boxed::Box::new(move |s| {
            let x = s.param(x);
            let t = s.input(t.clone());
            let l = losses::perceptual_loss(&s.graph, x, t, &e)?;
            Ok(s.graph.scale(l, 100.0))
        }),
    });

    let mut st = ParamStore::new();
    let x = st.add("i_enh", enh0, ParamKind::Trainable)?;
    let dp = st.add("d_pred", d0, ParamKind::Trainable)?;
    cases.push(Case {
        label: "total loss",
        store: st,
        names: Vec::new(),
        mode: Mode::Eval,
        f: alloc::boxed::Box::new(move |s| {
            let inputs = losses::LossInputs {
                i_enh: s.param(x),
                i_high: s.input(target.clone()),
                d_pred: s.param(dp),
                d_pseudo: s.input(dtarget.clone()),
            };
            let (v, _) = losses::total_loss(&s.graph, &inputs, &losses::LossWeights::default(), &ext)?;
            Ok(s.graph.scale(v.total, 10.0))
        }),
    });
    Ok(cases)
}

/// Reduced end-to-end model: main width 8, depth width 8, two clusters.
pub fn reduced_model_config() -> crate::enhancer::LumenConfig {
    crate::enhancer::LumenConfig {
        main_base: 8,
        depth_base: 8,
        clusters: 2,
        flash: unsaturated_flash(),
        ..Default::default()
    }
}

/// True when moving every entry of the named parameters by `+-h` along a
/// random sign pattern leaves every piecewise operation on its branch.
pub fn kink_clearance<F>(f: &F, params: &ParamStore<f64>, names: &[&str], h: f64, seed: u64) -> Result<bool>
where
    F: Fn(&mut Session<'_, f64>) -> Result<Var>,
{
    let signature = |store: &ParamStore<f64>| -> Result<Option<u64>> {
        let mut s = Session::inference(store, Mode::Eval, RngStream::new(0));
        s.graph.track_branches();
        f(&mut s)?;
        Ok(s.graph.branch_signature())
    };
    let base = signature(params)?;
    let mut rng = RngStream::new(seed);
    for dir in [1.0, -1.0] {
        let mut work = params.clone();
        for name in names {
            let id = work.id(name).ok_or_else(|| crate::Error::UnknownParameter(name.to_string()))?;
            let v = work.value(id).clone();
            let moved = crate::Tensor::from_fn(v.shape(), |i| {
                let sign = if rng.uniform::<f64>() < 0.5 { -1.0 } else { 1.0 };
                v.data()[i] + dir * sign * h
            });
            work.set(id, moved)?;
        }
        if signature(&work)? != base {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Input with smooth structure (a lit region, a shadowed region, texture).
fn structured_image(rng: &mut RngStream, h: usize, w: usize, lo: f64, hi: f64) -> crate::Tensor<f64> {
    crate::Tensor::from_fn(&[1, 3, h, w], |i| {
        let (c, y, x) = (i / (h * w), (i / w) % h, i % w);
        let ramp = (x + y) as f64 / (h + w - 2) as f64;
        let blob = if (x as f64 - 0.7 * w as f64).abs() + (y as f64 - 0.3 * h as f64).abs() < 0.3 * w as f64 { 0.5 } else { 0.0 };
        let v = 0.5 * ramp + blob + 0.05 * c as f64 + rng.uniform_range::<f64>(0.0, 0.1);
        lo + (hi - lo) * v.min(1.0)
    })
}

fn model_case(rng: &mut RngStream) -> Result<Case> {
    const NAMES: [&str; 2] = ["main.enc1.conv1.weight", "centers"];
    for attempt in 0..32u64 {
        let mut st = ParamStore::new();
        let model = crate::enhancer::LumenModel::new(&mut st, rng, reduced_model_config())?;
        randomize_zero_params(&mut st, rng, 0.2);
        // Spread the initial depth prediction over the cluster range.
        let head = st.id("depth.head.weight").expect("depth head");
        let wide = st.value(head).map(|v| 8.0 * v);
        st.set(head, wide)?;
        let x = structured_image(rng, 16, 16, 0.05, 0.35);
        let target = crate::Tensor::from_fn(&[1, 3, 16, 16], |_| rng.uniform_range(0.6, 0.9));
        let f = move |s: &mut Session<'_, f64>| -> Result<Var> {
            let xi = s.input(x.clone());
            let out = model.forward(s, xi)?;
            let t = s.input(target.clone());
            let l = s.graph.l1(out.i_enh, t)?;
            Ok(s.graph.scale(l, 100.0))
        };
        if kink_clearance(&f, &st, &NAMES, 1e-4, attempt)? {
            return Ok(Case {
                label: "reduced model",
                store: st,
                names: NAMES.to_vec(),
                mode: Mode::Eval,
                f: alloc::boxed::Box::new(f),
            });
        }
    }
    Err(crate::Error::Precondition("no kink-free reduced model instance found".into()))
}

/// Every gradient check of the library: operators, the flash chain, the
/// fusion block, each loss term, and the reduced end-to-end model.
pub fn standard_suite(tol: f64) -> Result<Vec<GradcheckReport>> {
    let mut rng = RngStream::new(2024);
    let mut cases = op_cases(&mut rng)?;
    cases.extend(flash_cases(&mut rng)?);
    cases.push(fusion_case(&mut rng)?);
    cases.extend(loss_cases(&mut rng)?);
    cases.push(model_case(&mut rng)?);
    cases
        .into_iter()
        .map(|c| {
            let cfg = GradcheckConfig { tol, mode: c.mode, ..GradcheckConfig::default() };
            gradcheck(c.label, &c.f, &c.store, &c.names, &cfg)
        })
        .collect()
}
