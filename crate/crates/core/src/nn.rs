//! Layers built from graph operators, and the [`Session`] that binds a
//! [`ParamStore`] into a graph for one forward pass.

use alloc::format;
use alloc::vec::Vec;

use crate::graph::AttentionCall;
use crate::ops::BatchNormMode;
use crate::{Gradients, Graph, Mode, ParamId, ParamKind, ParamStore, Real, Result, RngStream, Tensor, Var};

/// LeakyReLU slope used by every double-convolution block.
pub const LEAKY_SLOPE: f64 = 0.2;
/// Running-statistics momentum of batch normalization.
pub const BN_MOMENTUM: f64 = 0.1;

/// One forward pass: a graph, the parameters it reads, the mode and the
/// random stream consumed by dropout and flash noise.
pub struct Session<'p, T: Real> {
    pub graph: Graph<T>,
    params: &'p ParamStore<T>,
    bound: Vec<Option<Var>>,
    pub mode: Mode,
    pub rng: RngStream,
    updates: Vec<(ParamId, Tensor<T>)>,
}

/// What a finished session hands back to the parameter owner.
pub struct SessionResult<T> {
    pub param_grads: Vec<(ParamId, Vec<T>)>,
    pub buffer_updates: Vec<(ParamId, Tensor<T>)>,
    pub attention_log: Vec<AttentionCall>,
}

impl<T: Real> SessionResult<T> {
    /// Adds gradients into the store and writes buffer updates.
    pub fn apply(self, store: &mut ParamStore<T>) {
        for (id, g) in &self.param_grads {
            store.accumulate_grad(*id, g);
        }
        for (id, v) in self.buffer_updates {
            store.get_mut(id).value = v;
        }
    }
}

impl<'p, T: Real> Session<'p, T> {
    pub fn new(params: &'p ParamStore<T>, mode: Mode, rng: RngStream) -> Self {
        Self::with_graph(Graph::new(), params, mode, rng)
    }

    /// A session whose graph records nothing; for evaluation.
    pub fn inference(params: &'p ParamStore<T>, mode: Mode, rng: RngStream) -> Self {
        Self::with_graph(Graph::inference(), params, mode, rng)
    }

    fn with_graph(graph: Graph<T>, params: &'p ParamStore<T>, mode: Mode, rng: RngStream) -> Self {
        Session { graph, params, bound: alloc::vec![None; params.len()], mode, rng, updates: Vec::new() }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    /// Graph handle of a parameter, bound on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let p = self.params.get(id);
        let v = match p.kind {
            ParamKind::Trainable => self.graph.leaf(p.value.clone()),
            ParamKind::Buffer => self.graph.input(p.value.clone()),
        };
        self.bound[id.0] = Some(v);
        v
    }

    pub fn input(&self, t: Tensor<T>) -> Var {
        self.graph.input(t)
    }

    pub fn value(&self, x: Var) -> Tensor<T> {
        self.graph.value(x)
    }

    pub(crate) fn record_update(&mut self, id: ParamId, value: Tensor<T>) {
        self.updates.push((id, value));
    }

    /// Closes the session, pairing gradients (if any) with parameter ids.
    pub fn finish(self, grads: Option<&Gradients<T>>) -> SessionResult<T> {
        let mut param_grads = Vec::new();
        if let Some(grads) = grads {
            for (i, v) in self.bound.iter().enumerate() {
                if let Some(g) = v.and_then(|v| grads.get(v)) {
                    param_grads.push((ParamId(i), g.to_vec()));
                }
            }
        }
        let attention_log = self.graph.attention_log().clone();
        SessionResult { param_grads, buffer_updates: self.updates, attention_log }
    }
}

/// Weight initialization schemes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Normal with std `gain / sqrt(fan_in)`, gain tuned for LeakyReLU(0.2).
    KaimingLeaky,
    /// Normal with std `sqrt(2 / fan_in)`.
    KaimingRelu,
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    XavierUniform,
    Zero,
}

fn init_values<T: Real>(rng: &mut RngStream, init: Init, n: usize, fan_in: usize, fan_out: usize) -> Vec<T> {
    match init {
        Init::KaimingLeaky => {
            let gain = libm::sqrt(2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE));
            rng.normal_vec(n, gain / libm::sqrt(fan_in as f64))
        }
        Init::KaimingRelu => rng.normal_vec(n, libm::sqrt(2.0 / fan_in as f64)),
        Init::XavierUniform => {
            let a = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            (0..n).map(|_| rng.uniform_range(-a, a)).collect()
        }
        Init::Zero => alloc::vec![T::zero(); n],
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// "Same" convolution (`pad = (k - 1) / 2`), stride 1.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut RngStream,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        init: Init,
    ) -> Result<Self> {
        let fan_in = cin * k * k;
        let w = init_values(rng, init, cout * fan_in, fan_in, cout * k * k);
        let weight = store.add(&format!("{name}.weight"), Tensor::new(&[cout, cin, k, k], w)?, ParamKind::Trainable)?;
        let bias = store.add(&format!("{name}.bias"), Tensor::zeros(&[cout]), ParamKind::Trainable)?;
        Ok(Conv2d { weight, bias, stride: 1, pad: (k - 1) / 2 })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (s.param(self.weight), s.param(self.bias));
        s.graph.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm2d {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, c: usize) -> Result<Self> {
        Ok(BatchNorm2d {
            gamma: store.add(&format!("{name}.gamma"), Tensor::full(&[c], T::one()), ParamKind::Trainable)?,
            beta: store.add(&format!("{name}.beta"), Tensor::zeros(&[c]), ParamKind::Trainable)?,
            running_mean: store.add(&format!("{name}.running_mean"), Tensor::zeros(&[c]), ParamKind::Buffer)?,
            running_var: store.add(&format!("{name}.running_var"), Tensor::full(&[c], T::one()), ParamKind::Buffer)?,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let (g, b) = (s.param(self.gamma), s.param(self.beta));
        let params = s.params();
        let mode = match s.mode {
            Mode::Train => BatchNormMode::Train,
            Mode::Eval => BatchNormMode::Eval(
                params.value(self.running_mean).clone(),
                params.value(self.running_var).clone(),
            ),
        };
        let (y, stats) = s.graph.batch_norm(x, g, b, mode)?;
        if let Some(st) = stats {
            let m = T::lit(BN_MOMENTUM);
            let keep = T::one() - m;
            let rm = params.value(self.running_mean);
            let rv = params.value(self.running_var);
            let new_m = Tensor::from_fn(rm.shape(), |i| keep * rm.data()[i] + m * st.mean[i]);
            let new_v = Tensor::from_fn(rv.shape(), |i| keep * rv.data()[i] + m * st.unbiased_var[i]);
            s.record_update(self.running_mean, new_m);
            s.record_update(self.running_var, new_v);
        }
        Ok(y)
    }
}

/// Two `(3x3 conv, batch norm, LeakyReLU 0.2)` units.
#[derive(Clone, Debug)]
pub struct DoubleConv {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
}

impl DoubleConv {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut RngStream,
        name: &str,
        cin: usize,
        cout: usize,
    ) -> Result<Self> {
        Ok(DoubleConv {
            conv1: Conv2d::new(store, rng, &format!("{name}.conv1"), cin, cout, 3, Init::KaimingLeaky)?,
            bn1: BatchNorm2d::new(store, &format!("{name}.bn1"), cout)?,
            conv2: Conv2d::new(store, rng, &format!("{name}.conv2"), cout, cout, 3, Init::KaimingLeaky)?,
            bn2: BatchNorm2d::new(store, &format!("{name}.bn2"), cout)?,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let slope = T::lit(LEAKY_SLOPE);
        let y = self.conv1.forward(s, x)?;
        let y = self.bn1.forward(s, y)?;
        let y = s.graph.leaky_relu(y, slope);
        let y = self.conv2.forward(s, y)?;
        let y = self.bn2.forward(s, y)?;
        Ok(s.graph.leaky_relu(y, slope))
    }

    /// Trainable element count of one block, `cin -> cout`.
    pub fn parameter_count(cin: usize, cout: usize) -> usize {
        (cin * cout * 9 + cout) + 2 * cout + (cout * cout * 9 + cout) + 2 * cout
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut RngStream,
        name: &str,
        cin: usize,
        cout: usize,
    ) -> Result<Self> {
        let w = init_values(rng, Init::XavierUniform, cout * cin, cin, cout);
        Ok(Linear {
            weight: store.add(&format!("{name}.weight"), Tensor::new(&[cout, cin], w)?, ParamKind::Trainable)?,
            bias: store.add(&format!("{name}.bias"), Tensor::zeros(&[cout]), ParamKind::Trainable)?,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (s.param(self.weight), s.param(self.bias));
        s.graph.linear(x, w, Some(b))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, c: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: store.add(&format!("{name}.gamma"), Tensor::full(&[c], T::one()), ParamKind::Trainable)?,
            beta: store.add(&format!("{name}.beta"), Tensor::zeros(&[c]), ParamKind::Trainable)?,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let (g, b) = (s.param(self.gamma), s.param(self.beta));
        s.graph.layer_norm(x, g, b)
    }
}

/// Multi-head attention with separate query/key/value projections and an
/// output projection. Dropout acts on the attention weights in training mode
/// only, with inverted scaling.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dropout: f64,
}

impl MultiHeadAttention {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut RngStream,
        name: &str,
        channels: usize,
        heads: usize,
        dropout: f64,
    ) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(crate::error::invalid!("{} channels are not divisible into {} heads", channels, heads));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(crate::error::invalid!("dropout rate {} outside [0, 1)", dropout));
        }
        Ok(MultiHeadAttention {
            q: Linear::new(store, rng, &format!("{name}.q"), channels, channels)?,
            k: Linear::new(store, rng, &format!("{name}.k"), channels, channels)?,
            v: Linear::new(store, rng, &format!("{name}.v"), channels, channels)?,
            out: Linear::new(store, rng, &format!("{name}.out"), channels, channels)?,
            heads,
            dropout,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, query: Var, key: Var, value: Var) -> Result<Var> {
        let q = self.q.forward(s, query)?;
        let k = self.k.forward(s, key)?;
        let v = self.v.forward(s, value)?;
        let mask = if s.mode.is_train() && self.dropout > 0.0 {
            let qs = s.graph.shape(q);
            let ks = s.graph.shape(k);
            let shape = [qs[0], self.heads, qs[1], ks[1]];
            let inv_keep = T::lit(1.0 / (1.0 - self.dropout));
            let rate = self.dropout;
            let rng = &mut s.rng;
            Some(Tensor::from_fn(&shape, |_| {
                if rng.uniform::<f64>() < rate {
                    T::zero()
                } else {
                    inv_keep
                }
            }))
        } else {
            None
        };
        let a = s.graph.attention(q, k, v, self.heads, mask)?;
        self.out.forward(s, a)
    }
}
