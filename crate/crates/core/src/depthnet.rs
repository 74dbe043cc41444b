//! Low-light depth estimator: a five-level encoder-decoder ending in a
//! sigmoid depth head. The encoder half is shared in shape with the flash
//! feature encoder.

use alloc::format;
use alloc::vec::Vec;

use crate::nn::{Conv2d, DoubleConv, Init, Session};
use crate::{Error, ParamStore, Real, Result, RngStream, Var};

/// Encoder depth (feature levels).
pub const LEVELS: usize = 5;
/// Spatial divisibility required by the four 2x poolings.
pub const SIZE_MULTIPLE: usize = 1 << (LEVELS - 1);
pub const DEFAULT_DEPTH_BASE: usize = 64;

/// Channel ladder `base * 2^(l-1)` for `l = 1..=5`.
pub fn ladder(base: usize) -> [usize; LEVELS] {
    core::array::from_fn(|l| base << l)
}

pub(crate) fn check_divisible(h: usize, w: usize) -> Result<()> {
    if h % SIZE_MULTIPLE != 0 || w % SIZE_MULTIPLE != 0 || h == 0 || w == 0 {
        return Err(Error::Precondition(format!(
            "input {h}x{w}: height and width must be positive multiples of {SIZE_MULTIPLE}"
        )));
    }
    Ok(())
}

/// Five double-convolution levels; level 1 runs at full resolution, levels
/// 2-5 max-pool first.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub blocks: Vec<DoubleConv>,
    pub channels: [usize; LEVELS],
}

impl Encoder {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut RngStream,
        prefix: &str,
        cin: usize,
        base: usize,
    ) -> Result<Self> {
        let channels = ladder(base);
        let mut blocks = Vec::with_capacity(LEVELS);
        let mut prev = cin;
        for (l, &c) in channels.iter().enumerate() {
            blocks.push(DoubleConv::new(store, rng, &format!("{prefix}.enc{}", l + 1), prev, c)?);
            prev = c;
        }
        Ok(Encoder { blocks, channels })
    }

    /// Pooling + double convolution for level `l` (0-based).
    pub fn level<T: Real>(&self, s: &mut Session<'_, T>, l: usize, x: Var) -> Result<Var> {
        let x = if l == 0 { x } else { s.graph.max_pool2d(x)? };
        self.blocks[l].forward(s, x)
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Vec<Var>> {
        let [_, _, h, w] = s.graph.dims4(x)?;
        check_divisible(h, w)?;
        let mut feats = Vec::with_capacity(LEVELS);
        let mut cur = x;
        for l in 0..LEVELS {
            cur = self.level(s, l, cur)?;
            feats.push(cur);
        }
        Ok(feats)
    }
}

/// Four `(2x bilinear upsample, concat skip, double conv)` steps.
#[derive(Clone, Debug)]
pub struct Decoder {
    /// `blocks[l]` produces decoder level `l + 1`.
    pub blocks: Vec<DoubleConv>,
}

impl Decoder {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut RngStream,
        prefix: &str,
        channels: [usize; LEVELS],
    ) -> Result<Self> {
        let blocks = (0..LEVELS - 1)
            .map(|l| {
                DoubleConv::new(store, rng, &format!("{prefix}.dec{}", l + 1), channels[l + 1] + channels[l], channels[l])
            })
            .collect::<Result<_>>()?;
        Ok(Decoder { blocks })
    }

    /// Returns decoder outputs `[D1, D2, D3, D4]`, given skips `[E1..E5]`.
    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, skips: &[Var]) -> Result<Vec<Var>> {
        let mut outs: Vec<Var> = Vec::with_capacity(LEVELS - 1);
        let mut cur = skips[LEVELS - 1];
        for l in (0..LEVELS - 1).rev() {
            let up = s.graph.upsample2x(cur)?;
            let cat = s.graph.concat_channels(&[up, skips[l]])?;
            cur = self.blocks[l].forward(s, cat)?;
            outs.push(cur);
        }
        outs.reverse();
        Ok(outs)
    }
}

#[derive(Clone, Debug)]
pub struct DepthNet {
    pub base: usize,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub head: Conv2d,
}

/// Depth prediction `[B,1,H,W]` in `(0,1)` and the five encoder features.
#[derive(Clone, Debug)]
pub struct DepthOutput {
    pub d_pred: Var,
    pub features: Vec<Var>,
}

impl DepthNet {
    /// Registers parameters under `depth.`.
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut RngStream, base: usize) -> Result<Self> {
        let encoder = Encoder::new(store, rng, "depth", 3, base)?;
        let decoder = Decoder::new(store, rng, "depth", encoder.channels)?;
        let head = Conv2d::new(store, rng, "depth.head", base, 1, 1, Init::XavierUniform)?;
        Ok(DepthNet { base, encoder, decoder, head })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, image: Var) -> Result<DepthOutput> {
        let features = self.encoder.forward(s, image)?;
        let dec = self.decoder.forward(s, &features)?;
        let logits = self.head.forward(s, dec[0])?;
        Ok(DepthOutput { d_pred: s.graph.sigmoid(logits), features })
    }
}
