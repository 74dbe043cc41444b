//! Efficient fusion block: attention over a fixed `P x P` token grid pooled
//! from the main, depth and flash features, followed by a convolutional
//! feed-forward refinement with a double residual.

use alloc::format;

use crate::nn::{BatchNorm2d, Conv2d, Init, LayerNorm, MultiHeadAttention, Session};
use crate::{Error, ParamStore, Real, Result, RngStream, Var};

/// Where layer normalization enters the two attention steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NormPlacement {
    /// `LN(x) + MHA(x, ...)`.
    #[default]
    Literal,
    /// `x + MHA(LN(x), ...)`.
    PreNorm,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EfbConfig {
    pub pool: usize,
    pub heads: usize,
    pub dropout: f64,
    /// Scale of the upsampled attention branch.
    pub gamma: f64,
    pub norm: NormPlacement,
}

impl Default for EfbConfig {
    fn default() -> Self {
        EfbConfig { pool: 8, heads: 4, dropout: 0.1, gamma: 0.1, norm: NormPlacement::Literal }
    }
}

#[derive(Clone, Debug)]
pub struct Efb {
    pub channels: usize,
    pub aux_channels: usize,
    pub cfg: EfbConfig,
    pub self_attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub aux: Conv2d,
    pub cross_attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ffn_in: Conv2d,
    pub ffn_bn: BatchNorm2d,
    /// Zero-initialized, so a fresh block is `F_m + FFN(...) = F_m`.
    pub ffn_out: Conv2d,
}

impl Efb {
    /// `aux_channels` is the depth plus flash channel count at this level.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut RngStream,
        name: &str,
        channels: usize,
        aux_channels: usize,
        cfg: EfbConfig,
    ) -> Result<Self> {
        if cfg.pool == 0 {
            return Err(Error::InvalidArgument("pool size must be positive".into()));
        }
        Ok(Efb {
            channels,
            aux_channels,
            cfg,
            self_attn: MultiHeadAttention::new(store, rng, &format!("{name}.self_attn"), channels, cfg.heads, cfg.dropout)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), channels)?,
            aux: Conv2d::new(store, rng, &format!("{name}.aux"), aux_channels, channels, 1, Init::XavierUniform)?,
            cross_attn: MultiHeadAttention::new(
                store,
                rng,
                &format!("{name}.cross_attn"),
                channels,
                cfg.heads,
                cfg.dropout,
            )?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), channels)?,
            ffn_in: Conv2d::new(store, rng, &format!("{name}.ffn.conv1"), channels, channels, 1, Init::KaimingRelu)?,
            ffn_bn: BatchNorm2d::new(store, &format!("{name}.ffn.bn"), channels)?,
            ffn_out: Conv2d::new(store, rng, &format!("{name}.ffn.conv2"), channels, channels, 3, Init::Zero)?,
        })
    }

    fn residual_attention<T: Real>(
        &self,
        s: &mut Session<'_, T>,
        attn: &MultiHeadAttention,
        norm: &LayerNorm,
        x: Var,
        kv: Option<Var>,
    ) -> Result<Var> {
        match self.cfg.norm {
            NormPlacement::Literal => {
                let kv = kv.unwrap_or(x);
                let a = attn.forward(s, x, kv, kv)?;
                let n = norm.forward(s, x)?;
                s.graph.add(n, a)
            }
            NormPlacement::PreNorm => {
                let n = norm.forward(s, x)?;
                let kv = kv.unwrap_or(n);
                let a = attn.forward(s, n, kv, kv)?;
                s.graph.add(x, a)
            }
        }
    }

    /// Fuses `F_m: [B,C,H,W]` with `F_d`, `F_f` of matching spatial size.
    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, f_m: Var, f_d: Var, f_f: Var) -> Result<Var> {
        let [b, c, h, w] = s.graph.dims4(f_m)?;
        let [bd, cd, hd, wd] = s.graph.dims4(f_d)?;
        let [bf, cf, hf, wf] = s.graph.dims4(f_f)?;
        if c != self.channels || cd + cf != self.aux_channels {
            return Err(Error::Shape(format!(
                "fusion block expects {} main and {} auxiliary channels, got {} and {}+{}",
                self.channels, self.aux_channels, c, cd, cf
            )));
        }
        if (bd, hd, wd) != (b, h, w) || (bf, hf, wf) != (b, h, w) {
            return Err(Error::Shape(format!(
                "fusion inputs are not aligned: main {:?}, depth {:?}, flash {:?}",
                [b, c, h, w],
                [bd, cd, hd, wd],
                [bf, cf, hf, wf]
            )));
        }
        let p = self.cfg.pool;
        let g = &s.graph;
        let m_hat = g.to_tokens(g.adaptive_avg_pool2d(f_m, p)?)?;
        let d_hat = g.adaptive_avg_pool2d(f_d, p)?;
        let f_hat = g.adaptive_avg_pool2d(f_f, p)?;
        let aux_in = g.concat_channels(&[d_hat, f_hat])?;
        let aux = self.aux.forward(s, aux_in)?;
        let aux = s.graph.to_tokens(aux)?;

        let f_self = self.residual_attention(s, &self.self_attn, &self.norm1, m_hat, None)?;
        let f_cross = self.residual_attention(s, &self.cross_attn, &self.norm2, f_self, Some(aux))?;

        let g = &s.graph;
        let grid = g.from_tokens(f_cross, p, p)?;
        let up = g.bilinear_resize(grid, h, w)?;
        let inner = g.add(f_m, g.scale(up, T::lit(self.cfg.gamma)))?;
        let y = self.ffn_in.forward(s, inner)?;
        let y = self.ffn_bn.forward(s, y)?;
        let y = s.graph.gelu(y);
        let y = self.ffn_out.forward(s, y)?;
        s.graph.add(f_m, y)
    }

    /// Reference self-attention over all `H*W` positions of `F_m`, using
    /// this block's self-attention weights. Benchmark use only.
    pub fn full_attention_reference<T: Real>(&self, s: &mut Session<'_, T>, f_m: Var) -> Result<Var> {
        let [_, c, h, w] = s.graph.dims4(f_m)?;
        if c != self.channels {
            return Err(Error::Shape(format!("expected {} channels, got {}", self.channels, c)));
        }
        let tokens = s.graph.to_tokens(f_m)?;
        let a = self.self_attn.forward(s, tokens, tokens, tokens)?;
        s.graph.from_tokens(a, h, w)
    }
}
