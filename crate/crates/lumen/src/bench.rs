//! Attention-cost benchmark: the fusion block's pooled attention against
//! full self-attention over every pixel, read from the kernel counters.

use std::time::Instant;

use lumen_core::fusion::{Efb, EfbConfig};
use lumen_core::graph::AttentionCall;
use lumen_core::nn::Session;
use lumen_core::{Mode, ParamStore, RngStream, Tensor};
use serde_json::{json, Value};

use crate::error::{Error, Result};

pub const BENCH_CHANNELS: usize = 8;
pub const BENCH_HEADS: usize = 2;
/// Full attention is executed up to this side length and counted
/// analytically above it.
pub const FULL_EXECUTE_LIMIT: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct SizeResult {
    pub size: usize,
    /// Query and key token counts of every pooled attention call.
    pub efb_tokens: Vec<(usize, usize)>,
    pub efb_score_entries: u64,
    pub efb_macs: u64,
    pub full_tokens: usize,
    pub full_score_entries: u64,
    pub full_macs: u64,
    pub full_executed: bool,
    pub efb_seconds: f64,
    pub full_seconds: Option<f64>,
}

fn features(rng: &mut RngStream, c: usize, s: usize) -> Tensor<f32> {
    Tensor::from_fn(&[1, c, s, s], |_| rng.normal::<f32>())
}

/// Counters of one full self-attention call over `s*s` tokens, matching the
/// kernel's own accounting.
pub fn full_attention_counts(s: usize, c: usize, heads: usize) -> AttentionCall {
    let t = s * s;
    AttentionCall { batch: 1, heads, query_tokens: t, key_tokens: t, channels: c, macs: 2 * (t * t * c) as u64 }
}

pub fn bench_size(size: usize) -> Result<SizeResult> {
    if size == 0 || size % 8 != 0 {
        return Err(Error::Config(format!("bench size {size} must be a positive multiple of 8")));
    }
    let mut store = ParamStore::<f32>::new();
    let cfg = EfbConfig { heads: BENCH_HEADS, ..EfbConfig::default() };
    let efb = Efb::new(&mut store, &mut RngStream::new(1), "bench", BENCH_CHANNELS, BENCH_CHANNELS, cfg)?;
    let mut rng = RngStream::new(size as u64);
    let (m, d, f) = (
        features(&mut rng, BENCH_CHANNELS, size),
        features(&mut rng, BENCH_CHANNELS / 2, size),
        features(&mut rng, BENCH_CHANNELS / 2, size),
    );

    let started = Instant::now();
    let mut s = Session::inference(&store, Mode::Eval, RngStream::new(0));
    let (vm, vd, vf) = (s.input(m.clone()), s.input(d), s.input(f));
    efb.forward(&mut s, vm, vd, vf)?;
    let efb_seconds = started.elapsed().as_secs_f64();
    let efb_log = s.graph.attention_log().clone();

    let (full, full_seconds) = if size <= FULL_EXECUTE_LIMIT {
        let started = Instant::now();
        let mut s = Session::inference(&store, Mode::Eval, RngStream::new(0));
        let vm = s.input(m);
        efb.full_attention_reference(&mut s, vm)?;
        let log = s.graph.attention_log().clone();
        let call = *log.first().ok_or_else(|| Error::Config("reference attention made no kernel call".into()))?;
        (call, Some(started.elapsed().as_secs_f64()))
    } else {
        (full_attention_counts(size, BENCH_CHANNELS, BENCH_HEADS), None)
    };

    Ok(SizeResult {
        size,
        efb_tokens: efb_log.iter().map(|c| (c.query_tokens, c.key_tokens)).collect(),
        efb_score_entries: efb_log.iter().map(|c| c.score_entries()).max().unwrap_or(0),
        efb_macs: efb_log.iter().map(|c| c.macs).sum(),
        full_tokens: full.query_tokens,
        full_score_entries: full.score_entries(),
        full_macs: full.macs,
        full_executed: full_seconds.is_some(),
        efb_seconds,
        full_seconds,
    })
}

/// Token count the pooled path must use at every size.
pub fn pooled_tokens() -> usize {
    let p = EfbConfig::default().pool;
    p * p
}

/// Runs every size and checks the structural claim: pooled attention over
/// exactly `P*P` tokens everywhere, full attention over `H*W` tokens.
pub fn bench_attention(sizes: &[usize]) -> Result<Value> {
    let results = sizes.iter().map(|&s| bench_size(s)).collect::<Result<Vec<_>>>()?;
    let want = pooled_tokens();
    let efb_constant = results.iter().all(|r| !r.efb_tokens.is_empty() && r.efb_tokens.iter().all(|&t| t == (want, want)));
    let full_grows = results.iter().all(|r| r.full_tokens == r.size * r.size);
    let rows: Vec<Value> = results
        .iter()
        .map(|r| {
            json!({
                "size": r.size,
                "pixels": r.size * r.size,
                "efb": {
                    "calls": r.efb_tokens.len(),
                    "tokens": r.efb_tokens.iter().map(|t| t.0).max().unwrap_or(0),
                    "key_tokens": r.efb_tokens.iter().map(|t| t.1).max().unwrap_or(0),
                    "score_entries": r.efb_score_entries,
                    "macs": r.efb_macs,
                    "seconds": r.efb_seconds,
                },
                "full": {
                    "tokens": r.full_tokens,
                    "score_entries": r.full_score_entries,
                    "macs": r.full_macs,
                    "executed": r.full_executed,
                    "seconds": r.full_seconds,
                },
            })
        })
        .collect();
    Ok(json!({
        "channels": BENCH_CHANNELS,
        "heads": BENCH_HEADS,
        "pooled_tokens": want,
        "sizes": rows,
        "efb_tokens_constant": efb_constant,
        "full_tokens_equal_pixels": full_grows,
        "passed": efb_constant && full_grows,
    }))
}
