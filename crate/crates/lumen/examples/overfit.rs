//! Overfit run on the procedural fixture: trains, then compares training-set
//! PSNR of the enhanced output against the darkened input.
//!
//! `cargo run --release -p lumen --example overfit -- [main_base] [depth_base] [steps]`

use std::time::Instant;

use lumen::checkpoint::load_model;
use lumen::config::TrainConfig;
use lumen::dataset::{DatasetIndex, Split};
use lumen::eval::split_psnr;
use lumen::fixture::{write_fixture, FixtureSpec};
use lumen::train::train;

fn main() -> lumen::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let arg = |i: usize, d: u64| args.get(i).copied().unwrap_or(d);
    let dir = std::env::temp_dir().join(format!("lumen-overfit-{}", std::process::id()));
    write_fixture(&dir, &FixtureSpec::default())?;
    let cfg = TrainConfig {
        crop: 64,
        batch_size: 4,
        steps: arg(2, 300),
        main_base: arg(0, 32) as usize,
        depth_base: arg(1, 64) as usize,
        ..TrainConfig::default()
    };
    let data = DatasetIndex::load(&dir, Split::Train)?;
    let out = dir.join("overfit.lumn");
    let started = Instant::now();
    let outcome = train(&cfg, &data, &out, |e| {
        if e.step % 25 == 0 {
            println!("step {:4} loss {:.4} recon {:.4} t {:.0}s", e.step, e.total, e.recon, started.elapsed().as_secs_f64());
        }
    })?;
    let (enh, low) = split_psnr(&load_model(&out, |_| {})?, &dir, Split::Train)?;
    let first = outcome.log.get(5).map_or(f64::NAN, |e| e.total);
    let last = outcome.log.last().map_or(f64::NAN, |e| e.total);
    println!(
        "psnr enhanced {enh:.3} input {low:.3} gain {:.3} dB; loss step5 {first:.4} final {last:.4} drop {:.1}%; {:.0}s",
        enh - low,
        100.0 * (1.0 - last / first),
        started.elapsed().as_secs_f64()
    );
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
