use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lumen::bench::bench_attention;
use lumen::config::TrainConfig;
use lumen::dataset::{DatasetIndex, Split};
use lumen::eval::{depth_file, enhance_file, evaluate_checkpoint, metrics_files, metrics_json, EvalOptions};
use lumen::features::perceptual_between_files;
use lumen::fixture::{write_fixture, FixtureSpec};
use lumen::io::{load_depth, load_image, save_depth, save_image};
use lumen::{Error, Result};
use lumen_core::flash::{simulate_flash, DEFAULT_CLUSTERS};
use lumen_core::gradcheck::standard_suite;
use lumen_core::Mode;

#[derive(Parser)]
#[command(name = "lumen", version, about = "Depth-guided low-light image enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data_root: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Enhance one image.
    Enhance {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        emit_depth: Option<PathBuf>,
        #[arg(long)]
        emit_flash: Option<PathBuf>,
    },
    /// Predict a depth map (16-bit PNG).
    Depth {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Virtual flash from an image and a depth map.
    Flashsim {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Draw training-mode intensity noise.
        #[arg(long)]
        train_noise: bool,
        #[arg(long, default_value_t = DEFAULT_CLUSTERS)]
        clusters: usize,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data_root: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// PSNR, SSIM and MAE between two images.
    Metrics {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Precomputed feature files of `a` and `b`; adds a perceptual distance.
        #[arg(long, num_args = 2, value_names = ["FEAT_A", "FEAT_B"])]
        features: Option<Vec<PathBuf>>,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
    },
    /// Pooled versus full attention token counts.
    BenchAttention {
        #[arg(long, value_delimiter = ',', default_value = "16,32,64,128")]
        sizes: Vec<usize>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Write the procedural paired dataset.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 8)]
        train: usize,
        #[arg(long, default_value_t = 4)]
        test: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e })
}

/// `Ok(false)` when the command ran but its check failed.
fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Train { config, data_root, out } => {
            let cfg = TrainConfig::load(&config)?;
            let data = DatasetIndex::load(&data_root, Split::Train)?;
            let outcome = lumen::train::train(&cfg, &data, &out, |e| {
                eprintln!("step {} lr {:.3e} loss {:.6}", e.step, e.lr, e.total);
            })?;
            eprintln!("wrote {} after step {}", out.display(), outcome.total_steps);
        }
        Command::Enhance { ckpt, input, output, emit_depth, emit_flash } => {
            let e = enhance_file(&ckpt, &input)?;
            save_image(&e.enhanced, &output)?;
            if let Some(p) = emit_depth {
                save_depth(&e.depth, &p)?;
            }
            if let Some(p) = emit_flash {
                save_image(&e.flash, &p)?;
            }
        }
        Command::Depth { ckpt, input, output } => depth_file(&ckpt, &input, &output)?,
        Command::Flashsim { input, depth, output, seed, train_noise, clusters } => {
            let image = load_image::<f32>(&input)?;
            let depth = load_depth::<f32>(&depth)?;
            let mode = if train_noise { Mode::Train } else { Mode::Eval };
            save_image(&simulate_flash(&image, &depth, clusters, mode, seed)?, &output)?;
        }
        Command::Eval { ckpt, data_root, report, out_dir } => {
            let r = evaluate_checkpoint(&ckpt, &data_root, Some(&out_dir), &EvalOptions::default())?;
            write_json(&report, &r)?;
            println!("{}", serde_json::to_string(&r["mean"])?);
        }
        Command::Metrics { a, b, features } => {
            let mut m = metrics_json(&metrics_files(&a, &b)?);
            if let Some(f) = features {
                m["perceptual"] = serde_json::json!(perceptual_between_files(&f[0], &f[1])?);
            }
            println!("{}", serde_json::to_string(&m)?);
        }
        Command::Gradcheck { tol } => {
            let reports = standard_suite(tol)?;
            let mut ok = true;
            for r in &reports {
                let skipped: usize = r.params.iter().map(|p| p.skipped).sum();
                let status = if r.passed() { "ok" } else { "FAILED" };
                println!("{status:6} {:40} max_rel_err {:.3e} skipped {skipped}", r.label, r.max_rel_err());
                for p in r.params.iter().filter(|p| !p.passed) {
                    println!("       {} {:.3e} {}", p.name, p.max_rel_err, p.failure.as_deref().unwrap_or(""));
                }
                ok &= r.passed();
            }
            return Ok(ok);
        }
        Command::BenchAttention { sizes, report } => {
            let r = bench_attention(&sizes)?;
            write_json(&report, &r)?;
            for row in r["sizes"].as_array().into_iter().flatten() {
                println!(
                    "{:>4}x{:<4} efb tokens {:>3}  full tokens {:>6}{}",
                    row["size"],
                    row["size"],
                    row["efb"]["tokens"],
                    row["full"]["tokens"],
                    if row["full"]["executed"] == true { "" } else { " (counted)" }
                );
            }
            return Ok(r["passed"] == true);
        }
        Command::Fixture { out, size, train, test, seed } => {
            let spec = FixtureSpec { height: size, width: size, train, test, seed, ..FixtureSpec::default() };
            write_fixture(&out, &spec)?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("Usage: lumen <COMMAND> [OPTIONS]; run `lumen help` for the command list");
            ExitCode::from(1)
        }
    }
}
