use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dualtrace::data::{decode, generate_synthetic, preprocess, Split, SynthConfig, INPUT_SIZE};
use dualtrace::engine::{evaluate, load_checkpoint, train, EvalOptions, ModelScorer, RunConfig};
use dualtrace::filters::{format_matrix, slice_residuals, SobelPair, SrmBank};
use dualtrace::metrics::RocAccumulator;
use dualtrace::{Error, Result};
use dualtrace_tensor::Tensor;
use image::imageops::{self, FilterType};
use image::{GrayImage, Luma};

#[derive(Parser)]
#[command(name = "dualtrace", version, about = "Image manipulation localization: train, evaluate, predict")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a TOML run config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Pixel metrics of a checkpoint on a manifest.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Repeat for several operating points.
        #[arg(long, default_values_t = [0.5])]
        threshold: Vec<f64>,
        /// Only records of this split (train, val, test).
        #[arg(long)]
        split: Option<Split>,
        #[arg(long, default_value_t = INPUT_SIZE)]
        input_size: u32,
        /// Histogram AUC with this many bins instead of the exact rank AUC.
        #[arg(long)]
        streaming_bins: Option<usize>,
        /// Also write the reports as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write a binary mask PNG for one image.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, default_value_t = INPUT_SIZE)]
        input_size: u32,
    },
    /// Generate a synthetic forgery dataset and its manifest.
    Synth {
        /// TOML synth config; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the residual filter banks stored in a checkpoint.
    InspectFilters {
        #[arg(long)]
        ckpt: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut out = io::stdout().lock();
    let w = |e: io::Error| Error::io("<stdout>", e);
    match cli.command {
        Command::Train { config } => {
            let cfg = RunConfig::load(&config)?;
            let outcome = train(&cfg, &mut io::stderr())?;
            writeln!(out, "{} steps; checkpoint {}", outcome.log.steps().count(), outcome.final_checkpoint.display())
                .map_err(w)?;
        }
        Command::Eval { ckpt, manifest, threshold, split, input_size, streaming_bins, json } => {
            for &t in &threshold {
                dualtrace::metrics::check_threshold(t)?;
            }
            let ck = load_checkpoint(&ckpt)?;
            let m = dualtrace::data::load_manifest(&manifest)?;
            let roc = match streaming_bins {
                Some(b) => RocAccumulator::streaming(b.max(1)),
                None => RocAccumulator::exact(),
            };
            let opts = EvalOptions { split, thresholds: threshold, input_size, roc };
            let scorer = ModelScorer { model: &ck.model, store: &ck.store };
            let reports = evaluate(&scorer, &m, &opts)?;
            for r in &reports {
                writeln!(out, "{r}").map_err(w)?;
            }
            if let Some(p) = json {
                let text = serde_json::to_string_pretty(&reports).expect("reports serialize");
                std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
            }
        }
        Command::Predict { ckpt, image, out: dest, threshold, input_size } => {
            dualtrace::metrics::check_threshold(threshold)?;
            let ck = load_checkpoint(&ckpt)?;
            let img = decode(&image)?;
            let x = preprocess(&img, input_size);
            let s = x.shape().to_vec();
            let x = Tensor::from_vec(&[1, s[0], s[1], s[2]], x.into_data())?;
            let prob = ck.model.predict_proba(&ck.store, &x)?;
            let mask = GrayImage::from_fn(input_size, input_size, |px, py| {
                let p = prob.data()[py as usize * input_size as usize + px as usize];
                Luma([if p as f64 >= threshold { 255 } else { 0 }])
            });
            let full = imageops::resize(&mask, img.width(), img.height(), FilterType::Nearest);
            full.save(&dest).map_err(|e| Error::Data(format!("writing {}: {e}", dest.display())))?;
            let area = full.pixels().filter(|p| p[0] > 0).count() as f64 / (img.width() * img.height()).max(1) as f64;
            writeln!(out, "{}: {:.2}% flagged", dest.display(), 100.0 * area).map_err(w)?;
        }
        Command::Synth { config, out: dir, seed } => {
            let mut cfg = match config {
                Some(p) => load_synth_config(&p)?,
                None => SynthConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let m = generate_synthetic(&cfg, &dir)?;
            for (split, n) in m.split_counts() {
                writeln!(out, "{split}: {n}").map_err(w)?;
            }
            writeln!(out, "manifest {}", dir.join("manifest.jsonl").display()).map_err(w)?;
        }
        Command::InspectFilters { ckpt } => inspect(&ckpt, &mut out)?,
    }
    Ok(())
}

fn load_synth_config(path: &Path) -> Result<SynthConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: SynthConfig = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn inspect(ckpt: &Path, out: &mut impl Write) -> Result<()> {
    let w = |e: io::Error| Error::io("<stdout>", e);
    let ck = load_checkpoint(ckpt)?;
    writeln!(out, "checkpoint step {} (epoch {})", ck.header.step, ck.header.epoch).map_err(w)?;
    match ck.model.constrained_weight() {
        Some(id) => {
            let t = ck.store.value(id);
            let s = t.shape();
            let k = s[2];
            writeln!(out, "\nconstrained kernels {s:?}").map_err(w)?;
            for (i, slice) in t.data().chunks(k * k).enumerate() {
                let (center, sum) = slice_residuals(slice, k);
                let vals: Vec<f64> = slice.iter().map(|&v| v as f64).collect();
                let name = format!("bayar[{}][{}]  center err {center:.1e}  sum err {sum:.1e}", i / s[1], i % s[1]);
                write!(out, "{}", format_matrix(&name, k, &vals)).map_err(w)?;
            }
        }
        None => writeln!(out, "\nno noise branch in this checkpoint").map_err(w)?,
    }
    let bank = SrmBank::standard(ck.header.model.noise.srm_truncation);
    writeln!(out, "\nSRM bank (truncation {})", bank.truncation).map_err(w)?;
    for kern in &bank.kernels {
        write!(out, "{}", format_matrix(&kern.name, kern.size, &kern.weights())).map_err(w)?;
    }
    writeln!(out, "\nSobel").map_err(w)?;
    for (name, m) in [("gx", SobelPair::STANDARD.gx), ("gy", SobelPair::STANDARD.gy)] {
        let vals: Vec<f64> = m.iter().flatten().map(|&v| v as f64).collect();
        write!(out, "{}", format_matrix(name, 3, &vals)).map_err(w)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
