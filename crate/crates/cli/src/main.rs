use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use aoi_cli::config::{self, Overrides, Preset, RunConfig};
use aoi_cli::stages::{self, Variant};
use aoi_cli::CliError;

#[derive(Parser)]
#[command(name = "aoi", version, about = "Synthetic metal-sheet defect inspection: data, augmentation, detection, line simulation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON run config; any subset of fields overrides the preset
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize the labeled dataset and its split
    Synth,
    /// Train one GAN per source patch and write the augmented dataset
    Augment,
    /// Train a GAN on a single image
    TrainGan {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        stages: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Model directory (default <out>/gan)
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Sample images from a trained GAN
    Generate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Train the detector on the original and/or augmented training split
    TrainDetector {
        #[arg(long, value_enum)]
        variant: Option<Variant>,
    },
    /// Evaluate every trained detector on its test split
    Evaluate,
    /// synth, augment, train both detectors, evaluate
    Pipeline,
    /// Run the simulated inspection line and its HTTP API
    Serve {
        /// Detector checkpoint directory (default: the newest one under <out>/detector)
        #[arg(long)]
        detector: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let ov = Overrides { preset: cli.common.preset, seed: cli.common.seed, out: cli.common.out.clone() };
    let mut cfg: RunConfig = config::load(cli.common.config.as_deref(), &ov)?;
    let out = cfg.paths.out.clone();
    match cli.command {
        Cmd::Synth => {
            let m = stages::synth(&cfg)?;
            println!("wrote {} images with {} defects to {}", m.images.len(), m.num_boxes(), out.join("data").display());
        }
        Cmd::Augment => {
            let s = stages::augment(&cfg)?;
            println!("{} sources, {} generated images; split {}/{}/{}", s.sources, s.generated, s.train, s.val, s.test);
        }
        Cmd::TrainGan { input, stages: n, alpha, model } => {
            if let Some(n) = n {
                cfg.gan.num_stages = n;
            }
            if let Some(a) = alpha {
                cfg.gan.alpha = a;
            }
            cfg.gan.validate().map_err(|e| CliError::Config(e.to_string()))?;
            let dir = model.unwrap_or_else(|| out.join("gan"));
            let m = stages::train_gan_on(&input, &cfg.gan, cfg.synth.params.channels, &dir)?;
            println!("trained {} stages ({} parameters) into {}", m.stages.len(), m.num_parameters(), dir.display());
        }
        Cmd::Generate { model, count } => {
            let paths = stages::generate(&model, count, cfg.gan.seed, &out.join("generated"))?;
            println!("wrote {} samples to {}", paths.len(), out.join("generated").display());
        }
        Cmd::TrainDetector { variant } => {
            let variants = match variant {
                Some(v) => vec![v],
                None if cfg.augment.enabled && out.join("augment").join("train.json").exists() => vec![Variant::Baseline, Variant::Augmented],
                None => vec![Variant::Baseline],
            };
            for v in variants {
                let det = stages::train(&cfg, v)?;
                println!("{} detector: {} parameters", v.name(), det.num_parameters());
            }
        }
        Cmd::Evaluate => {
            let rows = stages::evaluate_all(&cfg)?;
            print!("{}", aoi_core::evalkit::render_table(&rows));
        }
        Cmd::Pipeline => {
            let rows = stages::pipeline(&cfg, |m| eprintln!("{m}"))?;
            print!("{}", aoi_core::evalkit::render_table(&rows));
        }
        Cmd::Serve { detector } => {
            let det = stages::serving_detector(&cfg, detector.as_deref())?;
            let mut sim = aoi_scada::Simulator::new(cfg.scada.clone()).map_err(CliError::from)?;
            match det {
                Some(d) => sim.attach_detector(d).map_err(CliError::from)?,
                None => eprintln!("no detector checkpoint found; inspection disabled"),
            }
            let port = cfg.scada.effective_port();
            let (line, _thread) = aoi_scada::spawn_line(sim, aoi_scada::Pace::RealTime);
            let rt = tokio::runtime::Runtime::new().context("starting the async runtime")?;
            eprintln!("listening on http://0.0.0.0:{port}/api/line/state");
            rt.block_on(aoi_scada::serve(line, port)).with_context(|| format!("serving on port {port}"))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<CliError>().map_or(1, CliError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
