use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use graphcf::cgcf::Method;
use graphcf::config::ExperimentConfig;
use graphcf::pipeline;

#[derive(Parser)]
#[command(name = "graphcf", version, about = "Counterfactual explanations for graph classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Load, filter and split the dataset.
    Ingest(Common),
    /// Train the graph VAE.
    TrainVae(Common),
    /// Train the graph classifier.
    TrainClassifier(Common),
    /// Generate counterfactuals for the test split.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Methods to run; defaults to the configured list.
        #[arg(long, value_enum, value_delimiter = ',')]
        methods: Vec<Method>,
    },
    /// Compute metrics, trade-off curves and figures.
    Evaluate(Common),
}

fn load(c: &Common) -> graphcf::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.apply_seed(s);
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> graphcf::Result<()> {
    match cli.command {
        Command::Ingest(c) => {
            let stats = pipeline::cmd_ingest(&load(&c)?)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::TrainVae(c) => {
            let m = pipeline::cmd_train_vae(&load(&c)?)?;
            println!("{}", serde_json::to_string_pretty(&m)?);
        }
        Command::TrainClassifier(c) => {
            let m = pipeline::cmd_train_classifier(&load(&c)?)?;
            println!("{}", serde_json::to_string_pretty(&m)?);
        }
        Command::Generate { common, methods } => {
            let cfg = load(&common)?;
            let methods = if methods.is_empty() { cfg.evaluate.methods.clone() } else { methods };
            for (m, fr) in pipeline::cmd_generate(&cfg, &methods)? {
                println!("{}\tflip ratio {fr:.3}", m.display_name());
            }
        }
        Command::Evaluate(c) => {
            let cfg = load(&c)?;
            pipeline::cmd_evaluate(&cfg)?;
            print!("{}", std::fs::read_to_string(pipeline::RunPaths::new(&cfg.out_dir).table())?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
