use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hcr::config::PipelineConfig;
use hcr::pipeline::{is_up_to_date, run_pipeline, Stage};
use hcr::{HcrError, Result};

#[derive(Parser)]
#[command(
    name = "hcr",
    version,
    about = "Conditional density prediction with orthonormal polynomial expansions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: Global,
}

#[derive(Args)]
struct Global {
    /// TOML configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Input CSV file
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Column name or index of the series
    #[arg(long, global = true)]
    column: Option<String>,
    /// Marginal family: gaussian, laplace or epd
    #[arg(long, global = true)]
    family: Option<String>,
    /// Window length
    #[arg(short = 'd', long = "dim", global = true)]
    d: Option<usize>,
    /// Polynomial degree per coordinate
    #[arg(short = 'm', long = "degree", global = true)]
    m: Option<usize>,
    /// Skip the run when the manifest in the output directory is current
    #[arg(long, global = true)]
    check: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Fit the marginal distribution of the returns
    FitMarginal,
    /// Map the returns to [0, 1] through the fitted CDF
    Normalize,
    /// Estimate the coefficient tensor
    Estimate,
    /// Conditional densities for every window
    Predict,
    /// Fit or apply the calibration map
    Calibrate,
    /// Score the predictions against baselines
    Evaluate,
    /// Exponential-decay adaptive coefficients
    Adapt,
    /// Pairwise dependencies of a panel
    Crossdeps,
    /// Full pipeline
    Run,
}

impl Command {
    fn stage(self) -> Stage {
        match self {
            Command::FitMarginal => Stage::FitMarginal,
            Command::Normalize => Stage::Normalize,
            Command::Estimate => Stage::Estimate,
            Command::Predict => Stage::Predict,
            Command::Calibrate => Stage::Calibrate,
            Command::Evaluate => Stage::Evaluate,
            Command::Adapt => Stage::Adapt,
            Command::Crossdeps => Stage::Crossdeps,
            Command::Run => Stage::Run,
        }
    }
}

fn build_config(g: &Global) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.out = Some(o.clone());
    }
    if let Some(t) = g.threads {
        cfg.threads = t;
    }
    if let Some(i) = &g.input {
        cfg.input.path = Some(i.clone());
    }
    if let Some(c) = &g.column {
        cfg.input.column = Some(c.clone());
    }
    if let Some(f) = &g.family {
        cfg.marginal.family = f.parse()?;
    }
    if let Some(d) = g.d {
        cfg.model.d = d;
        cfg.model.degrees = None;
    }
    if let Some(m) = g.m {
        cfg.model.m = m;
        cfg.model.degrees = None;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = build_config(&cli.global)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| HcrError::Config(e.to_string()))?;
    }
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("hcr-out"));
    let stage = cli.command.stage();
    if cli.global.check && is_up_to_date(&cfg, stage, &out)? {
        println!("{}: up to date", out.display());
        return Ok(());
    }
    let manifest = run_pipeline(&cfg, stage, &out)?;
    for f in &manifest.outputs {
        println!("{}", out.join(&f.path).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
