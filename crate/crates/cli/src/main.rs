use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use geofuzz::config::{ConfigError, PipelineConfig};
use geofuzz::pipeline::{PipelineError, Run};
use geofuzz::synth::{generate, write_map, SynthParams};

/// Fuzzy-topological spatial preprocessing and evolutionary rule learning.
#[derive(Parser, Debug)]
#[command(name = "geofuzz", version)]
struct Cli {
    /// Pipeline config (TOML).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's worker count.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides the config's run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Validate the config, print a JSON verdict and exit.
    #[arg(long, global = true)]
    validate_only: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Relate target features to the relevant types and write table.tsv.
    Preprocess,
    /// Split, normalize and train; writes the model.
    Train,
    /// Classify the held-out rows with the trained model.
    Classify,
    /// Write the evaluation report.
    Evaluate,
    /// Accuracy over the configured (p, q) noise grid and seeds.
    Sweep,
    /// Time membership and overlap evaluation across worker counts.
    Bench,
    /// preprocess, train, classify and evaluate.
    All,
    /// Generate a synthetic map with a planted rule, plus its config.
    Synth {
        /// Output directory for the map files.
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 200)]
        cities: usize,
        /// Grid side written to the config.
        #[arg(long, default_value_t = 64)]
        n: usize,
    },
}

const EXIT_STAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

fn load_config(cli: &Cli) -> Result<PipelineConfig, ConfigError> {
    let path = cli.config.as_ref().ok_or_else(|| ConfigError::Invalid(vec!["--config is required".into()]))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn config_errors(e: &ConfigError) -> Vec<String> {
    match e {
        ConfigError::Invalid(errs) => errs.clone(),
        other => vec![other.to_string()],
    }
}

fn is_invariant(e: &PipelineError) -> bool {
    match e {
        PipelineError::Invariant(_) => true,
        PipelineError::Stage { source, .. } => is_invariant(source),
        _ => false,
    }
}

fn run_stage(cfg: &PipelineConfig, command: &Command) -> Result<(), PipelineError> {
    let run = Run::new(cfg, &cfg.out_dir)?;
    match command {
        Command::Preprocess => run.preprocess(),
        Command::Train => run.train(),
        Command::Classify => run.classify(),
        Command::Evaluate => run.evaluate(),
        Command::Sweep => run.sweep(),
        Command::All => run.all(),
        Command::Bench => {
            let rows = run.bench()?;
            print!("{}", geofuzz::eval::timing_table(&rows));
            Ok(())
        }
        Command::Synth { .. } => unreachable!("handled before config loading"),
    }
}

fn synth(cli: &Cli, dir: &Path, cities: usize, n: usize) -> Result<(), PipelineError> {
    let params = SynthParams { seed: cli.seed.unwrap_or(SynthParams::default().seed), cities, n, ..SynthParams::default() };
    let map = generate(&params)?;
    let path = write_map(&map, dir)?;
    log::info!("planted rule: {:?}", map.rule);
    println!("{}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    if let Command::Synth { dir, cities, n } = &cli.command {
        return match synth(&cli, dir, *cities, *n) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_STAGE)
            }
        };
    }

    let cfg = load_config(&cli);
    if cli.validate_only {
        let verdict = match &cfg {
            Ok(c) => serde_json::json!({ "valid": true, "errors": [], "config_hash": c.hash() }),
            Err(e) => serde_json::json!({ "valid": false, "errors": config_errors(e) }),
        };
        println!("{verdict}");
        return if cfg.is_ok() { ExitCode::SUCCESS } else { ExitCode::from(EXIT_CONFIG) };
    }
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: invalid configuration");
            for msg in config_errors(&e) {
                eprintln!("  {msg}");
            }
            return ExitCode::from(EXIT_CONFIG);
        }
    };

    match run_stage(&cfg, &cli.command) {
        Ok(()) => {
            log::info!("artifacts in {}", cfg.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if is_invariant(&e) { EXIT_INVARIANT } else { EXIT_STAGE })
        }
    }
}
