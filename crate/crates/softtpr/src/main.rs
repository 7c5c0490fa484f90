use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use softtpr::checkpoint::Checkpoint;
use softtpr::commands::{self, QuantizeInput};
use softtpr::config::RunConfig;
use softtpr::datafile::read_dataset;
use softtpr::report::{probe_table, quantization_text};
use softtpr::{CliError, Result};
use softtpr_core::autodiff::GradcheckConfig;

#[derive(Parser)]
#[command(name = "softtpr", version, about = "Soft TPR autoencoder: data, training and evaluation")]
struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted; commands that
    /// load a checkpoint fall back to the config stored in it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Checkpoint to load; eval-probe accepts it repeatedly.
    #[arg(long, global = true)]
    checkpoint: Vec<PathBuf>,
    /// Dataset file written by generate-data.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    GenerateData,
    /// Train a model and write checkpoints.
    Train,
    /// Quantize vectors read from a file, one per line.
    Quantize {
        input: PathBuf,
        /// Lines are observations to encode, not TPR-space vectors.
        #[arg(long)]
        observations: bool,
    },
    /// Print the exact TPR of a matching (1-based filler indices).
    Compose {
        #[arg(value_delimiter = ',', required = true)]
        matching: Vec<usize>,
    },
    /// Disentanglement metrics of a checkpoint.
    EvalMetrics,
    /// Downstream probes (soft and explicit TPR inputs) for checkpoints.
    EvalProbe,
    /// Check backpropagated gradients of the training objective.
    Gradcheck,
}

fn resolve(cli: &Cli, stored: Option<&RunConfig>) -> Result<RunConfig> {
    let mut cfg = match (&cli.config, stored) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(c)) => c.clone(),
        (None, None) => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn single_checkpoint(cli: &Cli) -> Result<Checkpoint> {
    match cli.checkpoint.as_slice() {
        [path] => Checkpoint::load(path),
        [] => Err(CliError::Config("--checkpoint is required".into())),
        _ => Err(CliError::Config("this command takes one --checkpoint".into())),
    }
}

fn dataset(cli: &Cli) -> Result<Option<softtpr_core::dataset::Dataset>> {
    cli.dataset.as_deref().map(read_dataset).transpose()
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenerateData => {
            let cfg = resolve(cli, None)?;
            let path = commands::generate_data(&cfg, &cfg.out_dir)?;
            println!("wrote {}", path.display());
        }
        Command::Train => {
            let cfg = resolve(cli, None)?;
            let outcome = commands::train(&cfg, &cfg.out_dir)?;
            for p in &outcome.checkpoints {
                println!("wrote {}", p.display());
            }
            println!(
                "wrote {} (iteration {})",
                outcome.final_checkpoint.display(),
                outcome.model.iteration
            );
        }
        Command::Quantize { input, observations } => {
            let ckpt = single_checkpoint(cli)?;
            let text = std::fs::read_to_string(input).map_err(|source| CliError::Io {
                path: input.clone(),
                source,
            })?;
            let vectors = commands::parse_vectors(&text).map_err(|msg| CliError::Format {
                path: input.clone(),
                msg,
            })?;
            let kind = if *observations {
                QuantizeInput::Observation
            } else {
                QuantizeInput::Tpr
            };
            let results = commands::quantize(&ckpt.model, &vectors, kind)?;
            for (n, q) in results.iter().enumerate() {
                if n > 0 {
                    println!();
                }
                print!("{}", quantization_text(q));
            }
        }
        Command::Compose { matching } => {
            let ckpt = single_checkpoint(cli)?;
            if matching.contains(&0) {
                return Err(CliError::Config("matching indices are 1-based".into()));
            }
            let zero_based: Vec<usize> = matching.iter().map(|j| j - 1).collect();
            let v = commands::compose_tpr(&ckpt.model, &zero_based)?;
            let cells: Vec<String> = v.as_slice().iter().map(|x| x.to_string()).collect();
            println!("{}", cells.join(","));
        }
        Command::EvalMetrics => {
            let ckpt = single_checkpoint(cli)?;
            let cfg = resolve(cli, Some(&ckpt.config))?;
            let data = dataset(cli)?;
            let summary = commands::eval_metrics(&cfg, &ckpt.model, data.as_ref())?;
            commands::write_metrics(&cfg.out_dir, &summary)?;
            print!("{}", summary.to_table());
        }
        Command::EvalProbe => {
            if cli.checkpoint.is_empty() {
                return Err(CliError::Config("--checkpoint is required".into()));
            }
            let ckpts = cli
                .checkpoint
                .iter()
                .map(|p| Checkpoint::load(p))
                .collect::<Result<Vec<_>>>()?;
            let cfg = resolve(cli, Some(&ckpts[0].config))?;
            let models: Vec<_> = ckpts.iter().map(|c| &c.model).collect();
            let data = dataset(cli)?;
            let rows = commands::eval_probe(&cfg, &models, data.as_ref())?;
            commands::write_probe(&cfg.out_dir, &rows)?;
            print!("{}", probe_table(&rows));
        }
        Command::Gradcheck => {
            let cfg = resolve(cli, None)?;
            let report = commands::gradcheck(&cfg, &GradcheckConfig::default())?;
            print!("{}", commands::gradcheck_text(&report));
            if !report.passed() {
                return Err(CliError::Check("gradient check failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

