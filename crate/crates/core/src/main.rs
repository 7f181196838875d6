use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use apinn::apinn::RefinementPolicy;
use apinn::cli::{cmd_generate_data, cmd_report, cmd_sample, cmd_train, BackendKind, ExperimentConfig, Preset, SampleInputs};
use apinn::Result;

#[derive(Parser)]
#[command(name = "apinn", version, about = "Bayesian PDE parameter estimation with MCMC and refined PINN surrogates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve at the true parameters, add noise, write dataset.json.
    GenerateData(ConfigArgs),
    /// Train the surrogate offline, write checkpoint.json and train_loss.csv.
    Train(ConfigArgs),
    /// Run one Metropolis-Hastings chain.
    Sample {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum)]
        backend: BackendArg,
        /// Overrides `apinn.policy`.
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
        /// Defaults to `<output_dir>/dataset.json`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Defaults to `<output_dir>/checkpoint.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Histograms, summary table and comparison across chains.
    Report {
        /// Chain CSV files or directories holding `chain_*.csv`.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Defaults to `report/` next to the first input.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 40)]
        bins: usize,
    },
    /// Print the default configuration as TOML.
    DefaultConfig,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Desk,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Fd,
    Pinn,
    Apinn,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Discard,
    KeepAll,
    KeepFirst,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let preset = self.preset.map(|PresetArg::Desk| Preset::Desk);
        let mut cfg = ExperimentConfig::load(&self.config, preset)?;
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData(args) => {
            let path = cmd_generate_data(&args.load()?)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Train(args) => {
            let cfg = args.load()?;
            let stride = (cfg.training.max_iterations / 20).max(1);
            let path = cmd_train(&cfg, |i, loss| {
                if i % stride < cfg.training.loss_stride {
                    eprintln!("iteration {i:>8}  loss {loss:.6e}");
                }
            })?;
            eprintln!("wrote {}", path.display());
        }
        Command::Sample {
            config,
            backend,
            policy,
            data,
            checkpoint,
        } => {
            let cfg = config.load()?;
            let backend = match backend {
                BackendArg::Fd => BackendKind::Fd,
                BackendArg::Pinn => BackendKind::Pinn,
                BackendArg::Apinn => BackendKind::Apinn,
            };
            let policy = policy.map(|p| match p {
                PolicyArg::Discard => RefinementPolicy::DiscardAll,
                PolicyArg::KeepAll => RefinementPolicy::KeepAll,
                PolicyArg::KeepFirst => RefinementPolicy::KeepFirst,
            });
            let out = cmd_sample(
                &cfg,
                backend,
                &SampleInputs {
                    dataset: data,
                    checkpoint,
                    policy,
                },
            )?;
            eprintln!(
                "{}: acceptance {:.4}, descent iterations {}",
                out.tag,
                out.chain.acceptance_rate,
                out.chain.total_descent_iterations()
            );
            for f in &out.files {
                eprintln!("wrote {}", f.display());
            }
        }
        Command::Report { inputs, out, bins } => {
            let out = out.unwrap_or_else(|| {
                let first = &inputs[0];
                let base = if first.is_dir() {
                    first.clone()
                } else {
                    first.parent().map(PathBuf::from).unwrap_or_default()
                };
                base.join("report")
            });
            for f in cmd_report(&inputs, &out, bins)? {
                eprintln!("wrote {}", f.display());
            }
        }
        Command::DefaultConfig => {
            let text = ExperimentConfig::default().to_toml_string()?;
            std::io::stdout().write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), e);
            ExitCode::FAILURE
        }
    }
}
