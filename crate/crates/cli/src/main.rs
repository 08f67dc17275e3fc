use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use vendirl::trainer::Method;
use vendirl_cli::{cmd_eval, cmd_plot, cmd_score, cmd_train, CliError, Overrides, PlotRequest};

#[derive(Parser)]
#[command(name = "vendirl", version, about = "Diversity-rewarded skill discovery in a 2D point world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Vendirl,
    Misl,
    Random,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Vendirl => Method::Vendirl,
            MethodArg::Misl => Method::Misl,
            MethodArg::Random => Method::Random,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train skills and write metrics.csv, checkpoints and the resolved config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides output.dir).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
    },
    /// Roll out a checkpoint, print its evaluation score, write trajectories.csv.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a trajectories CSV as SVG.
    Plot {
        input: PathBuf,
        output: PathBuf,
        /// Supplies colors and bounds.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Score to print in the title.
        #[arg(long)]
        vs: Option<f64>,
        #[arg(long)]
        title: Option<String>,
    },
    /// Score an external trajectories CSV under the evaluation kernel.
    Score {
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            method,
        } => {
            let overrides = Overrides {
                seed,
                out,
                method: method.map(Into::into),
            };
            let summary = cmd_train(&config, &overrides)?;
            println!("wrote {} metric rows to {}", summary.rows, summary.out_dir.display());
            if let Some(vs) = summary.final_eval_vs {
                println!("final eval VS: {vs}");
            }
        }
        Command::Eval {
            checkpoint,
            config,
            seed,
            out,
        } => {
            let overrides = Overrides {
                seed,
                out,
                method: None,
            };
            let summary = cmd_eval(&checkpoint, config.as_deref(), &overrides)?;
            println!("eval VS: {}", summary.vendi_score);
            println!("trajectories: {}", summary.trajectories_path.display());
        }
        Command::Plot {
            input,
            output,
            config,
            vs,
            title,
        } => {
            let n = cmd_plot(&PlotRequest {
                input: &input,
                output: &output,
                config: config.as_deref(),
                vendi_score: vs,
                title,
            })?;
            println!("plotted {n} rollouts to {}", output.display());
        }
        Command::Score { input, config } => {
            println!("VS: {}", cmd_score(&input, config.as_deref())?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
