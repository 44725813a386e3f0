//! `paramflow` command-line driver.

mod commands;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use paramflow::Error;

#[derive(Parser)]
#[command(name = "paramflow", version = env!("PARAMFLOW_VERSION"), about = "Flow-based surrogate modeling and parameter exploration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, Default, ValueEnum)]
pub enum Preset {
    /// Library defaults (d = 64, alpha = 1).
    #[default]
    Default,
    /// Settings of the reference synthetic run.
    Reference,
}

#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// TOML document overriding the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Default)]
    preset: Preset,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file pair.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the autoencoder on the training split.
    TrainAe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the flow on encoded training fields.
    TrainFlow {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        ae: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score reconstruction, prediction and reverse prediction on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, required_unless_present = "predictions")]
        ae: Option<PathBuf>,
        #[arg(long, required_unless_present = "predictions")]
        flow: Option<PathBuf>,
        /// Compare against the fields of another dataset instead of a model.
        #[arg(long, conflicts_with_all = ["ae", "flow"])]
        predictions: Option<PathBuf>,
        #[arg(long)]
        n_samples: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the genetic search headlessly and export its lineage.
    Explore {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        ae: PathBuf,
        #[arg(long)]
        flow: PathBuf,
        /// Raw parameters of a single preference with score 1.
        #[arg(long)]
        params: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict mean and variance fields for raw parameters.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        ae: PathBuf,
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        params: String,
        #[arg(long)]
        n_samples: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict raw parameters for a field file (little-endian f32 values).
    Reverse {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        ae: PathBuf,
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the HTTP exploration service.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Directory holding datasets/, checkpoints/ and sessions/.
        #[arg(long, default_value = "data")]
        data: PathBuf,
    },
}

/// 1 for input problems, 2 for failures while computing.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Training(_) => 2,
        Error::Io { source, .. } if source.kind() != std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { common, out } => commands::synth(&common, &out),
        Command::TrainAe {
            common,
            dataset,
            out,
        } => commands::train_ae(&common, &dataset, &out),
        Command::TrainFlow {
            common,
            dataset,
            ae,
            out,
        } => commands::train_flow(&common, &dataset, &ae, &out),
        Command::Eval {
            common,
            dataset,
            ae,
            flow,
            predictions,
            n_samples,
            out,
        } => match predictions {
            Some(p) => commands::eval_against(&common, &dataset, &p, &out),
            None => commands::eval(
                &common,
                &dataset,
                &ae.expect("required by clap"),
                &flow.expect("required by clap"),
                n_samples,
                &out,
            ),
        },
        Command::Explore {
            common,
            dataset,
            ae,
            flow,
            params,
            out,
        } => commands::explore(&common, &dataset, &ae, &flow, params.as_deref(), &out),
        Command::Predict {
            common,
            dataset,
            ae,
            flow,
            params,
            n_samples,
            out,
        } => commands::predict(&common, &dataset, &ae, &flow, &params, n_samples, &out),
        Command::Reverse {
            common,
            dataset,
            ae,
            flow,
            field,
            out,
        } => commands::reverse(&common, &dataset, &ae, &flow, &field, out.as_deref()),
        Command::Serve { common, port, data } => commands::serve(&common, port, &data),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
