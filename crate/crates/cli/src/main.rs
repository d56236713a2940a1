use clap::{Args, Parser, Subcommand};
use sprnet_cli::stages::{predict_to_csv, PredictInput};
use sprnet_cli::{run_stage, CliError, PipelineConfig, Stage};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "sprnet", version, about = "Probabilistic seismic response surrogate pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override a config value, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate ground motions and simulate the bridge dataset.
    GenData(Common),
    /// Train the deterministic network (and the LSTM baseline).
    Train(Common),
    /// Shapley attribution and key-feature selection.
    Explain(Common),
    /// Transfer to the probabilistic network on the selected features.
    Transfer(Common),
    /// Trace metrics of every trained model on the test split.
    Evaluate(Common),
    /// Cloud-analysis fragility curves from truth and predictions.
    Fragility(Common),
    /// Seismic loss ratios from the fragility fits.
    Loss(Common),
    /// Run every stage in order.
    All(Common),
    /// Predict one response history.
    Predict {
        #[command(flatten)]
        common: Common,
        /// `det`, `prob`, `baseline` or a path to a weight file.
        #[arg(long, default_value = "det")]
        model: String,
        /// Dataset sample index.
        #[arg(long, conflicts_with_all = ["gm", "features"])]
        sample: Option<usize>,
        /// Ground-motion text record.
        #[arg(long, requires = "features")]
        gm: Option<PathBuf>,
        /// Comma-separated model features in the model's feature order.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        features: Option<Vec<f64>>,
        /// Output CSV; stdout when omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Print a complete configuration with preset values.
    InitConfig {
        #[arg(long, default_value = "desk", value_parser = ["desk", "paper"])]
        preset: String,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

fn stages(stage: Option<Stage>, c: &Common) -> Result<(), CliError> {
    let cfg = PipelineConfig::load(&c.config, &c.overrides)?;
    let list: Vec<Stage> = stage.map_or_else(|| Stage::ALL.to_vec(), |s| vec![s]);
    for s in list {
        eprintln!("[{}] running", s.name());
        let report = run_stage(s, &cfg)?;
        for o in &report.outputs {
            eprintln!("[{}] wrote {o}", s.name());
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(c) => stages(Some(Stage::GenData), &c),
        Command::Train(c) => stages(Some(Stage::Train), &c),
        Command::Explain(c) => stages(Some(Stage::Explain), &c),
        Command::Transfer(c) => stages(Some(Stage::Transfer), &c),
        Command::Evaluate(c) => stages(Some(Stage::Evaluate), &c),
        Command::Fragility(c) => stages(Some(Stage::Fragility), &c),
        Command::Loss(c) => stages(Some(Stage::Loss), &c),
        Command::All(c) => stages(None, &c),
        Command::Predict { common, model, sample, gm, features, out } => {
            let cfg = PipelineConfig::load(&common.config, &common.overrides)?;
            let input = match (sample, gm, features) {
                (Some(id), _, _) => PredictInput::Sample(id),
                (None, Some(gm), Some(features)) => PredictInput::Record { gm, features },
                _ => return Err(CliError::Config("predict needs --sample or --gm with --features".into())),
            };
            let csv = predict_to_csv(&cfg, &model, &input)?;
            match out {
                Some(p) => sprnet_core::io::write_atomic(&p, csv.as_bytes())?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::InitConfig { preset, seed } => {
            let cfg = if preset == "paper" { PipelineConfig::paper(seed) } else { PipelineConfig::desk(seed) };
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
