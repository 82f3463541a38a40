use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tmlp_cli::analysis::FixPolicy;
use tmlp_cli::commands::{cmd_boundary, cmd_eval, cmd_export_frequency, cmd_predict, cmd_train};
use tmlp_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "tmlp", version, about = "Tree-gated sparse MLP for tabular data")]
struct Cli {
    /// Log progress to stderr (also enabled by RUST_LOG).
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the gate and the network, write the model file and a JSON report.
    Train(TrainArgs),
    /// Predict a CSV with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a labeled CSV and print the metrics as JSON.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write the metrics to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the normalized tree frequency of every row.
    ExportFrequency {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write predictions over a grid of two numerical features.
    Boundary {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "x")]
        feat_x: String,
        #[arg(long = "y")]
        feat_y: String,
        #[arg(long, default_value_t = 50)]
        resolution: usize,
        #[arg(long, value_enum, default_value_t = FixPolicy::MedianMode)]
        fix: FixPolicy,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// TOML or JSON run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Fractions "train,valid,test" or a JSON file of row indices.
    #[arg(long)]
    split: Option<String>,
    /// Model file to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Metrics report path (default: model path + ".json").
    #[arg(long)]
    report: Option<PathBuf>,
    /// Train three branches and average them.
    #[arg(long)]
    ensemble: bool,
    /// Disable the tree feature gate.
    #[arg(long)]
    no_gate: bool,
    /// Disable pruning.
    #[arg(long)]
    no_sparsity: bool,
    /// Target retained ratio.
    #[arg(long)]
    sparsity: Option<f64>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Hidden width d.
    #[arg(long)]
    d: Option<usize>,
    /// Intermediate width d′.
    #[arg(long)]
    d_ff: Option<usize>,
}

impl TrainArgs {
    fn resolve(self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        let t = &mut cfg.fit.train;
        if self.no_gate {
            t.gate_enabled = false;
        }
        if self.no_sparsity {
            t.sparsity_enabled = false;
        }
        if let Some(s) = self.sparsity {
            t.target_sparsity = s;
        }
        if let Some(b) = self.blocks {
            t.n_blocks = Some(b);
        }
        if let Some(s) = self.seed {
            t.seed = s;
        }
        if let Some(e) = self.max_epochs {
            t.max_epochs = e;
        }
        if let Some(d) = self.d {
            t.d = d;
        }
        if let Some(d) = self.d_ff {
            t.d_ff = d;
        }
        if self.ensemble {
            cfg.fit.ensemble = true;
        }
        cfg.data = self.data.or(cfg.data);
        cfg.schema = self.schema.or(cfg.schema);
        cfg.out = self.out.or(cfg.out);
        cfg.report = self.report.or(cfg.report);
        if let Some(s) = self.split {
            cfg.split = s;
        }
        Ok(cfg)
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let result = cmd_train(&cfg)?;
            println!("{}", print_json(&result.report.metrics)?);
        }
        Command::Predict { model, data, out } => {
            let n = cmd_predict(&model, &data, &out)?;
            eprintln!("wrote {n} predictions to {}", out.display());
        }
        Command::Eval { model, data, out } => {
            let text = print_json(&cmd_eval(&model, &data)?)?;
            if let Some(out) = out {
                std::fs::write(&out, &text).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
            }
            println!("{text}");
        }
        Command::ExportFrequency { model, data, out } => {
            let n = cmd_export_frequency(&model, &data, &out)?;
            eprintln!("wrote {n} rows to {}", out.display());
        }
        Command::Boundary {
            model,
            feat_x,
            feat_y,
            resolution,
            fix,
            out,
        } => {
            let n = cmd_boundary(&model, &feat_x, &feat_y, resolution, fix, &out)?;
            eprintln!("wrote {n} grid rows to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or_default();
            eprintln!("error[USAGE]: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(2)
        }
    }
}
