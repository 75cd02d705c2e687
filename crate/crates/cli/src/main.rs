use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qfeedback_cli::{cmd_compare, cmd_rates, cmd_simulate, cmd_train, ExperimentConfig, Failure, Overrides};

#[derive(Parser, Debug)]
#[command(name = "qfeedback", version, about = "Qubit decay suppression under feedback control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the closed-form lifetime table and write rates.csv
    Rates(Common),
    /// Integrate every scheme and write population traces
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also run the homodyne trajectory ensemble and export its records
        #[arg(long)]
        records: bool,
    },
    /// Train the current predictor on a time_us,current record
    Train {
        #[command(flatten)]
        common: Common,
        /// Record to train on
        #[arg(long)]
        record: PathBuf,
    },
    /// Fit numerical traces and compare with the closed forms
    Compare(Common),
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Bare decay rate in 1/us
    #[arg(long)]
    gamma: Option<f64>,
    /// Detection efficiency; repeat for several
    #[arg(long = "eta")]
    etas: Vec<f64>,
    #[arg(long)]
    cooperativity: Option<f64>,
    /// Predictor correlation r
    #[arg(long)]
    correlation: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    trajectories: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Failure> {
        let mut cfg = ExperimentConfig::load(self.config.as_deref())?;
        cfg.apply(&Overrides {
            gamma: self.gamma,
            etas: (!self.etas.is_empty()).then(|| self.etas.clone()),
            cooperativity: self.cooperativity,
            correlation: self.correlation,
            seed: self.seed,
            dt: self.dt,
            t_final: self.t_final,
            n_trajectories: self.trajectories,
            out: self.out.clone(),
        });
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Rates(c) => print!("{}", cmd_rates(&c.load()?)?),
        Command::Simulate { common, records } => {
            let report = cmd_simulate(&common.load()?, records)?;
            for f in &report.files {
                println!("{}", f.display());
            }
        }
        Command::Train { common, record } => print!("{}", cmd_train(&common.load()?, &record)?),
        Command::Compare(c) => print!("{}", cmd_compare(&c.load()?)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("qfeedback: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
