//! Argument parsing and dispatch for the `rfau` binary.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O or format error,
//! 4 numeric error.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::Value;

use crate::error::Result;
use crate::experiment::{
    cmd_ablate_gamma, cmd_baseline, cmd_eval, cmd_gen_data, cmd_train, cmd_unlearn, parse_override, ExperimentConfig,
};

#[derive(Debug, Parser)]
#[command(name = "rfau", version, about = "Residual feature alignment unlearning experiments")]
pub struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Top-level seed; every component seed derives from it.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override any config value, e.g. `--set unlearn.lr=0.001`.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic train/test CSVs.
    GenData,
    /// Train the original model.
    Train,
    /// Residual feature alignment unlearning.
    Unlearn {
        #[arg(long)]
        gamma: Option<f64>,
        /// residual or teacher
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        rank: Option<usize>,
    },
    /// Run a comparison method: retrain, finetune, neggrad or badt.
    Baseline {
        #[arg(long)]
        method: String,
    },
    /// Compute the metric grid for the named models (all when none given).
    Eval { models: Vec<String> },
    /// Sweep γ and tabulate accuracy and feature distance.
    AblateGamma {
        #[arg(long, value_delimiter = ',')]
        gammas: Option<Vec<f64>>,
    },
}

impl Cli {
    /// Overrides in increasing precedence: `--set`, then dedicated flags.
    fn overrides(&self) -> Result<Vec<(String, Value)>> {
        let mut o = self.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
        if let Some(seed) = self.seed {
            o.push(("seed".into(), Value::from(seed)));
        }
        if let Some(out) = &self.out {
            o.push(("out".into(), Value::from(out.to_string_lossy().into_owned())));
        }
        if let Command::Unlearn {
            gamma,
            mode,
            lr,
            epochs,
            rank,
        } = &self.command
        {
            let mut put = |k: &str, v: Option<Value>| {
                if let Some(v) = v {
                    o.push((format!("unlearn.{k}"), v));
                }
            };
            put("gamma", gamma.map(Value::from));
            put("mode", mode.clone().map(Value::from));
            put("lr", lr.map(Value::from));
            put("epochs", epochs.map(Value::from));
            put("rank", rank.map(Value::from));
        }
        Ok(o)
    }
}

/// Resolves the configuration and runs the command.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &cli.overrides()?)?;
    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(
        cfg.path("config.resolved.json"),
        serde_json::to_string_pretty(&cfg)? + "\n",
    )?;
    match &cli.command {
        Command::GenData => cmd_gen_data(&cfg).map(drop),
        Command::Train => cmd_train(&cfg).map(drop),
        Command::Unlearn { .. } => cmd_unlearn(&cfg).map(drop),
        Command::Baseline { method } => cmd_baseline(&cfg, method).map(drop),
        Command::Eval { models } => {
            for r in cmd_eval(&cfg, models)? {
                println!("{}", summary_line(&r));
            }
            Ok(())
        }
        Command::AblateGamma { gammas } => {
            let gammas = gammas.clone().unwrap_or_else(|| cfg.ablation.gammas.clone());
            for row in cmd_ablate_gamma(&cfg, &gammas)? {
                let r = row.subset("d_r");
                println!(
                    "gamma {:.2}: D_r accuracy {:.4}, D_r feature distance {:.4}",
                    row.gamma,
                    r.map_or(f64::NAN, |s| s.accuracy),
                    r.map_or(f64::NAN, |s| s.feature_distance_def1)
                );
            }
            Ok(())
        }
    }
}

fn summary_line(r: &crate::eval::MetricsReport) -> String {
    let mut s = format!("{:<10}", r.method);
    for (name, m) in &r.subsets {
        s.push_str(&format!(" {name} acc {:.4}", m.accuracy));
    }
    s.push_str(&format!(" mia {:.2}", r.mia_success));
    s
}

/// Parses `args`, runs, prints any error and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
