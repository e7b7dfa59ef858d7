//! Command-line driver: single runs, preset sweeps and checkpoint evaluation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ncl_core::pipeline::{eval_checkpoint, run_experiment, sweep, Preset, PresetSet, RunConfig};
use ncl_core::Error;

#[derive(Parser)]
#[command(name = "ncl", version, about = "Neighborhood contrastive learning for novel class discovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train all three stages and write the run outputs.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        preset: Option<Preset>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run every preset of an ablation table over consecutive seeds.
    Sweep {
        #[arg(long = "preset-set")]
        preset_set: PresetSet,
        #[arg(long)]
        seeds: usize,
        /// Base configuration; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
    },
    /// Cluster a dataset's unlabeled split with a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Json(_) | Error::Io(_) | Error::Csv(_) => 2,
        Error::NonFinite { .. } => 3,
        _ => 1,
    }
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, preset, seed, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(p) = preset {
                cfg = cfg.with_preset(p);
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let outcome = run_experiment(&cfg, &out)?;
            let s = &outcome.summary;
            println!(
                "preset={} seed={} final_acc={:.4} best_acc={:.4} out={}",
                s.preset,
                s.seed,
                s.final_acc,
                s.best_acc,
                out.display()
            );
        }
        Command::Sweep { preset_set, seeds, config, out } => {
            let cfg = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::default(),
            };
            for row in sweep(&cfg, preset_set, seeds, &out)? {
                println!("{:<14} acc={:.4} ± {:.4} over {} seeds", row.preset, row.mean_final_acc, row.std_final_acc, row.seeds.len());
            }
        }
        Command::Eval { checkpoint, dataset } => {
            let r = eval_checkpoint(&checkpoint, &dataset)?;
            println!("acc={:.4} permutation={:?}", r.acc, r.permutation);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
