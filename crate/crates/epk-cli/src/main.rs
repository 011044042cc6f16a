//! `epk` — train small models with fully recorded trajectories, rebuild
//! their predictions as path-kernel machines, and run the influence
//! analyses and surgery experiments on top.
//!
//! Every run is driven by one flat JSON config. Any config key can be
//! overridden on the command line as `--<key> <value>` (`--steps 500`,
//! `--alpha 0.002`, `--components decoder,linear1`); the remaining flags
//! are plumbing (`--config`, `--preset`, `--run`, `--out`, `--workers`,
//! `--seed`, `--T`). Exit status: 0 success, 1 validation failure,
//! 2 missing input.

mod commands;
mod context;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand};

use context::{extract_overrides, validation, CmdResult, Common};

#[derive(Parser)]
#[command(
    name = "epk",
    version,
    about = "Path-kernel reconstruction and influence analysis for small models",
    after_help = "Any config key doubles as an override flag: `--steps 500`, \
                  `--alpha 0.002`, `--weight_decay 4.0`, ...\n\
                  EPK_OUT_ROOT sets the default output root."
)]
struct Cli {
    /// Worker threads for the parallel sections (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct CommonArgs {
    /// Flat JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named built-in config: desk_transformer, desk_grokking,
    /// study_transformer, or desk_mlp.
    #[arg(long)]
    preset: Option<String>,
    /// Run directory from a previous `epk train`.
    #[arg(long)]
    run: Option<PathBuf>,
    /// Output directory (default: $EPK_OUT_ROOT/<command> or
    /// epk_out/<command>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed: sets init_seed, batch_seed, data_seed to N, N+1, N+2.
    #[arg(long)]
    seed: Option<u64>,
    /// Quadrature order for path integrals (overrides integration_steps).
    #[arg(long = "T")]
    t: Option<usize>,
}

impl CommonArgs {
    fn into_common(self) -> Common {
        Common {
            config: self.config,
            preset: self.preset,
            run: self.run,
            out: self.out,
            seed: self.seed,
            t: self.t,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, recording the full optimizer trajectory.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Import the train/test split from a dataset CSV instead of
        /// generating it.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Verify a trajectory: replay it, check the per-step update identity,
    /// and measure reconstruction fidelity across quadrature orders.
    EpkVerify {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Accumulated per-parameter influence scores (the pruning signal).
    Scores {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Test x train kernel matrix for one component, as CSV + heatmap.
    KernelMatrix {
        #[command(flatten)]
        common: CommonArgs,
        /// Component to slice (defaults to the config's single entry).
        #[arg(long)]
        component: Option<String>,
        /// Row/column order: by_sum, by_label, or by_index.
        #[arg(long)]
        ordering: Option<String>,
    },
    /// Cosine similarity between per-sample influence vectors.
    Similarity {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        component: Option<String>,
    },
    /// Per-step influence magnitudes for every component.
    StepImportance {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Prune parameters by influence score, magnitude, or at random.
    Prune {
        #[command(flatten)]
        common: CommonArgs,
        /// epk_score, magnitude, or random (defaults to the config).
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Graft components from one checkpoint into another and re-evaluate.
    Swap {
        #[command(flatten)]
        common: CommonArgs,
        /// Step whose parameters donate the grafted components.
        #[arg(long)]
        source_step: Option<usize>,
        /// Step receiving the graft (default: final).
        #[arg(long)]
        target_step: Option<usize>,
    },
    /// Retrain from fresh seeds with donor components grafted into the
    /// initialization.
    ReinitTrain {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        source_step: Option<usize>,
    },
    /// Regress the influence-similarity structure onto cos/sin features of
    /// the pair differences.
    Lasso {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        component: Option<String>,
    },
    /// Summarize a run's phases (memorization, generalization, peaks).
    Report {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn dispatch(cli: Cli, overrides: &[(String, String)]) -> CmdResult<()> {
    match cli.command {
        Command::Train { common, data } => {
            commands::cmd_train(&common.into_common(), overrides, data.as_deref())
        }
        Command::EpkVerify { common } => {
            commands::cmd_epk_verify(&common.into_common(), overrides)
        }
        Command::Scores { common } => commands::cmd_scores(&common.into_common(), overrides),
        Command::KernelMatrix {
            common,
            component,
            ordering,
        } => commands::cmd_kernel_matrix(
            &common.into_common(),
            overrides,
            component.as_deref(),
            ordering.as_deref(),
        ),
        Command::Similarity { common, component } => {
            commands::cmd_similarity(&common.into_common(), overrides, component.as_deref())
        }
        Command::StepImportance { common } => {
            commands::cmd_step_importance(&common.into_common(), overrides)
        }
        Command::Prune { common, strategy } => {
            commands::cmd_prune(&common.into_common(), overrides, strategy.as_deref())
        }
        Command::Swap {
            common,
            source_step,
            target_step,
        } => commands::cmd_swap(&common.into_common(), overrides, source_step, target_step),
        Command::ReinitTrain {
            common,
            source_step,
        } => commands::cmd_reinit_train(&common.into_common(), overrides, source_step),
        Command::Lasso { common, component } => {
            commands::cmd_lasso(&common.into_common(), overrides, component.as_deref())
        }
        Command::Report { common } => commands::cmd_report(&common.into_common(), overrides),
    }
}

fn run() -> CmdResult<()> {
    let argv: Vec<String> = std::env::args().collect();
    let (rest, overrides) = extract_overrides(argv)?;

    let cli = match Cli::try_parse_from(&rest) {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            let text = e.to_string();
            let text = text.strip_prefix("error: ").unwrap_or(&text);
            return Err(validation(anyhow!("{text}")));
        }
    };

    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(validation(anyhow!("--workers must be at least 1")));
        }
        // Ignore the error if a pool already exists (e.g. under tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    dispatch(cli, &overrides)
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_scanner_separates_config_keys_from_flags() {
        let args: Vec<String> = [
            "epk",
            "train",
            "--preset",
            "desk_mlp",
            "--steps",
            "50",
            "--alpha",
            "0.05",
            "--out",
            "somewhere",
            "--train-fraction",
            "0.8",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let (rest, overrides) = extract_overrides(args).unwrap();
        assert_eq!(rest, ["epk", "train", "--preset", "desk_mlp", "--out", "somewhere"]);
        assert_eq!(
            overrides,
            [
                ("steps".to_string(), "50".to_string()),
                ("alpha".to_string(), "0.05".to_string()),
                ("train_fraction".to_string(), "0.8".to_string()),
            ]
        );
    }

    #[test]
    fn dangling_override_is_rejected() {
        let args: Vec<String> = ["epk", "train", "--steps"].iter().map(|s| s.to_string()).collect();
        let err = extract_overrides(args).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
