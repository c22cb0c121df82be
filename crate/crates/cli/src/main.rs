//! `refine` — CLI front end for the distillation benchmark: data
//! generation, teacher pretraining, variant runs, comparison tables, the
//! local-vs-global prompt demo, and the gradient check suite.
//!
//! Output root: `--out`, else `$REFINE_OUT`, else `./runs`.
//! Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 validity refusal.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use refine_cli::commands::{self, CmdResult};

#[derive(Parser)]
#[command(name = "refine", version, about = "Two-stage control-module distillation benchmark")]
struct Cli {
    /// Output root (overrides $REFINE_OUT; default ./runs)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Experiment config JSON (defaults apply when omitted)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the three dataset splits
    GenData {
        /// Overwrite an existing dataset directory
        #[arg(long)]
        force: bool,
    },
    /// Pretrain the teacher control module to its held-out PSNR floor
    TrainTeacher,
    /// Train and evaluate one variant
    Run {
        /// ours | fc | wo_mask | one_stage | sl | wo_cf
        #[arg(long)]
        variant: String,
        #[arg(long)]
        seed: u64,
    },
    /// Compare runs' reports side by side
    Table {
        /// Run directories (each containing report.json)
        run_dirs: Vec<PathBuf>,
        /// Also write CSV (and a bar plot) to this path
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Side-by-side local-vs-global prompt inpainting on a two-same-shape scene
    Promptdemo {
        #[arg(long)]
        scene_seed: u64,
        #[arg(long, default_value_t = 0)]
        target_index: usize,
        /// Control-module checkpoint directory (e.g. a run's final checkpoint
        /// or the teacher's)
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Finite-difference verification of every loss gradient
    Gradcheck,
}

fn dispatch(cli: Cli) -> CmdResult<()> {
    let out = commands::out_root(cli.out.as_deref());
    match cli.command {
        Command::GenData { force } => {
            let cfg = commands::load_config(cli.config.as_deref())?;
            commands::cmd_gen_data(&cfg, &out, force)
        }
        Command::TrainTeacher => {
            let cfg = commands::load_config(cli.config.as_deref())?;
            commands::cmd_train_teacher(&cfg, &out)
        }
        Command::Run { variant, seed } => {
            let cfg = commands::load_config(cli.config.as_deref())?;
            commands::cmd_run(&variant, seed, &cfg, &out)?;
            Ok(())
        }
        Command::Table { run_dirs, csv } => {
            commands::cmd_table(&run_dirs, csv.as_deref())?;
            Ok(())
        }
        Command::Promptdemo {
            scene_seed,
            target_index,
            checkpoint,
        } => {
            let cfg = commands::load_config(cli.config.as_deref())?;
            commands::cmd_promptdemo(scene_seed, target_index, &checkpoint, &cfg, &out)?;
            Ok(())
        }
        Command::Gradcheck => commands::cmd_gradcheck(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code() as u8)
        }
    }
}
