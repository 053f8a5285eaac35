//! Command-line entry point for training, evaluation, the expert pipeline,
//! the ablation grid, and plot emission. Exit codes: 0 success, 1
//! configuration problem, 2 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::Value;

use safe_cor::cor::DemoLabel;
use safe_cor::harness::{
    ablation_grid, emit_plots, evaluate, generate_demos, parse_override, run_pipeline,
    write_eval_csv, RunConfig,
};
use safe_cor::nn::load_checkpoint;
use safe_cor::trainer::train_to_dir;
use safe_cor::{Error, Result};

#[derive(Parser)]
#[command(name = "safe-cor", version, about = "Constrained RL with demonstration-shaped rewards")]
struct Cli {
    /// Flat key-value JSON config file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Dot-path config override, repeatable: --override trainer.max_kl=0.01
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Replaces the configured seed list with a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides run.out_dir).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write metrics.csv and checkpoint.txt.
    Train,
    /// Roll episodes from a checkpoint into demonstration files.
    GenDemos {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// reward_expert, safe_expert, or other
        #[arg(long)]
        label: String,
    },
    /// Evaluate a checkpoint over the configured episodes and seeds.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Experts -> demos -> per-seed agents -> comparison.csv.
    Pipeline,
    /// Train every shaping variant and write ablation.csv with medians.
    Ablate,
    /// Draw SVG training curves from metrics CSV files.
    Plot {
        /// One metrics.csv per series.
        #[arg(required = true, value_name = "CSV")]
        csvs: Vec<PathBuf>,
    },
}

fn series_label(path: &Path) -> String {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("series");
    if stem == "metrics" {
        // metrics.csv files are named by their run directory
        path.parent()
            .and_then(|d| d.file_name())
            .and_then(|s| s.to_str())
            .unwrap_or(stem)
            .to_owned()
    } else {
        stem.to_owned()
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut overrides: Vec<(String, Value)> = cli
        .overrides
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<_>>()?;
    if let Some(seed) = cli.seed {
        overrides.push(("run.seeds".to_owned(), serde_json::json!([seed])));
    }
    if let Some(out) = &cli.out {
        overrides.push((
            "run.out_dir".to_owned(),
            Value::String(out.display().to_string()),
        ));
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;

    match cli.command {
        Command::Train => {
            let demos = cfg.load_demo_sets()?;
            let result = train_to_dir(
                &cfg.trainer,
                &cfg.env,
                demos.as_ref().map(|(r, s)| (r, s)),
                cfg.seeds[0],
                &cfg.out_dir,
            )?;
            println!(
                "trained {} batches -> {}",
                result.metrics.len(),
                cfg.out_dir.display()
            );
            if let Some(last) = result.metrics.last() {
                println!(
                    "final batch: reward {:.4} cost {:.4} cost_rate {:.5} multiplier {:.4}",
                    last.avg_reward_return, last.avg_cost_return, last.cost_rate, last.multiplier
                );
            }
        }
        Command::GenDemos { checkpoint, label } => {
            let label = DemoLabel::parse(&label).ok_or_else(|| {
                Error::Config(format!(
                    "unknown demo label `{label}` (reward_expert|safe_expert|other)"
                ))
            })?;
            let ckpt = load_checkpoint(&checkpoint)?;
            let prefix = match label {
                DemoLabel::RewardExpert => "reward",
                DemoLabel::SafeExpert => "safe",
                DemoLabel::Other => "other",
            };
            let states = cfg.out_dir.join(format!("{prefix}_states.txt"));
            let actions = cfg.out_dir.join(format!("{prefix}_actions.txt"));
            let set = generate_demos(
                &ckpt.policy,
                &cfg.env,
                cfg.demo_episodes,
                label,
                cfg.demo_max_states,
                cfg.seeds[0],
                &states,
                &actions,
            )?;
            println!(
                "wrote {} demonstration states (dim {}) -> {}",
                set.count(),
                set.dim(),
                states.display()
            );
        }
        Command::Eval { checkpoint } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let eval = evaluate(&ckpt, &cfg.env, cfg.eval_episodes, &cfg.seeds, &cfg.score)?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            let path = cfg.out_dir.join("eval.csv");
            write_eval_csv(&path, &eval)?;
            let a = &eval.aggregate;
            println!(
                "episodes {} | reward {:.4} cost {:.4} cv {:.3} cost_rate {:.5} score {:.4}",
                eval.episodes.len(),
                a.reward_return,
                a.cost_return,
                a.cv,
                a.cost_rate,
                a.score
            );
            println!("wrote {}", path.display());
        }
        Command::Pipeline => {
            let out = run_pipeline(&cfg)?;
            println!("pipeline artifacts in {}", out.display());
        }
        Command::Ablate => {
            let path = ablation_grid(&cfg)?;
            println!("wrote {}", path.display());
        }
        Command::Plot { csvs } => {
            let spec = cfg.env.spec()?;
            let inputs: Vec<(String, PathBuf)> = csvs
                .iter()
                .map(|p| (series_label(p), p.clone()))
                .collect();
            for p in emit_plots(&inputs, &cfg.out_dir, spec.threshold_d)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
