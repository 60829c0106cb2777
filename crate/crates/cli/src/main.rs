use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ecgstate_cli::{cmd_evaluate, cmd_stream, cmd_synth, cmd_train, exit_code, parse_config};

#[derive(Parser)]
#[command(name = "ecgstate", about = "Conscious-state estimation from single-lead ECG")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// loso or grouped.
    #[arg(long, global = true)]
    folds: Option<String>,
    /// Replay speed factor; 0 replays as fast as possible.
    #[arg(long, global = true, default_value_t = 1.0)]
    speed: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic epoch files and a manifest.
    Synth,
    /// Train one model with a validation hold-out.
    Train,
    /// Cross-validated training and pooled metrics.
    Evaluate,
    /// Replay epochs through a checkpoint and measure latency.
    Stream,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let mut overrides = cli.set.clone();
    if let Some(out) = &cli.out {
        overrides.push(format!("out_dir={}", out.display()));
    }
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(f) = &cli.folds {
        overrides.push(format!("folds={f}"));
    }
    let result = parse_config(cli.config.as_deref(), &overrides).and_then(|cfg| match cli.command {
        Command::Synth => cmd_synth(&cfg).map(|r| println!("{} epochs -> {}", r.rows.len(), r.manifest.display())),
        Command::Train => cmd_train(&cfg).map(|r| println!("checkpoint -> {}", r.checkpoint.display())),
        Command::Evaluate => cmd_evaluate(&cfg).map(|r| {
            let o = &r.pooled.overall;
            println!(
                "pooled acc {:.4} mf1 {:.4} kappa {:.4} auc {} -> {}",
                o.acc,
                o.mf1,
                o.kappa,
                r.pooled.auc.map_or("undefined".into(), |a| format!("{a:.4}")),
                r.metrics_path.display()
            )
        }),
        Command::Stream => cmd_stream(&cfg, cli.speed).map(|r| {
            println!(
                "{} events, latency mean {:.3} ms median {:.3} ms max {:.3} ms -> {}",
                r.latency.count,
                r.latency.mean_ms,
                r.latency.median_ms,
                r.latency.max_ms,
                r.events_path.display()
            )
        }),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
