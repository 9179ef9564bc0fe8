use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mtmd::data::{generate_synthetic, SyntheticSpec};
use mtmd::harness::{evaluate, export_embeddings, run_ablation, train, Checkpoint, Split, TrainConfig};
use mtmd::MtmdError;

#[derive(Parser)]
#[command(name = "mtmd", version, about = "Memory-augmented concept-graph stock forecaster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted-factor synthetic market.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and save the best-validation checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "mtmd.ckpt")]
        out: PathBuf,
        /// Optional JSON training log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Optional per-date metrics CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train B, P, H and A and print the comparison table.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seeds; defaults to the config seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Write per-stock stage features as CSV.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
    },
}

fn exit_code(e: &MtmdError) -> u8 {
    match e {
        MtmdError::Numeric(_) => 3,
        MtmdError::Config(_) => 1,
        _ => 2,
    }
}

fn read_spec(path: &Path) -> mtmd::Result<SyntheticSpec> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| MtmdError::Config(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> mtmd::Result<()> {
    match cli.command {
        Command::GenData { spec, out } => {
            let spec = read_spec(&spec)?;
            std::fs::create_dir_all(&out)?;
            let market = generate_synthetic(&spec)?;
            market.write(&out)?;
            println!(
                "wrote {} records over {} dates to {}",
                market.records.len(),
                market.panel.len(),
                out.display()
            );
        }
        Command::Train {
            config,
            seed,
            out,
            log,
        } => {
            let mut cfg = TrainConfig::from_json_file(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let outcome = train(&cfg)?;
            for e in &outcome.log {
                match e.valid_ic {
                    Some(ic) => println!("epoch {:>3}  loss {:.6}  valid IC {:.4}", e.epoch, e.train_loss, ic),
                    None => println!("epoch {:>3}  loss {:.6}", e.epoch, e.train_loss),
                }
            }
            outcome.checkpoint.save(&out)?;
            if let Some(path) = log {
                let text = serde_json::to_string_pretty(&outcome.log).map_err(|e| MtmdError::Config(e.to_string()))?;
                std::fs::write(path, text)?;
            }
            println!(
                "saved epoch {} to {}",
                outcome.checkpoint.meta.epoch.unwrap_or(0),
                out.display()
            );
        }
        Command::Eval { checkpoint, split, csv } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let report = evaluate(&ck, split)?;
            print!("{}", report.summary_table(&format!("{split:?}")));
            if let Some(path) = csv {
                std::fs::write(path, report.to_csv())?;
            }
        }
        Command::Ablate { config, seeds } => {
            let cfg = TrainConfig::from_json_file(&config)?;
            let seeds = if seeds.is_empty() { vec![cfg.seed] } else { seeds };
            let report = run_ablation(&cfg, &seeds)?;
            print!("{}", report.table());
        }
        Command::ExportEmbeddings { checkpoint, out, split } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let rows = export_embeddings(&ck, split, &out)?;
            println!("wrote {rows} rows to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
