use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use mdmtl::model::BlockId;
use mdmtl_cli::commands::{self, gradcheck_table, GRADCHECK_TOL};
use mdmtl_cli::config::RawConfig;
use mdmtl_cli::CliError;

#[derive(Parser)]
#[command(name = "mdmtl", version, about = "Multi-domain / multi-task learning experiments with semantic descriptors")]
struct Cli {
    /// only print warnings and errors
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// INI configuration file
    #[arg(long, short)]
    config: Option<PathBuf>,

    /// override a key, e.g. `--set train.epochs=200` (repeatable)
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,

    /// training seed (overrides train.seed)
    #[arg(long)]
    seed: Option<u64>,

    /// output directory (overrides output.dir)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-domain dataset
    Synth(Common),
    /// Fixed-split experiment over the configured methods
    Train(Common),
    /// Score a saved model on the configured data
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Leave-one-domain-out zero-shot domain adaptation
    Zsda(Common),
    /// Finite-difference gradient check of every architecture
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// corrupt one block's analytic gradient (P, Q, U_D, U_C, U_B, S, W)
        #[arg(long, value_name = "BLOCK")]
        tamper: Option<String>,
    },
    /// Describe a model file or print a text file
    Inspect { path: PathBuf },
    /// Print the fully resolved configuration
    ShowConfig(Common),
}

fn raw_config(c: &Common) -> Result<RawConfig, CliError> {
    let mut raw = match &c.config {
        Some(p) => RawConfig::from_str_with_defaults(&std::fs::read_to_string(p)?)?,
        None => RawConfig::default(),
    };
    for o in &c.overrides {
        raw.apply_override(o)?;
    }
    if let Some(s) = c.seed {
        raw.set("train", "seed", &s.to_string())?;
    }
    if let Some(o) = &c.out {
        raw.set("output", "dir", &o.to_string_lossy())?;
    }
    Ok(raw)
}

fn parse_block(name: &str) -> Result<BlockId, CliError> {
    BlockId::ALL
        .into_iter()
        .find(|b| b.name().eq_ignore_ascii_case(name))
        .ok_or_else(|| CliError::config("--tamper", format!("unknown block '{name}'")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(c) => {
            let raw = raw_config(&c)?;
            let dir = PathBuf::from(raw.get("output", "dir"));
            for p in commands::run_synth(&raw, &dir)? {
                info!("wrote {}", p.display());
            }
        }
        Command::Train(c) => {
            let cfg = raw_config(&c)?.build()?;
            let report = commands::run_train(&cfg)?;
            print!("{}", report.table());
            info!("reports in {}", cfg.out_dir.display());
        }
        Command::Eval { common, model } => {
            let cfg = raw_config(&common)?.build()?;
            let (overall, per) = commands::run_eval(&cfg, &model)?;
            println!("overall error {:.2}%", 100.0 * overall);
            for (d, e) in per {
                println!("  {d:<12} {:.2}%", 100.0 * e);
            }
        }
        Command::Zsda(c) => {
            let cfg = raw_config(&c)?.build()?;
            let report = commands::run_zsda(&cfg)?;
            print!("{}", report.table());
            info!("reports in {}", cfg.out_dir.display());
        }
        Command::Gradcheck { seed, tamper } => {
            let tamper = tamper.as_deref().map(parse_block).transpose()?;
            let rows = commands::run_gradcheck(seed, tamper)?;
            print!("{}", gradcheck_table(&rows));
            let failed = rows.iter().filter(|r| !r.report.passed(GRADCHECK_TOL)).count();
            if failed > 0 {
                return Err(CliError::Check(format!(
                    "{failed} architecture/loss combination(s) exceed tolerance {GRADCHECK_TOL:e}"
                )));
            }
        }
        Command::Inspect { path } => print!("{}", commands::run_inspect(&path)?),
        Command::ShowConfig(c) => print!("{}", raw_config(&c)?.to_ini_string()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
