use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ahgcn::config::RunConfig;

#[derive(Parser)]
#[command(name = "ahgcn", about = "Hypergraph-based no-reference 360-degree image quality assessment", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the configured viewports of an equirectangular image.
    SampleViewports {
        /// 8-bit PNG or PPM equirectangular image (2:1 aspect).
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on a dataset manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on a dataset manifest.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check every analytic gradient against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupt one gradient to exercise the failure path.
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Dump a sample's incidence matrix and normalized operator as CSV.
    DumpHypergraph {
        sample_id: String,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_config(path: Option<&PathBuf>, seed: Option<u64>) -> ahgcn::Result<RunConfig> {
    let mut config = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

fn run() -> ahgcn::Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::SampleViewports {
            image,
            out,
            config,
            seed,
        } => {
            let config = load_config(config.as_ref(), seed)?;
            ahgcn::cli::cmd_sample_viewports(&image, &out, &config)?;
            println!("wrote {} viewports to {}", config.n_viewports, out.display());
        }
        Command::Train {
            manifest,
            out,
            config,
            seed,
        } => {
            let config = load_config(config.as_ref(), seed)?;
            ahgcn::cli::cmd_train(&manifest, &out, &config)?;
            println!("checkpoint and loss log written to {}", out.display());
        }
        Command::Evaluate {
            manifest,
            checkpoint,
            out,
            config,
            seed,
        } => {
            let config = load_config(config.as_ref(), seed)?;
            let report = ahgcn::cli::cmd_evaluate(&manifest, &checkpoint, &out, &config)?;
            println!(
                "plcc {:.4}  srocc {:.4}  rmse {:.4}  (report in {})",
                report.plcc,
                report.srocc,
                report.rmse,
                out.display()
            );
        }
        Command::Gradcheck { seed, corrupt } => {
            let report = ahgcn::cli::cmd_gradcheck(seed, corrupt);
            print!("{report}");
            if !report.passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::DumpHypergraph {
            sample_id,
            manifest,
            out,
            config,
            seed,
        } => {
            let config = load_config(config.as_ref(), seed)?;
            ahgcn::cli::cmd_dump_hypergraph(&manifest, &sample_id, &out, &config)?;
            println!("hypergraph CSVs written to {}", out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
