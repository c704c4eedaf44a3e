use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use geostein_cli::{execute, Options};

#[derive(Parser, Debug)]
#[command(name = "geostein", version, about = "Stein-operator experiments on Riemannian manifolds")]
struct Args {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for the report and sample files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; falls back to GEOSTEIN_THREADS.
    #[arg(long, env = "GEOSTEIN_THREADS")]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let code = execute(&Options { config: args.config, out: args.out, seed: args.seed });
    ExitCode::from(code as u8)
}
