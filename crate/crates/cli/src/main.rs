use clap::{Parser, Subcommand};
use lagflow_cli::{cmd_check_lemmas, cmd_export_mesh, cmd_run, cmd_study};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "lagflow", version, about = "Semi-implicit and implicit schemes for (p, δ) gradient flows")]
struct Cli {
    /// Run on one thread; outputs are then bit-reproducible by construction.
    #[arg(long, global = true)]
    single_thread: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one evolution from a TOML config.
    Run { config: PathBuf },
    /// Run a refinement study (with negative control) from a TOML config.
    Study { config: PathBuf },
    /// Sample the operator inequalities and report violations.
    CheckLemmas {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        /// Directory for `lemma_report.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a red-refined unit-square mesh as legacy VTK.
    ExportMesh {
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        refine: usize,
        #[arg(long, default_value = "mesh.vtk")]
        out: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.single_thread {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(1).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            std::process::exit(1);
        }
    }
    let status = match cli.command {
        Command::Run { config } => cmd_run(&config),
        Command::Study { config } => cmd_study(&config),
        Command::CheckLemmas { seed, samples, out } => {
            if samples == 0 {
                eprintln!("error: --samples must be >= 1");
                std::process::exit(1);
            }
            cmd_check_lemmas(seed, samples, out.as_deref())
        }
        Command::ExportMesh { n, refine, out } => cmd_export_mesh(n, refine, &out),
    };
    std::process::exit(status.code());
}
