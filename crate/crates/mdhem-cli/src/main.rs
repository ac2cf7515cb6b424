use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mdhem_cli::{classify_error, commands};
use mdhem_core::germ::GermConfig;

/// Power-flow solver producing explicit multivariate power-series
/// solutions in user-defined load scales, with a built-in
/// Newton-Raphson cross-check.
#[derive(Parser)]
#[command(name = "mdhem", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute the physical germ solution and print its residuals.
    Germ {
        #[arg(long)]
        case: PathBuf,
        /// Machine-readable dump.
        #[arg(long)]
        json: bool,
        /// Germ series order cap.
        #[arg(long, default_value_t = 40)]
        germ_orders: usize,
        /// Germ tail tolerance.
        #[arg(long, default_value_t = 1e-10)]
        germ_tol: f64,
    },
    /// Solve the embedding and write the artifact file.
    Solve {
        #[arg(long)]
        case: PathBuf,
        /// Scale assignment: `areas`, `per-load`, `single`, inline JSON
        /// or a path to a JSON spec. Defaults to the case areas when
        /// declared, else one scale per load bus.
        #[arg(long)]
        scales: Option<String>,
        /// Shortcut: `--dims 1` groups every load under one scale.
        #[arg(long)]
        dims: Option<usize>,
        /// Maximum series order.
        #[arg(long, default_value_t = 12)]
        order: usize,
        /// Order-tail stopping tolerance.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Scale vector at which reactive limits are enforced; enables
        /// the conversion loop.
        #[arg(long)]
        target_s: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Write the artifact as JSON instead of binary.
        #[arg(long)]
        json: bool,
        #[arg(long, default_value_t = 40)]
        germ_orders: usize,
        #[arg(long, default_value_t = 1e-10)]
        germ_tol: f64,
    },
    /// Single-dimensional embedding of the base case (cross-check path).
    Helm {
        #[arg(long)]
        case: PathBuf,
        /// Series order cap.
        #[arg(long, default_value_t = 30)]
        order: usize,
        /// Tail tolerance.
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        #[arg(long)]
        json: bool,
    },
    /// Evaluate an artifact at scale vectors.
    Eval {
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long)]
        case: PathBuf,
        /// One scale vector, comma-separated.
        #[arg(long)]
        at: Option<String>,
        /// File of scale vectors, one comma-separated line each.
        #[arg(long)]
        points: Option<PathBuf>,
        /// CSV output path (stdout otherwise).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate an artifact over a grid, one CSV row per point.
    Sweep {
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long)]
        case: PathBuf,
        /// Per-dimension `min:max:step`, comma-separated.
        #[arg(long)]
        grid: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep with Newton-Raphson solved at every point and difference
    /// columns added.
    Compare {
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        grid: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reactive-limit margins of the generator buses over a grid.
    Limits {
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        at: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Resource estimates for an embedding shape.
    Info {
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        dims: usize,
        #[arg(long)]
        order: usize,
        #[arg(long)]
        json: bool,
    },
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.cmd {
        Cmd::Germ { case, json, germ_orders, germ_tol } => {
            commands::cmd_germ(&case, json, &GermConfig { n_max: germ_orders, tol: germ_tol })
        }
        Cmd::Solve {
            case,
            scales,
            dims,
            order,
            tol,
            target_s,
            out,
            json,
            germ_orders,
            germ_tol,
        } => commands::cmd_solve(
            &case,
            scales.as_deref(),
            dims,
            order,
            tol,
            target_s.as_deref(),
            &out,
            json,
            &GermConfig { n_max: germ_orders, tol: germ_tol },
        ),
        Cmd::Helm { case, order, tol, json } => commands::cmd_helm(&case, order, tol, json),
        Cmd::Eval { artifact, case, at, points, out } => {
            commands::cmd_eval(&artifact, &case, at.as_deref(), points.as_deref(), out.as_deref())
        }
        Cmd::Sweep { artifact, case, grid, out } => {
            commands::cmd_sweep(&artifact, &case, &grid, out.as_deref())
        }
        Cmd::Compare { artifact, case, grid, out } => {
            commands::cmd_compare(&artifact, &case, &grid, out.as_deref())
        }
        Cmd::Limits { artifact, case, grid, at, out } => {
            commands::cmd_limits(&artifact, &case, grid.as_deref(), at.as_deref(), out.as_deref())
        }
        Cmd::Info { case, dims, order, json } => commands::cmd_info(&case, dims, order, json),
    }
}

fn main() -> ExitCode {
    // Die quietly when a pipe consumer stops reading (e.g. `... | head`).
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    if let Ok(threads) = std::env::var("MDHEM_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify_error(&err) as u8)
        }
    }
}
