//! `gnnflow` — linear GNN training-dynamics laboratory.
//!
//! Exit codes: 0 success, 1 runtime failure (structured error line on
//! stderr), 2 usage error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gnnflow::experiments::GraphSpec;
use gnnflow::shift::ShiftKind;
use gnnflow_cli::commands::{self, Overrides};
use gnnflow_cli::verify;

#[derive(Parser)]
#[command(
    name = "gnnflow",
    about = "Linear graph neural networks: generation, training dynamics, sweeps, and bound verification",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Master seed override
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict to a single shift kind (adj, sl-adj, nsl-adj, row-sl, col-sl, lap, nlap)
    #[arg(long)]
    shift: Option<String>,
    /// Restrict to graphs of one model (er, knn, sbm, ba, csv)
    #[arg(long)]
    model: Option<String>,
    /// Worker threads for row-parallel sweeps (1 = fully serial)
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a graph and write its edge CSV
    GenGraph {
        /// Graph model
        #[arg(long)]
        model: String,
        /// Node count (er, knn, ba)
        #[arg(long)]
        n: Option<usize>,
        /// Edge probability (er) or intra-block probability (sbm)
        #[arg(long)]
        p: Option<f64>,
        /// Neighbor count (knn)
        #[arg(long)]
        k: Option<usize>,
        /// Attachment edges (ba)
        #[arg(long)]
        m: Option<usize>,
        /// Block sizes (sbm)
        #[arg(long)]
        n1: Option<usize>,
        #[arg(long)]
        n2: Option<usize>,
        /// Inter-block probability (sbm)
        #[arg(long)]
        q: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Singular-value sweep over labeled-set sizes
    SigmaSweep(Common),
    /// Single training run: trajectory CSV + certificate JSON
    Train(Common),
    /// Convergence sweep over (graph, shift) coordinates
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Also write one trajectory CSV per row
        #[arg(long)]
        trajectories: bool,
    },
    /// Run the built-in invariant suites; non-zero exit on any failure
    Verify {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print closed-form rate/energy/iteration predictions for a config
    Predict {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        shift: Option<String>,
    },
}

fn overrides(seed: Option<u64>, shift: &Option<String>, model: &Option<String>) -> Result<Overrides, gnnflow::Error> {
    let shift = match shift {
        Some(s) => Some(s.parse::<ShiftKind>()?),
        None => None,
    };
    Ok(Overrides { seed, shift, model: model.clone() })
}

fn build_pool(jobs: Option<usize>) -> Result<(), gnnflow::Error> {
    if let Some(n) = jobs {
        if n == 0 {
            return Err(gnnflow::Error::parameter("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| gnnflow::Error::parameter(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), gnnflow::Error> {
    match cli.command {
        Command::GenGraph { model, n, p, k, m, n1, n2, q, seed, out } => {
            let missing = |what: &str| gnnflow::Error::parameter(format!("gen-graph {model}: missing --{what}"));
            let spec = match model.as_str() {
                "er" => GraphSpec::Er {
                    n: n.ok_or_else(|| missing("n"))?,
                    p: p.ok_or_else(|| missing("p"))?,
                    seed: Some(seed),
                },
                "knn" => GraphSpec::Knn {
                    n: n.ok_or_else(|| missing("n"))?,
                    k: k.ok_or_else(|| missing("k"))?,
                },
                "sbm" => GraphSpec::Sbm {
                    n1: n1.ok_or_else(|| missing("n1"))?,
                    n2: n2.ok_or_else(|| missing("n2"))?,
                    p: p.ok_or_else(|| missing("p"))?,
                    q: q.ok_or_else(|| missing("q"))?,
                    seed: Some(seed),
                },
                "ba" => GraphSpec::Ba {
                    n: n.ok_or_else(|| missing("n"))?,
                    m: m.ok_or_else(|| missing("m"))?,
                    seed: Some(seed),
                },
                other => {
                    return Err(gnnflow::Error::parameter(format!(
                        "unknown model {other:?}; expected er, knn, sbm, or ba"
                    )))
                }
            };
            commands::run_gen_graph(&spec, seed, &out)?;
        }
        Command::SigmaSweep(c) => {
            build_pool(c.jobs)?;
            let cfg = commands::load_config(&c.config, &overrides(c.seed, &c.shift, &c.model)?)?;
            commands::run_sigma_sweep(&cfg, &c.out)?;
        }
        Command::Train(c) => {
            build_pool(c.jobs)?;
            let cfg = commands::load_config(&c.config, &overrides(c.seed, &c.shift, &c.model)?)?;
            commands::run_train(&cfg, &c.out)?;
        }
        Command::Sweep { common: c, trajectories } => {
            build_pool(c.jobs)?;
            let cfg = commands::load_config(&c.config, &overrides(c.seed, &c.shift, &c.model)?)?;
            commands::run_convergence_sweep(&cfg, &c.out, trajectories)?;
        }
        Command::Verify { seed } => {
            let seed = seed.unwrap_or(verify::DEFAULT_VERIFY_SEED);
            let checks = verify::run_all(seed);
            let mut failed = 0;
            for c in &checks {
                let tag = if c.passed { "ok  " } else { "FAIL" };
                println!("{tag} {} - {}", c.name, c.detail);
                if !c.passed {
                    failed += 1;
                }
            }
            if failed > 0 {
                return Err(gnnflow::Error::domain(format!("{failed} verification check(s) failed")));
            }
        }
        Command::Predict { config, seed, shift } => {
            let cfg = commands::load_config(&config, &overrides(seed, &shift, &None)?)?;
            commands::run_predict(&cfg)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    gnnflow::linalg::pin_blas_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
